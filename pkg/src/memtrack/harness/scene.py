"""Deterministic synthetic videos with moving, drifting, disappearing objects and camera zoom."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from ..core import Frame, Masklet
from ..errors import ConfigError

SHAPES = ("rectangle", "ellipse")


@dataclass
class SceneObject:
    shape: str
    color: tuple[float, float, float]
    size: tuple[float, float]  # (width, height) in pixels at scale 1
    path: list[tuple[int, float, float]]  # keyframes (frame, cx, cy), linearly interpolated
    color_end: Optional[tuple[float, float, float]] = None  # linear drift to this colour by the last frame
    scale: list[tuple[int, float]] = field(default_factory=list)  # keyframes (frame, scale)
    category: Optional[str] = None
    tracked: bool = True


@dataclass
class Disappearance:
    object_id: int
    start: int
    end: int  # inclusive


@dataclass
class Zoom:
    start: int
    end: int
    factor: float  # ramps 1 -> factor over [start, end], held afterwards


@dataclass
class SyntheticScene:
    width: int = 64
    height: int = 64
    duration_frames: int = 60
    background: tuple[float, float, float] = (0.15, 0.15, 0.2)
    noise_std: float = 0.01
    objects: list[SceneObject] = field(default_factory=list)
    disappearances: list[Disappearance] = field(default_factory=list)
    zooms: list[Zoom] = field(default_factory=list)
    seed: int = 0
    name: str = "scene"
    fps: float = 10.0

    def validate(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ConfigError("scene.resolution", "width and height must be positive")
        if self.duration_frames <= 0:
            raise ConfigError("scene.duration_frames", "must be positive")
        for i, o in enumerate(self.objects):
            if o.shape not in SHAPES:
                raise ConfigError(f"scene.objects[{i}].shape", f"must be one of {SHAPES}")
            if not o.path:
                raise ConfigError(f"scene.objects[{i}].path", "needs at least one keyframe")
            if min(o.size) <= 0:
                raise ConfigError(f"scene.objects[{i}].size", "must be positive")
        for i, d in enumerate(self.disappearances):
            if not 0 <= d.object_id < len(self.objects):
                raise ConfigError(f"scene.disappearances[{i}].object_id", "unknown object")
            if not 0 <= d.start <= d.end < self.duration_frames:
                raise ConfigError(f"scene.disappearances[{i}]", "interval outside the video")
        for i, z in enumerate(self.zooms):
            if not 0 <= z.start <= z.end < self.duration_frames:
                raise ConfigError(f"scene.zooms[{i}]", "interval outside the video")
            if z.factor <= 0:
                raise ConfigError(f"scene.zooms[{i}].factor", "must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticScene":
        d = dict(d)
        try:
            d["objects"] = [SceneObject(**o) for o in d.get("objects", [])]
            d["disappearances"] = [Disappearance(**e) for e in d.get("disappearances", [])]
            d["zooms"] = [Zoom(**z) for z in d.get("zooms", [])]
            return cls(**d)
        except TypeError as exc:
            raise ConfigError("scene", str(exc)) from exc


def _interp(keys: list, t: int, default):
    if not keys:
        return default
    keys = sorted(keys)
    frames = [k[0] for k in keys]
    if len(keys[0]) == 2:
        return float(np.interp(t, frames, [k[1] for k in keys]))
    return tuple(float(np.interp(t, frames, [k[i] for k in keys])) for i in range(1, len(keys[0])))


def zoom_at(scene: SyntheticScene, t: int) -> float:
    z = 1.0
    for ev in scene.zooms:
        if t < ev.start:
            continue
        frac = 1.0 if ev.end == ev.start else min(1.0, (t - ev.start) / (ev.end - ev.start))
        z *= 1.0 + frac * (ev.factor - 1.0)
    return z


def hidden(scene: SyntheticScene, obj: int, t: int) -> bool:
    return any(d.object_id == obj and d.start <= t <= d.end for d in scene.disappearances)


def _object_mask(scene: SyntheticScene, o: SceneObject, t: int, zoom: float) -> np.ndarray:
    cx, cy = _interp(o.path, t, None)
    s = _interp(o.scale, t, 1.0) * zoom
    # camera zoom about the image centre
    mx, my = (scene.width - 1) / 2.0, (scene.height - 1) / 2.0
    cx, cy = mx + (cx - mx) * zoom, my + (cy - my) * zoom
    hw, hh = o.size[0] * s / 2.0, o.size[1] * s / 2.0
    yy, xx = np.mgrid[0:scene.height, 0:scene.width]
    if o.shape == "rectangle":
        return (np.abs(xx - cx) < hw) & (np.abs(yy - cy) < hh)
    return ((xx - cx) / hw) ** 2 + ((yy - cy) / hh) ** 2 <= 1.0


def object_color(scene: SyntheticScene, o: SceneObject, t: int) -> np.ndarray:
    c0 = np.asarray(o.color, dtype=np.float64)
    if o.color_end is None or scene.duration_frames == 1:
        return c0
    frac = t / (scene.duration_frames - 1)
    return c0 + frac * (np.asarray(o.color_end) - c0)


def render_frame(scene: SyntheticScene, t: int) -> tuple[Frame, list[np.ndarray]]:
    """One frame plus the visible mask of every object (later objects occlude earlier ones)."""
    img = np.empty((scene.height, scene.width, 3))
    img[:] = scene.background
    zoom = zoom_at(scene, t)
    masks = []
    for i, o in enumerate(scene.objects):
        if hidden(scene, i, t):
            masks.append(np.zeros((scene.height, scene.width), dtype=bool))
            continue
        m = _object_mask(scene, o, t, zoom)
        img[m] = object_color(scene, o, t)
        for prev in masks:
            prev &= ~m
        masks.append(m)
    if scene.noise_std > 0:
        rng = np.random.default_rng([scene.seed, t])
        img = img + rng.normal(0.0, scene.noise_std, img.shape)
    return Frame(t, np.clip(img, 0.0, 1.0), timestamp=t / scene.fps), masks


def generate_scene(scene: SyntheticScene) -> tuple[list[Frame], list[Masklet]]:
    scene.validate()
    frames = []
    tracks: list[dict] = [dict() for _ in scene.objects]
    for t in range(scene.duration_frames):
        frame, masks = render_frame(scene, t)
        frames.append(frame)
        for i, m in enumerate(masks):
            if m.any():
                tracks[i][t] = m
    masklets = [Masklet(i + 1, o.category, tracks[i]) for i, o in enumerate(scene.objects)]
    return frames, masklets


# ---------------------------------------------------------------------------
# scene families


def static_square_scene(duration: int = 10, seed: int = 0) -> SyntheticScene:
    return SyntheticScene(
        duration_frames=duration, seed=seed, name=f"static_square_{seed}",
        objects=[SceneObject("rectangle", (0.85, 0.25, 0.2), (16, 16), [(0, 31.5, 31.5)], category="grasper")],
    )


def disappear_scene(duration: int = 30, start: int = 10, end: int = 17, seed: int = 0) -> SyntheticScene:
    s = static_square_scene(duration, seed)
    s.name = f"disappear_{seed}"
    s.objects[0].path = [(0, 20.5, 31.5), (duration - 1, 40.5, 31.5)]
    s.disappearances = [Disappearance(0, start, end)]
    return s


def reappearance_scene(seed: int, duration: int = 120) -> SyntheticScene:
    """Long-horizon scene: a drifting target disappears and returns next to a look-alike distractor colour.

    The target's colour drifts over the video towards a static distractor's
    colour, it wanders across the frame, vanishes for a stretch, and comes
    back close to where it left. A camera zoom changes its apparent scale.
    """
    rng = np.random.default_rng(seed)
    c0 = np.array([0.9, 0.3, 0.15]) + rng.uniform(-0.05, 0.05, 3)
    c1 = np.array([0.35, 0.75, 0.3]) + rng.uniform(-0.05, 0.05, 3)
    distractor = np.clip(c1 + rng.uniform(-0.03, 0.03, 3), 0, 1)
    shape = SHAPES[int(rng.integers(2))]
    size = (float(rng.uniform(12, 16)), float(rng.uniform(12, 16)))
    x0, y0 = rng.uniform(16, 24), rng.uniform(16, 48)
    x1, y1 = rng.uniform(40, 48), rng.uniform(16, 48)
    gone = int(rng.integers(int(0.45 * duration), int(0.6 * duration)))
    gap = int(rng.integers(max(2, int(0.12 * duration)), max(3, int(0.2 * duration))))
    back = gone + gap
    # drifts from (x0, y0) to (x1, y1), pauses while hidden, then continues slightly
    xm, ym = x0 + 0.85 * (x1 - x0), y0 + 0.85 * (y1 - y0)
    path = [(0, x0, y0), (gone, xm, ym), (back, xm, ym), (duration - 1, x1, y1)]
    dx = 8.0 if y1 < 32 else -8.0
    dist_pos = (float(rng.uniform(10, 20)), float(np.clip(y1 + 3 * dx, 8, 56)))
    zs = int(rng.integers(duration // 12, int(0.3 * duration)))
    objects = [
        SceneObject("rectangle", tuple(distractor), (10.0, 10.0), [(0, *dist_pos)],
                    category="distractor", tracked=False),
        SceneObject(shape, tuple(c0), size, path, color_end=tuple(c1), category="target"),
    ]
    return SyntheticScene(
        duration_frames=duration, seed=seed, name=f"reappear_{seed:02d}",
        noise_std=0.02, objects=objects,
        disappearances=[Disappearance(1, gone, back - 1)],
        zooms=[Zoom(zs, min(zs + 10, duration - 1), float(rng.uniform(1.05, 1.15)))],
    )


def scene_suite(kind: str, count: int, seed: int, duration: int = 120) -> list[SyntheticScene]:
    if kind == "reappearance":
        return [reappearance_scene(seed * 1000 + i, duration) for i in range(count)]
    if kind == "static":
        return [static_square_scene(duration, seed * 1000 + i) for i in range(count)]
    if kind == "disappear":
        return [disappear_scene(duration, duration // 3, duration // 3 + 7, seed * 1000 + i) for i in range(count)]
    raise ConfigError("scenes.kind", f"unknown scene family {kind!r}")
