"""Masklet persistence: run-length masks, dataset manifests, validation and statistics.

Manifest format (JSON, one document per dataset)::

    {
      "name": "toy",
      "videos": [
        {"id": "v0", "num_frames": 10, "width": 64, "height": 64, "duration_s": 4.0}
      ],
      "masklets": [
        {"video_id": "v0", "instance_id": 1, "category": "grasper",
         "group": "instrument", "frames": [0, 1, 2], "rle_path": "v0/1.json"}
      ]
    }

``frames`` lists the frame indices where the masklet has a mask and
``rle_path`` (optional, relative to the manifest) points at a masklet file::

    {"instance_id": 1, "category": "grasper", "width": 64, "height": 64,
     "frames": {"0": [12, 4, ...], "1": [...]}}

Each run list alternates background/foreground lengths over the row-major
pixel order, starting with background.
"""
from __future__ import annotations

import json
import os
from collections import Counter
from dataclasses import asdict, dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Optional

import numpy as np

from .core import Masklet, as_binary_mask
from .errors import CorruptDataError, ManifestReadError

GROUPS = ("instrument", "tissue", "other")


@dataclass(frozen=True)
class RleMask:
    width: int
    height: int
    runs: tuple[int, ...]

    def check(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise CorruptDataError(f"invalid RLE size {self.width}x{self.height}")
        if not self.runs:
            raise CorruptDataError("RLE has no runs")
        if any(r < 0 for r in self.runs):
            raise CorruptDataError("RLE contains a negative run")
        if any(r == 0 for r in self.runs[1:]):
            raise CorruptDataError("RLE contains a zero-length interior run")
        total = sum(self.runs)
        if total != self.width * self.height:
            raise CorruptDataError(f"RLE runs sum to {total}, expected {self.width * self.height}")


def rle_encode(m) -> RleMask:
    m = as_binary_mask(m)
    flat = m.ravel().astype(np.int8)
    change = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return RleMask(width=m.shape[1], height=m.shape[0], runs=tuple(int(r) for r in runs))


def rle_decode(r: RleMask) -> np.ndarray:
    r.check()
    values = np.arange(len(r.runs)) % 2 == 1
    flat = np.repeat(values, r.runs)
    return as_binary_mask(flat.reshape(r.height, r.width))


# --------------------------------------------------------------------------
# manifest


@dataclass
class VideoRecord:
    id: str
    num_frames: int
    width: int
    height: int
    duration_s: float


@dataclass
class MaskletRecord:
    video_id: str
    instance_id: int
    category: Optional[str] = None
    group: str = "other"
    frames: list[int] = field(default_factory=list)
    rle_path: Optional[str] = None


@dataclass
class DatasetManifest:
    name: str
    videos: list[VideoRecord] = field(default_factory=list)
    masklets: list[MaskletRecord] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "videos": [asdict(v) for v in self.videos],
            "masklets": [asdict(m) for m in self.masklets],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        try:
            return cls(
                name=str(d["name"]),
                videos=[VideoRecord(**v) for v in d.get("videos", [])],
                masklets=[MaskletRecord(**m) for m in d.get("masklets", [])],
            )
        except (KeyError, TypeError) as exc:
            raise ManifestReadError(f"malformed manifest: {exc}") from exc


def load_manifest(path) -> DatasetManifest:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestReadError(f"cannot read manifest {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ManifestReadError(f"manifest {path} is not a JSON object")
    return DatasetManifest.from_dict(data)


def save_manifest(manifest: DatasetManifest, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(manifest.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def save_masklet(masklet: Masklet, path) -> None:
    shape = masklet.shape or (0, 0)
    doc = {
        "instance_id": masklet.instance_id,
        "category": masklet.category,
        "height": shape[0],
        "width": shape[1],
        "frames": {str(i): list(rle_encode(masklet.track[i]).runs) for i in masklet.frames()},
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_masklet(path) -> Masklet:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestReadError(f"cannot read masklet {path}: {exc}") from exc
    w, h = int(doc["width"]), int(doc["height"])
    track = {int(k): rle_decode(RleMask(w, h, tuple(runs))) for k, runs in doc["frames"].items()}
    return Masklet(int(doc["instance_id"]), doc.get("category"), track)


def standardize_categories(manifest: DatasetManifest, mapping: dict[str, str]) -> DatasetManifest:
    """Rename instrument categories through ``mapping``; tissue labels are left as-is."""
    out = []
    for m in manifest.masklets:
        if m.group == "instrument" and m.category in mapping:
            m = MaskletRecord(**{**asdict(m), "category": mapping[m.category]})
        out.append(m)
    return DatasetManifest(manifest.name, list(manifest.videos), out)


@dataclass(frozen=True)
class Violation:
    rule: str
    video_id: Optional[str]
    instance_id: Optional[int]
    message: str

    def __str__(self):
        return f"[{self.rule}] video={self.video_id} masklet={self.instance_id}: {self.message}"


def validate_manifest(d: DatasetManifest) -> list[Violation]:
    out: list[Violation] = []
    videos: dict[str, VideoRecord] = {}
    for v in d.videos:
        if v.id in videos:
            out.append(Violation("duplicate_video", v.id, None, "video id appears more than once"))
        videos[v.id] = v
        if v.num_frames < 0 or v.width <= 0 or v.height <= 0 or v.duration_s < 0:
            out.append(Violation("video_fields", v.id, None, "non-positive resolution or negative count/duration"))

    seen: Counter = Counter()
    for m in d.masklets:
        key = (m.video_id, m.instance_id)
        seen[key] += 1
        if seen[key] == 2:
            out.append(Violation("unique_instance_id", m.video_id, m.instance_id,
                                 "instance id used by more than one masklet in this video"))
        if m.group not in GROUPS:
            out.append(Violation("group", m.video_id, m.instance_id, f"unknown category group {m.group!r}"))
        video = videos.get(m.video_id)
        if video is None:
            out.append(Violation("unknown_video", m.video_id, m.instance_id, "masklet references a missing video"))
            continue
        bad = [f for f in m.frames if not 0 <= f < video.num_frames]
        if bad:
            out.append(Violation("frame_range", m.video_id, m.instance_id,
                                 f"frame indices {bad[:5]} outside [0, {video.num_frames})"))
        if len(set(m.frames)) != len(m.frames):
            out.append(Violation("duplicate_frame", m.video_id, m.instance_id, "frame index listed twice"))
    return out


def validate_masklet_files(d: DatasetManifest, root) -> list[Violation]:
    """Check that referenced RLE files decode and agree with the manifest."""
    out = []
    videos = {v.id: v for v in d.videos}
    for m in d.masklets:
        if not m.rle_path:
            continue
        try:
            mk = load_masklet(os.path.join(root, m.rle_path))
        except (ManifestReadError, CorruptDataError, KeyError, ValueError) as exc:
            out.append(Violation("rle_file", m.video_id, m.instance_id, str(exc)))
            continue
        if mk.frames() != sorted(m.frames):
            out.append(Violation("rle_frames", m.video_id, m.instance_id, "RLE frames differ from manifest frames"))
        v = videos.get(m.video_id)
        if v is not None and mk.shape is not None and mk.shape != (v.height, v.width):
            out.append(Violation("rle_resolution", m.video_id, m.instance_id,
                                 f"mask shape {mk.shape} != video {(v.height, v.width)}"))
    return out


@dataclass(frozen=True)
class DatasetStats:
    videos: int
    frames: int
    instrument_masks: int
    tissue_masks: int
    other_masks: int
    masklets: int
    avg_duration_s: float

    def as_row(self) -> dict:
        return asdict(self)


def _round_half_up(x: float, digits: int) -> float:
    q = Decimal(1).scaleb(-digits)
    return float(Decimal(repr(x)).quantize(q, rounding=ROUND_HALF_UP))


def dataset_stats(d: DatasetManifest, duration_digits: int = 0) -> DatasetStats:
    masks = Counter()
    for m in d.masklets:
        masks[m.group] += len(m.frames)
    n = len(d.videos)
    avg = sum(v.duration_s for v in d.videos) / n if n else 0.0
    return DatasetStats(
        videos=n,
        frames=sum(v.num_frames for v in d.videos),
        instrument_masks=masks["instrument"],
        tissue_masks=masks["tissue"],
        other_masks=masks["other"],
        masklets=len(d.masklets),
        avg_duration_s=_round_half_up(avg, duration_digits),
    )


def format_stats_table(rows: dict[str, DatasetStats]) -> str:
    header = ["Dataset", "Video", "Frame", "Instrument", "Tissue", "Masklet", "Avg. Dur. (s)"]
    body = []
    for name, s in rows.items():
        dur = f"{s.avg_duration_s:g}"
        body.append([name, str(s.videos), str(s.frames), str(s.instrument_masks),
                     str(s.tissue_masks), str(s.masklets), dur])
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    lines = []
    for r in [header] + body:
        lines.append("  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))))
    return "\n".join(lines)
