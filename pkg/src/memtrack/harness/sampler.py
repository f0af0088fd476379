"""Training-clip samplers: long-range hybrid clips, plain consecutive clips, and their 1:1 mix."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import ContractViolation, DegenerateInputError

SAMPLER_MODES = ("divemem", "vanilla", "mixed_1_1")
CONDITIONAL = "conditional"
LONG_TERM = "long_term"
RECENT = "recent"


@dataclass(frozen=True)
class SamplerConfig:
    mode: str = "mixed_1_1"
    frames_per_clip: int = 8
    image_video_ratio: tuple[int, int] = (1, 4)
    n_scattered: int = 3

    def __post_init__(self):
        if self.mode not in SAMPLER_MODES:
            raise ContractViolation(f"unknown sampler mode {self.mode!r}")
        if self.frames_per_clip <= self.n_scattered:
            raise ContractViolation("frames_per_clip must exceed the number of scattered frames")
        if min(self.image_video_ratio) < 0 or sum(self.image_video_ratio) == 0:
            raise ContractViolation("image_video_ratio must be non-negative and not all zero")


@dataclass(frozen=True)
class Clip:
    kind: str  # "divemem" or "vanilla"
    indices: tuple[int, ...]
    roles: tuple[str, ...]


def _divemem_clip(video_length: int, cfg: SamplerConfig, rng: np.random.Generator) -> Clip:
    run = cfg.frames_per_clip - cfg.n_scattered
    start = int(rng.integers(0, video_length - run + 1))
    recent = list(range(start, start + run))
    rest = np.array([i for i in range(video_length) if not start <= i < start + run])
    scattered = sorted(int(i) for i in rng.choice(rest, size=cfg.n_scattered, replace=False))
    roles = (CONDITIONAL,) + (LONG_TERM,) * (cfg.n_scattered - 1) + (RECENT,) * run
    return Clip("divemem", tuple(scattered + recent), roles)


def _vanilla_clip(video_length: int, cfg: SamplerConfig, rng: np.random.Generator) -> Clip:
    n = cfg.frames_per_clip
    start = int(rng.integers(0, video_length - n + 1))
    return Clip("vanilla", tuple(range(start, start + n)), (CONDITIONAL,) + (RECENT,) * (n - 1))


def sample_training_clip(video_length: int, cfg: SamplerConfig, rng: np.random.Generator,
                         clip_number: int = 0) -> Clip:
    """Draw one clip of frame indices with role labels.

    ``divemem`` clips place a run of consecutive frames anywhere in the video
    and draw the conditional frame and two long-term frames from the remaining
    indices. ``mixed_1_1`` alternates, starting with a divemem clip at
    ``clip_number`` 0.
    """
    if video_length < cfg.frames_per_clip:
        raise DegenerateInputError(f"video of {video_length} frames is shorter than a {cfg.frames_per_clip}-frame clip")
    kind = cfg.mode
    if kind == "mixed_1_1":
        kind = "divemem" if clip_number % 2 == 0 else "vanilla"
    if kind == "divemem":
        return _divemem_clip(video_length, cfg, rng)
    return _vanilla_clip(video_length, cfg, rng)


class ClipSampler:
    """Stateful wrapper that keeps the alternation counter and the image/video schedule."""

    def __init__(self, cfg: SamplerConfig = SamplerConfig(), seed: Optional[int] = 0):
        self.cfg = cfg
        self.rng = np.random.default_rng(seed)
        self.count = 0
        self.source_count = 0

    def next_clip(self, video_length: int) -> Clip:
        clip = sample_training_clip(video_length, self.cfg, self.rng, self.count)
        self.count += 1
        return clip

    def next_source(self) -> str:
        """'image' or 'video', in deterministic proportion ``image_video_ratio``."""
        n_img, n_vid = self.cfg.image_video_ratio
        slot = self.source_count % (n_img + n_vid)
        self.source_count += 1
        return "image" if slot < n_img else "video"
