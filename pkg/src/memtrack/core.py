"""Shared domain types and numeric primitives.

Masks are plain numpy arrays: a binary mask is a 2-D ``bool`` array of shape
``(height, width)`` and a soft mask is a 2-D ``float64`` array with values in
``[0, 1]``. Embeddings are 1-D ``float64`` arrays. Helper constructors validate
and freeze (``writeable=False``) the arrays they return.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np
from scipy import ndimage

from .errors import ContractViolation, DegenerateInputError

POSITIVE = "positive"
NEGATIVE = "negative"
PROMPT_KINDS = ("clicks", "box", "mask")


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


def as_binary_mask(m) -> np.ndarray:
    a = np.asarray(m)
    if a.ndim != 2 or a.shape[0] == 0 or a.shape[1] == 0:
        raise ContractViolation(f"binary mask must be a non-empty 2-D grid, got shape {a.shape}")
    return _frozen(a.astype(bool, copy=True))


def as_soft_mask(m) -> np.ndarray:
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] == 0 or a.shape[1] == 0:
        raise ContractViolation(f"soft mask must be a non-empty 2-D grid, got shape {a.shape}")
    if not np.all(np.isfinite(a)) or a.min() < 0.0 or a.max() > 1.0:
        raise ContractViolation("soft mask values must lie in [0, 1]")
    return _frozen(a.copy())


def as_embedding(v) -> np.ndarray:
    a = np.asarray(v, dtype=np.float64).ravel()
    if a.size == 0:
        raise ContractViolation("embedding must have positive dimension")
    if not np.all(np.isfinite(a)):
        raise ContractViolation("embedding contains NaN or Inf")
    return _frozen(a.copy())


@dataclass(frozen=True)
class Frame:
    index: int
    pixels: np.ndarray  # (H, W, 3) floats in [0, 1]
    timestamp: Optional[float] = None

    def __post_init__(self):
        p = np.asarray(self.pixels, dtype=np.float64)
        if p.ndim != 3 or p.shape[2] != 3:
            raise ContractViolation(f"frame pixels must be (H, W, 3), got {p.shape}")
        object.__setattr__(self, "pixels", _frozen(p.copy()))

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape[0], self.pixels.shape[1]


@dataclass
class Masklet:
    """One object's mask track. Frames missing from ``track`` mean the object is not visible."""

    instance_id: int
    category: Optional[str] = None
    track: dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        shapes = set()
        for idx, m in list(self.track.items()):
            if idx < 0:
                raise ContractViolation(f"masklet {self.instance_id}: negative frame index {idx}")
            self.track[idx] = as_binary_mask(m)
            shapes.add(self.track[idx].shape)
        if len(shapes) > 1:
            raise ContractViolation(f"masklet {self.instance_id}: masks have mixed resolutions {sorted(shapes)}")

    @property
    def shape(self) -> Optional[tuple[int, int]]:
        for m in self.track.values():
            return m.shape
        return None

    def frames(self) -> list[int]:
        return sorted(self.track)


@dataclass(frozen=True)
class Click:
    x: int
    y: int
    polarity: str = POSITIVE

    def __post_init__(self):
        if self.polarity not in (POSITIVE, NEGATIVE):
            raise ContractViolation(f"click polarity must be positive/negative, got {self.polarity!r}")


@dataclass(frozen=True)
class Prompt:
    kind: str
    clicks: tuple[Click, ...] = ()
    box: Optional[tuple[int, int, int, int]] = None
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in PROMPT_KINDS:
            raise ContractViolation(f"unknown prompt kind {self.kind!r}")
        populated = {"clicks": bool(self.clicks), "box": self.box is not None, "mask": self.mask is not None}
        for name, present in populated.items():
            if present != (name == self.kind):
                raise ContractViolation(f"{self.kind} prompt must populate exactly the '{self.kind}' field")
        if self.mask is not None:
            object.__setattr__(self, "mask", as_binary_mask(self.mask))
        if self.box is not None:
            x0, y0, x1, y1 = self.box
            if x0 > x1 or y0 > y1:
                raise ContractViolation(f"box corners out of order: {self.box}")

    @classmethod
    def from_clicks(cls, clicks: Iterable[Click]) -> "Prompt":
        return cls("clicks", clicks=tuple(clicks))

    def check_bounds(self, height: int, width: int) -> None:
        coords = [(c.x, c.y) for c in self.clicks]
        if self.box is not None:
            coords += [self.box[:2], self.box[2:]]
        for x, y in coords:
            if not (0 <= x < width and 0 <= y < height):
                raise ContractViolation(f"prompt coordinate ({x}, {y}) outside {width}x{height} frame")
        if self.mask is not None and self.mask.shape != (height, width):
            raise ContractViolation(f"prompt mask shape {self.mask.shape} != frame {(height, width)}")


def _ordered_sum(values: np.ndarray) -> float:
    # correctly rounded, hence independent of argument order
    return math.fsum(values.tolist())


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ContractViolation(f"embedding dimensions differ: {a.size} vs {b.size}")
    na = math.sqrt(_ordered_sum(a * a))
    nb = math.sqrt(_ordered_sum(b * b))
    if na == 0.0 or nb == 0.0:
        raise DegenerateInputError("cosine similarity of a zero vector is undefined")
    c = _ordered_sum(a * b) / (na * nb)
    return min(1.0, max(-1.0, c))


def mask_iou(a, b, empty_value: float = 1.0) -> float:
    """Intersection over union; ``empty_value`` is returned when both masks are empty."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ContractViolation(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = int(np.count_nonzero(a | b))
    if union == 0:
        return float(empty_value)
    return int(np.count_nonzero(a & b)) / union


def distance_transform_argmax(m) -> tuple[int, int]:
    """Return (x, y) of the foreground pixel farthest from background.

    Pixels outside the grid count as background. Ties go to the smallest y,
    then the smallest x.
    """
    m = np.asarray(m, dtype=bool)
    if m.ndim != 2:
        raise ContractViolation("mask must be 2-D")
    if not m.any():
        raise DegenerateInputError("distance transform of an empty mask")
    dist = ndimage.distance_transform_edt(np.pad(m, 1))[1:-1, 1:-1]
    # argmax returns the first maximum in row-major order, i.e. the tie-break above
    y, x = np.unravel_index(int(np.argmax(dist)), dist.shape)
    return int(x), int(y)
