"""Evaluation: region (J) and boundary (F) accuracy, click simulation, throughput."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import ndimage

from .core import NEGATIVE, POSITIVE, Click, Masklet, distance_transform_argmax, mask_iou
from .errors import AlignmentError, ContractViolation, DegenerateInputError

FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)


def default_boundary_tolerance(height: int, width: int, fraction: float = 0.008) -> int:
    return int(math.ceil(fraction * math.hypot(height, width)))


def _pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ContractViolation(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    return pred, gt


def region_j(pred, gt) -> float:
    pred, gt = _pair(pred, gt)
    return 100.0 * mask_iou(pred, gt)


def boundary_map(m) -> np.ndarray:
    """Foreground pixels with a 4-neighbour in the background. The image edge is not a boundary."""
    m = np.asarray(m, dtype=bool)
    return m & ~ndimage.binary_erosion(m, FOUR_CONNECTED, border_value=1)


def boundary_f(pred, gt, tolerance: Optional[float] = None) -> float:
    pred, gt = _pair(pred, gt)
    if tolerance is None:
        tolerance = default_boundary_tolerance(*gt.shape)
    if tolerance < 0:
        raise ContractViolation("tolerance must be non-negative")
    bp, bg = boundary_map(pred), boundary_map(gt)
    n_p, n_g = int(bp.sum()), int(bg.sum())
    if n_p == 0 and n_g == 0:
        return 100.0 if np.array_equal(pred, gt) else 0.0
    if n_p == 0 or n_g == 0:
        return 0.0
    dist_to_gt = ndimage.distance_transform_edt(~bg)
    dist_to_pred = ndimage.distance_transform_edt(~bp)
    precision = float((dist_to_gt[bp] <= tolerance).sum()) / n_p
    recall = float((dist_to_pred[bg] <= tolerance).sum()) / n_g
    if precision + recall == 0:
        return 0.0
    return 100.0 * 2 * precision * recall / (precision + recall)


@dataclass
class EvalResult:
    j_mean: float
    f_mean: float
    jf_mean: float
    per_masklet: list[tuple[int, float, float]] = field(default_factory=list)
    per_frame: dict[int, list[tuple[int, float, float]]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "j_mean": self.j_mean,
            "f_mean": self.f_mean,
            "jf_mean": self.jf_mean,
            "per_masklet": [{"instance_id": i, "j": j, "f": f} for i, j, f in self.per_masklet],
        }


def _mean(xs: Sequence[float]) -> float:
    return math.fsum(xs) / len(xs) if xs else 0.0


def evaluate_masklet(pred: Masklet, gt: Masklet, num_frames: int, shape: tuple[int, int],
                     tolerance: Optional[float] = None, frames: Optional[Sequence[int]] = None):
    """Per-frame (frame, J, F) for one object; absent masks are scored as empty."""
    empty = np.zeros(shape, dtype=bool)
    rows = []
    for t in (range(num_frames) if frames is None else frames):
        p = pred.track.get(t, empty)
        g = gt.track.get(t, empty)
        rows.append((t, region_j(p, g), boundary_f(p, g, tolerance)))
    return rows


def jf_evaluate(pred_masklets: Sequence[Masklet], gt_masklets: Sequence[Masklet],
                num_frames: Optional[int] = None, tolerance: Optional[float] = None) -> EvalResult:
    """J&F over all frames ``0..num_frames-1``; dataset means are unweighted over masklets."""
    pred_by_id = {m.instance_id: m for m in pred_masklets}
    gt_by_id = {m.instance_id: m for m in gt_masklets}
    if set(pred_by_id) != set(gt_by_id):
        raise AlignmentError(set(gt_by_id) - set(pred_by_id), set(pred_by_id) - set(gt_by_id))
    if num_frames is None:
        idx = [t for m in list(pred_masklets) + list(gt_masklets) for t in m.track]
        num_frames = max(idx) + 1 if idx else 0
    per, per_frame = [], {}
    for iid in sorted(gt_by_id):
        g, p = gt_by_id[iid], pred_by_id[iid]
        shape = g.shape or p.shape
        if shape is None:
            continue
        rows = evaluate_masklet(p, g, num_frames, shape, tolerance)
        per_frame[iid] = rows
        per.append((iid, _mean([r[1] for r in rows]), _mean([r[2] for r in rows])))
    j = _mean([r[1] for r in per])
    f = _mean([r[2] for r in per])
    return EvalResult(j, f, (j + f) / 2.0, per, per_frame)


# ---------------------------------------------------------------------------
# click simulation


def largest_component(m) -> Optional[np.ndarray]:
    """Largest 4-connected component; ties go to the one reached first in scan order."""
    m = np.asarray(m, dtype=bool)
    labels, n = ndimage.label(m, FOUR_CONNECTED)
    if n == 0:
        return None
    sizes = np.bincount(labels.ravel())[1:]
    # labels are assigned in scan order, so argmax picks the earliest among equal sizes
    return labels == int(np.argmax(sizes)) + 1


def next_click(gt, pred) -> Optional[Click]:
    pred, gt = _pair(pred, gt)
    fn = gt & ~pred
    fp = pred & ~gt
    comp_fn, comp_fp = largest_component(fn), largest_component(fp)
    if comp_fn is None and comp_fp is None:
        return None
    n_fn = int(comp_fn.sum()) if comp_fn is not None else -1
    n_fp = int(comp_fp.sum()) if comp_fp is not None else -1
    if n_fn == n_fp:
        # equal sizes: earliest scanline wins
        first_fn = int(np.flatnonzero(comp_fn.ravel())[0])
        first_fp = int(np.flatnonzero(comp_fp.ravel())[0])
        use_fn = first_fn < first_fp
    else:
        use_fn = n_fn > n_fp
    region = comp_fn if use_fn else comp_fp
    x, y = distance_transform_argmax(region)
    return Click(x, y, POSITIVE if use_fn else NEGATIVE)


@dataclass
class ClickSequence:
    clicks: list[Click]

    def __len__(self):
        return len(self.clicks)


def simulate_clicks(gt, current_pred=None, n: int = 3,
                    segment: Optional[Callable[[list[Click]], np.ndarray]] = None) -> ClickSequence:
    """Interactive click protocol on the prompt frame.

    Click 1 goes to the centre of ``gt``. Each further click goes to the centre
    of the largest error region of the current prediction: positive for a
    missed region, negative for a spurious one. ``current_pred`` is the
    prediction after click 1 (a soft mask is thresholded at 0.5). After each
    click the prediction is recomputed with ``segment(clicks)`` if given;
    otherwise the clicked error region is assumed corrected. With neither
    ``current_pred`` nor ``segment`` only the first click can be placed.
    """
    if n < 1:
        raise ContractViolation("n must be >= 1")
    gt = np.asarray(gt, dtype=bool)
    if not gt.any():
        raise DegenerateInputError("cannot place clicks on an empty ground-truth mask")
    x, y = distance_transform_argmax(gt)
    clicks = [Click(x, y, POSITIVE)]
    if current_pred is not None:
        cur = np.asarray(current_pred)
        pred = cur if cur.dtype == bool else cur > 0.5
    elif segment is not None:
        pred = np.asarray(segment(list(clicks)), dtype=bool)
    else:
        return ClickSequence(clicks)
    while len(clicks) < n:
        c = next_click(gt, pred)
        if c is None:
            break
        clicks.append(c)
        if segment is not None:
            pred = np.asarray(segment(list(clicks)), dtype=bool)
        else:
            region = largest_component((gt & ~pred) if c.polarity == POSITIVE else (pred & ~gt))
            pred = pred | region if c.polarity == POSITIVE else pred & ~region
    return ClickSequence(clicks)


# ---------------------------------------------------------------------------
# throughput


def frames_per_second(frames: int, seconds: float) -> float:
    if frames <= 0:
        raise DegenerateInputError("no frames processed")
    if seconds <= 0:
        seconds = 1e-9
    return frames / seconds


class FpsTimer:
    """Wall-clock throughput over a tracking loop::

        timer = FpsTimer()
        with timer:
            for frame in frames:
                track(frame)
                timer.tick()
    """

    def __init__(self, clock=time.perf_counter):
        self._clock = clock
        self.frames = 0
        self.elapsed = 0.0
        self._start = None

    def __enter__(self):
        self._start = self._clock()
        return self

    def __exit__(self, *exc):
        self.elapsed += self._clock() - self._start
        self._start = None
        return False

    def tick(self, n: int = 1) -> None:
        self.frames += n

    @property
    def fps(self) -> float:
        return frames_per_second(self.frames, self.elapsed)
