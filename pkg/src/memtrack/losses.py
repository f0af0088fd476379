"""Training objectives: label softening with focal loss, the usual mask
and IoU losses, the text-contrastive loss, and their weighted sum."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import cosine_similarity, mask_iou
from .errors import ContractViolation, NumericError

EPS = 1e-7
TAU_MODES = ("inverse", "divide")


@dataclass(frozen=True)
class GaussianKernel:
    sigma: float
    size: int
    weights: np.ndarray

    @classmethod
    def build(cls, sigma: float = 1.0, size: int = 5, normalize: bool = True) -> "GaussianKernel":
        if sigma <= 0:
            raise ContractViolation("sigma must be positive")
        if size < 1 or size % 2 == 0:
            raise ContractViolation(f"kernel size must be odd, got {size}")
        r = size // 2
        u = np.arange(-r, r + 1, dtype=np.float64)
        uu, vv = np.meshgrid(u, u, indexing="ij")
        w = np.exp(-(uu**2 + vv**2) / (2 * sigma**2)) / (2 * math.pi * sigma**2)
        if normalize:
            w = w / math.fsum(w.ravel().tolist())
        w.flags.writeable = False
        return cls(sigma, size, w)


def gaussian_soften(y, kernel: GaussianKernel | None = None) -> np.ndarray:
    """Convolve a hard mask with a truncated Gaussian (replicate padding at borders)."""
    if kernel is None:
        kernel = GaussianKernel.build()
    if kernel.size % 2 == 0:
        raise ContractViolation("kernel size must be odd")
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 2:
        raise ContractViolation("mask must be 2-D")
    r = kernel.size // 2
    padded = np.pad(y, r, mode="edge")
    h, w = y.shape
    out = np.zeros_like(y)
    # fixed accumulation order over kernel offsets
    for di in range(kernel.size):
        for dj in range(kernel.size):
            out += kernel.weights[di, dj] * padded[di:di + h, dj:dj + w]
    return np.clip(out, 0.0, 1.0)


def _check_same(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ContractViolation(f"shape mismatch: {a.shape} vs {b.shape}")


def focal_arl_loss(pred, soft_target, gamma: float = 2.0) -> float:
    """Mean soft-target focal loss; reduces to binary cross-entropy at ``gamma=0``."""
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(soft_target, dtype=np.float64)
    _check_same(p, t)
    p = np.clip(p, EPS, 1.0 - EPS)
    per_pixel = -(t * (1.0 - p) ** gamma * np.log(p) + (1.0 - t) * p**gamma * np.log1p(-p))
    return float(per_pixel.mean())


def dice_loss(pred, target, smooth: float = 1.0) -> float:
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    _check_same(p, t)
    return 1.0 - (2.0 * float((p * t).sum()) + smooth) / (float(p.sum()) + float(t.sum()) + smooth)


def iou_regression_loss(predicted_iou: float, actual_iou: float) -> float:
    return abs(float(predicted_iou) - float(actual_iou))


def occlusion_loss(predicted_visible: float, actually_visible: bool) -> float:
    p = min(max(float(predicted_visible), EPS), 1.0 - EPS)
    return -math.log(p) if actually_visible else -math.log1p(-p)


def effective_tau(tau: float, mode: str = "inverse") -> float:
    """Translate a configured temperature into the divisor applied to similarities.

    ``inverse`` treats the configured value as a logit multiplier (100 -> divide by 0.01),
    ``divide`` uses it literally.
    """
    if mode not in TAU_MODES:
        raise ContractViolation(f"unknown tau mode {mode!r}")
    if tau <= 0:
        raise ContractViolation("tau must be positive")
    return 1.0 / tau if mode == "inverse" else tau


def _log_softmax_at(logits: Sequence[float], index: int) -> float:
    top = max(range(len(logits)), key=lambda i: logits[i])
    m = logits[top]
    # log1p keeps the tail when one logit dominates (loss ~1e-35 instead of 0)
    rest = math.fsum(math.exp(l - m) for i, l in enumerate(logits) if i != top)
    return (logits[index] - m) - math.log1p(rest)


def tsl_contrastive_loss(x, positive_index: int, texts, tau: float) -> float:
    """Negative log softmax probability of the positive category under cosine logits / tau."""
    if len(texts) == 0:
        raise ContractViolation("need at least one text embedding")
    if not 0 <= positive_index < len(texts):
        raise ContractViolation(f"positive_index {positive_index} outside [0, {len(texts)})")
    if tau <= 0:
        raise ContractViolation("tau must be positive")
    logits = [cosine_similarity(x, t) / tau for t in texts]
    return max(0.0, -_log_softmax_at(logits, positive_index))


@dataclass(frozen=True)
class LossWeights:
    lambda_arl: float = 20.0
    lambda_tsl: float = 0.1

    def __post_init__(self):
        if self.lambda_arl < 0 or self.lambda_tsl < 0:
            raise ContractViolation("loss weights must be non-negative")


@dataclass(frozen=True)
class LossReport:
    l_arl: float
    l_iou: float
    l_dice: float
    l_occ: float
    l_tsl: float
    total: float


def total_loss(parts: dict, w: LossWeights = LossWeights(), has_semantic_label: bool = True) -> LossReport:
    """Weighted sum; ``parts`` maps l_arl, l_iou, l_dice, l_occ, l_tsl to values (missing = 0)."""
    vals = {k: float(parts.get(k, 0.0)) for k in ("l_arl", "l_iou", "l_dice", "l_occ", "l_tsl")}
    for k, v in vals.items():
        if math.isnan(v) or math.isinf(v):
            raise NumericError(f"{k} is not finite")
        if v < 0:
            raise ContractViolation(f"{k} must be non-negative")
    if not has_semantic_label:
        vals["l_tsl"] = 0.0
    total = (w.lambda_arl * vals["l_arl"] + vals["l_iou"] + vals["l_dice"] + vals["l_occ"]
             + w.lambda_tsl * vals["l_tsl"])
    return LossReport(total=total, **vals)


def sample_loss(pred_prob, gt_mask, predicted_iou: float, predicted_visible: float,
                kernel: GaussianKernel | None = None, gamma: float = 2.0,
                w: LossWeights = LossWeights(), tsl: float | None = None) -> LossReport:
    """Itemized loss for one frame prediction; ``tsl`` is None for samples without a category."""
    gt = np.asarray(gt_mask, dtype=bool)
    pred_prob = np.asarray(pred_prob, dtype=np.float64)
    soft = gaussian_soften(gt, kernel)
    parts = {
        "l_arl": focal_arl_loss(pred_prob, soft, gamma),
        "l_dice": dice_loss(pred_prob, gt),
        "l_iou": iou_regression_loss(predicted_iou, mask_iou(pred_prob > 0.5, gt)),
        "l_occ": occlusion_loss(predicted_visible, bool(gt.any())),
        "l_tsl": 0.0 if tsl is None else tsl,
    }
    return total_loss(parts, w, has_semantic_label=tsl is not None)
