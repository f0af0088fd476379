"""A working tracker built on the memory bank.

Frames are embedded into a grid of patch features. Each patch of a new frame
takes a similarity-weighted vote over the labelled patches of every memory
entry in the bank's context; the resulting patch probabilities are upsampled
to a pixel mask. Nothing here is learned.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import ndimage

from ..core import NEGATIVE, POSITIVE, Click, Frame, Prompt
from ..errors import ContractViolation
from ..memory import MemoryBank, MemoryConfig, MemoryEntry

FEATURE_DIM = 6


@dataclass(frozen=True)
class PatchEmbedder:
    """Per-patch mean colour (3), weighted patch centre (2) and weighted intensity variance (1)."""

    patch: int = 4
    position_weight: float = 1.0
    variance_weight: float = 1.0

    def grid_shape(self, height: int, width: int) -> tuple[int, int]:
        if height % self.patch or width % self.patch:
            raise ContractViolation(f"frame {width}x{height} not divisible by patch size {self.patch}")
        return height // self.patch, width // self.patch

    def __call__(self, pixels: np.ndarray) -> np.ndarray:
        h, w, _ = pixels.shape
        gh, gw = self.grid_shape(h, w)
        p = self.patch
        blocks = pixels.reshape(gh, p, gw, p, 3).transpose(0, 2, 1, 3, 4).reshape(gh, gw, p * p, 3)
        mean = blocks.mean(axis=2)
        var = blocks.mean(axis=3).var(axis=2)
        yy, xx = np.mgrid[0:gh, 0:gw]
        pos = np.stack([(xx + 0.5) / gw, (yy + 0.5) / gh], axis=-1) * self.position_weight
        feats = np.concatenate([mean, pos, var[..., None] * self.variance_weight], axis=-1)
        return feats.reshape(gh * gw, FEATURE_DIM)


def patch_labels(mask: np.ndarray, patch: int) -> np.ndarray:
    h, w = mask.shape
    return mask.reshape(h // patch, patch, w // patch, patch).mean(axis=(1, 3)).ravel()


def upsample(patch_probs: np.ndarray, grid: tuple[int, int], patch: int,
             pixels: Optional[np.ndarray] = None, patch_colors: Optional[np.ndarray] = None,
             color_sigma: float = 0.1) -> np.ndarray:
    """Patch probabilities to pixel probabilities.

    Without ``pixels`` this is bilinear interpolation between patch centres.
    With ``pixels`` and ``patch_colors`` it is a joint bilateral upsample over
    the 3x3 patch neighbourhood: neighbours whose mean colour matches the
    pixel get more say.
    """
    gh, gw = grid
    h, w = gh * patch, gw * patch
    if pixels is None:
        ys = (np.arange(h) + 0.5) / patch - 0.5
        xs = (np.arange(w) + 0.5) / patch - 0.5
        yy, xx = np.meshgrid(ys, xs, indexing="ij")
        out = ndimage.map_coordinates(patch_probs.reshape(grid), [yy, xx], order=1, mode="nearest")
        return np.clip(out, 0.0, 1.0)

    probs = np.pad(patch_probs.reshape(grid), 1, mode="edge")
    colors = np.pad(patch_colors.reshape(gh, gw, 3), ((1, 1), (1, 1), (0, 0)), mode="edge")
    yy, xx = np.mgrid[0:h, 0:w]
    py, px = yy // patch, xx // patch
    num = np.zeros((h, w))
    den = np.zeros((h, w))
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            ny, nx = py + dy, px + dx
            cy, cx = (ny + 0.5) * patch, (nx + 0.5) * patch
            spatial = ((yy + 0.5 - cy) ** 2 + (xx + 0.5 - cx) ** 2) / (2.0 * patch**2)
            dc = ((pixels - colors[ny + 1, nx + 1]) ** 2).sum(-1) / (2.0 * color_sigma**2)
            wgt = np.exp(-(spatial + dc))
            num += wgt * probs[ny + 1, nx + 1]
            den += wgt
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(den > 0, num / np.maximum(den, 1e-300), 0.0)
    return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------------------
# prompt-frame segmentation


def _flood(pixels: np.ndarray, x: int, y: int, tol: float, within: Optional[np.ndarray] = None) -> np.ndarray:
    h, w, _ = pixels.shape
    y0, y1, x0, x1 = max(0, y - 1), min(h, y + 2), max(0, x - 1), min(w, x + 2)
    seed = np.median(pixels[y0:y1, x0:x1].reshape(-1, 3), axis=0)
    close = np.linalg.norm(pixels - seed, axis=-1) < tol
    if within is not None:
        close &= within
    labels, _ = ndimage.label(close)
    lab = labels[y, x]
    return labels == lab if lab else np.zeros((h, w), dtype=bool)


def segment_prompt(frame: Frame, prompt: Prompt, tol: float = 0.2) -> np.ndarray:
    """Frame-0 mask from a prompt: colour flood fill from clicks, box-restricted fill, or the mask itself."""
    h, w = frame.shape
    prompt.check_bounds(h, w)
    if prompt.kind == "mask":
        return prompt.mask.copy()
    if prompt.kind == "box":
        x0, y0, x1, y1 = prompt.box
        inside = np.zeros((h, w), dtype=bool)
        inside[y0:y1 + 1, x0:x1 + 1] = True
        return _flood(frame.pixels, (x0 + x1) // 2, (y0 + y1) // 2, tol, inside)
    m = np.zeros((h, w), dtype=bool)
    for c in prompt.clicks:
        if c.polarity == POSITIVE:
            m |= _flood(frame.pixels, c.x, c.y, tol)
    for c in prompt.clicks:
        if c.polarity == NEGATIVE:
            m &= ~_flood(frame.pixels, c.x, c.y, tol)
    return m


def click_segmenter(frame: Frame, tol: float = 0.2) -> Callable[[list[Click]], np.ndarray]:
    def run(clicks: list[Click]) -> np.ndarray:
        return segment_prompt(frame, Prompt.from_clicks(clicks), tol)
    return run


# ---------------------------------------------------------------------------
# session


@dataclass
class PropagatorParams:
    vote_temperature: float = 0.002
    confidence_temperature: float = 0.02
    threshold: float = 0.5
    color_sigma: float = 0.1


@dataclass
class TrackerSession:
    embedder: PatchEmbedder = field(default_factory=PatchEmbedder)
    memory: MemoryConfig = field(default_factory=MemoryConfig)
    mode: str = "divemem"
    params: PropagatorParams = field(default_factory=PropagatorParams)
    temporal_embeddings: Optional[np.ndarray] = None  # (n_slots, FEATURE_DIM)
    bank: Optional[MemoryBank] = None
    grid: Optional[tuple[int, int]] = None
    prompt_events: list[int] = field(default_factory=list)
    last_index: int = -1

    def start(self, frame: Frame, prompt: Prompt, mask: Optional[np.ndarray] = None) -> np.ndarray:
        """Prompt the session on its first frame; returns the prompt-frame mask."""
        if self.bank is not None:
            raise ContractViolation("prompts are accepted only on the first frame of a session")
        m = segment_prompt(frame, prompt) if mask is None else np.asarray(mask, dtype=bool)
        self.grid = self.embedder.grid_shape(*frame.shape)
        feats = self.embedder(frame.pixels)
        initial = MemoryEntry(frame.index, feats.ravel(), m.astype(np.float64), 1.0)
        self.bank = MemoryBank(initial, self.memory, self.mode)
        self.prompt_events.append(frame.index)
        self.last_index = frame.index
        return m

    def _keys(self, context: Sequence[MemoryEntry]) -> tuple[np.ndarray, np.ndarray]:
        keys, labels = [], []
        for e in context:
            k = e.embedding.reshape(-1, FEATURE_DIM)
            if e.temporal_embedding_id is not None and self.temporal_embeddings is not None:
                k = k + self.temporal_embeddings[e.temporal_embedding_id]
            keys.append(k)
            labels.append(patch_labels(np.asarray(e.mask), self.embedder.patch))
        return np.concatenate(keys), np.concatenate(labels)

    def propagate(self, frame: Frame) -> tuple[np.ndarray, float]:
        """Predict the soft mask for ``frame`` and feed the result to the memory bank."""
        if self.bank is None:
            raise ContractViolation("session has not been prompted")
        if frame.index <= self.last_index:
            raise ContractViolation(f"frame {frame.index} arrives after frame {self.last_index}")
        self.last_index = frame.index
        q = self.embedder(frame.pixels)
        keys, labels = self._keys(self.bank.assemble_context())
        d2 = (q**2).sum(1)[:, None] + (keys**2).sum(1)[None, :] - 2.0 * q @ keys.T
        d2 = np.maximum(d2, 0.0)
        best = d2.min(axis=1)
        logits = -(d2 - best[:, None]) / self.params.vote_temperature
        w = np.exp(logits)
        probs = (w @ labels) / w.sum(axis=1)
        soft = upsample(probs, self.grid, self.embedder.patch, frame.pixels, q[:, :3], self.params.color_sigma)
        mask = soft > self.params.threshold

        fg = probs > self.params.threshold
        if fg.any():
            confidence = float(np.exp(-best[fg] / self.params.confidence_temperature).mean())
        else:
            confidence = 0.0
        confidence = min(1.0, max(0.0, confidence))
        self.bank.observe(MemoryEntry(frame.index, q.ravel(), mask.astype(np.float64), confidence))
        return soft, confidence


def propagate_frame(session: TrackerSession, frame: Frame) -> tuple[np.ndarray, float]:
    return session.propagate(frame)
