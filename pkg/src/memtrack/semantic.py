"""Semantic head: a learnable class token that reads the memory, then the current
frame, and is trained contrastively against category embeddings.

Both attention stages are single-head scaled dot-product attention with a
residual connection and no normalization. Gradients are derived by hand.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ContractViolation, ManifestReadError, TrainingDivergedError

ATTN_NAMES = ("wq", "wk", "wv", "wo")


def _softmax(s: np.ndarray) -> np.ndarray:
    e = np.exp(s - s.max())
    return e / e.sum()


@dataclass
class SemanticHead:
    dim: int
    cls_token: np.ndarray
    attn1: dict[str, np.ndarray]
    attn2: dict[str, np.ndarray]
    temporal_embeddings: np.ndarray  # (n_slots, dim)
    seed: int = 0

    @classmethod
    def init(cls, dim: int, n_slots: int = 4, seed: int = 0, std: float = 0.02,
             zero_projections: bool = False) -> "SemanticHead":
        rng = np.random.default_rng(seed)
        cls_token = rng.normal(0.0, std, dim)

        def block():
            if zero_projections:
                return {n: np.zeros((dim, dim)) for n in ATTN_NAMES}
            return {n: rng.normal(0.0, std, (dim, dim)) for n in ATTN_NAMES}

        a1, a2 = block(), block()
        return cls(dim, cls_token, a1, a2, np.zeros((n_slots, dim)), seed)

    def params(self) -> dict[str, np.ndarray]:
        """Flat name -> array view of every learnable parameter."""
        p = {"cls_token": self.cls_token, "temporal_embeddings": self.temporal_embeddings}
        for n in ATTN_NAMES:
            p[f"attn1.{n}"] = self.attn1[n]
            p[f"attn2.{n}"] = self.attn2[n]
        return p

    def copy(self) -> "SemanticHead":
        return SemanticHead(
            self.dim, self.cls_token.copy(),
            {k: v.copy() for k, v in self.attn1.items()},
            {k: v.copy() for k, v in self.attn2.items()},
            self.temporal_embeddings.copy(), self.seed,
        )

    def check(self) -> None:
        for name, arr in self.params().items():
            if not np.all(np.isfinite(arr)):
                raise ContractViolation(f"parameter {name} is not finite")
            if name.startswith("attn") and arr.shape != (self.dim, self.dim):
                raise ContractViolation(f"{name} must be {self.dim}x{self.dim}")


@dataclass
class CategoryRegistry:
    categories: list[str]
    embeddings: np.ndarray  # (K, dim), unit rows

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        if len(self.categories) < 1:
            raise ContractViolation("registry needs at least one category")
        if len(set(self.categories)) != len(self.categories):
            raise ContractViolation("category names must be unique")
        if self.embeddings.shape[0] != len(self.categories):
            raise ContractViolation("one embedding per category required")
        norms = np.linalg.norm(self.embeddings, axis=1)
        if np.any(norms == 0):
            raise ContractViolation("zero category embedding")
        self.embeddings = self.embeddings / norms[:, None]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    def index(self, category: str) -> int:
        try:
            return self.categories.index(category)
        except ValueError:
            raise ContractViolation(f"category {category!r} not in registry") from None

    @classmethod
    def random(cls, categories: Sequence[str], dim: int, seed: int = 0) -> "CategoryRegistry":
        rng = np.random.default_rng(seed)
        return cls(list(categories), rng.normal(size=(len(categories), dim)))

    @classmethod
    def load(cls, path) -> "CategoryRegistry":
        names, vecs = [], []
        try:
            with open(path) as fh:
                for line in fh:
                    parts = line.split()
                    if not parts or parts[0].startswith("#"):
                        continue
                    names.append(parts[0])
                    vecs.append([float(v) for v in parts[1:]])
        except (OSError, ValueError) as exc:
            raise ManifestReadError(f"cannot read registry {path}: {exc}") from exc
        if len({len(v) for v in vecs}) > 1:
            raise ContractViolation("registry vectors have inconsistent dimensions")
        return cls(names, np.array(vecs))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            for name, v in zip(self.categories, self.embeddings):
                fh.write(name + " " + " ".join(repr(float(x)) for x in v) + "\n")


# ---------------------------------------------------------------------------
# forward / backward


def _stage_forward(x: np.ndarray, feats: np.ndarray, p: dict[str, np.ndarray]):
    d = x.shape[0]
    scale = 1.0 / math.sqrt(d)
    q = p["wq"] @ x
    k = feats @ p["wk"].T
    v = feats @ p["wv"].T
    a = _softmax(k @ q * scale)
    c = v.T @ a
    y = x + p["wo"] @ c
    return y, (x, feats, q, k, v, a, c, scale)


def _stage_backward(gy: np.ndarray, p: dict[str, np.ndarray], cache):
    x, feats, q, k, v, a, c, scale = cache
    g = {"wo": np.outer(gy, c)}
    gc = p["wo"].T @ gy
    ga = v @ gc
    gv = np.outer(a, gc)
    g["wv"] = gv.T @ feats
    gs = a * (ga - a @ ga)
    gq = (k.T @ gs) * scale
    gk = np.outer(gs, q) * scale
    g["wk"] = gk.T @ feats
    g["wq"] = np.outer(gq, x)
    gx = gy + p["wq"].T @ gq
    gfeats = gv @ p["wv"] + gk @ p["wk"]
    return gx, gfeats, g


def _memory_matrix(head: SemanticHead, memory_feats, memory_slots) -> np.ndarray:
    m = np.asarray(memory_feats, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] == 0 or m.shape[1] != head.dim:
        raise ContractViolation(f"memory features must be a non-empty (n, {head.dim}) array")
    if memory_slots is not None:
        if len(memory_slots) != m.shape[0]:
            raise ContractViolation("one slot id (or None) per memory feature required")
        m = m.copy()
        for i, s in enumerate(memory_slots):
            if s is not None:
                m[i] += head.temporal_embeddings[s]
    return m


def _frame_matrix(head: SemanticHead, frame_feats) -> np.ndarray:
    f = np.asarray(frame_feats, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] == 0 or f.shape[1] != head.dim:
        raise ContractViolation(f"frame features must be a non-empty (n, {head.dim}) array")
    return f


def tsl_forward(head: SemanticHead, memory_feats, frame_feats,
                memory_slots: Optional[Sequence[Optional[int]]] = None) -> np.ndarray:
    """Temporal semantic representation of the tracked object.

    ``memory_slots[i]`` names the temporal embedding added to memory feature
    ``i`` (None for short-term features).
    """
    m = _memory_matrix(head, memory_feats, memory_slots)
    f = _frame_matrix(head, frame_feats)
    h, _ = _stage_forward(head.cls_token, m, head.attn1)
    out, _ = _stage_forward(h, f, head.attn2)
    return out


def _loss_and_grad_out(out: np.ndarray, texts: np.ndarray, positive_index: int, tau: float):
    no = float(np.linalg.norm(out))
    nt = np.linalg.norm(texts, axis=1)
    cos = (texts @ out) / (nt * no)
    logits = cos / tau
    p = _softmax(logits)
    top = int(np.argmax(logits))
    rest = math.fsum(math.exp(v) for i, v in enumerate((logits - logits[top]).tolist()) if i != top)
    loss = float(logits[top] - logits[positive_index]) + math.log1p(rest)
    dl = p.copy()
    dl[positive_index] -= 1.0
    dl /= tau
    # d cos_k / d out = t_k / (|t_k||o|) - cos_k * o / |o|^2
    g_out = (dl / nt) @ texts / no - float(dl @ cos) * out / no**2
    return max(0.0, loss), g_out


def tsl_loss(head: SemanticHead, memory_feats, frame_feats, texts, positive_index: int, tau: float,
             memory_slots=None) -> float:
    out = tsl_forward(head, memory_feats, frame_feats, memory_slots)
    loss, _ = _loss_and_grad_out(out, np.asarray(texts, dtype=np.float64), positive_index, tau)
    return loss


def tsl_backward(head: SemanticHead, memory_feats, frame_feats, texts, positive_index: int, tau: float,
                 memory_slots=None) -> tuple[float, dict[str, np.ndarray]]:
    """Loss and analytic gradients for every parameter (keys as in ``SemanticHead.params``).

    ``texts`` is a (K, dim) array or a CategoryRegistry.
    """
    if isinstance(texts, CategoryRegistry):
        texts = texts.embeddings
    texts = np.asarray(texts, dtype=np.float64)
    if texts.ndim != 2 or texts.shape[0] == 0 or texts.shape[1] != head.dim:
        raise ContractViolation("texts must be a non-empty (K, dim) array")
    if not 0 <= positive_index < texts.shape[0]:
        raise ContractViolation("positive_index out of range")
    m = _memory_matrix(head, memory_feats, memory_slots)
    f = _frame_matrix(head, frame_feats)
    h, cache1 = _stage_forward(head.cls_token, m, head.attn1)
    out, cache2 = _stage_forward(h, f, head.attn2)
    loss, g_out = _loss_and_grad_out(out, texts, positive_index, tau)

    gh, _, g2 = _stage_backward(g_out, head.attn2, cache2)
    gx, gm, g1 = _stage_backward(gh, head.attn1, cache1)

    grads = {"cls_token": gx, "temporal_embeddings": np.zeros_like(head.temporal_embeddings)}
    if memory_slots is not None:
        for i, s in enumerate(memory_slots):
            if s is not None:
                grads["temporal_embeddings"][s] += gm[i]
    for n in ATTN_NAMES:
        grads[f"attn1.{n}"] = g1[n]
        grads[f"attn2.{n}"] = g2[n]
    return loss, grads


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainingSample:
    memory_feats: np.ndarray
    frame_feats: np.ndarray
    category: str
    memory_slots: Optional[list] = None


@dataclass
class TrainResult:
    head: SemanticHead
    losses: list[float] = field(default_factory=list)


def train_head(head: SemanticHead, dataset: Sequence[TrainingSample], registry: CategoryRegistry,
               steps: int, lr: float, tau: float) -> TrainResult:
    """Full-batch gradient descent on the mean contrastive loss.

    ``losses[i]`` is the mean loss before update ``i``.
    """
    if lr < 0:
        raise ContractViolation("learning rate must be non-negative")
    head = head.copy()
    if not dataset:
        return TrainResult(head, [])
    idx = [registry.index(s.category) for s in dataset]
    curve: list[float] = []
    for step in range(steps):
        total = 0.0
        acc = {k: np.zeros_like(v) for k, v in head.params().items()}
        for s, k in zip(dataset, idx):
            loss, g = tsl_backward(head, s.memory_feats, s.frame_feats, registry.embeddings, k, tau,
                                   s.memory_slots)
            total += loss
            for name in acc:
                acc[name] += g[name]
        mean_loss = total / len(dataset)
        if not math.isfinite(mean_loss):
            raise TrainingDivergedError(step)
        curve.append(mean_loss)
        for name, arr in head.params().items():
            arr -= lr * acc[name] / len(dataset)
        if not all(np.all(np.isfinite(a)) for a in head.params().values()):
            raise TrainingDivergedError(step)
    return TrainResult(head, curve)


# ---------------------------------------------------------------------------
# checkpoints: one JSON header line, then one parameter value per line


def save_checkpoint(head: SemanticHead, path, num_categories: int = 0) -> None:
    params = head.params()
    header = {
        "dim": head.dim,
        "K": num_categories,
        "seed": head.seed,
        "n_slots": int(head.temporal_embeddings.shape[0]),
        "order": list(params),
    }
    flat = np.concatenate([a.ravel() for a in params.values()])
    with open(path, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        fh.writelines(f"{float(v)!r}\n" for v in flat)


def load_checkpoint(path) -> tuple[SemanticHead, dict]:
    try:
        lines = Path(path).read_text().splitlines()
        header = json.loads(lines[0])
        flat = np.array([float(v) for v in lines[1:] if v.strip()])
    except (OSError, ValueError, IndexError) as exc:
        raise ManifestReadError(f"cannot read checkpoint {path}: {exc}") from exc
    head = SemanticHead.init(header["dim"], header["n_slots"], header["seed"])
    pos = 0
    for name, arr in head.params().items():
        n = arr.size
        if pos + n > flat.size:
            raise ManifestReadError(f"checkpoint {path} is truncated")
        arr[...] = flat[pos:pos + n].reshape(arr.shape)
        pos += n
    if pos != flat.size:
        raise ManifestReadError(f"checkpoint {path} has {flat.size - pos} trailing values")
    return head, header
