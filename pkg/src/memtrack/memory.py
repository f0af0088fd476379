"""Diversity-selected memory bank.

The bank keeps three stores for one tracked object:

* the initial (prompt-frame) entry, never evicted;
* a long-term FIFO of at most ``n_long`` entries, filled only after the
  target has been confidently present for ``delta`` consecutive frames, with
  the buffered candidate least similar to the latest long-term frame;
* a short-term FIFO holding the most recent ``n_short`` observations.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .core import as_embedding, cosine_similarity
from .errors import ContractViolation

MODES = ("divemem", "greedy_recent", "short_only")


@dataclass(frozen=True)
class MemoryEntry:
    frame_index: int
    embedding: np.ndarray
    mask: np.ndarray
    confidence: float
    temporal_embedding_id: Optional[int] = None

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ContractViolation(f"confidence {self.confidence} outside [0, 1]")
        object.__setattr__(self, "embedding", as_embedding(self.embedding))

    @property
    def present(self) -> bool:
        return bool(np.any(np.asarray(self.mask) > 0.5))


@dataclass(frozen=True)
class MemoryConfig:
    delta: int = 5
    gamma_iou: float = 0.95
    n_long: int = 4
    n_short: int = 6

    def __post_init__(self):
        if self.delta < 1:
            raise ContractViolation("delta must be >= 1")
        if not 0.0 <= self.gamma_iou <= 1.0:
            raise ContractViolation("gamma_iou must lie in [0, 1]")
        if self.n_long < 1 or self.n_short < 1:
            raise ContractViolation("memory capacities must be >= 1")


def select_diverse(buffer: list[MemoryEntry], latest_long: MemoryEntry) -> MemoryEntry:
    """Pick the candidate whose embedding has the lowest cosine similarity to ``latest_long``.

    Ties resolve to the earliest frame index.
    """
    if not buffer:
        raise ContractViolation("cannot select from an empty candidate buffer")
    best = None
    best_key = None
    for b in buffer:
        key = (cosine_similarity(b.embedding, latest_long.embedding), b.frame_index)
        if best_key is None or key < best_key:
            best, best_key = b, key
    return best


@dataclass
class Transition:
    """One bank update, as written to debug traces."""

    frame_index: int
    confidence: float
    present: bool
    stable: bool
    streak: int
    buffer: list[int]
    admitted: Optional[int]
    evicted: Optional[int]
    long_term: list[int]
    short_term: list[int]

    def to_json(self) -> str:
        d = dict(self.__dict__)
        d["confidence"] = float(self.confidence)
        return json.dumps(d, sort_keys=True)


class MemoryBank:
    """Memory for one object in one session. Not thread-safe; use one bank per writer.

    ``mode`` selects the memory policy: ``divemem`` (full mechanism),
    ``greedy_recent`` (initial entry plus recent frames only) or
    ``short_only`` (recent frames only; the initial entry is read only until
    the first observation arrives).
    """

    def __init__(self, initial: MemoryEntry, config: MemoryConfig = MemoryConfig(), mode: str = "divemem"):
        if mode not in MODES:
            raise ContractViolation(f"unknown memory mode {mode!r}")
        self.config = config
        self.mode = mode
        self.initial = initial
        self.long_term: deque[MemoryEntry] = deque()
        self.short_term: deque[MemoryEntry] = deque()
        self.buffer: list[MemoryEntry] = []
        self.stable_streak = 0
        self.admissions = 0
        self.last_index = initial.frame_index
        self.trace: list[Transition] = []

    @property
    def latest_long(self) -> MemoryEntry:
        return self.long_term[-1] if self.long_term else self.initial

    def observe(self, entry: MemoryEntry) -> Transition:
        if entry.frame_index <= self.last_index:
            raise ContractViolation(
                f"frame {entry.frame_index} observed after frame {self.last_index}; indices must increase"
            )
        cfg = self.config
        self.last_index = entry.frame_index
        self.short_term.append(entry)
        if len(self.short_term) > cfg.n_short:
            self.short_term.popleft()

        admitted = evicted = None
        stable = entry.confidence > cfg.gamma_iou and entry.present
        if self.mode == "divemem":
            if stable:
                self.stable_streak += 1
                self.buffer.append(entry)
            else:
                self.stable_streak = 0
                self.buffer.clear()
            if self.stable_streak >= cfg.delta:
                chosen = select_diverse(self.buffer, self.latest_long)
                self.long_term.append(chosen)
                if len(self.long_term) > cfg.n_long:
                    evicted = self.long_term.popleft().frame_index
                admitted = chosen.frame_index
                self.admissions += 1
                self.buffer.clear()
                self.stable_streak = 0

        t = Transition(
            frame_index=entry.frame_index,
            confidence=entry.confidence,
            present=entry.present,
            stable=stable,
            streak=self.stable_streak,
            buffer=[b.frame_index for b in self.buffer],
            admitted=admitted,
            evicted=evicted,
            long_term=[e.frame_index for e in self.long_term],
            short_term=[e.frame_index for e in self.short_term],
        )
        self.trace.append(t)
        return t

    def assemble_context(self) -> list[MemoryEntry]:
        """Initial entry, then long-term oldest to newest, then short-term oldest to newest.

        Each frame appears once, at its earliest position. Long-term entries are
        tagged with their queue slot as ``temporal_embedding_id``.
        """
        out: list[MemoryEntry] = []
        seen: set[int] = set()
        # short_only still needs something to read before its first observation
        if self.mode != "short_only" or not self.short_term:
            out.append(self.initial)
            seen.add(self.initial.frame_index)
        for slot, e in enumerate(self.long_term):
            if e.frame_index not in seen:
                out.append(replace(e, temporal_embedding_id=slot))
                seen.add(e.frame_index)
        for e in self.short_term:
            if e.frame_index not in seen:
                out.append(e)
                seen.add(e.frame_index)
        return out

    def state_fingerprint(self) -> tuple:
        """Hashable summary used for determinism checks."""
        return (
            self.initial.frame_index,
            tuple(e.frame_index for e in self.long_term),
            tuple(e.frame_index for e in self.short_term),
            tuple(e.frame_index for e in self.buffer),
            self.stable_streak,
            self.admissions,
        )

    def dump_trace(self) -> str:
        return "\n".join(t.to_json() for t in self.trace) + ("\n" if self.trace else "")


def observe(bank: MemoryBank, entry: MemoryEntry) -> MemoryBank:
    bank.observe(entry)
    return bank


def assemble_context(bank: MemoryBank) -> list[MemoryEntry]:
    return bank.assemble_context()
