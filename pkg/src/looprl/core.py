"""MDP data types, replay buffer and return arithmetic."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .serialization import read_arrays, write_arrays


def discounted_return(rewards: Iterable[float], gamma: float) -> float:
    """Sum of ``gamma**t * r_t`` over the sequence."""
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    total = 0.0
    scale = 1.0
    for r in rewards:
        if not math.isfinite(r):
            raise ValueError(f"non-finite reward {r}")
        total += scale * r
        scale *= gamma
    return total


@dataclass(frozen=True)
class DiscountSpec:
    gamma: float

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")


@dataclass
class Transition:
    """One environment step. ``c`` is the constraint cost (0 when unconstrained)."""

    s: np.ndarray
    a: np.ndarray
    r: float
    c: float
    s_next: np.ndarray
    done: bool


@dataclass
class Batch:
    """Columnar batch; ``a_next`` is only filled by :meth:`ReplayBuffer.sample_sarsa`."""

    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    c: np.ndarray
    s_next: np.ndarray
    done: np.ndarray
    a_next: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.r)


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions.

    Besides the transition columns the buffer tracks ``has_next``: whether the
    slot written right after a transition holds its successor within the same
    episode. SARSA-style sampling relies on it to fetch ``a_next``.
    """

    def __init__(self, capacity: int, obs_dim: int, act_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.obs_dim = int(obs_dim)
        self.act_dim = int(act_dim)
        self.s = np.zeros((capacity, obs_dim))
        self.a = np.zeros((capacity, act_dim))
        self.r = np.zeros(capacity)
        self.c = np.zeros(capacity)
        self.s_next = np.zeros((capacity, obs_dim))
        self.done = np.zeros(capacity)
        self.has_next = np.zeros(capacity, dtype=bool)
        self.size = 0
        self.ptr = 0

    def __len__(self) -> int:
        return self.size

    def push(self, t: Transition) -> None:
        s = np.asarray(t.s, dtype=np.float64)
        a = np.asarray(t.a, dtype=np.float64)
        s_next = np.asarray(t.s_next, dtype=np.float64)
        if s.shape != (self.obs_dim,) or s_next.shape != (self.obs_dim,):
            raise ValueError(f"state shape {s.shape}/{s_next.shape}, expected ({self.obs_dim},)")
        if a.shape != (self.act_dim,):
            raise ValueError(f"action shape {a.shape}, expected ({self.act_dim},)")
        if not math.isfinite(t.r):
            raise ValueError(f"non-finite reward {t.r}")
        if not (math.isfinite(t.c) and t.c >= 0.0):
            raise ValueError(f"cost must be finite and >= 0, got {t.c}")
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(a)) and np.all(np.isfinite(s_next))):
            raise ValueError("non-finite state or action")

        i = self.ptr
        if self.size > 0:
            prev = (i - 1) % self.capacity
            self.has_next[prev] = (not self.done[prev]) and np.array_equal(self.s_next[prev], s)
        self.s[i] = s
        self.a[i] = a
        self.r[i] = t.r
        self.c[i] = t.c
        self.s_next[i] = s_next
        self.done[i] = float(bool(t.done))
        self.has_next[i] = False
        self.ptr = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def _slot(self, k):
        """Physical slot(s) of the k-th oldest stored transition(s)."""
        start = self.ptr if self.size == self.capacity else 0
        return (start + k) % self.capacity

    def __getitem__(self, k: int) -> Transition:
        if not 0 <= k < self.size:
            raise IndexError(k)
        i = self._slot(k)
        return Transition(self.s[i].copy(), self.a[i].copy(), float(self.r[i]), float(self.c[i]),
                          self.s_next[i].copy(), bool(self.done[i]))

    def gather(self, slots: np.ndarray) -> Batch:
        return Batch(self.s[slots], self.a[slots], self.r[slots], self.c[slots],
                     self.s_next[slots], self.done[slots])

    def sample(self, n: int, rng: np.random.Generator) -> Batch:
        """Uniform sample of ``n`` distinct stored transitions.

        Draws depend only on the logical (oldest-first) order, so a reloaded
        buffer reproduces the same batches.
        """
        if n > self.size:
            raise ValueError(f"cannot sample {n} from buffer of size {self.size}")
        ks = rng.choice(self.size, size=n, replace=False)
        return self.gather(self._slot(ks))

    def sample_sarsa(self, n: int, rng: np.random.Generator) -> Batch:
        """Sample transitions together with the action taken at ``s_next``.

        Only transitions that are terminal or whose successor is stored are
        eligible; ``a_next`` is zero for terminal ones.
        """
        order = self._slot(np.arange(self.size))
        eligible = np.flatnonzero((self.done[order] > 0) | self.has_next[order])
        if n > len(eligible):
            raise ValueError(f"only {len(eligible)} transitions have a stored successor")
        slots = order[eligible[rng.choice(len(eligible), size=n, replace=False)]]
        batch = self.gather(slots)
        a_next = self.a[(slots + 1) % self.capacity].copy()
        a_next[batch.done > 0] = 0.0
        batch.a_next = a_next
        return batch

    def all(self) -> Batch:
        return self.gather(self._slot(np.arange(self.size)))

    # -- persistence -------------------------------------------------------

    def save(self, path: str | Path, provenance: dict | None = None) -> None:
        """Write the buffer as a columnar dataset file (oldest first)."""
        order = self._slot(np.arange(self.size))
        arrays = {
            "s": self.s[order], "a": self.a[order], "r": self.r[order], "c": self.c[order],
            "s_next": self.s_next[order], "done": self.done[order],
            "has_next": self.has_next[order].astype(np.float64),
        }
        meta = {"kind": "replay_buffer", "obs_dim": self.obs_dim, "act_dim": self.act_dim,
                "capacity": self.capacity, "size": self.size, "provenance": provenance or {}}
        write_arrays(path, arrays, meta)

    @classmethod
    def load(cls, path: str | Path, capacity: int | None = None) -> "ReplayBuffer":
        arrays, meta = read_arrays(path)
        if meta.get("kind") != "replay_buffer":
            raise ValueError(f"{path}: not a replay buffer file")
        size = int(meta["size"])
        buf = cls(capacity or max(int(meta["capacity"]), size, 1), meta["obs_dim"], meta["act_dim"])
        if size > buf.capacity:
            raise ValueError("capacity smaller than stored dataset")
        buf.s[:size] = arrays["s"]
        buf.a[:size] = arrays["a"]
        buf.r[:size] = arrays["r"]
        buf.c[:size] = arrays["c"]
        buf.s_next[:size] = arrays["s_next"]
        buf.done[:size] = arrays["done"]
        buf.has_next[:size] = arrays["has_next"] > 0
        buf.size = size
        buf.ptr = size % buf.capacity
        return buf


def stack_transitions(transitions: Sequence[Transition]) -> Batch:
    return Batch(
        np.array([t.s for t in transitions], dtype=np.float64),
        np.array([t.a for t in transitions], dtype=np.float64),
        np.array([t.r for t in transitions], dtype=np.float64),
        np.array([t.c for t in transitions], dtype=np.float64),
        np.array([t.s_next for t in transitions], dtype=np.float64),
        np.array([float(t.done) for t in transitions], dtype=np.float64),
    )
