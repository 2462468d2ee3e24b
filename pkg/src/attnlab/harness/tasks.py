"""Seeded synthetic sequence tasks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError


@dataclass(frozen=True)
class Dataset:
    kind: str
    vocab: int
    t: int
    train_x: np.ndarray
    train_y: np.ndarray
    eval_x: np.ndarray
    eval_y: np.ndarray

    @property
    def readout(self) -> str:
        return "cls" if self.kind == "majority" else "token"

    @property
    def n_classes(self) -> int:
        return self.vocab


def reverse_targets(x: np.ndarray) -> np.ndarray:
    return x[..., ::-1].copy()


def majority_label(x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(x)
    vocab = int(x.max()) + 1
    counts = np.zeros((x.shape[0], vocab), dtype=np.int64)
    np.add.at(counts, (np.repeat(np.arange(x.shape[0]), x.shape[1]), x.reshape(-1)), 1)
    return counts.argmax(axis=1)


def _unique_mode_sequences(rng, n, vocab, t):
    out = np.empty((n, t), dtype=np.int64)
    filled = 0
    while filled < n:
        cand = rng.integers(0, vocab, size=(2 * (n - filled) + 8, t))
        counts = np.zeros((cand.shape[0], vocab), dtype=np.int64)
        np.add.at(counts, (np.repeat(np.arange(cand.shape[0]), t), cand.reshape(-1)), 1)
        top2 = np.sort(counts, axis=1)[:, -2:]
        ok = cand[top2[:, 1] > top2[:, 0]]
        take = min(len(ok), n - filled)
        out[filled : filled + take] = ok[:take]
        filled += take
    return out


def make_task(kind: str, vocab: int, t: int, n_train: int, n_eval: int, seed: int) -> Dataset:
    """Copy and Reverse map a sequence to a sequence (per-token targets);
    Majority maps it to its most frequent token (sequences with a tied mode are
    never generated)."""
    if vocab < 2 or t < 2:
        raise ConfigError("tasks need vocab >= 2 and t >= 2")
    rng = np.random.default_rng(seed)
    n = n_train + n_eval
    if kind == "majority":
        x = _unique_mode_sequences(rng, n, vocab, t)
        y = majority_label(x)
    elif kind in ("copy", "reverse"):
        x = rng.integers(0, vocab, size=(n, t))
        y = x.copy() if kind == "copy" else reverse_targets(x)
    else:
        raise ConfigError(f"unknown task kind {kind!r}")
    return Dataset(kind, vocab, t, x[:n_train], y[:n_train], x[n_train:], y[n_train:])
