"""Reference dot-product attention and attention-entropy bookkeeping.

These are plain numpy functions. The trainable model builds the same
computation on the autodiff tape; this module is the un-differentiated
version used for measurement and for checking the tape against.

Logits follow the bilinear form ``a = X W_K W_Q^T X^T`` with an optional
``1/sqrt(head_dim)`` factor and a global temperature divisor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ContractError, DomainError, ShapeError
from .linalg import spectral_norm_converged

STATS_TOL = 1e-8
STATS_MAX_STEPS = 200


@dataclass(frozen=True)
class AttentionConfig:
    d_model: int
    n_heads: int = 1
    head_dim: int | None = None
    value_dim: int | None = None
    use_sqrt_d_scaling: bool = True
    temperature: float = 1.0

    def __post_init__(self):
        if self.head_dim is None:
            object.__setattr__(self, "head_dim", self.d_model // self.n_heads)
        if self.value_dim is None:
            object.__setattr__(self, "value_dim", self.head_dim)
        if not self.temperature > 0:
            raise DomainError(f"temperature must be positive, got {self.temperature}")

    @property
    def logit_scale(self) -> float:
        s = 1.0 / self.temperature
        if self.use_sqrt_d_scaling:
            s /= np.sqrt(self.head_dim)
        return s


@dataclass
class AttentionStats:
    mean_entropy: float
    min_row_entropy: float
    max_logit_row_norm: float
    sigma_kq: float
    sigma_x: float
    head_entropies: np.ndarray | None = None

    def to_dict(self) -> dict:
        return {
            "mean_entropy": self.mean_entropy,
            "min_row_entropy": self.min_row_entropy,
            "max_logit_row_norm": self.max_logit_row_norm,
            "sigma_kq": self.sigma_kq,
            "sigma_x": self.sigma_x,
        }


def causal_mask(t: int) -> np.ndarray:
    """True strictly above the diagonal (positions a query may not see)."""
    return np.triu(np.ones((t, t), dtype=bool), k=1)


def row_softmax(logits: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    z = logits if mask is None else np.where(mask, -np.inf, logits)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def attend(x, wk, wq, wv, cfg: AttentionConfig, causal: bool = False):
    """Multi-head attention over one sequence ``x`` of shape (T, d).

    Head ``h`` uses columns ``h*head_dim:(h+1)*head_dim`` of ``wk``/``wq`` and
    ``h*value_dim:(h+1)*value_dim`` of ``wv``. Returns ``(output, logits,
    attn)`` with ``logits``/``attn`` of shape (n_heads, T, T) and the head
    outputs concatenated along columns.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"attend expects x of shape (T, d), got {x.shape}")
    t, d = x.shape
    h, hd, vd = cfg.n_heads, cfg.head_dim, cfg.value_dim
    if d != cfg.d_model or wk.shape != (d, h * hd) or wq.shape != (d, h * hd) or wv.shape != (d, h * vd):
        raise ShapeError(
            f"attend: x{x.shape} wk{wk.shape} wq{wq.shape} wv{wv.shape} do not match {cfg}"
        )
    k = (x @ wk).reshape(t, h, hd).transpose(1, 0, 2)
    q = (x @ wq).reshape(t, h, hd).transpose(1, 0, 2)
    vals = (x @ wv).reshape(t, h, vd).transpose(1, 0, 2)
    logits = np.matmul(k, q.transpose(0, 2, 1)) * cfg.logit_scale
    mask = causal_mask(t) if causal else None
    attn = row_softmax(logits, mask)
    out = np.matmul(attn, vals).transpose(1, 0, 2).reshape(t, h * vd)
    return out, logits, attn


def attention_entropy(attn, atol: float = 1e-9):
    """Per-row Shannon entropy (nats) of a row-stochastic matrix, and its mean.

    Uses ``0 log 0 = 0``. Accepts a (T, T) matrix or any stack of them; the
    mean is taken over every row.
    """
    attn = np.asarray(attn, dtype=np.float64)
    if np.any(attn < 0) or np.any(np.abs(attn.sum(axis=-1) - 1.0) > atol):
        raise ContractError("attention rows must be non-negative and sum to 1")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(attn > 0, attn * np.log(attn), 0.0)
    per_row = np.maximum(-terms.sum(axis=-1), 0.0)
    return per_row, float(per_row.mean())


def softmax_entropy(logits) -> np.ndarray:
    """Entropy of softmax(row) for each row of a logit array, computed stably."""
    logits = np.asarray(logits, dtype=np.float64)
    flat = logits.reshape(-1, logits.shape[-1])
    return _kernels.softmax_entropy_rows(flat).reshape(logits.shape[:-1])


def head_kq_products(wk, wq, n_heads: int) -> list[np.ndarray]:
    hd = wk.shape[1] // n_heads
    return [wk[:, i * hd : (i + 1) * hd] @ wq[:, i * hd : (i + 1) * hd].T for i in range(n_heads)]


def sigma_kq(wk, wq, n_heads: int = 1) -> float:
    return max(
        spectral_norm_converged(m, tol=STATS_TOL, max_steps=STATS_MAX_STEPS).sigma
        for m in head_kq_products(wk, wq, n_heads)
    )


def sigma_x(x) -> float:
    """||X X^T||_2, maximised over a leading batch axis if present."""
    x = np.asarray(x, dtype=np.float64)
    xs = x[None] if x.ndim == 2 else x
    return max(
        spectral_norm_converged(xi @ xi.T, tol=STATS_TOL, max_steps=STATS_MAX_STEPS).sigma for xi in xs
    )


def collect_stats(x, wk, wq, attn, logits, n_heads: int | None = None) -> AttentionStats:
    """Summarise one attention call.

    ``attn``/``logits`` may be (T, T), (H, T, T) or (B, H, T, T); entropy is
    averaged uniformly over examples, heads and query rows. ``x`` is (T, d) or
    (B, T, d).
    """
    attn = np.asarray(attn)
    logits = np.asarray(logits)
    if n_heads is None:
        n_heads = attn.shape[-3] if attn.ndim >= 3 else 1
    per_row, mean = attention_entropy(attn)
    head_ent = per_row.reshape(-1, n_heads, per_row.shape[-1]).mean(axis=(0, 2))
    finite = np.where(np.isfinite(logits), logits, 0.0)
    row_norms = np.sqrt(np.sum(finite * finite, axis=-1))
    return AttentionStats(
        mean_entropy=mean,
        min_row_entropy=float(per_row.min()),
        max_logit_row_norm=float(row_norms.max()),
        sigma_kq=sigma_kq(wk, wq, n_heads),
        sigma_x=sigma_x(x),
        head_entropies=head_ent,
    )
