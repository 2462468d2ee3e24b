"""Entropy lower-bound certificates, the bound's minimiser, and the sharpness probe."""

from __future__ import annotations

import math
from fractions import Fraction
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .attention import AttentionStats, softmax_entropy
from .errors import DomainError, NumericalError


@dataclass
class EntropyBoundCertificate:
    sigma_bar: float
    t: int
    beta: float
    bound_nats: float
    measured_min_row_entropy: float
    satisfied: bool
    violating_rows: list = field(default_factory=list)
    applicable_rows: int = 0
    min_gap: float = math.inf

    def summary(self) -> dict:
        return {
            "sigma_bar": self.sigma_bar,
            "bound_nats": self.bound_nats,
            "measured_min_row_entropy": self.measured_min_row_entropy,
            "satisfied": self.satisfied,
            "n_violating_rows": len(self.violating_rows),
        }


@dataclass
class SharpnessProbe:
    top_k: int
    eigenvalues: list
    hvp_epsilon: float
    lanczos_iters: int
    n_params: int
    threshold: float | None = None
    breakdown: bool = False

    @property
    def sharpness(self) -> float:
        return abs(self.eigenvalues[0]) if self.eigenvalues else 0.0


def entropy_lower_bound(sigma_bar: float, t: int) -> float:
    """Smallest softmax entropy attainable by a length-``t`` logit row of norm <= ``sigma_bar``.

    ``log(1 + (t-1) b) + sigma_bar sqrt(t(t-1)) b / (1 + (t-1) b)`` with
    ``b = exp(-sigma_bar sqrt(t/(t-1)))``. The second term is formed in log
    space so large ``sigma_bar`` underflows cleanly to 0.
    """
    if t < 2:
        raise DomainError("the entropy bound needs t >= 2")
    if sigma_bar < 0:
        raise DomainError("sigma_bar must be non-negative")
    if sigma_bar == 0:
        return math.log(t)
    log_b = -sigma_bar * math.sqrt(t / (t - 1))
    b = math.exp(log_b)
    first = math.log1p((t - 1) * b)
    log_second = math.log(sigma_bar * math.sqrt(t * (t - 1))) + log_b - first
    second = math.exp(log_second) if log_second > -745 else 0.0
    return max(first + second, 0.0)


def tight_minimizer(sigma_bar: float, t: int) -> np.ndarray:
    """Logit row with one entry ``sigma_bar sqrt(1 - 1/t)`` and ``t-1`` entries
    ``-sigma_bar / sqrt(t(t-1))``; its softmax entropy equals the lower bound."""
    if t < 2:
        raise DomainError("t must be at least 2")
    u = np.full(t, -sigma_bar * math.sqrt(1.0 / (t * (t - 1))))
    u[0] = sigma_bar * math.sqrt(1.0 - 1.0 / t)
    return u


def _entropy_and_grad(u: np.ndarray):
    z = u - u.max()
    p = np.exp(z)
    p /= p.sum()
    logp = z - math.log(np.exp(z).sum())
    h = -float(p @ logp)
    # dH/du_k = -p_k (log p_k + H)
    return h, -p * (logp + h)


def _refine_on_sphere(u: np.ndarray, radius: float, steps: int) -> float:
    u = u * (radius / np.linalg.norm(u))
    h, g = _entropy_and_grad(u)
    lr = 0.5 * radius
    for _ in range(steps):
        g_tan = g - (g @ u) * u / (radius * radius)
        gn = np.linalg.norm(g_tan)
        if gn < 1e-15:
            break
        while lr > 1e-12:
            cand = u - lr * g_tan / gn
            cand *= radius / np.linalg.norm(cand)
            hc, gc = _entropy_and_grad(cand)
            if hc < h:
                u, h, g = cand, hc, gc
                lr *= 1.5
                break
            lr *= 0.5
        else:
            break
    return h


def entropy_min_oracle(
    sigma_bar: float,
    t: int,
    n_samples: int = 10_000,
    seed: int = 0,
    n_refine: int = 10,
    refine_steps: int = 500,
) -> float:
    """Search for the smallest softmax entropy over logit rows with ``|u| <= sigma_bar``.

    Random directions on the ``sigma_bar`` sphere, then projected descent from
    the best ``n_refine`` of them. Knows nothing of the closed-form minimiser.
    """
    if t < 2:
        raise DomainError("t must be at least 2")
    if sigma_bar == 0:
        return math.log(t)
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((n_samples, t))
    dirs *= sigma_bar / np.linalg.norm(dirs, axis=1, keepdims=True)
    ent = softmax_entropy(dirs)
    best = np.argsort(ent)[:n_refine]
    found = float(ent[best[0]])
    for i in best:
        found = min(found, _refine_on_sphere(dirs[i].copy(), sigma_bar, refine_steps))
    return found


def check_attention_bound(
    stats: AttentionStats,
    logits,
    tol: float = 1e-9,
    norm_slack: float = 1e-8,
) -> EntropyBoundCertificate:
    """Compare each logit row's softmax entropy with the bound at ``sigma_kq * sigma_x``.

    Meaningful for logits built without the sqrt(d) factor and at temperature
    1. Rows whose norm exceeds ``sigma_bar`` (beyond the relative power
    iteration slack) are listed in ``violating_rows`` and not judged.
    """
    logits = np.asarray(logits, dtype=np.float64)
    t = logits.shape[-1]
    flat = logits.reshape(-1, t)
    sigma_bar = stats.sigma_kq * stats.sigma_x
    bound = entropy_lower_bound(sigma_bar, t)
    norms = np.linalg.norm(flat, axis=1)
    ent = softmax_entropy(flat)
    applicable = norms <= sigma_bar * (1 + norm_slack)
    violating = [int(i) for i in np.flatnonzero(~applicable)]
    if applicable.any():
        gaps = ent[applicable] - bound
        min_gap = float(gaps.min())
        satisfied = min_gap >= -tol
        measured = float(ent[applicable].min())
    else:
        min_gap, satisfied, measured = math.inf, True, float(ent.min())
    return EntropyBoundCertificate(
        sigma_bar=sigma_bar,
        t=t,
        beta=math.exp(-sigma_bar * math.sqrt(t / (t - 1))),
        bound_nats=bound,
        measured_min_row_entropy=measured,
        satisfied=bool(satisfied),
        violating_rows=violating,
        applicable_rows=int(applicable.sum()),
        min_gap=min_gap,
    )


# ---------------------------------------------------------------------------
# curvature


def hvp(loss_and_grad: Callable, theta, v, eps: float = 1e-4) -> np.ndarray:
    """Hessian-vector product by central differences of the gradient.

    ``loss_and_grad(theta)`` returns ``(loss, grad)``. The result is
    ``(grad(theta + eps v) - grad(theta - eps v)) / (2 eps)``.
    """
    if not eps > 0:
        raise DomainError("eps must be positive")
    theta = np.asarray(theta, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    _, gp = loss_and_grad(theta + eps * v)
    _, gm = loss_and_grad(theta - eps * v)
    if not (np.all(np.isfinite(gp)) and np.all(np.isfinite(gm))):
        raise NumericalError("non-finite gradient inside hvp")
    return (np.asarray(gp) - np.asarray(gm)) / (2 * eps)


def lanczos_top_eigs(
    operator: Callable,
    dim: int,
    k: int = 5,
    iters: int = 30,
    seed: int = 0,
    hvp_epsilon: float = 0.0,
) -> SharpnessProbe:
    """Largest-magnitude Ritz values of a symmetric linear operator.

    Lanczos with full re-orthogonalisation. An invariant subspace reached
    before ``iters`` steps stops the recursion early and sets ``breakdown``.
    """
    if not (1 <= k <= iters <= dim):
        raise DomainError(f"need 1 <= k <= iters <= dim, got k={k} iters={iters} dim={dim}")
    rng = np.random.default_rng(seed)
    q = rng.standard_normal(dim)
    q /= np.linalg.norm(q)
    basis = np.zeros((iters, dim))
    alphas, betas = [], []
    beta_prev = 0.0
    breakdown = False
    scale = 0.0
    for j in range(iters):
        basis[j] = q
        w = np.asarray(operator(q), dtype=np.float64)
        if j > 0:
            w = w - beta_prev * basis[j - 1]
        alpha = float(q @ w)
        alphas.append(alpha)
        w = w - alpha * q
        for _ in range(2):
            w -= basis[: j + 1].T @ (basis[: j + 1] @ w)
        beta = float(np.linalg.norm(w))
        scale = max(scale, abs(alpha), beta)
        if j == iters - 1:
            break
        if beta <= 1e-12 * max(scale, 1e-300):
            breakdown = True
            break
        betas.append(beta)
        q = w / beta
        beta_prev = beta
    m = len(alphas)
    tri = np.diag(alphas) + np.diag(betas[: m - 1], 1) + np.diag(betas[: m - 1], -1)
    ritz = np.linalg.eigvalsh(tri)
    order = np.argsort(-np.abs(ritz), kind="stable")
    return SharpnessProbe(
        top_k=k,
        eigenvalues=[float(x) for x in ritz[order][:k]],
        hvp_epsilon=hvp_epsilon,
        lanczos_iters=m,
        n_params=dim,
        breakdown=breakdown,
    )


def adamw_stability_threshold(beta1: float, lr: float) -> float:
    """Sharpness above which frozen-preconditioner AdamW iterations diverge: (2+2b1)/((1-b1) lr).

    The momentum factor is evaluated on the decimal value of ``beta1`` so that
    ``beta1=0.9`` gives exactly 38.
    """
    if not lr > 0:
        raise DomainError("learning rate must be positive")
    if not 0 <= beta1 < 1:
        raise DomainError("beta1 must lie in [0, 1)")
    b = Fraction(repr(float(beta1)))
    return float((2 + 2 * b) / (1 - b)) / lr
