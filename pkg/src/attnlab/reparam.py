"""Spectrally reparameterised linear weights and the comparison baselines.

The effective weight is ``W_hat = gamma / sigma(W) * W`` with ``sigma``
tracked by one power-iteration step per training forward and ``gamma`` a
learned scalar that starts at 1. Also here: spectral normalisation without
the scalar, weight normalisation, and the bound on the spectral norm of an
idealised Adam update.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .errors import DomainError, NumericalError, ShapeError
from .linalg import power_iteration_step, random_unit, spectral_norm_converged, svd

SIGMA_FLOOR = 1e-30
FREEZE_TOL = 1e-10


class ReparamMode(str, enum.Enum):
    PLAIN = "plain"
    SIGMA_REPARAM = "sigma_reparam"
    SPECTRAL_NORM_ONLY = "spectral_norm_only"
    WEIGHT_NORM = "weight_norm"


@dataclass
class SpectralState:
    u: np.ndarray
    v: np.ndarray
    gamma: float = 1.0
    sigma_cached: float = 0.0
    frozen: bool = False
    frozen_weight: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def init(cls, w, rng: np.random.Generator, gamma_init: str = "one") -> "SpectralState":
        """Random unit ``u``/``v``; ``gamma`` is 1 or, with ``gamma_init="svd"``, sigma_max(W)."""
        w = np.asarray(w, dtype=np.float64)
        u = random_unit(w.shape[0], rng)
        v = random_unit(w.shape[1], rng)
        if gamma_init == "one":
            gamma = 1.0
        elif gamma_init == "svd":
            gamma = svd(w).sigma_max
        else:
            raise ValueError(f"unknown gamma_init {gamma_init!r}")
        return cls(u=u, v=v, gamma=gamma)


def reparam_forward(w, state: SpectralState, training: bool = True):
    """Numpy version of the reparameterised weight; returns ``(w_hat, new_state)``.

    In training mode exactly one power step refreshes ``u``/``v`` before
    ``sigma = u^T W v`` is formed. Evaluation mode reuses the stored vectors.
    A frozen state returns its cached matrix untouched.
    """
    w = np.asarray(w, dtype=np.float64)
    if state.frozen:
        return state.frozen_weight, state
    u, v = state.u, state.v
    if training:
        u, v, _ = power_iteration_step(w, u, v)
    sigma = float(u @ w @ v)
    if abs(sigma) < SIGMA_FLOOR:
        raise NumericalError("spectral estimate vanished (degenerate weight)")
    return (state.gamma / sigma) * w, replace(state, u=u, v=v, sigma_cached=sigma)


def freeze(state: SpectralState, w) -> np.ndarray:
    """Compute ``W_hat`` once with a converged spectral norm and pin it in ``state``."""
    est = spectral_norm_converged(w, tol=FREEZE_TOL, max_steps=10000, u=state.u, v=state.v)
    if est.sigma < SIGMA_FLOOR:
        raise NumericalError("cannot freeze a zero weight")
    w_hat = (state.gamma / est.sigma) * np.asarray(w, dtype=np.float64)
    w_hat.setflags(write=False)
    state.u, state.v, state.sigma_cached = est.u, est.v, est.sigma
    state.frozen = True
    state.frozen_weight = w_hat
    return w_hat


def unfreeze(state: SpectralState) -> None:
    state.frozen = False
    state.frozen_weight = None


class ReparamLinear:
    """Produces the effective weight node for one linear layer on a tape.

    ``weight`` and ``gain`` are parameter nodes supplied by the caller; the
    layer itself owns only non-trainable state (``u``, ``v``, frozen matrix).
    For σReparam ``gain`` is the 1x1 gamma; for weight norm it is the 1 x
    d_out per-column gain; it is ignored for the other modes.
    """

    def __init__(self, shape, mode: ReparamMode, rng: np.random.Generator, detach_sigma: bool = False):
        self.mode = ReparamMode(mode)
        self.shape = tuple(shape)
        self.detach_sigma = detach_sigma
        self.state = None
        if self.mode in (ReparamMode.SIGMA_REPARAM, ReparamMode.SPECTRAL_NORM_ONLY):
            self.state = SpectralState(u=random_unit(shape[0], rng), v=random_unit(shape[1], rng))

    @property
    def has_gain(self) -> bool:
        return self.mode in (ReparamMode.SIGMA_REPARAM, ReparamMode.WEIGHT_NORM)

    def __call__(self, weight: ad.Node, gain: ad.Node | None, training: bool) -> ad.Node:
        if weight.shape != self.shape:
            raise ShapeError(f"weight {weight.shape} does not match layer {self.shape}")
        tape = weight.tape
        if self.mode is ReparamMode.PLAIN:
            return weight
        if self.mode is ReparamMode.WEIGHT_NORM:
            return ad.mul(ad.col_normalize(weight), gain)
        st = self.state
        gamma_val = float(gain.value.reshape(())) if gain is not None else 1.0
        if st.frozen:
            return tape.constant(st.frozen_weight)
        if training:
            st.u, st.v, _ = power_iteration_step(weight.value, st.u, st.v)
        u = tape.constant(st.u.reshape(1, -1))
        v = tape.constant(st.v.reshape(-1, 1))
        sigma = ad.matmul(ad.matmul(u, weight), v)
        st.sigma_cached = float(sigma.value.reshape(()))
        st.gamma = gamma_val
        if abs(st.sigma_cached) < SIGMA_FLOOR:
            raise NumericalError("spectral estimate vanished (degenerate weight)")
        if self.detach_sigma:
            sigma = tape.constant(sigma.value)
        w_hat = ad.divide_by_scalar_node(weight, sigma)
        if self.mode is ReparamMode.SIGMA_REPARAM:
            w_hat = ad.mul(w_hat, gain)
        return w_hat

    def freeze(self, weight, gain=None) -> np.ndarray:
        if self.state is None:
            raise ValueError(f"mode {self.mode.value} has no spectral state to freeze")
        if gain is not None:
            self.state.gamma = float(np.asarray(gain).reshape(()))
        elif self.mode is ReparamMode.SPECTRAL_NORM_ONLY:
            self.state.gamma = 1.0
        return freeze(self.state, weight)


def adaptive_update_bound(mu, n):
    """Spectral norm of the ideal adaptive update and its Frobenius lower bound.

    ``Delta = mu / sqrt(mu^2 + n^2)`` elementwise for square ``w x w`` inputs.
    Returns ``(lower_bound, sigma_delta)`` where
    ``lower_bound = sqrt(w) * sqrt(1 - sum(n^2 / (mu^2 + n^2)) / w^2)``.
    """
    mu = np.asarray(mu, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    if mu.ndim != 2 or mu.shape[0] != mu.shape[1] or n.shape != mu.shape:
        raise ShapeError(f"expected matching square matrices, got {mu.shape} and {n.shape}")
    if np.any(n < 0):
        raise DomainError("noise scale n must be non-negative")
    denom = mu * mu + n * n
    if np.any(denom == 0):
        raise DomainError("mu^2 + n^2 vanishes at some entry")
    w = mu.shape[0]
    delta = mu / np.sqrt(denom)
    frac = np.sum(n * n / denom) / (w * w)
    lower = np.sqrt(w) * np.sqrt(max(1.0 - frac, 0.0))
    return float(lower), svd(delta).sigma_max
