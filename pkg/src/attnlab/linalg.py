"""Dense fp64 matrix helpers and reference spectral routines.

A "matrix" throughout the package is a 2-D ``float64`` numpy array. This
module adds what numpy does not give us directly: a Jacobi SVD that serves
as the oracle for spectral norms, the single power-iteration step used by
the reparameterised layers, and the little-endian ``ECLM`` binary format.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import BinaryIO

import numpy as np

from . import _kernels
from .errors import NumericalError, ShapeError

MATRIX_MAGIC = b"ECLM"
_HEADER = struct.Struct("<4sII")


def as_matrix(data, name: str = "matrix") -> np.ndarray:
    m = np.asarray(data, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise ShapeError(f"{name}: expected a 2-D array, got shape {m.shape}")
    return m


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} x {b.shape} (inner dimensions differ)")
    return a @ b


def frobenius(m) -> float:
    m = np.asarray(m, dtype=np.float64)
    return float(np.sqrt(np.sum(m * m)))


def unit(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    n = np.linalg.norm(x)
    if n < _kernels.ZERO_GUARD:
        raise NumericalError("cannot normalise a zero vector")
    return x / n


def random_unit(n: int, rng: np.random.Generator) -> np.ndarray:
    return unit(rng.standard_normal(n))


@dataclass(frozen=True)
class SvdResult:
    singular_values: np.ndarray
    left_vectors: np.ndarray
    right_vectors: np.ndarray
    sweeps: int

    @property
    def sigma_max(self) -> float:
        return float(self.singular_values[0])

    def reconstruct(self) -> np.ndarray:
        return (self.left_vectors * self.singular_values) @ self.right_vectors.T


def _complete_basis(q: np.ndarray, filled: np.ndarray) -> np.ndarray:
    """Replace the unfilled columns of ``q`` by an orthonormal completion."""
    if filled.all():
        return q
    keep = q[:, filled]
    rest = np.linalg.qr(np.hstack([keep, np.eye(q.shape[0])]))[0]
    q = q.copy()
    q[:, ~filled] = rest[:, keep.shape[1] : keep.shape[1] + int((~filled).sum())]
    return q


def svd(m, max_sweeps: int = _kernels.JACOBI_MAX_SWEEPS) -> SvdResult:
    """Thin SVD by one-sided Jacobi rotations.

    Returns ``k = min(rows, cols)`` singular triplets sorted descending.
    Raises ``NumericalError`` if the rotations have not settled after
    ``max_sweeps`` sweeps.
    """
    m = as_matrix(m)
    if m.size == 0:
        raise ShapeError("svd of an empty matrix")
    if not np.all(np.isfinite(m)):
        raise NumericalError("svd input contains non-finite entries")
    flip = m.shape[0] < m.shape[1]
    a = m.T if flip else m
    scaled, v, sweeps, converged = _kernels.jacobi_svd(a, max_sweeps)
    if not converged:
        raise NumericalError(f"Jacobi SVD did not converge in {max_sweeps} sweeps")
    s = np.sqrt(np.einsum("ij,ij->j", scaled, scaled))
    order = np.argsort(-s, kind="stable")
    s, scaled, v = s[order], scaled[:, order], v[:, order]
    filled = s > s[0] * 1e-13 if s[0] > 0 else np.zeros(s.shape, bool)
    u = np.zeros_like(scaled)
    u[:, filled] = scaled[:, filled] / s[filled]
    u = _complete_basis(u, filled)
    if flip:
        u, v = v, u
    return SvdResult(singular_values=s, left_vectors=u, right_vectors=v, sweeps=int(sweeps))


def spectral_norm_svd(m) -> float:
    return svd(m).sigma_max


def power_iteration_step(w, u, v):
    """One power step in the fixed order u <- Wv, v <- W^T u, sigma = u^T W v.

    If ``|W v|`` is below 1e-30 the previous ``u``/``v`` are kept and sigma is
    reported from the bilinear form (zero for a zero matrix).
    """
    w = as_matrix(w, "w")
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != (w.shape[0],) or v.shape != (w.shape[1],):
        raise ShapeError(f"power_iteration_step: u{u.shape}, v{v.shape} do not fit W{w.shape}")
    u, v, sigma, _, _ = _kernels.power_iterate(w, u, v, 1)
    return u, v, float(sigma)


@dataclass(frozen=True)
class SpectralNormEstimate:
    sigma: float
    steps: int
    converged: bool
    u: np.ndarray
    v: np.ndarray

    def __float__(self) -> float:
        return self.sigma


def spectral_norm_converged(
    w,
    tol: float = 1e-10,
    max_steps: int = 1000,
    u=None,
    v=None,
    seed: int = 0,
) -> SpectralNormEstimate:
    """Run power iteration until the relative change of sigma drops below ``tol``."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    w = as_matrix(w, "w")
    rng = np.random.default_rng(seed)
    if v is None:
        v = random_unit(w.shape[1], rng)
    if u is None:
        u = random_unit(w.shape[0], rng)
    u, v, sigma, steps, converged = _kernels.power_iterate(w, u, v, max_steps, tol)
    return SpectralNormEstimate(float(sigma), int(steps), bool(converged), u, v)


# ---------------------------------------------------------------------------
# binary format: "ECLM", u32 rows, u32 cols, rows*cols little-endian f64


def write_matrix(f: BinaryIO, m) -> None:
    m = as_matrix(m)
    f.write(_HEADER.pack(MATRIX_MAGIC, m.shape[0], m.shape[1]))
    f.write(np.ascontiguousarray(m, dtype="<f8").tobytes())


def read_matrix(f: BinaryIO) -> np.ndarray:
    head = f.read(_HEADER.size)
    if len(head) != _HEADER.size:
        raise ValueError("truncated matrix header")
    magic, rows, cols = _HEADER.unpack(head)
    if magic != MATRIX_MAGIC:
        raise ValueError(f"bad matrix magic {magic!r}")
    nbytes = rows * cols * 8
    body = f.read(nbytes)
    if len(body) != nbytes:
        raise ValueError("truncated matrix body")
    return np.frombuffer(body, dtype="<f8").astype(np.float64).reshape(rows, cols)


def matrix_to_bytes(m) -> bytes:
    import io

    buf = io.BytesIO()
    write_matrix(buf, m)
    return buf.getvalue()


def matrix_from_bytes(data: bytes) -> np.ndarray:
    import io

    return read_matrix(io.BytesIO(data))
