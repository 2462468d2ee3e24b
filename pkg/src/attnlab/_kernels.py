"""Hot numeric kernels, each in two flavours.

Every kernel has a loop form, compiled with numba ``@njit`` when numba is
importable, and a vectorised pure-numpy form. Set ``ATTNLAB_DISABLE_NUMBA=1``
to force the numpy path (useful for debugging and for the benchmark in
``benchmarks/bench_kernels.py``). The public names at the bottom of the
module (``jacobi_svd``, ``power_iterate``, and
``softmax_entropy_rows``) point at whichever flavour is active.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

_DISABLED = os.environ.get("ATTNLAB_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")
USE_NUMBA = HAVE_NUMBA and not _DISABLED

JACOBI_MAX_SWEEPS = 64
_JACOBI_TOL = 1e-15
ZERO_GUARD = 1e-30
# columns with squared norm below this fraction of |A|_F^2 count as zero
_NEGLIGIBLE = 1e-30


def _jit(fn):
    if HAVE_NUMBA:
        return njit(cache=True)(fn)
    return fn


# ---------------------------------------------------------------------------
# one-sided Jacobi SVD (Hestenes), columns of a tall matrix


def _jacobi_loops(a, max_sweeps, tol):
    m, n = a.shape
    u = a.copy()
    v = np.eye(n)
    floor = 0.0
    for i in range(m):
        for j in range(n):
            floor += a[i, j] * a[i, j]
    floor *= _NEGLIGIBLE
    sweeps = 0
    converged = False
    while sweeps < max_sweeps:
        sweeps += 1
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = 0.0
                beta = 0.0
                gamma = 0.0
                for i in range(m):
                    alpha += u[i, p] * u[i, p]
                    beta += u[i, q] * u[i, q]
                    gamma += u[i, p] * u[i, q]
                if gamma == 0.0 or abs(gamma) <= tol * np.sqrt(alpha * beta):
                    continue
                if alpha <= floor or beta <= floor:
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                if zeta >= 0.0:
                    t = 1.0 / (zeta + np.sqrt(1.0 + zeta * zeta))
                else:
                    t = -1.0 / (-zeta + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                for i in range(m):
                    up = u[i, p]
                    uq = u[i, q]
                    u[i, p] = c * up - s * uq
                    u[i, q] = s * up + c * uq
                for i in range(n):
                    vp = v[i, p]
                    vq = v[i, q]
                    v[i, p] = c * vp - s * vq
                    v[i, q] = s * vp + c * vq
        if not rotated:
            converged = True
            break
    return u, v, sweeps, converged


jacobi_svd_loops = _jit(_jacobi_loops)


def _round_robin(n):
    """Tournament schedule: n-1 rounds of n/2 disjoint column pairs (n even)."""
    players = list(range(n))
    rounds = []
    for _ in range(n - 1):
        half = n // 2
        p = np.array(players[:half])
        q = np.array(players[half:][::-1])
        rounds.append((np.minimum(p, q), np.maximum(p, q)))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def jacobi_svd_numpy(a, max_sweeps, tol):
    m, n = a.shape
    pad = n % 2
    u = np.zeros((m, n + pad))
    u[:, :n] = a
    v = np.eye(n + pad)
    rounds = _round_robin(n + pad)
    floor = float(np.sum(a * a)) * _NEGLIGIBLE
    sweeps = 0
    converged = False
    while sweeps < max_sweeps:
        sweeps += 1
        rotated = False
        for p, q in rounds:
            up = u[:, p]
            uq = u[:, q]
            alpha = np.einsum("ij,ij->j", up, up)
            beta = np.einsum("ij,ij->j", uq, uq)
            gamma = np.einsum("ij,ij->j", up, uq)
            act = (gamma != 0.0) & (np.abs(gamma) > tol * np.sqrt(alpha * beta))
            act &= (alpha > floor) & (beta > floor)
            if not act.any():
                continue
            rotated = True
            p, q = p[act], q[act]
            alpha, beta, gamma = alpha[act], beta[act], gamma[act]
            zeta = (beta - alpha) / (2.0 * gamma)
            t = np.sign(zeta) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            t[zeta == 0.0] = 1.0
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            up = u[:, p].copy()
            uq = u[:, q]
            u[:, p] = c * up - s * uq
            u[:, q] = s * up + c * uq
            vp = v[:, p].copy()
            vq = v[:, q]
            v[:, p] = c * vp - s * vq
            v[:, q] = s * vp + c * vq
        if not rotated:
            converged = True
            break
    return u[:, :n], v[:n, :n], sweeps, converged


# ---------------------------------------------------------------------------
# power iteration: u <- W v / |W v|, v <- W^T u / |W^T u|, sigma = u^T W v


def _power_loops(w, u, v, n_steps, tol, guard):
    m, n = w.shape
    u = u.copy()
    v = v.copy()
    wv = np.empty(m)
    wtu = np.empty(n)
    sigma = 0.0
    prev = -1.0
    steps = 0
    converged = False
    for _ in range(n_steps):
        steps += 1
        nrm = 0.0
        for i in range(m):
            acc = 0.0
            for j in range(n):
                acc += w[i, j] * v[j]
            wv[i] = acc
            nrm += acc * acc
        nrm = np.sqrt(nrm)
        if nrm >= guard:
            for i in range(m):
                u[i] = wv[i] / nrm
            # row-major accumulation of W^T u keeps memory access contiguous
            for j in range(n):
                wtu[j] = 0.0
            for i in range(m):
                ui = u[i]
                for j in range(n):
                    wtu[j] += w[i, j] * ui
            nrm2 = 0.0
            for j in range(n):
                nrm2 += wtu[j] * wtu[j]
            nrm2 = np.sqrt(nrm2)
            if nrm2 >= guard:
                for j in range(n):
                    v[j] = wtu[j] / nrm2
        sigma = 0.0
        for i in range(m):
            acc = 0.0
            for j in range(n):
                acc += w[i, j] * v[j]
            sigma += u[i] * acc
        if tol > 0.0 and prev >= 0.0:
            if abs(sigma - prev) <= tol * max(abs(sigma), guard):
                converged = True
                break
        prev = sigma
    return u, v, sigma, steps, converged


power_iterate_loops = _jit(_power_loops)


def power_iterate_numpy(w, u, v, n_steps, tol, guard):
    u = u.copy()
    v = v.copy()
    sigma = 0.0
    prev = -1.0
    steps = 0
    converged = False
    for _ in range(n_steps):
        steps += 1
        wv = w @ v
        nrm = np.sqrt(wv @ wv)
        if nrm >= guard:
            u = wv / nrm
            wtu = w.T @ u
            nrm2 = np.sqrt(wtu @ wtu)
            if nrm2 >= guard:
                v = wtu / nrm2
        sigma = float(u @ (w @ v))
        if tol > 0.0 and prev >= 0.0 and abs(sigma - prev) <= tol * max(abs(sigma), guard):
            converged = True
            break
        prev = sigma
    return u, v, sigma, steps, converged


# ---------------------------------------------------------------------------
# Shannon entropy (nats) of softmax over each row of a logit matrix


def _entropy_loops(logits):
    r, c = logits.shape
    out = np.empty(r)
    for i in range(r):
        mx = logits[i, 0]
        for j in range(1, c):
            if logits[i, j] > mx:
                mx = logits[i, j]
        z = 0.0
        s = 0.0
        for j in range(c):
            d = logits[i, j] - mx
            e = np.exp(d)
            z += e
            s += e * d
        out[i] = np.log(z) - s / z
    return out


softmax_entropy_rows_loops = _jit(_entropy_loops)


def softmax_entropy_rows_numpy(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    z = e.sum(axis=1)
    return np.log(z) - (e * shifted).sum(axis=1) / z


if USE_NUMBA:
    _jacobi_impl = jacobi_svd_loops
    _power_impl = power_iterate_loops
    _entropy_impl = softmax_entropy_rows_loops
else:
    _jacobi_impl = jacobi_svd_numpy
    _power_impl = power_iterate_numpy
    _entropy_impl = softmax_entropy_rows_numpy


def jacobi_svd(a, max_sweeps=JACOBI_MAX_SWEEPS, tol=_JACOBI_TOL):
    """Rotate the columns of tall ``a`` until mutually orthogonal.

    Returns ``(u_scaled, v, sweeps, converged)`` where the columns of
    ``u_scaled`` are ``sigma_k * u_k``.
    """
    return _jacobi_impl(np.ascontiguousarray(a, dtype=np.float64), max_sweeps, tol)


# above this many entries BLAS matrix-vector products beat the compiled loops
POWER_LOOP_MAX_SIZE = 16384


def power_iterate(w, u, v, n_steps, tol=0.0, guard=ZERO_GUARD):
    impl = _power_impl if np.size(w) <= POWER_LOOP_MAX_SIZE else power_iterate_numpy
    return impl(
        np.ascontiguousarray(w, dtype=np.float64),
        np.ascontiguousarray(u, dtype=np.float64),
        np.ascontiguousarray(v, dtype=np.float64),
        int(n_steps),
        float(tol),
        float(guard),
    )


def softmax_entropy_rows(logits):
    return _entropy_impl(np.ascontiguousarray(logits, dtype=np.float64))

