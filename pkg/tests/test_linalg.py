import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from attnlab import _kernels
from attnlab.errors import NumericalError, ShapeError
from attnlab.linalg import (
    frobenius,
    matmul,
    matrix_from_bytes,
    matrix_to_bytes,
    power_iteration_step,
    random_unit,
    read_matrix,
    spectral_norm_converged,
    svd,
    write_matrix,
)
from attnlab.verify import gapped_matrix


def naive_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


def test_matmul_identity_and_small():
    m = np.arange(9.0).reshape(3, 3)
    assert np.array_equal(matmul(np.eye(3), m), m)
    assert np.array_equal(matmul([[1, 2], [3, 4]], [[0], [1]]), [[2], [4]])


def test_matmul_against_triple_loop():
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal((8, 8)), rng.standard_normal((8, 8))
    assert np.max(np.abs(matmul(a, b) - naive_matmul(a, b))) <= 1e-12


def test_matmul_shape_error():
    with pytest.raises(ShapeError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_svd_diag_and_zero():
    assert np.allclose(svd(np.diag([3.0, 1.0])).singular_values, [3, 1])
    assert np.all(svd(np.zeros((4, 3))).singular_values == 0)


def test_svd_against_symmetric_eigen():
    rng = np.random.default_rng(1)
    m = rng.standard_normal((16, 32))
    top = np.linalg.eigvalsh(m.T @ m)[-1]
    assert abs(svd(m).sigma_max ** 2 - top) / top <= 1e-9


@pytest.mark.parametrize("shape", [(5, 5), (40, 17), (17, 40), (256, 256)])
def test_svd_reconstruction_and_orthonormality(shape):
    rng = np.random.default_rng(2)
    m = rng.standard_normal(shape)
    r = svd(m)
    assert np.linalg.norm(r.reconstruct() - m) / np.linalg.norm(m) <= 1e-10
    s = r.singular_values
    assert np.all(np.diff(s) <= 0) and np.all(s >= 0)
    k = min(shape)
    assert np.allclose(r.left_vectors.T @ r.left_vectors, np.eye(k), atol=1e-10)
    assert np.allclose(r.right_vectors.T @ r.right_vectors, np.eye(k), atol=1e-10)


def test_svd_rank_deficient():
    x = np.arange(1.0, 6.0)
    y = np.array([2.0, -1.0, 0.5])
    r = svd(np.outer(x, y))
    assert r.sigma_max == pytest.approx(np.linalg.norm(x) * np.linalg.norm(y), rel=1e-12)
    assert np.all(r.singular_values[1:] <= 1e-12 * r.sigma_max)
    assert np.allclose(svd(np.ones((6, 6))).singular_values[0], 6.0)


def test_svd_rejects_bad_input():
    with pytest.raises(NumericalError):
        svd(np.array([[np.nan, 1.0]]))
    with pytest.raises(ShapeError):
        svd(np.zeros((0, 3)))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 12), st.integers(1, 12)), elements=st.floats(-100, 100)))
def test_norm_sandwich(m):
    s = svd(m).sigma_max
    f = frobenius(m)
    assert f / np.sqrt(min(m.shape)) <= s * (1 + 1e-9) + 1e-12
    assert s <= f * (1 + 1e-9) + 1e-12


def test_power_step_aligned():
    e1 = np.array([1.0, 0.0])
    u, v, sigma = power_iteration_step(np.diag([5.0, 2.0]), e1, e1)
    assert sigma == pytest.approx(5.0)
    assert np.linalg.norm(u) == pytest.approx(1.0) and np.linalg.norm(v) == pytest.approx(1.0)


def test_power_step_zero_matrix_keeps_vectors():
    rng = np.random.default_rng(0)
    u0, v0 = random_unit(3, rng), random_unit(4, rng)
    u, v, sigma = power_iteration_step(np.zeros((3, 4)), u0, v0)
    assert sigma == 0.0
    assert np.array_equal(u, u0) and np.array_equal(v, v0)


def test_power_step_shape_check():
    with pytest.raises(ShapeError):
        power_iteration_step(np.eye(3), np.ones(2) / np.sqrt(2), np.ones(3) / np.sqrt(3))


def test_power_iteration_converges_and_is_monotone():
    rng = np.random.default_rng(3)
    # Gaussian 64x64 spectra often have sigma_2/sigma_1 near 1; use a spectrum with a gap
    w = gapped_matrix(rng, 64, 64)
    u, v = random_unit(64, rng), random_unit(64, rng)
    true = svd(w).sigma_max
    prev = 0.0
    for _ in range(100):
        u, v, sigma = power_iteration_step(w, u, v)
        assert sigma >= prev - 1e-12 and sigma <= true * (1 + 1e-12)
        prev = sigma
    assert abs(sigma - true) / true <= 1e-6


def test_spectral_norm_converged_examples():
    assert spectral_norm_converged(np.diag([7.0, 1.0, 0.5]), tol=1e-10).sigma == pytest.approx(7.0, rel=1e-9)
    x, y = np.array([1.0, 2.0, 2.0]), np.array([3.0, 4.0])
    est = spectral_norm_converged(np.outer(x, y), tol=1e-10)
    assert est.sigma == pytest.approx(15.0, rel=1e-12)
    assert est.converged
    rng = np.random.default_rng(4)
    w = rng.standard_normal((128, 512))
    est = spectral_norm_converged(w, tol=1e-13, max_steps=5000)
    assert abs(est.sigma - svd(w).sigma_max) / svd(w).sigma_max <= 1e-6


def test_matrix_binary_roundtrip():
    rng = np.random.default_rng(5)
    m = rng.standard_normal((3, 7))
    blob = matrix_to_bytes(m)
    assert blob[:4] == b"ECLM" and len(blob) == 12 + 21 * 8
    assert np.array_equal(matrix_from_bytes(blob), m)
    buf = io.BytesIO()
    write_matrix(buf, m)
    write_matrix(buf, m.T)
    buf.seek(0)
    assert np.array_equal(read_matrix(buf), m)
    assert np.array_equal(read_matrix(buf), m.T)
    with pytest.raises(ValueError):
        matrix_from_bytes(b"XXXX" + blob[4:])
    with pytest.raises(ValueError):
        matrix_from_bytes(blob[:-1])


def test_kernel_flavours_agree():
    rng = np.random.default_rng(6)
    a = rng.standard_normal((30, 11))
    s1 = np.sort(np.linalg.norm(_kernels.jacobi_svd_numpy(a, 64, 1e-15)[0], axis=0))
    s2 = np.sort(np.linalg.norm(_kernels.jacobi_svd_loops(a, 64, 1e-15)[0], axis=0))
    assert np.allclose(s1, s2, rtol=1e-12)
    w = rng.standard_normal((20, 9))
    u, v = random_unit(20, rng), random_unit(9, rng)
    p1 = _kernels.power_iterate_numpy(w, u, v, 30, 0.0, 1e-30)
    p2 = _kernels.power_iterate_loops(w, u, v, 30, 0.0, 1e-30)
    assert p1[2] == pytest.approx(p2[2], rel=1e-13)
    x = rng.standard_normal((50, 7)) * 30
    assert np.allclose(_kernels.softmax_entropy_rows_numpy(x), _kernels.softmax_entropy_rows_loops(x), atol=1e-13)
