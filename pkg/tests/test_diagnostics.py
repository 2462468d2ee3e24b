import math

import numpy as np
import pytest

from attnlab.attention import AttentionConfig, attend, collect_stats, softmax_entropy
from attnlab.diagnostics import (
    adamw_stability_threshold,
    check_attention_bound,
    entropy_lower_bound,
    entropy_min_oracle,
    hvp,
    lanczos_top_eigs,
    tight_minimizer,
)
from attnlab.errors import DomainError, NumericalError
from attnlab.transformer import Model
from attnlab.verify import toy_model_config


def ent(u):
    return float(softmax_entropy(np.asarray(u)[None, :])[0])


def test_bound_at_zero_is_log_t():
    for t in (2, 3, 8, 64, 1000):
        assert entropy_lower_bound(0.0, t) == math.log(t)


def test_bound_large_sigma_underflows_cleanly():
    for s in (700.0, 1e4, 1e300):
        b = entropy_lower_bound(s, 8)
        assert math.isfinite(b) and 0 <= b <= 1e-300


def test_bound_domain():
    with pytest.raises(DomainError):
        entropy_lower_bound(1.0, 1)
    with pytest.raises(DomainError):
        entropy_lower_bound(-1.0, 4)


def test_bound_matches_minimizer_entropy():
    assert abs(ent(tight_minimizer(2.0, 8)) - entropy_lower_bound(2.0, 8)) <= 1e-12
    u = tight_minimizer(3.0, 2)
    assert np.allclose(u, [3 / math.sqrt(2), -3 / math.sqrt(2)], atol=1e-15)
    assert abs(ent(u) - entropy_lower_bound(3.0, 2)) <= 1e-12
    assert np.linalg.norm(tight_minimizer(5.0, 16)) == pytest.approx(5.0, abs=1e-12)
    assert np.all(tight_minimizer(0.0, 4) == 0)


def test_bound_non_increasing_in_sigma():
    for t in (2, 4, 8, 64):
        vals = [entropy_lower_bound(s, t) for s in np.linspace(0, 30, 3001)]
        assert np.all(np.diff(vals) <= 1e-15)


def test_oracle_never_beats_bound_and_gets_close():
    for t in (2, 3, 4):
        assert entropy_min_oracle(0.0, t) == math.log(t)
        for s in (0.5, 1.0, 2.0, 5.0):
            found = entropy_min_oracle(s, t, seed=t)
            bound = entropy_lower_bound(s, t)
            assert found >= bound - 1e-9
            assert found - bound <= 1e-4
    for s in (1.0, 3.0):
        assert entropy_min_oracle(s, 8, seed=1) >= entropy_lower_bound(s, 8) - 1e-9


def test_certificate_zero_weights():
    x = np.random.default_rng(0).standard_normal((6, 4))
    z = np.zeros((4, 4))
    cfg = AttentionConfig(d_model=4, use_sqrt_d_scaling=False)
    _, logits, attn = attend(x, z, z, z, cfg)
    cert = check_attention_bound(collect_stats(x, z, z, attn, logits), logits)
    assert cert.bound_nats == pytest.approx(math.log(6))
    assert cert.measured_min_row_entropy == pytest.approx(math.log(6))
    assert cert.satisfied


def test_certificate_random_instances():
    cfg = AttentionConfig(d_model=4, use_sqrt_d_scaling=False)
    for seed in range(1000):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((8, 4))
        wk, wq, wv = (rng.standard_normal((4, 4)) * 0.7 for _ in range(3))
        _, logits, attn = attend(x, wk, wq, wv, cfg)
        cert = check_attention_bound(collect_stats(x, wk, wq, attn, logits), logits)
        assert cert.satisfied, seed
        assert cert.applicable_rows == 8


def test_certificate_tight_on_constructed_row():
    t, sigma_bar = 6, 4.0
    u_star = tight_minimizer(sigma_bar, t)
    x = np.eye(t)
    wk = np.eye(t)[:, :1]
    wq = u_star[:, None]
    cfg = AttentionConfig(d_model=t, head_dim=1, value_dim=1, use_sqrt_d_scaling=False)
    _, logits, attn = attend(x, wk, wq, wq, cfg)
    assert np.allclose(logits[0, 0], u_star)
    stats = collect_stats(x, wk, wq, attn, logits)
    cert = check_attention_bound(stats, logits)
    assert cert.satisfied
    assert cert.measured_min_row_entropy - cert.bound_nats <= 1e-6


def test_hvp_quadratic_and_quartic():
    m = np.diag([3.0, 1.0])
    quad = lambda th: (0.5 * th @ m @ th, m @ th)
    assert np.allclose(hvp(quad, np.zeros(2), np.array([1.0, 0.0])), [3, 0], atol=1e-6)
    quart = lambda th: (0.25 * (th @ th) ** 2, (th @ th) * th)
    assert hvp(quart, np.array([1.0, 0.0]), np.array([1.0, 0.0]), eps=1e-5)[0] == pytest.approx(3.0, abs=1e-5)
    with pytest.raises(DomainError):
        hvp(quad, np.zeros(2), np.ones(2), eps=0.0)
    with pytest.raises(NumericalError):
        hvp(lambda th: (0.0, th * np.nan), np.zeros(2), np.ones(2))


def test_hvp_on_toy_model_matches_second_difference():
    model = Model(toy_model_config("plain", "pre_ln"))
    rng = np.random.default_rng(0)
    x = rng.integers(0, 7, size=(4, 6))
    y = rng.integers(0, 7, size=(4, 6))
    theta0 = model.flat_params()

    def loss_and_grad(theta):
        model.set_flat_params(theta)
        res, grads = model.loss_and_grads(x, y, training=False, stats="none")
        return res.loss, np.concatenate([grads[n].reshape(-1) for n in model.params])

    v = rng.standard_normal(theta0.size)
    v /= np.linalg.norm(v)
    hv = hvp(loss_and_grad, theta0, v, eps=1e-4)
    e = 1e-3
    lp, l0, lm = (loss_and_grad(theta0 + s * e * v)[0] for s in (1, 0, -1))
    vhv = (lp - 2 * l0 + lm) / e**2
    assert abs(v @ hv - vhv) <= 1e-3 * abs(vhv)


def test_lanczos_explicit_diagonal():
    d = np.array([5.0, -4.0, 1.0, 0.5, 0.25, 0.1, -0.2, 0.3])
    probe = lanczos_top_eigs(lambda q: d * q, dim=8, k=2, iters=8)
    assert np.allclose(np.abs(probe.eigenvalues), [5, 4], atol=1e-8)
    assert probe.sharpness == pytest.approx(5.0, abs=1e-8)


def test_lanczos_against_dense_eigen():
    for seed in range(5):
        rng = np.random.default_rng(seed)
        a = rng.standard_normal((50, 50))
        a = (a + a.T) / 2
        probe = lanczos_top_eigs(lambda q: a @ q, dim=50, k=5, iters=50, seed=seed)
        ref = np.linalg.eigvalsh(a)
        ref = ref[np.argsort(-np.abs(ref))][:5]
        assert np.allclose(probe.eigenvalues, ref, rtol=1e-6, atol=0)
        mags = np.abs(probe.eigenvalues)
        assert np.all(np.diff(mags) <= 0)


def test_lanczos_quadratic_sharpness_and_breakdown():
    h = np.diag([7.0, 2.0, 2.0, 2.0])
    probe = lanczos_top_eigs(lambda q: h @ q, dim=4, k=1, iters=4)
    assert probe.sharpness == pytest.approx(7.0, rel=1e-12)
    assert probe.breakdown
    with pytest.raises(DomainError):
        lanczos_top_eigs(lambda q: q, dim=3, k=4, iters=4)


def test_adamw_threshold():
    assert adamw_stability_threshold(0.9, 1.0) == 38.0
    assert adamw_stability_threshold(0.0, 1.0) == 2.0
    assert adamw_stability_threshold(0.9, 1e-3) == pytest.approx(38000.0, rel=1e-15)
    with pytest.raises(DomainError):
        adamw_stability_threshold(0.9, 0.0)
    with pytest.raises(DomainError):
        adamw_stability_threshold(1.0, 0.1)
