import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from attnlab.attention import (
    AttentionConfig,
    attend,
    attention_entropy,
    collect_stats,
    softmax_entropy,
)
from attnlab.errors import ContractError, DomainError, ShapeError


def _weights(rng, d, scale=1.0):
    return [rng.standard_normal((d, d)) * scale for _ in range(3)]


def test_zero_kq_gives_uniform_attention():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((5, 4))
    z = np.zeros((4, 4))
    _, _, attn = attend(x, z, z, rng.standard_normal((4, 4)), AttentionConfig(d_model=4))
    assert np.allclose(attn, 1 / 5)
    per_row, mean = attention_entropy(attn[0])
    assert np.allclose(per_row, math.log(5)) and mean == pytest.approx(math.log(5))


def test_single_token():
    rng = np.random.default_rng(1)
    wk, wq, wv = _weights(rng, 3)
    _, _, attn = attend(rng.standard_normal((1, 3)), wk, wq, wv, AttentionConfig(d_model=3))
    assert attn.shape == (1, 1, 1) and attn[0, 0, 0] == 1.0
    assert attention_entropy(attn)[1] == 0.0


def test_attend_matches_naive_softmax():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((4, 6))
    wk, wq, wv = _weights(rng, 6)
    cfg = AttentionConfig(d_model=6, n_heads=2, temperature=0.7)
    out, logits, attn = attend(x, wk, wq, wv, cfg)
    for h in range(2):
        sl = slice(3 * h, 3 * h + 3)
        a = (x @ wk[:, sl]) @ (x @ wq[:, sl]).T / math.sqrt(3) / 0.7
        assert np.max(np.abs(logits[h] - a)) <= 1e-12
        for i in range(4):
            e = np.exp(a[i])
            assert np.max(np.abs(attn[h, i] - e / e.sum())) <= 1e-12
        assert np.allclose(out[:, sl], attn[h] @ x @ wv[:, sl], atol=1e-12)


def test_attend_shape_error():
    rng = np.random.default_rng(3)
    wk, wq, wv = _weights(rng, 4)
    with pytest.raises(ShapeError):
        attend(rng.standard_normal((3, 5)), wk, wq, wv, AttentionConfig(d_model=4))


def test_temperature_must_be_positive():
    with pytest.raises(DomainError):
        AttentionConfig(d_model=4, temperature=0.0)


def test_entropy_examples():
    assert np.allclose(attention_entropy(np.full((3, 3), 1 / 3))[0], math.log(3))
    assert np.all(attention_entropy(np.eye(4))[0] == 0)
    per_row, _ = attention_entropy(np.array([[0.5, 0.25, 0.25]]))
    assert per_row[0] == pytest.approx(1.5 * math.log(2), abs=1e-15)
    with pytest.raises(ContractError):
        attention_entropy(np.array([[0.5, 0.4]]))


def test_causal_mask_and_entropy_ceiling():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((6, 4))
    wk, wq, wv = _weights(rng, 4)
    _, _, attn = attend(x, wk, wq, wv, AttentionConfig(d_model=4), causal=True)
    a = attn[0]
    assert np.all(a[np.triu_indices(6, 1)] == 0.0)
    per_row, _ = attention_entropy(a)
    for i in range(6):
        assert per_row[i] <= math.log(i + 1) + 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 12))
def test_rows_stochastic_and_entropy_in_range(seed, t):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((t, 4)) * 3
    wk, wq, wv = _weights(rng, 4)
    _, _, attn = attend(x, wk, wq, wv, AttentionConfig(d_model=4))
    assert np.all(np.abs(attn.sum(axis=-1) - 1) <= 1e-12)
    per_row, mean = attention_entropy(attn)
    assert np.all(per_row >= 0) and np.all(per_row <= math.log(t) + 1e-12)
    assert per_row.min() <= mean <= per_row.max()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_entropy_non_decreasing_in_temperature(seed):
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(8) * 4
    taus = np.geomspace(0.05, 20, 40)
    ent = softmax_entropy(u[None, :] / taus[:, None])
    assert np.all(np.diff(ent) >= -1e-12)


def test_collect_stats_zero_weights():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((6, 4))
    z = np.zeros((4, 4))
    _, logits, attn = attend(x, z, z, z, AttentionConfig(d_model=4))
    s = collect_stats(x, z, z, attn, logits)
    assert s.mean_entropy == pytest.approx(math.log(6))
    assert s.sigma_kq == 0.0


def test_collect_stats_saturated():
    logits = 50 * np.eye(5)
    attn = np.exp(logits - logits.max(axis=1, keepdims=True))
    attn /= attn.sum(axis=1, keepdims=True)
    s = collect_stats(np.eye(5), np.eye(5), np.eye(5), attn, logits)
    assert s.min_row_entropy < 1e-10
    assert 0 <= s.min_row_entropy <= s.mean_entropy <= math.log(5)


def test_logit_norm_chain():
    cfg = AttentionConfig(d_model=4, use_sqrt_d_scaling=False)
    for seed in range(50):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((8, 4))
        wk, wq, wv = _weights(rng, 4, 0.5)
        _, logits, attn = attend(x, wk, wq, wv, cfg)
        s = collect_stats(x, wk, wq, attn, logits)
        assert s.max_logit_row_norm <= s.sigma_kq * s.sigma_x + 1e-9


def test_multihead_entropy_averaged_uniformly():
    rng = np.random.default_rng(6)
    x = rng.standard_normal((2, 5, 8))
    wk, wq, wv = _weights(rng, 8)
    cfg = AttentionConfig(d_model=8, n_heads=4)
    logits, attns = zip(*[attend(xi, wk, wq, wv, cfg)[1:] for xi in x])
    attn, logit = np.stack(attns), np.stack(logits)
    s = collect_stats(x, wk, wq, attn, logit)
    assert s.mean_entropy == pytest.approx(np.mean(attention_entropy(attn)[0]), abs=1e-14)
    assert s.head_entropies.shape == (4,)
    assert np.mean(s.head_entropies) == pytest.approx(s.mean_entropy, abs=1e-14)
