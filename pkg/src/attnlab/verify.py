"""Property suites behind ``attnlab verify``.

Each suite returns a list of :class:`Check` rows; a suite passes when every
row does. Grids and tolerances are the documented defaults; callers may pass
smaller budgets for quick runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .attention import softmax_entropy
from .diagnostics import entropy_lower_bound, entropy_min_oracle, tight_minimizer
from .linalg import power_iteration_step, random_unit, spectral_norm_converged, svd
from .reparam import SpectralState, adaptive_update_bound, freeze
from .transformer import Model, ModelConfig

SIGMA_GRID = (0.0, 0.5, 1.0, 2.0, 5.0, 10.0)
T_GRID = (2, 4, 8, 64)
POWER_SHAPES = ((16, 16), (32, 64), (64, 32), (64, 64), (32, 128), (128, 128), (128, 256), (128, 512), (512, 128))


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""


# ---------------------------------------------------------------------------
# entropy bound


def sample_ball_rows(rng, n: int, t: int, radius: float) -> np.ndarray:
    """Logit rows with norm at most ``radius``.

    A third lie uniformly in the ball, a third on the sphere, and a third on
    the sphere near the one-hot direction, where the bound is closest.
    """
    g = rng.standard_normal((n, t))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    k = n // 3
    r = np.ones(n)
    r[:k] = rng.random(k) ** (1.0 / t)
    spike = np.zeros(t)
    spike[0] = math.sqrt(1 - 1 / t)
    spike[1:] = -1 / math.sqrt(t * (t - 1))
    near = spike + 0.05 * g[2 * k :]
    g[2 * k :] = near / np.linalg.norm(near, axis=1, keepdims=True)
    return g * (r * radius)[:, None]


def bound_validity(n_rows: int = 100_000, seed: int = 0, tol: float = 1e-12, sigmas=SIGMA_GRID, ts=T_GRID):
    rng = np.random.default_rng(seed)
    out = []
    for t in ts:
        for s in sigmas:
            bound = entropy_lower_bound(s, t)
            u = sample_ball_rows(rng, n_rows, t, s)
            gap = float((softmax_entropy(u) - bound).min())
            out.append(Check(f"validity sigma={s:g} T={t}", gap >= -tol, f"min gap {gap:.3e}"))
    return out


def bound_tightness(seed: int = 0, tol: float = 1e-10, oracle_tol: float = 1e-4, sigmas=SIGMA_GRID, ts=T_GRID):
    out = []
    for t in ts:
        for s in sigmas:
            u = tight_minimizer(s, t)
            err = abs(float(softmax_entropy(u[None])[0]) - entropy_lower_bound(s, t))
            out.append(Check(f"minimiser sigma={s:g} T={t}", err <= tol, f"|ent - bound| {err:.3e}"))
    for t in (2, 3, 4):
        for s in sigmas:
            found = entropy_min_oracle(s, t, seed=seed)
            gap = found - entropy_lower_bound(s, t)
            ok = -1e-9 <= gap <= oracle_tol
            out.append(Check(f"oracle sigma={s:g} T={t}", ok, f"oracle - bound {gap:.3e}"))
    return out


def bound_boundary(ts=T_GRID, tol: float = 1e-14):
    out = []
    for t in ts:
        err = abs(entropy_lower_bound(0.0, t) - math.log(t))
        out.append(Check(f"sigma=0 T={t}", err <= tol, f"|bound - log T| {err:.1e}"))
    return out


# ---------------------------------------------------------------------------
# power iteration


def gapped_matrix(rng, m: int, n: int, max_ratio: float = 0.9) -> np.ndarray:
    """Random ``m x n`` matrix with Haar singular vectors and ``s2/s1 <= max_ratio``.

    Plain Gaussian matrices have a vanishing top gap as they grow, so a fixed
    step budget cannot promise a fixed accuracy on them.
    """
    k = min(m, n)
    ratio = rng.uniform(0.5, max_ratio)
    s = np.sort(rng.uniform(0.0, ratio, size=k))[::-1]
    s[0] = 1.0
    s *= rng.uniform(0.1, 10.0)
    qu, _ = np.linalg.qr(rng.standard_normal((m, k)))
    qv, _ = np.linalg.qr(rng.standard_normal((n, k)))
    return (qu * s) @ qv.T


def power_accuracy(n_mats: int = 200, steps: int = 100, seed: int = 0, tol: float = 1e-6):
    rng = np.random.default_rng(seed)
    worst = 0.0
    worst_shape = None
    for i in range(n_mats):
        m, n = POWER_SHAPES[i % len(POWER_SHAPES)]
        w = gapped_matrix(rng, m, n)
        u, v = random_unit(m, rng), random_unit(n, rng)
        for _ in range(steps):
            u, v, sigma = power_iteration_step(w, u, v)
        ref = svd(w).sigma_max
        err = abs(sigma - ref) / ref
        if err > worst:
            worst, worst_shape = err, (m, n)
    return [Check(f"{n_mats} matrices, {steps} steps", worst <= tol, f"max rel err {worst:.2e} at {worst_shape}")]


def reparam_identity(n_mats: int = 50, seed: int = 0, tol: float = 1e-6):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(n_mats):
        m, n = POWER_SHAPES[i % len(POWER_SHAPES)]
        w = rng.standard_normal((m, n))
        st = SpectralState.init(w, rng)
        st.gamma = float(rng.uniform(-3.0, 3.0))
        w_hat = freeze(st, w)
        err = abs(svd(w_hat).sigma_max - abs(st.gamma)) / abs(st.gamma)
        worst = max(worst, err)
    return [Check("sigma(W_hat) = |gamma|", worst <= tol, f"max rel err {worst:.2e}")]


def power_monotone(n_mats: int = 20, steps: int = 50, seed: int = 0):
    rng = np.random.default_rng(seed)
    ok = True
    for i in range(n_mats):
        m, n = POWER_SHAPES[i % len(POWER_SHAPES)]
        w = rng.standard_normal((m, n))
        ref = svd(w).sigma_max
        u, v = random_unit(m, rng), random_unit(n, rng)
        prev = 0.0
        for _ in range(steps):
            u, v, s = power_iteration_step(w, u, v)
            if s < prev - 1e-12 * ref or s > ref * (1 + 1e-12):
                ok = False
            prev = s
    return [Check("estimates non-decreasing and below sigma_max", ok)]


def converged_estimate(seed: int = 0):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((128, 512))
    est = spectral_norm_converged(w, tol=1e-13, max_steps=20000)
    ref = svd(w).sigma_max
    err = abs(est.sigma - ref) / ref
    return [Check("converged estimate 128x512", err <= 1e-6, f"rel err {err:.2e} after {est.steps} steps")]


# ---------------------------------------------------------------------------
# adaptive-update bound


def prop32(n_draws: int = 1000, seed: int = 0, widths=(2, 4, 8, 16)):
    rng = np.random.default_rng(seed)
    out = []
    for w in widths:
        worst = math.inf
        for _ in range(n_draws):
            mu = rng.standard_normal((w, w)) * rng.uniform(0.01, 10.0)
            n = np.abs(rng.standard_normal((w, w))) * rng.uniform(0.0, 10.0)
            lower, sig = adaptive_update_bound(mu, n)
            worst = min(worst, sig - lower)
        out.append(Check(f"random draws w={w}", worst >= -1e-12, f"min sigma - bound {worst:.3e}"))
        mu = np.abs(rng.standard_normal((w, w))) + 0.1
        lo0, sig0 = adaptive_update_bound(mu, np.zeros_like(mu))
        out.append(
            Check(f"n=0 w={w}", abs(lo0 - math.sqrt(w)) <= 1e-12 and abs(sig0 - w) <= 1e-12 * w, f"bound {lo0:.15g}")
        )
        lo1, _ = adaptive_update_bound(mu, mu.copy())
        out.append(Check(f"n=mu w={w}", abs(lo1 - math.sqrt(w / 2)) <= 1e-12, f"bound {lo1:.15g}"))
    return out


# ---------------------------------------------------------------------------
# autodiff


def _weighted_sum(node, rng):
    r = node.tape.constant(rng.standard_normal(node.shape))
    return ad.reduce_sum(ad.mul(node, r))


def op_cases(rng):
    """(name, builder) pairs; each builder returns (root, leaves) on a fresh tape."""

    def leaf(tape, *shape, scale=1.0, name=None):
        return tape.leaf(rng.standard_normal(shape) * scale, name=name)

    def unary(fn, *shape, **kw):
        def build():
            tape = ad.Tape()
            a = leaf(tape, *shape, **kw)
            return _weighted_sum(fn(a), rng), [a]

        return build

    def binary(fn, sa, sb):
        def build():
            tape = ad.Tape()
            a, b = leaf(tape, *sa), leaf(tape, *sb)
            return _weighted_sum(fn(a, b), rng), [a, b]

        return build

    def softmax_masked():
        tape = ad.Tape()
        a = leaf(tape, 5, 5)
        mask = np.triu(np.ones((5, 5), bool), 1)
        return _weighted_sum(ad.rowwise_softmax(a, tau=0.7, mask=mask), rng), [a]

    def layernorm():
        tape = ad.Tape()
        x, g, b = leaf(tape, 4, 6), leaf(tape, 1, 6), leaf(tape, 1, 6)
        return _weighted_sum(ad.layernorm(x, g, b), rng), [x, g, b]

    def embedding():
        tape = ad.Tape()
        table = leaf(tape, 7, 3)
        idx = rng.integers(0, 7, size=(2, 5))
        return _weighted_sum(ad.embedding_lookup(table, idx), rng), [table]

    def xent():
        tape = ad.Tape()
        logits = leaf(tape, 6, 5, scale=2.0)
        return ad.cross_entropy_mean(logits, rng.integers(0, 5, size=6)), [logits]

    def xent_seq():
        tape = ad.Tape()
        logits = leaf(tape, 2, 4, 5)
        return ad.cross_entropy_mean(logits, rng.integers(0, 5, size=(2, 4))), [logits]

    def div_scalar():
        tape = ad.Tape()
        a = leaf(tape, 3, 4)
        s = tape.leaf(np.array([[rng.uniform(1.0, 2.0)]]))
        return _weighted_sum(ad.divide_by_scalar_node(a, s), rng), [a, s]

    def concat(fn, sa, sb):
        def build():
            tape = ad.Tape()
            a, b = leaf(tape, *sa), leaf(tape, *sb)
            return _weighted_sum(fn([a, b]), rng), [a, b]

        return build

    def col_norm():
        tape = ad.Tape()
        a = leaf(tape, 5, 3)
        return _weighted_sum(ad.col_normalize(a), rng), [a]

    return [
        ("matmul", binary(ad.matmul, (3, 4), (4, 2))),
        ("matmul_batched", binary(ad.matmul, (2, 3, 4), (4, 5))),
        ("add", binary(ad.add, (3, 4), (3, 4))),
        ("add_broadcast", binary(ad.add, (3, 4), (1, 4))),
        ("mul", binary(ad.mul, (3, 4), (3, 4))),
        ("scalar_mul", unary(lambda a: ad.scalar_mul(a, -2.5), 3, 4)),
        ("divide_by_scalar_node", div_scalar),
        ("rowwise_softmax", unary(lambda a: ad.rowwise_softmax(a, tau=1.0), 4, 6)),
        ("rowwise_softmax_tau", unary(lambda a: ad.rowwise_softmax(a, tau=0.3), 4, 6)),
        ("rowwise_softmax_masked", softmax_masked),
        ("gelu", unary(ad.gelu, 4, 5, scale=2.0)),
        ("layernorm", layernorm),
        ("embedding_lookup", embedding),
        ("cross_entropy_mean", xent),
        ("cross_entropy_mean_seq", xent_seq),
        ("transpose", unary(ad.transpose, 3, 4)),
        ("permute", unary(lambda a: ad.permute(a, (1, 0, 2)), 2, 3, 4)),
        ("reshape", unary(lambda a: ad.reshape(a, (4, 3)), 3, 4)),
        ("concat_rows", concat(ad.concat_rows, (2, 3), (4, 3))),
        ("concat_cols", concat(ad.concat_cols, (3, 2), (3, 4))),
        ("slice_rows", unary(lambda a: ad.slice_rows(a, 1, 4), 5, 3)),
        ("slice_cols", unary(lambda a: ad.slice_cols(a, 2, 5), 3, 6)),
        ("reduce_mean", unary(lambda a: ad.scalar_mul(ad.reduce_mean(a), 3.0), 3, 4)),
        ("reduce_sum", unary(ad.reduce_sum, 3, 4)),
        ("col_normalize", col_norm),
    ]


def toy_model_config(mode: str = "plain", norm: str = "post_ln", **kw) -> ModelConfig:
    base = dict(
        n_layers=2, d_model=8, n_heads=2, mlp_dim=16, vocab_size=7, max_seq_len=6,
        norm_mode=norm, reparam_mode=mode, init_std=0.3, seed=3,
    )
    base.update(kw)
    return ModelConfig(**base)


def model_gradcheck(cfg: ModelConfig, n_coords: int = 50, seed: int = 0):
    rng = np.random.default_rng(seed)
    model = Model(cfg)
    # move gains and biases off their trivial initial values
    for name, p in model.params.items():
        model.params[name] = p + 0.1 * rng.standard_normal(p.shape)
    b, t = 3, cfg.max_seq_len - (1 if cfg.readout == "cls" else 0)
    tokens = rng.integers(0, cfg.vocab_size, size=(b, t))
    targets = rng.integers(0, cfg.out_dim, size=(b,) if cfg.readout == "cls" else (b, t))
    res = model.forward(tokens, targets, training=True, stats="none")
    leaves = list(res.param_nodes.values())
    return ad.gradcheck(res.loss_node, leaves, n_coords=n_coords, rng=rng)


MODEL_VARIANTS = (
    ("plain", "post_ln", {}),
    ("plain", "pre_ln", {}),
    ("sigma_reparam", "none", {}),
    ("sigma_reparam", "post_ln", {}),
    ("spectral_norm_only", "pre_ln", {}),
    ("weight_norm", "post_ln", {}),
    ("sigma_reparam", "none", {"detach_sigma": True}),
    ("sigma_reparam", "none", {"joint_qkv": True, "causal": True}),
    ("plain", "post_ln", {"readout": "cls", "n_classes": 4}),
)


def gradcheck_suite(seed: int = 0, n_coords: int = 50, models=MODEL_VARIANTS):
    rng = np.random.default_rng(seed)
    out = []
    for name, build in op_cases(rng):
        root, leaves = build()
        rep = ad.gradcheck(root, leaves, n_coords=n_coords, rng=rng)
        out.append(Check(f"op {name}", rep.ok, f"{rep.checked} coords, max rel err {rep.max_rel_err:.1e}"))
    for mode, norm, extra in models:
        rep = model_gradcheck(toy_model_config(mode, norm, **extra), n_coords=n_coords, seed=seed)
        tag = ",".join(f"{k}={v}" for k, v in extra.items())
        out.append(
            Check(
                f"model {mode}/{norm}{' ' + tag if tag else ''}",
                rep.ok,
                f"{rep.checked} coords, max rel err {rep.max_rel_err:.1e}",
            )
        )
    return out


SUITES = {
    "bound": lambda seed: bound_validity(seed=seed) + bound_tightness(seed=seed) + bound_boundary(),
    "prop32": lambda seed: prop32(seed=seed),
    "power": lambda seed: power_accuracy(seed=seed) + power_monotone(seed=seed) + reparam_identity(seed=seed)
    + converged_estimate(seed=seed),
    "gradcheck": lambda seed: gradcheck_suite(seed=seed),
}


def run_suite(name: str, seed: int = 0) -> list[Check]:
    if name == "all":
        return [c for key in SUITES for c in run_suite(key, seed)]
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}")
    return [Check(f"{name}: {c.name}", c.passed, c.detail) for c in SUITES[name](seed)]
