"""Toy Transformer encoder built on the autodiff tape.

Four normalisation configurations are supported through ``norm_mode`` and
``reparam_mode``: post-LN, pre-LN, σReparam without any LayerNorm, and
σReparam combined with post-LN. Every linear map inside the blocks and the
output head goes through :class:`~attnlab.reparam.ReparamLinear`; embedding
tables are never reparameterised.

Checkpoints use the layout::

    b"ECKP\\x01" | u32 header_len | header JSON (utf-8)
    for each parameter:      ECLM matrix block
    for each spectral state: ECLM u (1 x n) | ECLM v (1 x m) | f64 gamma | u8 frozen

in the order listed by the header.
"""

from __future__ import annotations

import enum
import io
import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .attention import AttentionStats, causal_mask, collect_stats
from .errors import ConfigError, DomainError, ShapeError
from .linalg import read_matrix, spectral_norm_converged, write_matrix
from .reparam import ReparamLinear, ReparamMode

CHECKPOINT_MAGIC = b"ECKP\x01"


class NormMode(str, enum.Enum):
    PRE_LN = "pre_ln"
    POST_LN = "post_ln"
    NONE = "none"


@dataclass
class ModelConfig:
    n_layers: int = 2
    d_model: int = 64
    n_heads: int = 4
    mlp_dim: int = 256
    vocab_size: int = 32
    max_seq_len: int = 32
    n_classes: int | None = None
    readout: str = "token"
    norm_mode: str = "post_ln"
    reparam_mode: str = "plain"
    causal: bool = False
    init_std: float | None = None
    emb_std: float = 1.0
    gamma_init: str = "one"
    joint_qkv: bool = False
    detach_sigma: bool = False
    use_sqrt_d_scaling: bool = True
    seed: int = 0

    def validate(self) -> None:
        try:
            norm = NormMode(self.norm_mode)
            mode = ReparamMode(self.reparam_mode)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if norm is NormMode.NONE and mode is ReparamMode.PLAIN:
            raise ConfigError("norm_mode 'none' requires a reparameterised model")
        if self.d_model % self.n_heads:
            raise ConfigError("d_model must be divisible by n_heads")
        if self.readout not in ("token", "cls"):
            raise ConfigError(f"unknown readout {self.readout!r}")
        if self.gamma_init not in ("one", "svd"):
            raise ConfigError(f"unknown gamma_init {self.gamma_init!r}")
        for name in ("n_layers", "d_model", "n_heads", "mlp_dim", "vocab_size", "max_seq_len"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    @property
    def out_dim(self) -> int:
        return self.n_classes or self.vocab_size

    @property
    def resolved_init_std(self) -> float:
        if self.init_std is not None:
            return self.init_std
        return 0.02 if ReparamMode(self.reparam_mode) in (ReparamMode.PLAIN, ReparamMode.WEIGHT_NORM) else 0.1


@dataclass
class LayerSnapshot:
    layer_index: int
    attention_stats: AttentionStats
    grad_inf_norm: float = 0.0
    grad_l2_norm: float = 0.0
    sigma_per_matrix: dict = field(default_factory=dict)


@dataclass
class ForwardResult:
    loss: float
    logits: np.ndarray
    snapshots: list
    tape: ad.Tape = field(repr=False)
    loss_node: ad.Node = field(repr=False)
    param_nodes: dict = field(repr=False)
    attn_cache: list = field(repr=False, default_factory=list)
    hidden: np.ndarray | None = field(repr=False, default=None)


def trunc_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    """Normal(0, std) resampled until every entry lies within two standard deviations."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2
    return out * std


class Model:
    """Parameters, reparameterisation state and the forward pass."""

    def __init__(self, cfg: ModelConfig):
        cfg.validate()
        self.cfg = cfg
        self.tau = 1.0
        self.params: dict[str, np.ndarray] = {}
        self.linears: dict[str, ReparamLinear] = {}
        self.decay: set[str] = set()
        self._build(np.random.default_rng(cfg.seed))

    # -- construction -------------------------------------------------------

    def _linear(self, rng, name, d_in, d_out, bias=True):
        cfg = self.cfg
        mode = ReparamMode(cfg.reparam_mode)
        w = trunc_normal(rng, (d_in, d_out), cfg.resolved_init_std)
        self.params[name] = w
        self.decay.add(name)
        layer = ReparamLinear(w.shape, mode, rng, detach_sigma=cfg.detach_sigma)
        self.linears[name] = layer
        if mode is ReparamMode.SIGMA_REPARAM:
            gamma = np.linalg.svd(w, compute_uv=False)[0] if cfg.gamma_init == "svd" else 1.0
            self.params[name + ".gamma"] = np.full((1, 1), gamma)
        elif mode is ReparamMode.WEIGHT_NORM:
            self.params[name + ".gain"] = np.sqrt(np.sum(w * w, axis=0, keepdims=True))
        if bias:
            self.params[_bias_name(name)] = np.zeros((1, d_out))

    def _norm(self, name, d):
        self.params[name + ".gain"] = np.ones((1, d))
        self.params[name + ".bias"] = np.zeros((1, d))

    def _build(self, rng):
        cfg = self.cfg
        d = cfg.d_model
        n_tok = cfg.vocab_size + (1 if cfg.readout == "cls" else 0)
        n_pos = cfg.max_seq_len + (1 if cfg.readout == "cls" else 0)
        self.params["tok_emb"] = rng.standard_normal((n_tok, d)) * cfg.emb_std
        self.params["pos_emb"] = rng.standard_normal((n_pos, d)) * cfg.emb_std
        norm = NormMode(cfg.norm_mode)
        for i in range(cfg.n_layers):
            p = f"blocks.{i}"
            if norm is not NormMode.NONE:
                self._norm(p + ".ln1", d)
                self._norm(p + ".ln2", d)
            if cfg.joint_qkv:
                self._linear(rng, p + ".attn.w_qkv", d, 3 * d, bias=False)
            else:
                for m in ("w_q", "w_k", "w_v"):
                    self._linear(rng, f"{p}.attn.{m}", d, d, bias=False)
            self._linear(rng, p + ".attn.w_o", d, d)
            self._linear(rng, p + ".mlp.w_1", d, cfg.mlp_dim)
            self._linear(rng, p + ".mlp.w_2", cfg.mlp_dim, d)
        if norm is NormMode.PRE_LN:
            self._norm("final_ln", d)
        self._linear(rng, "head.w_out", d, cfg.out_dim)

    # -- helpers ------------------------------------------------------------

    @property
    def n_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def param_names(self) -> list[str]:
        return list(self.params)

    def flat_params(self) -> np.ndarray:
        return np.concatenate([p.reshape(-1) for p in self.params.values()])

    def set_flat_params(self, theta) -> None:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.n_params,):
            raise ShapeError(f"expected {self.n_params} parameters, got shape {theta.shape}")
        i = 0
        for name, p in self.params.items():
            self.params[name] = theta[i : i + p.size].reshape(p.shape).copy()
            i += p.size

    def freeze(self) -> None:
        """Pin every reparameterised weight at its converged value for inference."""
        for name, layer in self.linears.items():
            if layer.state is not None:
                gain = self.params.get(name + ".gamma")
                layer.freeze(self.params[name], gain)

    def unfreeze(self) -> None:
        for layer in self.linears.values():
            if layer.state is not None:
                layer.state.frozen = False
                layer.state.frozen_weight = None

    def effective_weight(self, name: str) -> np.ndarray:
        """Numpy value of the weight the forward pass would use (no power step)."""
        tape = ad.Tape()
        w = tape.leaf(self.params[name])
        gain_name = name + (".gamma" if self.linears[name].mode is ReparamMode.SIGMA_REPARAM else ".gain")
        gain = tape.leaf(self.params[gain_name]) if gain_name in self.params else None
        return self.linears[name](w, gain, training=False).value

    # -- forward ------------------------------------------------------------

    def forward(self, tokens, targets, tau: float | None = None, training: bool = True, stats: str = "entropy"):
        """Build the tape for one batch and return a :class:`ForwardResult`.

        ``stats`` is ``"none"``, ``"entropy"`` (per-layer attention entropy
        only) or ``"full"`` (adds spectral norms and logit row norms).
        """
        cfg = self.cfg
        tau = self.tau if tau is None else tau
        if not tau > 0:
            raise DomainError(f"temperature must be positive, got {tau}")
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.ndim == 1:
            tokens = tokens[None]
        b = tokens.shape[0]
        if cfg.readout == "cls":
            tokens = np.concatenate([np.full((b, 1), cfg.vocab_size), tokens], axis=1)
        t = tokens.shape[1]
        if t > self.params["pos_emb"].shape[0]:
            raise ShapeError(f"sequence length {t} exceeds max_seq_len")
        if tokens.size and (tokens.min() < 0 or tokens.max() >= self.params["tok_emb"].shape[0]):
            raise ShapeError("token index out of range")

        tape = ad.Tape()
        nodes = {name: tape.leaf(v, name=name) for name, v in self.params.items()}

        def lin(name, x, bias=True):
            layer = self.linears[name]
            if layer.mode is ReparamMode.SIGMA_REPARAM:
                gain = nodes[name + ".gamma"]
            elif layer.mode is ReparamMode.WEIGHT_NORM:
                gain = nodes[name + ".gain"]
            else:
                gain = None
            w = layer(nodes[name], gain, training)
            out = ad.matmul(x, w)
            bname = _bias_name(name)
            if bias and bname in nodes:
                out = ad.add(out, nodes[bname])
            return out, w

        def norm(name, x):
            return ad.layernorm(x, nodes[name + ".gain"], nodes[name + ".bias"])

        pos = ad.slice_rows(nodes["pos_emb"], 0, t)
        x = ad.add(ad.embedding_lookup(nodes["tok_emb"], tokens), pos)
        mode = NormMode(cfg.norm_mode)
        mask = causal_mask(t) if cfg.causal else None
        attn_cache = []
        for i in range(cfg.n_layers):
            p = f"blocks.{i}"
            h_in = norm(p + ".ln1", x) if mode is NormMode.PRE_LN else x
            a_out, cache = self._attention(lin, p, h_in, tau, mask)
            attn_cache.append(cache)
            x = ad.add(x, a_out)
            if mode is NormMode.POST_LN:
                x = norm(p + ".ln1", x)
            h_in = norm(p + ".ln2", x) if mode is NormMode.PRE_LN else x
            h, _ = lin(p + ".mlp.w_1", h_in)
            h, _ = lin(p + ".mlp.w_2", ad.gelu(h))
            x = ad.add(x, h)
            if mode is NormMode.POST_LN:
                x = norm(p + ".ln2", x)
        if mode is NormMode.PRE_LN:
            x = norm("final_ln", x)
        hidden = x
        if cfg.readout == "cls":
            x = ad.reshape(ad.slice_rows(x, 0, 1), (b, cfg.d_model))
        logits, _ = lin("head.w_out", x)
        loss = ad.cross_entropy_mean(logits, targets)
        snaps = [self._snapshot(i, c, tau, stats) for i, c in enumerate(attn_cache)] if stats != "none" else []
        res = ForwardResult(
            loss=float(loss.value.reshape(())),
            logits=logits.value,
            snapshots=snaps,
            tape=tape,
            loss_node=loss,
            param_nodes=nodes,
            attn_cache=attn_cache,
            hidden=hidden.value,
        )
        return res

    def _attention(self, lin, p, x, tau, mask):
        cfg = self.cfg
        b, t, d = x.shape
        h, hd = cfg.n_heads, cfg.head_dim
        if cfg.joint_qkv:
            qkv, w_qkv = lin(p + ".attn.w_qkv", x, bias=False)
            q = ad.slice_cols(qkv, 0, d)
            k = ad.slice_cols(qkv, d, 2 * d)
            v = ad.slice_cols(qkv, 2 * d, 3 * d)
            wq = ad.slice_cols(w_qkv, 0, d)
            wk = ad.slice_cols(w_qkv, d, 2 * d)
        else:
            q, wq = lin(p + ".attn.w_q", x, bias=False)
            k, wk = lin(p + ".attn.w_k", x, bias=False)
            v, _ = lin(p + ".attn.w_v", x, bias=False)

        def heads(z):
            return ad.permute(ad.reshape(z, (b, t, h, hd)), (0, 2, 1, 3))

        q, k, v = heads(q), heads(k), heads(v)
        # a = X W_K W_Q^T X^T per head
        raw = ad.matmul(k, ad.transpose(q))
        if cfg.use_sqrt_d_scaling:
            raw = ad.scalar_mul(raw, 1.0 / np.sqrt(hd))
        attn = ad.rowwise_softmax(raw, tau, mask)
        out = ad.reshape(ad.permute(ad.matmul(attn, v), (0, 2, 1, 3)), (b, t, d))
        out, _ = lin(p + ".attn.w_o", out)
        return out, {"x": x, "wk": wk, "wq": wq, "raw": raw, "attn": attn}

    def _snapshot(self, i, cache, tau, level):
        attn = cache["attn"].value
        ent = _row_entropy(attn)
        if level == "full":
            logits = cache["raw"].value / tau
            stats = collect_stats(cache["x"].value, cache["wk"].value, cache["wq"].value, attn, logits, self.cfg.n_heads)
            sig = {}
            for name in self._attn_weight_names(i):
                w = self.effective_weight(name)
                sig[name] = spectral_norm_converged(w, tol=1e-8, max_steps=200).sigma
        else:
            stats = AttentionStats(
                mean_entropy=float(ent.mean()),
                min_row_entropy=float(ent.min()),
                max_logit_row_norm=float("nan"),
                sigma_kq=float("nan"),
                sigma_x=float("nan"),
                head_entropies=ent.mean(axis=(0, 2)),
            )
            sig = {}
        return LayerSnapshot(layer_index=i, attention_stats=stats, sigma_per_matrix=sig)

    def _attn_weight_names(self, i):
        p = f"blocks.{i}.attn."
        return [n for n in self.linears if n.startswith(p)]

    def loss_and_grads(self, tokens, targets, tau=None, training=True, stats="entropy"):
        """Forward, backward, and per-layer attention gradient norms."""
        res = self.forward(tokens, targets, tau=tau, training=training, stats=stats)
        res.tape.backward(res.loss_node)
        grads = {name: node.grad for name, node in res.param_nodes.items()}
        for snap in res.snapshots:
            gs = [grads[n] for n in self._attn_weight_names(snap.layer_index)]
            snap.grad_inf_norm = float(max(np.abs(g).max() for g in gs))
            snap.grad_l2_norm = float(np.sqrt(sum(np.sum(g * g) for g in gs)))
        return res, grads

    def predict(self, tokens, tau=None) -> np.ndarray:
        tokens = np.asarray(tokens, dtype=np.int64)
        dummy = np.zeros(tokens.shape[:1] if self.cfg.readout == "cls" else tokens.shape, dtype=np.int64)
        res = self.forward(tokens, dummy, tau=tau, training=False, stats="none")
        res.tape.clear()
        return res.logits.argmax(axis=-1)

    # -- checkpoint ---------------------------------------------------------

    def save(self, f, step: int = 0) -> None:
        spectral = [n for n, l in self.linears.items() if l.state is not None]
        header = {
            "config": asdict(self.cfg),
            "tau": self.tau,
            "step": step,
            "params": [[n, list(p.shape)] for n, p in self.params.items()],
            "spectral": spectral,
        }
        blob = json.dumps(header, sort_keys=True).encode()
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for p in self.params.values():
            write_matrix(f, p.reshape(p.shape[0], -1))
        for n in spectral:
            st = self.linears[n].state
            write_matrix(f, st.u.reshape(1, -1))
            write_matrix(f, st.v.reshape(1, -1))
            f.write(struct.pack("<dB", st.gamma, int(st.frozen)))

    def to_bytes(self, step: int = 0) -> bytes:
        buf = io.BytesIO()
        self.save(buf, step)
        return buf.getvalue()

    @classmethod
    def load(cls, f) -> "Model":
        if f.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
            raise ValueError("not a checkpoint (bad magic)")
        (n,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(n).decode())
        model = cls(ModelConfig(**header["config"]))
        model.tau = header["tau"]
        for name, shape in header["params"]:
            model.params[name] = read_matrix(f).reshape(shape)
        for name in header["spectral"]:
            st = model.linears[name].state
            st.u = read_matrix(f).reshape(-1)
            st.v = read_matrix(f).reshape(-1)
            st.gamma, frozen = struct.unpack("<dB", f.read(9))
            if frozen:
                model.linears[name].freeze(model.params[name], model.params.get(name + ".gamma"))
        return model


def _bias_name(weight_name: str) -> str:
    # "blocks.0.mlp.w_1" -> "blocks.0.mlp.b_1"
    head, leaf = weight_name.rsplit(".", 1)
    return f"{head}.b{leaf[1:]}"


def _row_entropy(attn: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(attn > 0, attn * np.log(attn), 0.0)
    return -terms.sum(axis=-1)


def build_model(cfg: ModelConfig) -> Model:
    return Model(cfg)


def model_forward(model: Model, tokens, targets, tau: float | None = None, stats: str = "entropy"):
    """Loss and per-layer snapshots for one batch (training mode)."""
    res = model.forward(tokens, targets, tau=tau, training=True, stats=stats)
    return res.loss, res.snapshots


def set_global_temperature(model: Model, tau: float) -> None:
    if not tau > 0:
        raise DomainError(f"temperature must be positive, got {tau}")
    model.tau = float(tau)
