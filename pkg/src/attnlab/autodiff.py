"""A small reverse-mode autodiff tape.

Values are numpy ``float64`` arrays (2-D matrices, or 3-D/4-D stacks of them
for batched attention). Ops evaluate eagerly when they are recorded; the tape
keeps enough to replay the forward pass after a leaf is edited in place, which
is what the finite-difference checker relies on.

    tape = Tape()
    w = tape.leaf(np.ones((2, 3)))
    loss = reduce_mean(w)
    tape.backward(loss)
    w.grad  # all 1/6
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DomainError, ShapeError


class Node:
    __slots__ = ("tape", "index", "op", "parents", "value", "grad", "requires_grad", "attrs", "name")

    def __init__(self, tape, index, op, parents, value, requires_grad, attrs, name=None):
        self.tape = tape
        self.index = index
        self.op = op
        self.parents = parents
        self.value = value
        self.grad = None
        self.requires_grad = requires_grad
        self.attrs = attrs
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        label = self.name or self.op
        return f"Node({label}#{self.index}, shape={self.value.shape})"

    # a few operators keep model code readable
    def __add__(self, other):
        return add(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __mul__(self, other):
        if isinstance(other, Node):
            return mul(self, other)
        return scalar_mul(self, float(other))

    __rmul__ = __mul__

    @property
    def T(self):
        return transpose(self)


@dataclass
class _Op:
    forward: Callable
    vjp: Callable


_OPS: dict[str, _Op] = {}


def _register(name):
    def deco(pair):
        fwd, vjp = pair()
        _OPS[name] = _Op(fwd, vjp)
        return name

    return deco


class Tape:
    """Append-only record of nodes; parents always precede children."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __len__(self):
        return len(self.nodes)

    def leaf(self, value, requires_grad: bool = True, name: str | None = None) -> Node:
        value = np.array(value, dtype=np.float64)
        if value.ndim == 0:
            value = value.reshape(1, 1)
        node = Node(self, len(self.nodes), "leaf", (), value, requires_grad, {}, name)
        self.nodes.append(node)
        return node

    def constant(self, value, name: str | None = None) -> Node:
        return self.leaf(value, requires_grad=False, name=name)

    def apply(self, op: str, parents: Sequence[Node], **attrs) -> Node:
        for p in parents:
            if p.tape is not self:
                raise ContractError(f"{op}: operand {p!r} belongs to another tape")
        try:
            value = _OPS[op].forward(attrs, *(p.value for p in parents))
        except ShapeError as exc:
            raise ShapeError(f"{op} (node #{len(self.nodes)}): {exc}") from None
        rg = any(p.requires_grad for p in parents)
        node = Node(self, len(self.nodes), op, tuple(p.index for p in parents), value, rg, attrs)
        self.nodes.append(node)
        return node

    def forward(self, root: Node) -> np.ndarray:
        """Re-evaluate every non-leaf node up to ``root`` from current leaf values."""
        for node in self.nodes[: root.index + 1]:
            if node.op == "leaf":
                continue
            vals = [self.nodes[i].value for i in node.parents]
            try:
                node.value = _OPS[node.op].forward(node.attrs, *vals)
            except ShapeError as exc:
                raise ShapeError(f"{node.op} (node #{node.index}): {exc}") from None
        return root.value

    def clear(self) -> None:
        """Forget every node. Nodes point back at their tape, so without this a
        finished tape is only reclaimed by the cycle collector."""
        self.nodes.clear()

    def zero_grad(self):
        for node in self.nodes:
            node.grad = None

    def backward(self, root: Node, seed=None) -> None:
        """Accumulate d(root)/d(node) into ``node.grad`` for every node.

        ``root`` must be 1x1 unless an explicit ``seed`` of matching shape is
        given.
        """
        if seed is None:
            if root.value.size != 1:
                raise ContractError(f"backward needs a scalar root, got shape {root.value.shape}")
            seed = np.ones_like(root.value)
        else:
            seed = np.asarray(seed, dtype=np.float64)
            if seed.shape != root.value.shape:
                raise ShapeError(f"seed shape {seed.shape} != root shape {root.value.shape}")
        nodes = self.nodes[: root.index + 1]
        for node in nodes:
            node.grad = None
        root.grad = seed.copy()
        for node in reversed(nodes):
            if node.op == "leaf" or not node.requires_grad or node.grad is None:
                continue
            parents = [self.nodes[i] for i in node.parents]
            grads = _OPS[node.op].vjp(node.attrs, node.grad, node.value, *(p.value for p in parents))
            for p, g in zip(parents, grads):
                if g is not None and p.requires_grad:
                    # never in place: vjps may hand the same array to several parents
                    p.grad = g if p.grad is None else p.grad + g
        for node in nodes:
            if node.grad is None:
                node.grad = np.zeros_like(node.value)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(a, b, op):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from None


# ---------------------------------------------------------------------------
# op definitions


@_register("matmul")
def _matmul():
    def fwd(attrs, a, b):
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise ShapeError(f"matmul {a.shape} x {b.shape}")
        return np.matmul(a, b)

    def vjp(attrs, g, out, a, b):
        ga = np.matmul(g, np.swapaxes(b, -1, -2))
        if b.ndim == 2 and a.ndim > 2:
            gb = a.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.matmul(np.swapaxes(a, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return fwd, vjp


@_register("add")
def _add():
    def fwd(attrs, a, b):
        _check_broadcast(a, b, "add")
        return a + b

    def vjp(attrs, g, out, a, b):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return fwd, vjp


@_register("mul")
def _mul():
    def fwd(attrs, a, b):
        _check_broadcast(a, b, "mul")
        return a * b

    def vjp(attrs, g, out, a, b):
        return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)

    return fwd, vjp


@_register("div_scalar_node")
def _div():
    def fwd(attrs, a, s):
        if s.size != 1:
            raise ShapeError(f"divisor must be 1x1, got {s.shape}")
        return a / s.reshape(())

    def vjp(attrs, g, out, a, s):
        sv = s.reshape(())
        return g / sv, np.full(s.shape, -np.sum(g * a) / (sv * sv))

    return fwd, vjp


@_register("scalar_mul")
def _scalar_mul():
    def fwd(attrs, a):
        return attrs["c"] * a

    def vjp(attrs, g, out, a):
        return (attrs["c"] * g,)

    return fwd, vjp


@_register("softmax")
def _softmax():
    def fwd(attrs, u):
        z = u / attrs["tau"]
        mask = attrs.get("mask")
        if mask is not None:
            z = np.where(mask, -np.inf, z)
        z = z - z.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)

    def vjp(attrs, g, p, u):
        inner = np.sum(g * p, axis=-1, keepdims=True)
        return ((g - inner) * p / attrs["tau"],)

    return fwd, vjp


_GELU_C = float(np.sqrt(2.0 / np.pi))


@_register("gelu")
def _gelu():
    # tanh approximation
    def fwd(attrs, x):
        return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + 0.044715 * (x * x * x))))

    def vjp(attrs, g, out, x):
        x2 = x * x
        t = np.tanh(_GELU_C * (x + 0.044715 * x2 * x))
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner),)

    return fwd, vjp


@_register("layernorm")
def _layernorm():
    def fwd(attrs, x, gain, bias):
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = np.mean(xc * xc, axis=-1, keepdims=True)
        xhat = xc / np.sqrt(var + attrs["eps"])
        return xhat * gain + bias

    def vjp(attrs, g, out, x, gain, bias):
        n = x.shape[-1]
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = np.mean(xc * xc, axis=-1, keepdims=True)
        rstd = 1.0 / np.sqrt(var + attrs["eps"])
        xhat = xc * rstd
        gx_hat = g * gain
        gx = rstd / n * (n * gx_hat - gx_hat.sum(-1, keepdims=True) - xhat * (gx_hat * xhat).sum(-1, keepdims=True))
        return gx, _unbroadcast(g * xhat, gain.shape), _unbroadcast(g, bias.shape)

    return fwd, vjp


@_register("embedding")
def _embedding():
    def fwd(attrs, table):
        idx = attrs["indices"]
        if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
            raise ShapeError(f"token index out of range for table with {table.shape[0]} rows")
        return table[idx]

    def vjp(attrs, g, out, table):
        gt = np.zeros_like(table)
        np.add.at(gt, attrs["indices"].reshape(-1), g.reshape(-1, table.shape[1]))
        return (gt,)

    return fwd, vjp


@_register("cross_entropy_mean")
def _xent():
    def fwd(attrs, logits):
        t = attrs["targets"]
        if logits.shape[:-1] != t.shape:
            raise ShapeError(f"logits {logits.shape} vs targets {t.shape}")
        flat = logits.reshape(-1, logits.shape[-1])
        m = flat.max(axis=1, keepdims=True)
        lse = m[:, 0] + np.log(np.exp(flat - m).sum(axis=1))
        picked = flat[np.arange(flat.shape[0]), t.reshape(-1)]
        return np.array([[np.mean(lse - picked)]])

    def vjp(attrs, g, out, logits):
        t = attrs["targets"].reshape(-1)
        flat = logits.reshape(-1, logits.shape[-1])
        z = flat - flat.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(flat.shape[0]), t] -= 1.0
        return ((g.reshape(()) / flat.shape[0]) * p.reshape(logits.shape),)

    return fwd, vjp


@_register("transpose")
def _transpose():
    def fwd(attrs, a):
        return np.swapaxes(a, -1, -2)

    def vjp(attrs, g, out, a):
        return (np.swapaxes(g, -1, -2),)

    return fwd, vjp


@_register("permute")
def _permute():
    def fwd(attrs, a):
        return np.transpose(a, attrs["axes"])

    def vjp(attrs, g, out, a):
        return (np.transpose(g, np.argsort(attrs["axes"])),)

    return fwd, vjp


@_register("reshape")
def _reshape():
    def fwd(attrs, a):
        try:
            return a.reshape(attrs["shape"])
        except ValueError:
            raise ShapeError(f"cannot reshape {a.shape} to {attrs['shape']}") from None

    def vjp(attrs, g, out, a):
        return (g.reshape(a.shape),)

    return fwd, vjp


@_register("concat_rows")
def _concat_rows():
    def fwd(attrs, *parts):
        try:
            return np.concatenate(parts, axis=-2)
        except ValueError as exc:
            raise ShapeError(str(exc)) from None

    def vjp(attrs, g, out, *parts):
        cuts = np.cumsum([p.shape[-2] for p in parts])[:-1]
        return tuple(np.split(g, cuts, axis=-2))

    return fwd, vjp


@_register("concat_cols")
def _concat_cols():
    def fwd(attrs, *parts):
        try:
            return np.concatenate(parts, axis=-1)
        except ValueError as exc:
            raise ShapeError(str(exc)) from None

    def vjp(attrs, g, out, *parts):
        cuts = np.cumsum([p.shape[-1] for p in parts])[:-1]
        return tuple(np.split(g, cuts, axis=-1))

    return fwd, vjp


@_register("slice_rows")
def _slice_rows():
    def fwd(attrs, a):
        return a[..., attrs["start"] : attrs["stop"], :]

    def vjp(attrs, g, out, a):
        ga = np.zeros_like(a)
        ga[..., attrs["start"] : attrs["stop"], :] = g
        return (ga,)

    return fwd, vjp


@_register("slice_cols")
def _slice_cols():
    def fwd(attrs, a):
        return a[..., attrs["start"] : attrs["stop"]]

    def vjp(attrs, g, out, a):
        ga = np.zeros_like(a)
        ga[..., attrs["start"] : attrs["stop"]] = g
        return (ga,)

    return fwd, vjp


@_register("reduce_mean")
def _reduce_mean():
    def fwd(attrs, a):
        return np.array([[a.mean()]])

    def vjp(attrs, g, out, a):
        return (np.full(a.shape, g.reshape(()) / a.size),)

    return fwd, vjp


@_register("reduce_sum")
def _reduce_sum():
    def fwd(attrs, a):
        return np.array([[a.sum()]])

    def vjp(attrs, g, out, a):
        return (np.full(a.shape, g.reshape(())),)

    return fwd, vjp


@_register("col_normalize")
def _col_normalize():
    # W[:, j] / |W[:, j]|, the direction part of weight normalisation
    def fwd(attrs, w):
        return w / np.sqrt(np.sum(w * w, axis=0, keepdims=True))

    def vjp(attrs, g, out, w):
        nrm = np.sqrt(np.sum(w * w, axis=0, keepdims=True))
        return ((g - out * np.sum(g * out, axis=0, keepdims=True)) / nrm,)

    return fwd, vjp


# ---------------------------------------------------------------------------
# public op constructors


def matmul(a: Node, b: Node) -> Node:
    return a.tape.apply("matmul", (a, b))


def add(a: Node, b: Node) -> Node:
    return a.tape.apply("add", (a, b))


def mul(a: Node, b: Node) -> Node:
    return a.tape.apply("mul", (a, b))


def scalar_mul(a: Node, c: float) -> Node:
    return a.tape.apply("scalar_mul", (a,), c=float(c))


def divide_by_scalar_node(a: Node, s: Node) -> Node:
    return a.tape.apply("div_scalar_node", (a, s))


def rowwise_softmax(u: Node, tau: float = 1.0, mask: np.ndarray | None = None) -> Node:
    """Softmax over the last axis of ``u / tau``; ``mask`` marks entries forced to zero."""
    if not tau > 0:
        raise DomainError(f"softmax temperature must be positive, got {tau}")
    return u.tape.apply("softmax", (u,), tau=float(tau), mask=mask)


def gelu(x: Node) -> Node:
    return x.tape.apply("gelu", (x,))


def layernorm(x: Node, gain: Node, bias: Node, eps: float = 1e-5) -> Node:
    return x.tape.apply("layernorm", (x, gain, bias), eps=eps)


def embedding_lookup(table: Node, indices) -> Node:
    return table.tape.apply("embedding", (table,), indices=np.asarray(indices, dtype=np.int64))


def cross_entropy_mean(logits: Node, targets) -> Node:
    return logits.tape.apply("cross_entropy_mean", (logits,), targets=np.asarray(targets, dtype=np.int64))


def transpose(a: Node) -> Node:
    return a.tape.apply("transpose", (a,))


def permute(a: Node, axes) -> Node:
    return a.tape.apply("permute", (a,), axes=tuple(axes))


def reshape(a: Node, shape) -> Node:
    return a.tape.apply("reshape", (a,), shape=tuple(shape))


def concat_rows(parts: Sequence[Node]) -> Node:
    return parts[0].tape.apply("concat_rows", tuple(parts))


def concat_cols(parts: Sequence[Node]) -> Node:
    return parts[0].tape.apply("concat_cols", tuple(parts))


def slice_rows(a: Node, start: int, stop: int) -> Node:
    return a.tape.apply("slice_rows", (a,), start=start, stop=stop)


def slice_cols(a: Node, start: int, stop: int) -> Node:
    return a.tape.apply("slice_cols", (a,), start=start, stop=stop)


def reduce_mean(a: Node) -> Node:
    return a.tape.apply("reduce_mean", (a,))


def reduce_sum(a: Node) -> Node:
    return a.tape.apply("reduce_sum", (a,))


def col_normalize(w: Node) -> Node:
    return w.tape.apply("col_normalize", (w,))


# ---------------------------------------------------------------------------
# finite-difference gradient check


@dataclass
class GradCheckReport:
    checked: int = 0
    failures: list = field(default_factory=list)
    max_abs_err: float = 0.0
    max_rel_err: float = 0.0

    @property
    def ok(self) -> bool:
        return not self.failures


def gradcheck(
    root: Node,
    leaves: Sequence[Node],
    n_coords: int | None = 50,
    h: float = 1e-5,
    rtol: float = 1e-5,
    atol: float = 1e-8,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare backward() against central differences on sampled coordinates.

    The tape is replayed with each sampled leaf entry moved by +-h; ``n_coords``
    entries are drawn per leaf (all entries when the leaf is smaller or when
    ``n_coords`` is None). A coordinate passes when
    ``|analytic - numeric| <= atol + rtol * |numeric|``.
    """
    tape = root.tape
    rng = rng or np.random.default_rng(0)
    tape.backward(root)
    analytic = {leaf.index: leaf.grad.copy() for leaf in leaves}
    report = GradCheckReport()
    for leaf in leaves:
        flat = leaf.value.reshape(-1)
        if n_coords is None or flat.size <= n_coords:
            coords = np.arange(flat.size)
        else:
            coords = rng.choice(flat.size, size=n_coords, replace=False)
        for c in coords:
            old = flat[c]
            flat[c] = old + h
            fp = float(tape.forward(root).reshape(()))
            flat[c] = old - h
            fm = float(tape.forward(root).reshape(()))
            flat[c] = old
            numeric = (fp - fm) / (2 * h)
            got = float(analytic[leaf.index].reshape(-1)[c])
            err = abs(got - numeric)
            report.checked += 1
            report.max_abs_err = max(report.max_abs_err, err)
            if numeric != 0:
                report.max_rel_err = max(report.max_rel_err, err / abs(numeric))
            if err > atol + rtol * abs(numeric):
                report.failures.append((leaf.name or leaf.index, int(c), got, numeric))
    tape.forward(root)
    return report
