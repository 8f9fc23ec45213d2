"""A small tape-based reverse-mode engine over a fixed set of array primitives.

Every primitive records its output on the tape of its inputs together with a
closure that maps the output gradient to input gradients.  ``backward`` walks
the tape in reverse creation order, which is a valid topological order, so
accumulation order is fixed and results are bitwise reproducible.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from . import kernels

LN_EPS = 1e-5
_SOFTPLUS_LINEAR = 30.0


class Parameter:
    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value):
        self.name = name
        self.value = np.array(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"


class Node:
    __slots__ = ("tape", "value", "grad", "requires_grad", "_parents", "_backward", "param")

    def __init__(self, tape, value, parents=(), backward=None, requires_grad=False):
        self.tape = tape
        self.value = value
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward
        self.param = None

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __repr__(self):
        return f"Node(shape={self.value.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Records primitives in execution order."""

    def __init__(self, grad: bool = True):
        # grad=False evaluates without recording anything for backward
        self.grad = grad
        self.nodes: list[Node] = []
        self._leaves: dict[int, Node] = {}

    def param(self, p: Parameter) -> Node:
        node = self._leaves.get(id(p))
        if node is None:
            node = Node(self, p.value, requires_grad=self.grad)
            node.param = p
            self._leaves[id(p)] = node
            self.nodes.append(node)
        return node

    def const(self, value) -> Node:
        return Node(self, np.asarray(value, dtype=np.float64))

    def record(self, value, parents: Sequence[Node], backward: Callable) -> Node:
        req = any(p.requires_grad for p in parents)
        node = Node(self, value, tuple(parents), backward if req else None, req)
        if req:
            if self.nodes is None:
                raise ValueError("cannot record on a released tape")
            self.nodes.append(node)
        return node

    def backward(self, loss: Node, accumulate: bool = True, retain: bool = False) -> None:
        """Propagate d(loss)/d(.) to every Parameter leaf on the tape.

        Gradients are added into ``Parameter.grad`` (call ``zero_grad`` first
        for a fresh gradient).  Unless ``retain`` is set the recorded graph is
        released afterwards, so the tape cannot be replayed.
        """
        if self.nodes is None:
            raise ValueError("tape was released by an earlier backward pass")
        if loss.tape is not self:
            raise ValueError("loss was not recorded on this tape")
        if loss.value.size != 1:
            raise ValueError("backward needs a scalar loss")
        if not loss.requires_grad:
            raise ValueError("loss does not depend on any parameter (disconnected graph)")
        for n in self.nodes:
            n.grad = None
        loss.grad = np.ones_like(loss.value)
        for node in reversed(self.nodes):
            if node.grad is None or node._backward is None:
                continue
            grads = node._backward(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = g
                else:
                    parent.grad = parent.grad + g
        for leaf in self._leaves.values():
            if leaf.grad is not None:
                p = leaf.param
                p.grad = p.grad + leaf.grad if accumulate else leaf.grad.copy()
        if not retain:
            self.release()

    def release(self) -> None:
        """Drop the recorded graph; nodes and their closures point back at the
        tape, and breaking the cycle lets memory go without a full GC pass."""
        for n in self.nodes or ():
            n._backward = None
            n._parents = ()
        self.nodes = None
        self._leaves = {}


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Node):
            return x.tape
    raise TypeError("at least one argument must be a Node")


def _as_node(tape: Tape, x) -> Node:
    return x if isinstance(x, Node) else tape.const(x)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


class Segments:
    """Row index map ``index`` (length m) into ``n`` slots.

    Used both to gather rows (``x[index]``) and to scatter-add rows into
    ``n`` slots; the sparse incidence matrix serves the sums.
    """

    __slots__ = ("index", "n", "matrix")

    def __init__(self, index, n: int):
        self.index = np.asarray(index, dtype=np.int64)
        self.n = int(n)
        m = len(self.index)
        self.matrix = sp.csr_matrix(
            (np.ones(m), (self.index, np.arange(m))), shape=(self.n, m)
        )

    def __len__(self):
        return len(self.index)


# ---------------------------------------------------------------- primitives


def add(a, b) -> Node:
    t = _tape_of(a, b)
    a, b = _as_node(t, a), _as_node(t, b)
    sa, sb = a.value.shape, b.value.shape
    return t.record(
        a.value + b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))
    )


def sub(a, b) -> Node:
    t = _tape_of(a, b)
    a, b = _as_node(t, a), _as_node(t, b)
    sa, sb = a.value.shape, b.value.shape
    return t.record(
        a.value - b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb))
    )


def mul(a, b) -> Node:
    t = _tape_of(a, b)
    a, b = _as_node(t, a), _as_node(t, b)
    av, bv = a.value, b.value
    return t.record(
        av * bv,
        (a, b),
        lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
    )


def div(a, b) -> Node:
    t = _tape_of(a, b)
    a, b = _as_node(t, a), _as_node(t, b)
    av, bv = a.value, b.value
    out = av / bv

    def back(g):
        ga = g / bv
        return _unbroadcast(ga, av.shape), _unbroadcast(-ga * out, bv.shape)

    return t.record(out, (a, b), back)


def linear(x: Node, W, b=None) -> Node:
    """``x @ W.T + b`` for W of shape (out, in)."""
    t = _tape_of(x, W, b)
    x, W = _as_node(t, x), _as_node(t, W)
    if x.value.shape[-1] != W.value.shape[1]:
        raise ValueError(f"linear: input dim {x.value.shape[-1]} vs weight {W.value.shape}")
    xv, Wv = x.value, W.value
    out = xv @ Wv.T
    if b is None:
        return t.record(out, (x, W), lambda g: (g @ Wv, g.T @ xv))
    b = _as_node(t, b)
    out = out + b.value

    def back(g):
        return g @ Wv, g.T @ xv, g.sum(axis=0)

    return t.record(out, (x, W, b), back)


def sigmoid(x: Node) -> Node:
    s = kernels.sigmoid(x.value)
    return x.tape.record(s, (x,), lambda g: (g * s * (1.0 - s),))


def silu(x: Node) -> Node:
    xv = x.value
    s = kernels.sigmoid(xv)
    return x.tape.record(xv * s, (x,), lambda g: (g * _silu_grad(xv, s),))


def softplus_value(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    big = x > _SOFTPLUS_LINEAR
    return np.where(big, x, np.log1p(np.exp(np.minimum(x, _SOFTPLUS_LINEAR))))


def softplus(x: Node) -> Node:
    xv = x.value
    return x.tape.record(softplus_value(xv), (x,), lambda g: (g * kernels.sigmoid(xv),))


def layer_norm(x: Node, gamma, beta, eps: float = LN_EPS) -> Node:
    t = _tape_of(x, gamma, beta)
    gamma, beta = _as_node(t, gamma), _as_node(t, beta)
    xv = x.value
    mu = xv.mean(axis=-1, keepdims=True)
    xc = xv - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gv = gamma.value

    def back(g):
        dxhat = g * gv
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        flat_g = g.reshape(-1, g.shape[-1])
        return dx, (flat_g * xhat.reshape(flat_g.shape)).sum(0), flat_g.sum(0)

    return t.record(xhat * gv + beta.value, (x, gamma, beta), back)


def gather(x: Node, seg: Segments) -> Node:
    """Rows ``x[seg.index]``."""
    n = x.value.shape[0]
    if seg.n != n:
        raise ValueError(f"gather: segments address {seg.n} rows, input has {n}")
    return x.tape.record(x.value[seg.index], (x,), lambda g: (seg.matrix @ g,))


def scatter_sum(x: Node, seg: Segments) -> Node:
    """Sum rows of ``x`` into ``seg.n`` slots keyed by ``seg.index``."""
    if len(seg) != x.value.shape[0]:
        raise ValueError("scatter_sum: index length does not match rows")
    return x.tape.record(seg.matrix @ x.value, (x,), lambda g: (g[seg.index],))


def columns(x: Node, start: int, stop: int) -> Node:
    """Column block ``x[..., start:stop]`` (also slices weight matrices)."""
    xv = x.value
    shape = xv.shape

    def back(g):
        out = np.zeros(shape)
        out[..., start:stop] = g
        return (out,)

    return x.tape.record(xv[..., start:stop], (x,), back)


def concat(xs: Sequence[Node], axis: int = -1) -> Node:
    t = _tape_of(*xs)
    xs = [_as_node(t, x) for x in xs]
    sizes = [x.value.shape[axis] for x in xs]
    bounds = np.cumsum(sizes)[:-1]
    return t.record(
        np.concatenate([x.value for x in xs], axis=axis),
        tuple(xs),
        lambda g: tuple(np.split(g, bounds, axis=axis)),
    )


def total(x: Node) -> Node:
    shape = x.value.shape
    return x.tape.record(np.array(x.value.sum()), (x,), lambda g: (np.full(shape, g),))


def mean(x: Node) -> Node:
    shape, n = x.value.shape, x.value.size
    return x.tape.record(np.array(x.value.mean()), (x,), lambda g: (np.full(shape, g / n),))


def square(x: Node) -> Node:
    xv = x.value
    return x.tape.record(xv * xv, (x,), lambda g: (2.0 * g * xv,))


# ------------------------------------------------------- fused graph primitives


def _silu_grad(y: np.ndarray, s: np.ndarray) -> np.ndarray:
    return s * (1.0 + y * (1.0 - s))


def gated_aggregate(e: Node, w: Node, ends: np.ndarray, n_nodes: int, eps: float) -> Node:
    """Per node i: sum_j sigmoid(e_ij) * w_j / (sum_j sigmoid(e_ij) + eps).

    ``e`` holds one row per undirected edge in ``ends``; each edge sends a
    message in both directions.
    """
    t = _tape_of(e, w)
    e, w = _as_node(t, e), _as_node(t, w)
    wv = w.value
    sig = kernels.sigmoid(e.value)
    num, den = kernels.gated_sums(sig, wv, ends, n_nodes)
    den += eps
    agg = num / den

    def back(g):
        g_num = g / den
        g_den = -g_num * agg
        g_sig, g_w = kernels.gated_sums_bwd(g_num, g_den, sig, wv, ends)
        return g_sig * sig * (1.0 - sig), g_w

    return t.record(agg, (e, w), back)


def ln_silu(x: Node, gamma, beta, eps: float = LN_EPS) -> Node:
    """``silu(layer_norm(x))`` as a single primitive."""
    t = _tape_of(x, gamma, beta)
    gamma, beta = _as_node(t, gamma), _as_node(t, beta)
    gv = gamma.value
    y, xhat, inv = kernels.layer_norm_fwd(np.ascontiguousarray(x.value), gv, beta.value, eps)
    s = kernels.sigmoid(y)

    def back(g):
        return kernels.layer_norm_bwd(g * _silu_grad(y, s), xhat, inv, gv)

    return t.record(y * s, (x, gamma, beta), back)


def pair_update(
    p: Node, q: Node, r: Node, ends: np.ndarray, gamma, beta, eps: float = LN_EPS
) -> Node:
    """Per undirected edge k=(a, b): mean over (i, j) in {(a, b), (b, a)} of
    ``silu(layer_norm(p_i + q_j + r_k))``."""
    t = _tape_of(p, q, r, gamma, beta)
    p, q, r, gamma, beta = (_as_node(t, x) for x in (p, q, r, gamma, beta))
    gv = gamma.value
    n, E = p.value.shape[0], len(ends)
    y, xhat, inv = kernels.pair_norm_fwd(p.value, q.value, r.value, ends, gv, beta.value, eps)
    s = kernels.sigmoid(y)
    out = y * s
    upd = 0.5 * (out[:E] + out[E:])

    def back(g):
        gy = np.concatenate([g, g]) * (0.5 * _silu_grad(y, s))
        return kernels.pair_norm_bwd(gy, xhat, inv, ends, n, gv)

    return t.record(upd, (p, q, r, gamma, beta), back)


# ------------------------------------------------------------- checkpoints


def save_parameters(params: Sequence[Parameter], path, header: dict | None = None) -> None:
    """Text checkpoint: ``name<TAB>shape<TAB>values`` per line, row-major."""
    with open(path, "w") as fh:
        for k, v in (header or {}).items():
            fh.write(f"#{k}={v}\n")
        for p in params:
            shape = ",".join(str(s) for s in p.value.shape)
            vals = " ".join(repr(float(v)) for v in p.value.ravel())
            fh.write(f"{p.name}\t{shape}\t{vals}\n")


def load_parameters(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    arrays, header = {}, {}
    with open(path) as fh:
        for ln in fh:
            ln = ln.rstrip("\n")
            if not ln:
                continue
            if ln.startswith("#"):
                k, _, v = ln[1:].partition("=")
                header[k] = v
                continue
            name, shape, vals = ln.split("\t")
            dims = tuple(int(s) for s in shape.split(",")) if shape else ()
            data = np.array([float(v) for v in vals.split()]) if vals else np.zeros(0)
            arrays[name] = data.reshape(dims)
    return arrays, header
