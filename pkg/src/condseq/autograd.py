"""Reverse-mode automatic differentiation over dense numpy tensors.

A Tensor wraps a float32/float64 numpy array. Operations executed while
gradients are enabled append TapeNode records (op id, parent tensors,
backward closure over saved intermediates); backward() replays them in
reverse topological order. The graph is acyclic by construction and each
node is visited exactly once.

Broadcasting is deliberately restricted: elementwise ops require equal
shapes, except add() which also accepts a 1-D bias over the last axis.
All other shape coercions must be explicit (reshape/concat/tile_rows).

A tape and its tensors belong to a single thread; independent tapes may
run concurrently. The grad-enabled flag is thread local.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np

from . import _kernels as K
from .errors import ContractError, DimensionError, GradientStateError, NumericError

_FLOAT_TYPES = (np.float32, np.float64)

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable tape recording within the context (inference mode)."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class TapeNode:
    """One recorded operation: op id, parents, backward closure."""

    __slots__ = ("op", "parents", "backward_fn")

    def __init__(self, op, parents, backward_fn):
        self.op = op
        self.parents = parents
        self.backward_fn = backward_fn


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data)
        if arr.dtype not in _FLOAT_TYPES:
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, op, parents, backward_fn):
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.node = TapeNode(op, tuple(parents), backward_fn)
    return out


def zero_grads(tensors):
    """Reset gradients; required between backward passes."""
    for t in tensors:
        t.grad = None


def backward(loss: Tensor):
    """Fill .grad on every requires_grad tensor reachable from loss.

    loss must be a scalar (shape ()). Raises GradientStateError when a
    reachable leaf already carries a gradient: gradients do not
    accumulate across calls, callers reset via zero_grads() first.
    """
    if loss.shape != ():
        raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not require grad; nothing to differentiate")

    topo = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        t, processed = stack.pop()
        if processed:
            topo.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for p in t.node.parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

    for t in topo:
        if t.node is None and t.grad is not None:
            raise GradientStateError(
                "leaf tensor already has a gradient; call zero_grads() before "
                "running backward again"
            )

    grads = {id(loss): np.ones((), dtype=loss.dtype)}
    for t in reversed(topo):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        t.grad = g
        if t.node is None:
            continue
        parent_grads = t.node.backward_fn(g)
        for p, pg in zip(t.node.parents, parent_grads):
            if not p.requires_grad or pg is None:
                continue
            if pg.shape != p.shape:
                raise ContractError(
                    f"op {t.node.op}: gradient shape {pg.shape} != parent shape {p.shape}"
                )
            prev = grads.get(id(p))
            grads[id(p)] = pg if prev is None else prev + pg


# ---------------------------------------------------------------------------
# primitive ops


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape == b.shape:
        def bw(g):
            return g, g

        return _result(a.data + b.data, "add", (a, b), bw)
    if b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        # bias add over leading axes
        axes = tuple(range(a.ndim - 1))

        def bw(g):
            return g, g.sum(axis=axes) if axes else g

        return _result(a.data + b.data, "add", (a, b), bw)
    raise DimensionError(f"add: incompatible shapes {a.shape} and {b.shape}")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"sub: incompatible shapes {a.shape} and {b.shape}")

    def bw(g):
        return g, -g

    return _result(a.data - b.data, "sub", (a, b), bw)


def neg(a):
    a = as_tensor(a)

    def bw(g):
        return (-g,)

    return _result(-a.data, "neg", (a,), bw)


def mul(a, b):
    """Elementwise product; python scalars allowed as either operand."""
    if isinstance(b, (int, float)):
        a = as_tensor(a)
        s = float(b)

        def bw(g):
            return (g * s,)

        return _result(a.data * s, "mul_scalar", (a,), bw)
    if isinstance(a, (int, float)):
        return mul(b, a)
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"mul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        return g * bd, g * ad

    return _result(ad * bd, "mul", (a, b), bw)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise DimensionError(f"matmul: rank must be 1 or 2, got {a.shape} x {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dimensions disagree, {a.shape} x {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        if ad.ndim == 2 and bd.ndim == 2:
            return g @ bd.T, ad.T @ g
        if ad.ndim == 1 and bd.ndim == 2:
            return g @ bd.T, np.outer(ad, g)
        if ad.ndim == 2 and bd.ndim == 1:
            return np.outer(g, bd), ad.T @ g
        return g * bd, g * ad  # 1-D dot

    return _result(ad @ bd, "matmul", (a, b), bw)


def concat(parts, axis=0):
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise DimensionError("concat: need at least one tensor")
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.ascontiguousarray(s) for s in np.split(g, splits, axis=axis))

    return _result(np.concatenate([p.data for p in parts], axis=axis), "concat", parts, bw)


def narrow(a, axis, start, length):
    """Contiguous slice along one axis; backward zero-pads."""
    a = as_tensor(a)
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    shape = a.shape

    def bw(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[idx] = g
        return (full,)

    return _result(np.ascontiguousarray(a.data[idx]), "narrow", (a,), bw)


def reshape(a, shape):
    a = as_tensor(a)
    old = a.shape

    def bw(g):
        return (g.reshape(old),)

    return _result(a.data.reshape(shape), "reshape", (a,), bw)


def pad_rows(a, rows):
    """Append `rows` zero rows to a 2-D tensor."""
    a = as_tensor(a)
    if rows == 0:
        return a
    n = a.shape[0]
    out = np.zeros((n + rows, a.shape[1]), dtype=a.dtype)
    out[:n] = a.data

    def bw(g):
        return (np.ascontiguousarray(g[:n]),)

    return _result(out, "pad_rows", (a,), bw)


def tile_rows(v, n):
    """Repeat a 1-D tensor as n identical rows; backward sums over rows."""
    v = as_tensor(v)
    if v.ndim != 1:
        raise DimensionError(f"tile_rows: expected 1-D, got {v.shape}")

    def bw(g):
        return (g.sum(axis=0),)

    return _result(np.tile(v.data, (n, 1)), "tile_rows", (v,), bw)


def gather_rows(table, indices):
    """Row lookup (embedding); backward scatter-adds into the table."""
    table = as_tensor(table)
    idx = np.asarray(indices, dtype=np.intp)
    shape = table.shape

    def bw(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.add.at(full, idx, g)
        return (full,)

    return _result(table.data[idx], "gather_rows", (table,), bw)


def take(a, index):
    """Scalar pick from a 1-D tensor."""
    a = as_tensor(a)
    if a.ndim != 1:
        raise DimensionError(f"take: expected 1-D, got {a.shape}")
    i = int(index)
    n = a.shape[0]

    def bw(g):
        full = np.zeros(n, dtype=g.dtype)
        full[i] = g
        return (full,)

    return _result(a.data[i].copy(), "take", (a,), bw)


def sigmoid(a):
    a = as_tensor(a)
    out = K.sigmoid(np.asarray(a.data, dtype=a.dtype))

    def bw(g):
        return (g * out * (1.0 - out),)

    return _result(out, "sigmoid", (a,), bw)


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)

    def bw(g):
        return (g * (1.0 - out * out),)

    return _result(out, "tanh", (a,), bw)


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)

    def bw(g):
        return (g * out,)

    return _result(out, "exp", (a,), bw)


def log(a):
    a = as_tensor(a)
    ad = a.data

    def bw(g):
        return (g / ad,)

    return _result(np.log(ad), "log", (a,), bw)


def softmax(a, axis=-1):
    """Max-stabilized softmax along `axis`; rejects NaN input."""
    a = as_tensor(a)
    if np.isnan(a.data).any():
        raise NumericError("softmax: NaN in input")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return ((g - dot) * out,)

    return _result(out, "softmax", (a,), bw)


def log_softmax(a, axis=-1):
    a = as_tensor(a)
    if np.isnan(a.data).any():
        raise NumericError("log_softmax: NaN in input")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    sm = np.exp(out)

    def bw(g):
        return (g - sm * g.sum(axis=axis, keepdims=True),)

    return _result(out, "log_softmax", (a,), bw)


def tsum(a):
    """Full reduction to a scalar."""
    a = as_tensor(a)
    shape, dt = a.shape, a.dtype

    def bw(g):
        return (np.full(shape, g, dtype=dt),)

    return _result(a.data.sum(), "sum", (a,), bw)


def tmean(a):
    a = as_tensor(a)
    shape, dt = a.shape, a.dtype
    n = a.data.size

    def bw(g):
        return (np.full(shape, g / n, dtype=dt),)

    return _result(a.data.mean(), "mean", (a,), bw)


# ---------------------------------------------------------------------------
# fused LSTM ops (kernel-backed)


def lstm_seq(x, wx, wh, b, h0=None, c0=None, reverse=False):
    """Full-sequence LSTM layer over x [L, Din] -> hidden states [L, H].

    The recurrence runs in the selected kernel backend; this node's
    backward is the kernel BPTT. `reverse` processes the sequence right
    to left (output stays in input order).
    """
    x, wx, wh, b = as_tensor(x), as_tensor(wx), as_tensor(wh), as_tensor(b)
    H = wh.shape[0]
    dt = x.dtype
    h0d = np.zeros(H, dtype=dt) if h0 is None else np.asarray(h0, dtype=dt)
    c0d = np.zeros(H, dtype=dt) if c0 is None else np.asarray(c0, dtype=dt)
    if wx.shape != (x.shape[1], 4 * H) or b.shape != (4 * H,):
        raise DimensionError(
            f"lstm_seq: inconsistent shapes x={x.shape} wx={wx.shape} wh={wh.shape} b={b.shape}"
        )
    xd = x.data[::-1] if reverse else x.data
    xd = np.ascontiguousarray(xd)
    h_all, c_all, gates = K.lstm_seq_forward(xd, wx.data, wh.data, b.data, h0d, c0d)

    def bw(g):
        gd = np.ascontiguousarray(g[::-1] if reverse else g)
        dx, dwx, dwh, db, _, _ = K.lstm_seq_backward(
            gd, xd, wx.data, wh.data, h_all, c_all, gates, h0d, c0d
        )
        if reverse:
            dx = np.ascontiguousarray(dx[::-1])
        return dx, dwx, dwh, db

    out = h_all[::-1].copy() if reverse else h_all
    return _result(out, "lstm_seq", (x, wx, wh, b), bw)


def lstm_step(x, h_prev, c_prev, wx, wh, b):
    """One batched LSTM step; returns [B, 2H] = [h_new | c_new]."""
    x, h_prev, c_prev = as_tensor(x), as_tensor(h_prev), as_tensor(c_prev)
    wx, wh, b = as_tensor(wx), as_tensor(wh), as_tensor(b)
    H = wh.shape[0]
    if x.ndim != 2 or h_prev.shape != c_prev.shape or h_prev.shape[1] != H:
        raise DimensionError(
            f"lstm_step: inconsistent shapes x={x.shape} h={h_prev.shape} c={c_prev.shape}"
        )
    if wx.shape != (x.shape[1], 4 * H) or b.shape != (4 * H,):
        raise DimensionError(
            f"lstm_step: parameter shapes wx={wx.shape} wh={wh.shape} b={b.shape} "
            f"inconsistent with d_in={x.shape[1]}, d_h={H}"
        )
    h_new, c_new, gates = K.lstm_step_forward(
        x.data, h_prev.data, c_prev.data, wx.data, wh.data, b.data
    )

    def bw(g):
        dh = np.ascontiguousarray(g[:, :H])
        dc = np.ascontiguousarray(g[:, H:])
        dx, dhp, dcp, dwx, dwh, db = K.lstm_step_backward(
            dh, dc, x.data, h_prev.data, c_prev.data, wx.data, wh.data, gates, c_new
        )
        return dx, dhp, dcp, dwx, dwh, db

    out = np.concatenate([h_new, c_new], axis=1)
    return _result(out, "lstm_step", (x, h_prev, c_prev, wx, wh, b), bw)


def lstm_cell(x, h_prev, c_prev, wx, wh, b):
    """Single LSTM step returning (h, c); thin wrapper over lstm_step."""
    hc = lstm_step(x, h_prev, c_prev, wx, wh, b)
    H = hc.shape[1] // 2
    return narrow(hc, 1, 0, H), narrow(hc, 1, H, H)
