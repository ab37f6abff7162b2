"""Rank-2 float64 tensors with tape-based reverse-mode differentiation.

Operations on plain tensors are eager and record nothing. As soon as one
operand belongs to a :class:`GradientTape` the result is appended to that
tape together with a closure mapping the output gradient to input gradients.
Nodes are appended in creation order, so walking the list backwards is a
valid reverse topological order.
"""

import numpy as np

from h2rat._kernels import matmul_fixed
from h2rat.errors import DimensionError, EmptyInputError, NumericError, TapeError


class Tensor:
    __slots__ = ("data", "tape", "index")

    def __init__(self, data, tape=None, index=None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        elif arr.ndim != 2:
            raise DimensionError(f"tensors are rank 1 or 2, got shape {arr.shape}")
        _check_finite(arr, "tensor")
        self.data = arr
        self.tape = tape
        self.index = index

    @property
    def shape(self):
        return self.data.shape

    @property
    def rows(self):
        return self.data.shape[0]

    @property
    def cols(self):
        return self.data.shape[1]

    def numpy(self):
        return self.data.copy()

    def __repr__(self):
        taped = "" if self.tape is None else f", tape_index={self.index}"
        return f"Tensor(shape={self.shape}{taped})"


def _check_finite(arr, op):
    if not np.isfinite(arr).all():
        raise NumericError(f"{op} produced a non-finite value")


class _Node:
    __slots__ = ("op", "inputs", "backward")

    def __init__(self, op, inputs, backward):
        self.op = op
        self.inputs = inputs
        self.backward = backward


class GradientTape:
    """Ordered record of primitive operations plus a parameter registry."""

    def __init__(self):
        self.nodes = []
        self.parameters = {}
        self.consumed = False
        self.visited = []

    def watch(self, name, value):
        """Register ``value`` as a trainable leaf and return its taped tensor."""
        if name in self.parameters:
            raise TapeError(f"parameter {name!r} already registered")
        data = value.data if isinstance(value, Tensor) else value
        t = Tensor(data, tape=self, index=len(self.nodes))
        self.nodes.append(_Node("param", (), None))
        self.parameters[name] = t
        return t

    def __len__(self):
        return len(self.nodes)


def _record(op, out, inputs, backward):
    _check_finite(out, op)
    tape = None
    for t in inputs:
        if t.tape is not None:
            if tape is not None and t.tape is not tape:
                raise TapeError(f"{op}: operands belong to different tapes")
            tape = t.tape
    if tape is None:
        return _wrap(out)
    if tape.consumed:
        raise TapeError(f"{op}: tape already consumed by backward")
    idx = tuple(t.index if t.tape is tape else None for t in inputs)
    node_index = len(tape.nodes)
    tape.nodes.append(_Node(op, idx, backward))
    res = _wrap(out)
    res.tape = tape
    res.index = node_index
    return res


def _wrap(arr):
    t = Tensor.__new__(Tensor)
    t.data = arr
    t.tape = None
    t.index = None
    return t


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _same_shape(op, a, b):
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.cols != b.rows:
        raise DimensionError(f"matmul: inner dimensions disagree for {a.shape} x {b.shape}")
    ad, bd = a.data, b.data
    out = matmul_fixed(ad, bd)

    def backward(g):
        return matmul_fixed(g, bd.T), matmul_fixed(ad.T, g)

    return _record("matmul", out, (a, b), backward)


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape("add", a, b)

    def backward(g):
        return g, g

    return _record("add", a.data + b.data, (a, b), backward)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape("sub", a, b)

    def backward(g):
        return g, -g

    return _record("sub", a.data - b.data, (a, b), backward)


def mul(a, b):
    """Elementwise (Hadamard) product."""
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data

    def backward(g):
        return g * bd, g * ad

    return _record("mul", ad * bd, (a, b), backward)


def broadcast_add_columns(m, v):
    """Add the column vector ``v`` to every column of ``m``."""
    m, v = _as_tensor(m), _as_tensor(v)
    if v.cols != 1 or v.rows != m.rows:
        raise DimensionError(f"broadcast_add_columns: cannot add {v.shape} to each column of {m.shape}")

    def backward(g):
        return g, g.sum(axis=1, keepdims=True)

    return _record("broadcast_add_columns", m.data + v.data, (m, v), backward)


def scale(t, c):
    t = _as_tensor(t)
    c = float(c)

    def backward(g):
        return (g * c,)

    return _record("scale", t.data * c, (t,), backward)


def tanh_elem(t):
    t = _as_tensor(t)
    y = np.tanh(t.data)

    def backward(g):
        return (g * (1.0 - y * y),)

    return _record("tanh", y, (t,), backward)


def _sigmoid(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid_elem(t):
    t = _as_tensor(t)
    y = _sigmoid(t.data)

    def backward(g):
        return (g * y * (1.0 - y),)

    return _record("sigmoid", y, (t,), backward)


def softmax_vec(t):
    """Softmax of a column vector, shifted by its maximum."""
    t = _as_tensor(t)
    if t.data.size == 0:
        raise EmptyInputError("softmax of an empty vector")
    if t.cols != 1:
        raise DimensionError(f"softmax_vec expects a column vector, got {t.shape}")
    e = np.exp(t.data - t.data.max())
    y = e / e.sum()

    def backward(g):
        return (y * (g - float((y * g).sum())),)

    return _record("softmax", y, (t,), backward)


def log_elem(t, floor=0.0):
    """Elementwise ``log(max(x, floor))``; clamped entries get zero gradient."""
    t = _as_tensor(t)
    x = t.data
    clamped = np.maximum(x, floor) if floor > 0 else x
    if (clamped <= 0).any():
        raise NumericError("log of a non-positive value")
    y = np.log(clamped)
    live = x >= floor if floor > 0 else np.ones_like(x, dtype=bool)

    def backward(g):
        return (np.where(live, g / clamped, 0.0),)

    return _record("log", y, (t,), backward)


def transpose(t):
    t = _as_tensor(t)

    def backward(g):
        return (g.T,)

    return _record("transpose", np.ascontiguousarray(t.data.T), (t,), backward)


def row_slice(t, start, stop):
    t = _as_tensor(t)
    if not 0 <= start < stop <= t.rows:
        raise DimensionError(f"row_slice [{start}:{stop}] out of range for {t.shape}")
    shape = t.shape

    def backward(g):
        full = np.zeros(shape)
        full[start:stop] = g
        return (full,)

    return _record("row_slice", t.data[start:stop].copy(), (t,), backward)


def column(t, j):
    """Column ``j`` of ``t`` as a column vector."""
    t = _as_tensor(t)
    if not 0 <= j < t.cols:
        raise DimensionError(f"column {j} out of range for {t.shape}")
    shape = t.shape

    def backward(g):
        full = np.zeros(shape)
        full[:, j : j + 1] = g
        return (full,)

    return _record("column", t.data[:, j : j + 1].copy(), (t,), backward)


def element(t, i, j=0):
    t = _as_tensor(t)
    if not (0 <= i < t.rows and 0 <= j < t.cols):
        raise DimensionError(f"element ({i}, {j}) out of range for {t.shape}")
    shape = t.shape

    def backward(g):
        full = np.zeros(shape)
        full[i, j] = g[0, 0]
        return (full,)

    return _record("element", t.data[i : i + 1, j : j + 1].copy(), (t,), backward)


def sum_all(t):
    t = _as_tensor(t)
    shape = t.shape

    def backward(g):
        return (np.full(shape, g[0, 0]),)

    return _record("sum_all", np.array([[t.data.sum()]]), (t,), backward)


# ---------------------------------------------------------------------------
# reverse pass
# ---------------------------------------------------------------------------


def backward(tape, loss):
    """Propagate d(loss)/d(node) through ``tape``; returns ``{name: grad}``.

    Every registered parameter receives a gradient of its own shape (zeros if
    the loss does not depend on it). The tape cannot be reused afterwards.
    """
    if loss.shape != (1, 1):
        raise TapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.tape is not tape:
        raise TapeError("loss was not produced under this tape")
    if tape.consumed:
        raise TapeError("tape already consumed")
    tape.consumed = True

    grads = [None] * len(tape.nodes)
    grads[loss.index] = np.ones((1, 1))
    visited = tape.visited
    for i in range(loss.index, -1, -1):
        g = grads[i]
        if g is None:
            continue
        node = tape.nodes[i]
        visited.append(i)
        if node.backward is None:
            continue
        for src, gi in zip(node.inputs, node.backward(g)):
            if src is None or gi is None:
                continue
            if grads[src] is None:
                grads[src] = gi
            else:
                grads[src] = grads[src] + gi

    out = {}
    for name, p in tape.parameters.items():
        g = grads[p.index]
        if g is None:
            g = np.zeros(p.shape)
        _check_finite(g, f"gradient of {name}")
        out[name] = g
    return out
