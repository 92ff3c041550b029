"""Minimal dense-tensor reverse-mode automatic differentiation.

Tensors wrap numpy arrays (float64 by default, float32 selectable).
Each operation records its parents and a VJP closure; the VJP itself is
written in terms of these same operations, so calling :func:`grad` with
``create_graph=True`` yields gradients that are themselves differentiable
(one nested level is all the package needs: training losses that contain
the gradient of a learned scalar function).

The backward pass walks a topological order of the graph and visits each
node exactly once.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from .errors import NonScalarLossError, ShapeError

_FLOAT_DTYPES = (np.float32, np.float64)
_default_dtype = np.float64
_grad_enabled = True


def set_default_dtype(dtype) -> None:
    """Set the dtype new tensors are created with ('f32'/'f64' or numpy dtype)."""
    global _default_dtype
    if dtype in ("f32", "float32", np.float32):
        _default_dtype = np.float32
    elif dtype in ("f64", "float64", np.float64):
        _default_dtype = np.float64
    else:
        raise ValueError(f"unsupported dtype {dtype!r}")


def get_default_dtype():
    return _default_dtype


@contextmanager
def default_dtype(dtype):
    """Temporarily switch the default tensor dtype."""
    global _default_dtype
    saved = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _default_dtype = saved


@contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    saved = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = saved


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp", "_op")

    def __init__(self, data, requires_grad=False, dtype=None, _parents=(), _vjp=None, _op=""):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(_default_dtype)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = _parents
        self._vjp = _vjp
        self._op = _op

    # -- metadata ----------------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        tag = f", op={self._op}" if self._op else ""
        return f"Tensor(shape={self.shape}, grad={self.requires_grad}{tag})"

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def requires_grad_(self, flag=True) -> "Tensor":
        if self._vjp is not None:
            raise ValueError("only leaf tensors can toggle requires_grad")
        self.requires_grad = flag
        return self

    def take_rows(self, indices) -> "Tensor":
        return take(self, indices, axis=0)

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, _lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _lift(other))

    def __rtruediv__(self, other):
        return div(_lift(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _lift(other))

    def __pow__(self, p):
        return pow_const(self, p)

    def __getitem__(self, key):
        return slice_(self, key)

    def backward(self, create_graph=False):
        """Populate ``.grad`` (numpy arrays) on every reachable leaf."""
        leaves = [t for t in _toposort(self) if t._vjp is None and t.requires_grad]
        gs = grad(self, leaves, create_graph=create_graph)
        for leaf, g in zip(leaves, gs):
            add_to = leaf.grad if leaf.grad is not None else 0.0
            leaf.grad = add_to + g.data


def _lift(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def constant(x, dtype=None) -> Tensor:
    return Tensor(x, dtype=dtype)


def _make(data, parents, vjp, op):
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=tuple(parents), _vjp=vjp, _op=op)
    return Tensor(data)


def _unbroadcast(g: Tensor, shape) -> Tensor:
    """Sum a broadcast gradient back down to ``shape``."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = reduce_sum(g, axis=tuple(range(extra)))
    axes = tuple(i for i, (a, b) in enumerate(zip(g.shape, shape)) if b == 1 and a != 1)
    if axes:
        g = reduce_sum(g, axis=axes, keepdims=True)
    if g.shape != tuple(shape):
        g = reshape(g, shape)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), vjp, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(neg(g), b.shape)

    return _make(a.data - b.data, (a, b), vjp, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)

    def vjp(g):
        return _unbroadcast(mul(g, b), a.shape), _unbroadcast(mul(g, a), b.shape)

    return _make(a.data * b.data, (a, b), vjp, "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)

    def vjp(g):
        ga = div(g, b)
        gb = neg(mul(g, div(a, mul(b, b))))
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(a.data / b.data, (a, b), vjp, "div")


def neg(a: Tensor) -> Tensor:
    a = _lift(a)
    return _make(-a.data, (a,), lambda g: (neg(g),), "neg")


def pow_const(a: Tensor, p) -> Tensor:
    a = _lift(a)
    p = float(p)

    def vjp(g):
        return (mul(g, mul(constant(p), pow_const(a, p - 1.0))),)

    return _make(a.data**p, (a,), vjp, "pow")


def square(a: Tensor) -> Tensor:
    a = _lift(a)
    return _make(a.data * a.data, (a,), lambda g: (mul(g, mul(constant(2.0), a)),), "square")


def exp(a: Tensor) -> Tensor:
    a = _lift(a)
    out_data = np.exp(a.data)

    def vjp(g):
        return (mul(g, exp(a)),)

    return _make(out_data, (a,), vjp, "exp")


def log(a: Tensor) -> Tensor:
    a = _lift(a)
    return _make(np.log(a.data), (a,), lambda g: (div(g, a),), "log")


def sqrt(a: Tensor) -> Tensor:
    a = _lift(a)

    def vjp(g):
        return (div(g, mul(constant(2.0), sqrt(a))),)

    return _make(np.sqrt(a.data), (a,), vjp, "sqrt")


def sigmoid(a: Tensor) -> Tensor:
    a = _lift(a)

    def vjp(g):
        s = sigmoid(a)
        return (mul(g, mul(s, sub(constant(1.0), s))),)

    with np.errstate(over="ignore"):
        data = 1.0 / (1.0 + np.exp(-a.data))
    return _make(data, (a,), vjp, "sigmoid")


def tanh(a: Tensor) -> Tensor:
    a = _lift(a)

    def vjp(g):
        t = tanh(a)
        return (mul(g, sub(constant(1.0), mul(t, t))),)

    return _make(np.tanh(a.data), (a,), vjp, "tanh")


def relu(a: Tensor) -> Tensor:
    a = _lift(a)
    mask = constant((a.data > 0).astype(a.dtype))
    return _make(a.data * mask.data, (a,), lambda g: (mul(g, mask),), "relu")


def swish(a: Tensor) -> Tensor:
    """x * sigmoid(x), built from primitives so higher-order grads work."""
    return mul(a, sigmoid(a))


def layer_scale(a: Tensor, gamma: Tensor) -> Tensor:
    """Channel-wise scaling of the trailing axis by a learned vector."""
    return mul(a, gamma)


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    a = _lift(a)
    shape = tuple(shape)
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (reshape(g, old),), "reshape")


def transpose(a: Tensor, axes) -> Tensor:
    a = _lift(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (transpose(g, inv),), "transpose")


def swap_last2(a: Tensor) -> Tensor:
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)


def broadcast_to(a: Tensor, shape) -> Tensor:
    a = _lift(a)
    shape = tuple(shape)
    old = a.shape
    data = np.broadcast_to(a.data, shape)
    return _make(data.copy(), (a,), lambda g: (_unbroadcast(g, old),), "broadcast")


def concat(tensors, axis=0) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        outs = []
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            key = [slice(None)] * g.ndim
            key[axis] = slice(int(lo), int(hi))
            outs.append(slice_(g, tuple(key)))
        return tuple(outs)

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), vjp, "concat")


def slice_(a: Tensor, key) -> Tensor:
    a = _lift(a)
    shape = a.shape

    def vjp(g):
        return (unslice(g, key, shape),)

    return _make(a.data[key], (a,), vjp, "slice")


def unslice(g: Tensor, key, shape) -> Tensor:
    """Scatter ``g`` into zeros of ``shape`` at ``key`` (adjoint of slicing)."""
    g = _lift(g)

    def vjp(gg):
        return (slice_(gg, key),)

    data = np.zeros(shape, dtype=g.dtype)
    data[key] = g.data
    return _make(data, (g,), vjp, "unslice")


def take(a: Tensor, indices, axis=0) -> Tensor:
    a = _lift(a)
    indices = np.asarray(indices)
    shape = a.shape

    def vjp(g):
        return (scatter_add(g, indices, shape, axis=axis),)

    return _make(np.take(a.data, indices, axis=axis), (a,), vjp, "take")


def scatter_add(g: Tensor, indices, shape, axis=0) -> Tensor:
    """Adjoint of :func:`take`: accumulate rows of ``g`` into zeros."""
    g = _lift(g)
    indices = np.asarray(indices)

    def vjp(gg):
        return (take(gg, indices, axis=axis),)

    data = np.zeros(shape, dtype=g.dtype)
    moved = np.moveaxis(data, axis, 0)
    np.add.at(moved, indices, np.moveaxis(g.data, axis, 0))
    return _make(data, (g,), vjp, "scatter_add")


# ---------------------------------------------------------------------------
# reductions, matmul, softmax
# ---------------------------------------------------------------------------


def _keepdims_shape(shape, axis):
    if axis is None:
        return (1,) * len(shape)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(a % len(shape) for a in axes)
    return tuple(1 if i in axes else s for i, s in enumerate(shape))


def reduce_sum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    a = _lift(a)
    old = a.shape

    def vjp(g):
        gk = g if keepdims or g.ndim == len(old) else reshape(g, _keepdims_shape(old, axis))
        return (broadcast_to(gk, old),)

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), vjp, "sum")


def reduce_mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    a = _lift(a)
    total = a.size if axis is None else np.prod(
        [a.shape[ax] for ax in ((axis,) if isinstance(axis, int) else axis)]
    )
    return mul(reduce_sum(a, axis=axis, keepdims=keepdims), constant(1.0 / float(total)))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs ndim >= 2 operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")

    def vjp(g):
        ga = _unbroadcast(matmul(g, swap_last2(b)), a.shape)
        gb = _unbroadcast(matmul(swap_last2(a), g), b.shape)
        return ga, gb

    return _make(np.matmul(a.data, b.data), (a, b), vjp, "matmul")


def row_max_const(a: Tensor, axis=-1) -> Tensor:
    """Detached per-row maximum, used to stabilise softmax.

    Subtracting a constant shift is exact for softmax, so detaching keeps
    gradients (of any order) correct.
    """
    return constant(np.max(a.data, axis=axis, keepdims=True))


def softmax(a: Tensor, axis=-1) -> Tensor:
    z = sub(a, row_max_const(a, axis=axis))
    e = exp(z)
    return div(e, reduce_sum(e, axis=axis, keepdims=True))


def masked_softmax(a: Tensor, mask: np.ndarray, axis=-1) -> Tensor:
    """Softmax over entries where ``mask`` is true; masked entries get 0."""
    neg_big = np.where(mask, 0.0, -np.inf)
    shifted = sub(a, row_max_const(add(a, constant(neg_big)), axis=axis))
    e = mul(exp(shifted), constant(mask.astype(a.dtype)))
    return div(e, reduce_sum(e, axis=axis, keepdims=True))


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------


def _toposort(root: Tensor, stop: frozenset = frozenset()):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        if id(node) not in stop:
            for p in node._parents:
                stack.append((p, False))
    return order


def grad(loss: Tensor, wrt, create_graph=False, allow_unused=True, stop_at_wrt=False):
    """Gradients of a scalar ``loss`` with respect to tensors in ``wrt``.

    With ``create_graph=True`` the returned gradients carry their own graph
    and can be differentiated again. ``stop_at_wrt`` treats the ``wrt``
    tensors as graph inputs and does not propagate past them (the gradients
    returned are the same; only wasted traversal is avoided).
    """
    if loss.size != 1:
        raise NonScalarLossError(f"loss must be scalar, got shape {loss.shape}")
    wrt = list(wrt)
    stop = frozenset(id(w) for w in wrt) if stop_at_wrt else frozenset()
    order = _toposort(loss, stop)
    grads: dict[int, Tensor] = {id(loss): constant(np.ones_like(loss.data))}

    def run():
        for node in reversed(order):
            g = grads.get(id(node))
            if g is None or node._vjp is None or id(node) in stop:
                continue
            parent_grads = node._vjp(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                if id(p) in grads:
                    grads[id(p)] = add(grads[id(p)], pg)
                else:
                    grads[id(p)] = pg

    if create_graph:
        run()
    else:
        with no_grad():
            run()

    out = []
    for w in wrt:
        g = grads.get(id(w))
        if g is None:
            if not allow_unused:
                raise ValueError("a requested tensor is unused by the loss")
            g = constant(np.zeros_like(w.data))
        out.append(g)
    return out


def grad_wrt_input(f, x: Tensor, create_graph=False) -> Tensor:
    """Gradient of the scalar-valued computation ``f`` at input ``x``.

    When ``create_graph`` is set the result participates in the surrounding
    graph, so losses built from this gradient remain trainable.
    """
    if not x.requires_grad:
        x = Tensor(x.data, requires_grad=True)
    y = f(x)
    return grad(y, [x], create_graph=create_graph)[0]
