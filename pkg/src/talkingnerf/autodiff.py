"""Reverse-mode automatic differentiation on dense float64 numpy arrays.

The graph is built on the fly (define-by-run) and discarded after each
training step.  Every op returns a new :class:`Tensor` holding the forward
value plus a vector-Jacobian closure; :func:`backward` walks the graph in
reverse topological order and accumulates gradients additively into every
reachable tensor with ``requires_grad``.

Only the operations the rendering engine actually needs are implemented;
broadcasting support is numpy's, with gradients reduced back to the
parent's shape.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "param",
    "constant",
    "backward",
    "zero_grads",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "relu",
    "tanh",
    "sigmoid",
    "softplus",
    "exp",
    "log",
    "sqrt",
    "absolute",
    "square",
    "pow_const",
    "tsum",
    "tmean",
    "concat",
    "reshape",
    "getitem",
    "gather",
    "cumsum_exclusive",
    "clip",
    "binary_entropy",
    "l2norm_lastaxis",
    "pad2d",
]


class Tensor:
    """A dense float64 array with an optional gradient slot.

    ``grad`` stays ``None`` until :func:`backward` first reaches the tensor;
    after that it accumulates additively across backward calls until
    explicitly reset.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._vjp = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _scalar_err(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)


def _scalar_err(t):
    raise ValueError(f"expected a single-element tensor, got shape {t.data.shape}")


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def param(data) -> Tensor:
    """Trainable tensor (requires_grad=True)."""
    return Tensor(data, requires_grad=True)


def constant(data) -> Tensor:
    return Tensor(data)


def _make(data, parents, vjp) -> Tensor:
    """Record an op result; graph edges are kept only when gradients can flow."""
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce gradient ``g`` back to ``shape`` after numpy broadcasting."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    keep = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if keep:
        g = g.sum(axis=keep, keepdims=True)
    return g


# -- arithmetic ---------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a: Tensor, b: Tensor) -> Tensor:
    def vjp(g):
        return (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        )

    return _make(a.data / b.data, (a, b), vjp)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(
            f"matmul supports 2-D operands only, got {a.data.shape} @ {b.data.shape}"
        )
    return _make(
        a.data @ b.data,
        (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g),
    )


def pow_const(a: Tensor, p: float) -> Tensor:
    return _make(a.data**p, (a,), lambda g: (g * p * a.data ** (p - 1),))


def square(a: Tensor) -> Tensor:
    return _make(a.data * a.data, (a,), lambda g: (g * 2.0 * a.data,))


# -- nonlinearities -----------------------------------------------------------


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g: (g * (1.0 - y * y),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form avoids overflow for large |x|
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid(a.data)
    return _make(y, (a,), lambda g: (g * y * (1.0 - y),))


def softplus(a: Tensor) -> Tensor:
    y = np.logaddexp(0.0, a.data)
    return _make(y, (a,), lambda g: (g * _sigmoid(a.data),))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _make(y, (a,), lambda g: (g * y,))


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a: Tensor) -> Tensor:
    y = np.sqrt(a.data)
    return _make(y, (a,), lambda g: (g * 0.5 / y,))


def absolute(a: Tensor) -> Tensor:
    return _make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


# -- shape & reductions -------------------------------------------------------


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape).copy(),)

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), vjp)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else np.prod(
        [a.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))]
    )
    return mul(tsum(a, axis=axis, keepdims=keepdims), Tensor(1.0 / float(n)))


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    datas = [t.data for t in tensors]
    sizes = [d.shape[axis] for d in datas]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate(datas, axis=axis), tensors, vjp)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def getitem(a: Tensor, key) -> Tensor:
    def vjp(g):
        z = np.zeros_like(a.data)
        z[key] = g  # basic (non-overlapping) indexing only
        return (z,)

    return _make(a.data[key], (a,), vjp)


def gather(a: Tensor, flat_idx: np.ndarray) -> Tensor:
    """Index the flattened tensor; gradient scatter-adds into the source."""
    flat_idx = np.asarray(flat_idx)
    flat = a.data.reshape(-1)

    def vjp(g):
        z = np.zeros(a.size, dtype=np.float64)
        np.add.at(z, flat_idx.reshape(-1), g.reshape(-1))
        return (z.reshape(a.shape),)

    return _make(flat[flat_idx], (a,), vjp)


def cumsum_exclusive(a: Tensor, axis: int = -1) -> Tensor:
    """y_i = sum_{j < i} x_j along ``axis`` (first slice is zero)."""
    y = np.cumsum(a.data, axis=axis)
    y = np.roll(y, 1, axis=axis)
    sl = [slice(None)] * a.ndim
    sl[axis] = 0
    y[tuple(sl)] = 0.0

    def vjp(g):
        rev = np.flip(np.cumsum(np.flip(g, axis=axis), axis=axis), axis=axis)
        return (rev - g,)

    return _make(y, (a,), vjp)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    mask = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: (g * mask,))


def binary_entropy(a: Tensor, grad_eps: float = 1e-7) -> Tensor:
    """Elementwise -(a log a + (1-a) log(1-a)) with exact zeros at the endpoints.

    The backward pass evaluates log((1-a)/a) on values clamped to
    [grad_eps, 1-grad_eps] so endpoint gradients stay finite.
    """
    x = a.data
    with np.errstate(divide="ignore", invalid="ignore"):
        t0 = np.where(x > 0.0, x * np.log(np.where(x > 0.0, x, 1.0)), 0.0)
        q = 1.0 - x
        t1 = np.where(q > 0.0, q * np.log(np.where(q > 0.0, q, 1.0)), 0.0)
    y = -(t0 + t1)

    def vjp(g):
        xc = np.clip(x, grad_eps, 1.0 - grad_eps)
        return (g * np.log((1.0 - xc) / xc),)

    return _make(y, (a,), vjp)


def l2norm_lastaxis(a: Tensor) -> Tensor:
    """Euclidean norm over the last axis, with zero subgradient at the origin.

    Central differences of a symmetric cusp also evaluate to zero, so this
    choice keeps finite-difference checks consistent at exactly-zero vectors.
    """
    n = np.sqrt(np.sum(a.data * a.data, axis=-1))

    def vjp(g):
        safe = np.where(n > 0.0, n, 1.0)
        return (g[..., None] * a.data / safe[..., None] * (n > 0.0)[..., None],)

    return _make(n, (a,), vjp)


def pad2d(a: Tensor, pad: int) -> Tensor:
    """Zero-pad the two leading spatial axes of an (H, W, C) tensor."""
    y = np.pad(a.data, ((pad, pad), (pad, pad), (0, 0)))
    return _make(y, (a,), lambda g: (g[pad:-pad, pad:-pad, :],))


# -- backward engine ----------------------------------------------------------


def _toposort(root: Tensor):
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every reachable leaf.

    Leaves are tensors with ``requires_grad`` and no recorded op (parameters
    and explicit probe inputs); intermediate gradients stay internal to keep
    large graphs from doubling their memory.  Repeated calls on the same
    graph accumulate additively.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return
    order = _toposort(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._vjp is None:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if not parent.requires_grad or pg is None:
                continue
            cur = grads.get(id(parent))
            grads[id(parent)] = pg if cur is None else cur + pg


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None
