"""Reverse-mode automatic differentiation over numpy arrays.

Every primitive records a vector-Jacobian product written in terms of other
primitives, so a backward pass can itself be recorded (``create_graph=True``)
and differentiated again. That is what the saliency penalty needs: it is a
function of an input gradient and is trained through.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

_GRAPH_ENABLED = True


@contextlib.contextmanager
def no_grad():
    global _GRAPH_ENABLED
    prev = _GRAPH_ENABLED
    _GRAPH_ENABLED = False
    try:
        yield
    finally:
        _GRAPH_ENABLED = prev


@contextlib.contextmanager
def _graph_mode(enabled: bool):
    global _GRAPH_ENABLED
    prev = _GRAPH_ENABLED
    _GRAPH_ENABLED = enabled
    try:
        yield
    finally:
        _GRAPH_ENABLED = prev


class Tensor:
    """An ndarray plus the bookkeeping needed to differentiate through it."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[Tensor], Sequence[Tensor | None]] | None = None

    # ------------------------------------------------------------------ basics
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad=None, create_graph: bool = False) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf that requires it."""
        if self._vjp is None and not self.requires_grad:
            raise RuntimeError("backward() called on a tensor that is not part of a graph")
        leaves = [t for t in _toposort(self) if t._vjp is None and t.requires_grad]
        grads = _backprop(self, leaves, grad, create_graph)
        for leaf, g in zip(leaves, grads):
            if g is None:
                continue
            leaf.grad = g.data.copy() if leaf.grad is None else leaf.grad + g.data
        if not create_graph:
            _free_graph(self)

    # ---------------------------------------------------------------- operators
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other, self.dtype)))

    def __rsub__(self, other):
        return add(_as_tensor(other, self.dtype), neg(self))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, reciprocal(other))
        return mul(self, 1.0 / np.asarray(other, dtype=self.dtype))

    def __rtruediv__(self, other):
        return mul(_as_tensor(other, self.dtype), reciprocal(self))

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        if exponent == 2:
            return mul(self, self)
        raise NotImplementedError("only squaring is supported")

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        n = self.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return sum_(self, axis=axis, keepdims=keepdims) * (1.0 / float(n))

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def _as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data: np.ndarray, parents: tuple[Tensor, ...], vjp) -> Tensor:
    out = Tensor(data)
    if _GRAPH_ENABLED and any(p.requires_grad or p._vjp is not None for p in parents):
        out._parents = parents
        out._vjp = vjp
    return out


def _in_graph(t: Tensor) -> bool:
    return t.requires_grad or t._vjp is not None


# --------------------------------------------------------------------- traversal
def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
            if id(p) not in seen and _in_graph(p):
                stack.append((p, False))
    return order  # parents before children


def _backprop(output: Tensor, inputs: Sequence[Tensor], grad, create_graph: bool) -> list[Tensor | None]:
    if grad is None:
        if output.size != 1:
            raise RuntimeError("grad must be given for non-scalar outputs")
        grad = np.ones_like(output.data)
    seed = grad if isinstance(grad, Tensor) else Tensor(np.asarray(grad, dtype=output.dtype))
    order = _toposort(output)
    wanted = {id(t) for t in inputs}
    grads: dict[int, Tensor] = {id(output): seed}
    result: dict[int, Tensor] = {}
    with _graph_mode(create_graph):
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if id(node) in wanted:
                result[id(node)] = g
            if node._vjp is None:
                continue
            parent_grads = node._vjp(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not _in_graph(parent):
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else add(grads[key], pg)
    return [result.get(id(t)) for t in inputs]


def _free_graph(root: Tensor) -> None:
    for node in _toposort(root):
        node._parents = ()
        node._vjp = None


def grad(output: Tensor, inputs: Sequence[Tensor] | Tensor, grad_output=None,
         create_graph: bool = False) -> list[Tensor]:
    """Gradients of ``output`` with respect to ``inputs`` without touching ``.grad``.

    With ``create_graph=True`` the returned tensors are themselves differentiable.
    Inputs that ``output`` does not depend on get zero gradients.
    """
    single = isinstance(inputs, Tensor)
    inputs = [inputs] if single else list(inputs)
    got = _backprop(output, inputs, grad_output, create_graph)
    out = [g if g is not None else Tensor(np.zeros_like(t.data)) for g, t in zip(got, inputs)]
    return out


# -------------------------------------------------------------------- primitives
def _unbroadcast(g: Tensor, shape: tuple[int, ...]) -> Tensor:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    axes = tuple(range(extra)) + tuple(
        i + extra for i, n in enumerate(shape) if n == 1 and g.shape[i + extra] != 1
    )
    out = sum_(g, axis=axes, keepdims=True) if axes else g
    return reshape(out, shape)


def add(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), vjp)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (neg(g),))


def mul(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)

    def vjp(g):
        ga = _unbroadcast(mul(g, b), a.shape) if _in_graph(a) else None
        gb = _unbroadcast(mul(g, a), b.shape) if _in_graph(b) else None
        return ga, gb

    return _make(a.data * b.data, (a, b), vjp)


def reciprocal(a: Tensor) -> Tensor:
    out_data = 1.0 / a.data

    def vjp(g):
        r = reciprocal(a)
        return (neg(mul(g, mul(r, r))),)

    return _make(out_data, (a,), vjp)


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def vjp(g):
        return (mul(g, exp(a)),)

    return _make(out_data, (a,), vjp)


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: (mul(g, reciprocal(a)),))


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    in_shape = a.shape
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            axes = tuple(ax % len(in_shape) for ax in np.atleast_1d(axis))
            kshape = tuple(1 if i in axes else n for i, n in enumerate(in_shape))
            g = reshape(g, kshape)
        elif axis is None and not keepdims:
            g = reshape(g, (1,) * len(in_shape))
        return (broadcast_to(g, in_shape),)

    return _make(np.asarray(out_data), (a,), vjp)


def broadcast_to(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    in_shape = a.shape
    out_data = np.broadcast_to(a.data, shape).copy()
    return _make(out_data, (a,), lambda g: (_unbroadcast(g, in_shape),))


def reshape(a: Tensor, shape) -> Tensor:
    in_shape = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (reshape(g, in_shape),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (transpose(g, inv),))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of a 2-D ``a`` and 2-D ``b``."""
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)

    def vjp(g):
        ga = matmul(g, transpose(b)) if _in_graph(a) else None
        gb = matmul(transpose(a), g) if _in_graph(b) else None
        return ga, gb

    return _make(a.data @ b.data, (a, b), vjp)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(take_slice(g, axis, int(lo), int(hi)) for lo, hi in zip(bounds[:-1], bounds[1:]))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), vjp)


def take_slice(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    in_shape = a.shape
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def vjp(g):
        before = start
        after = in_shape[axis] - stop
        return (pad_axis(g, axis, before, after),)

    return _make(a.data[index], (a,), vjp)


def pad_axis(a: Tensor, axis: int, before: int, after: int) -> Tensor:
    widths = [(0, 0)] * a.ndim
    widths[axis] = (before, after)
    n = a.shape[axis]
    return _make(np.pad(a.data, widths), (a,), lambda g: (take_slice(g, axis, before, before + n),))


# ----------------------------------------------------- 3x3 patch extraction pair
# im2col and col2im are adjoint linear maps, so each is the other's VJP and the
# pair supports arbitrary-order differentiation.
def _shifts(k: int):
    r = k // 2
    return [(di, dj) for di in range(-r, r + 1) for dj in range(-r, r + 1)]


def _im2col_data(x: np.ndarray, k: int) -> np.ndarray:
    n, h, w, c = x.shape
    r = k // 2
    xp = np.pad(x, ((0, 0), (r, r), (r, r), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))  # n,h,w,c,k,k
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(n, h, w, k * k * c)


def _col2im_data(cols: np.ndarray, k: int, c: int) -> np.ndarray:
    n, h, w, _ = cols.shape
    r = k // 2
    planes = np.ascontiguousarray(cols.reshape(n, h, w, k * k, c).transpose(3, 0, 1, 2, 4))
    out = np.zeros((n, h + 2 * r, w + 2 * r, c), dtype=cols.dtype)
    for idx, (di, dj) in enumerate(_shifts(k)):
        out[:, r + di:r + di + h, r + dj:r + dj + w, :] += planes[idx]
    return out[:, r:r + h, r:r + w, :]


def im2col(x: Tensor, k: int = 3) -> Tensor:
    """(N, H, W, C) -> (N, H, W, k*k*C) zero-padded 'same' patches."""
    c = x.shape[-1]
    return _make(_im2col_data(x.data, k), (x,), lambda g: (col2im(g, k, c),))


def col2im(cols: Tensor, k: int, c: int) -> Tensor:
    return _make(_col2im_data(cols.data, k, c), (cols,), lambda g: (im2col(g, k),))


# ------------------------------------------------------------- composite helpers
def relu(x: Tensor) -> Tensor:
    # the mask is piecewise constant, so x * mask has the exact ReLU derivatives
    return mul(x, Tensor((x.data > 0).astype(x.dtype)))


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling on (N, H, W, C) with even H, W.

    Tied maxima share the gradient equally; the selection weights are held
    constant, which gives the exact derivatives away from ties.
    """
    d = x.data
    corners = [d[:, i::2, j::2] for i in (0, 1) for j in (0, 1)]
    peak = np.maximum(np.maximum(corners[0], corners[1]), np.maximum(corners[2], corners[3]))
    hits = [(q == peak).astype(x.dtype) for q in corners]
    count = hits[0] + hits[1] + hits[2] + hits[3]
    weights = [m / count for m in hits]
    return _window_sum(x, weights)


def _window_sum(x: Tensor, weights: list[np.ndarray]) -> Tensor:
    d = x.data
    out = sum(d[:, i::2, j::2] * wt for (i, j), wt in zip(_CORNERS, weights))
    return _make(out, (x,), lambda g: (_window_spread(g, weights),))


def _window_spread(g: Tensor, weights: list[np.ndarray]) -> Tensor:
    n, h2, w2, c = g.shape
    out = np.empty((n, 2 * h2, 2 * w2, c), dtype=g.dtype)
    for (i, j), wt in zip(_CORNERS, weights):
        out[:, i::2, j::2] = g.data * wt
    return _make(out, (g,), lambda gg: (_window_sum(gg, weights),))


_CORNERS = [(0, 0), (0, 1), (1, 0), (1, 1)]


def global_maxpool(x: Tensor) -> Tensor:
    """(N, H, W, C) -> (N, C) spatial maximum; ties share the gradient."""
    peak = x.data.max(axis=(1, 2), keepdims=True)
    hits = (x.data == peak).astype(x.dtype)
    weights = hits / hits.sum(axis=(1, 2), keepdims=True)
    return sum_(mul(x, Tensor(weights)), axis=(1, 2))


def logsumexp(x: Tensor, axis: int = -1) -> Tensor:
    m = x.data.max(axis=axis, keepdims=True)
    shifted = add(x, Tensor(-m))
    s = log(sum_(exp(shifted), axis=axis, keepdims=True))
    return reshape(add(s, Tensor(m)), tuple(n for i, n in enumerate(x.shape) if i != axis % x.ndim))


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    lse = logsumexp(x, axis=axis)
    return add(x, neg(reshape(lse, lse.shape[:axis % x.ndim] + (1,) + lse.shape[axis % x.ndim:])))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    return exp(log_softmax(x, axis=axis))


def parameters_of(tensors: Iterable[Tensor]) -> list[Tensor]:
    return [t for t in tensors if t.requires_grad]
