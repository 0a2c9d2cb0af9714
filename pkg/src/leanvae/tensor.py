"""Dense channels-last tensors with define-by-run reverse-mode autodiff.

A :class:`Tensor` wraps a contiguous NumPy array (float32 or float64). Every
differentiable operation in this module records its parents and a backward
closure on the output when any input requires a gradient and recording is
enabled. :meth:`Tensor.backward` walks that tape once from a scalar root.

Binary operations require identical shapes, with one exception: an operand
whose shape is a trailing suffix of the other's (including a 0-d scalar) is
broadcast over the leading axes. That covers biases ``(C,)`` added to token
grids ``(..., C)`` and learnable scalars multiplying whole tensors.
"""

from __future__ import annotations

import contextlib
import contextvars
import math
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import CacheError, DimensionError, GraphError, ParameterError

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))
_GRAD_ENABLED = contextvars.ContextVar("leanvae_grad_enabled", default=True)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable tape recording inside the block (inference mode)."""
    token = _GRAD_ENABLED.set(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.reset(token)


def grad_enabled() -> bool:
    return _GRAD_ENABLED.get()


def _as_float_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data, dtype=dtype)
    if arr.dtype not in _FLOAT_DTYPES:
        arr = arr.astype(np.float32)
    return np.asarray(arr, order="C")


class Tensor:
    """N-dimensional float tensor that can take part in autodiff.

    Parameters
    ----------
    data : array_like
        Values; copied to a contiguous float32/float64 array.
    requires_grad : bool
        Mark as a leaf whose gradient should be populated by ``backward``.
    dtype : numpy dtype, optional
        Force float32 or float64.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_consumed", "_released")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = _as_float_array(data, dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._consumed = False
        self._released = False

    @classmethod
    def from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], backward: Callable) -> "Tensor":
        """Wrap an op result, recording ``backward`` if any parent needs a gradient.

        ``backward(g)`` receives the output gradient and returns one gradient
        (or ``None``) per parent, in order.
        """
        out = cls.__new__(cls)
        out.data = np.asarray(data, order="C")
        out.grad = None
        out._consumed = False
        out._released = False
        if _GRAD_ENABLED.get() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{flag})"

    # -- operators --------------------------------------------------------
    def _coerce(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.dtype))

    def __add__(self, other):
        return add(self, self._coerce(other))

    def __radd__(self, other):
        return add(self._coerce(other), self)

    def __sub__(self, other):
        return sub(self, self._coerce(other))

    def __rsub__(self, other):
        return sub(self._coerce(other), self)

    def __mul__(self, other):
        return mul(self, self._coerce(other))

    def __rmul__(self, other):
        return mul(self._coerce(other), self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, self._coerce(1.0 / other))

    def __neg__(self):
        return neg(self)

    # -- autodiff ---------------------------------------------------------
    def backward(self) -> None:
        """Populate ``.grad`` on every reachable leaf that requires a gradient.

        The root must be a scalar. The tape is released afterwards, so a
        second call on the same root raises :class:`GraphError`.
        """
        if self.data.size != 1:
            raise GraphError(f"backward needs a scalar root, got shape {self.shape}")
        if self._consumed:
            raise GraphError("backward already ran on this graph; rebuild the loss first")
        if not self.requires_grad:
            raise GraphError("root does not depend on any tensor that requires a gradient")

        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        self._consumed = True
        for node in order:
            if node._backward is not None:
                node._backward = None
                node._parents = ()
                node._released = True


def _topological_order(root: Tensor) -> list[Tensor]:
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
        if node._released:
            raise GraphError("graph contains a node from an already-differentiated tape")
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def parameter(data, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=True, dtype=dtype)


# -- broadcasting helpers ---------------------------------------------------
def _check_broadcast(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape == b.shape:
        return
    lo, hi = (a, b) if a.ndim <= b.ndim else (b, a)
    if lo.ndim == 0 or hi.shape[hi.ndim - lo.ndim:] == lo.shape:
        return
    raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} are not compatible")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    return g.sum(axis=tuple(range(lead))).reshape(shape)


# -- elementwise arithmetic ---------------------------------------------------
def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a.data, b.data, "add")
    sa, sb = a.shape, b.shape
    return Tensor.from_op(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a.data, b.data, "sub")
    sa, sb = a.shape, b.shape
    return Tensor.from_op(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a.data, b.data, "mul")
    ad, bd = a.data, b.data

    def backward(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return Tensor.from_op(ad * bd, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    return Tensor.from_op(-a.data, (a,), lambda g: (-g,))


def square(a: Tensor) -> Tensor:
    ad = a.data
    return Tensor.from_op(ad * ad, (a,), lambda g: (2.0 * ad * g,))


def absolute(a: Tensor) -> Tensor:
    ad = a.data
    return Tensor.from_op(np.abs(ad), (a,), lambda g: (np.sign(ad) * g,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor.from_op(out, (a,), lambda g: (out * g,))


def softplus(a: Tensor) -> Tensor:
    ad = a.data
    out = np.logaddexp(0.0, ad).astype(ad.dtype, copy=False)

    def backward(g):
        return (g / (1.0 + np.exp(-ad)),)

    return Tensor.from_op(out, (a,), backward)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    x = a.data
    t = x * x
    t *= _GELU_C * 0.044715
    t += _GELU_C
    t *= x
    np.tanh(t, out=t)
    out = t + 1.0
    out *= x
    out *= 0.5

    def backward(g):
        dinner = x * x
        dinner *= 3 * _GELU_C * 0.044715
        dinner += _GELU_C
        dt = 1.0 - t * t
        dt *= dinner
        dt *= x
        dt += 1.0 + t
        dt *= 0.5
        return (g * dt,)

    return Tensor.from_op(out, (a,), backward)


def soft(x: Tensor, theta) -> Tensor:
    """Soft-shrinkage ``sign(x) * max(|x| - theta, 0)``.

    ``theta`` is a non-negative float or 0-d Tensor; its gradient is
    propagated when it is a Tensor.
    """
    th = theta if isinstance(theta, Tensor) else Tensor(np.asarray(theta, dtype=x.dtype))
    if th.size != 1:
        raise DimensionError(f"soft: threshold must be a scalar, got shape {th.shape}")
    tval = float(th.data.reshape(-1)[0])
    if not tval >= 0.0:
        raise ParameterError(f"soft: threshold must be >= 0, got {tval}")
    xd = x.data
    sign = np.sign(xd)
    active = np.abs(xd) > tval
    out = sign * np.maximum(np.abs(xd) - th.data, 0.0)

    def backward(g):
        gx = g * active
        gth = -(g * sign * active).sum()
        return gx, np.asarray(gth, dtype=th.dtype).reshape(th.shape)

    return Tensor.from_op(out.astype(xd.dtype, copy=False), (x, th), backward)


# -- reductions -------------------------------------------------------------
def sum_all(a: Tensor) -> Tensor:
    shape, dt = a.shape, a.dtype
    return Tensor.from_op(np.asarray(a.data.sum(), dtype=dt), (a,), lambda g: (np.broadcast_to(g, shape).astype(dt),))


def mean(a: Tensor) -> Tensor:
    n = a.size
    shape, dt = a.shape, a.dtype
    return Tensor.from_op(
        np.asarray(a.data.mean(), dtype=dt), (a,), lambda g: (np.full(shape, g / n, dtype=dt),)
    )


# -- shape manipulation ------------------------------------------------------
def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    src = a.shape
    return Tensor.from_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),))


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return Tensor.from_op(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = list(tensors)
    if len(tensors) == 1:
        return tensors[0]
    datas = [t.data for t in tensors]
    ax = axis % datas[0].ndim
    for d in datas[1:]:
        if d.ndim != datas[0].ndim or d.shape[:ax] + d.shape[ax + 1:] != datas[0].shape[:ax] + datas[0].shape[ax + 1:]:
            raise DimensionError(f"concat: incompatible shapes {[x.shape for x in datas]} along axis {axis}")
    bounds = np.cumsum([0] + [d.shape[ax] for d in datas])

    def backward(g):
        return tuple(np.take(g, range(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(datas)))

    return Tensor.from_op(np.concatenate(datas, axis=ax), tensors, backward)


def slice_axis(a: Tensor, start: int, stop: int, axis: int) -> Tensor:
    ax = axis % a.ndim
    index = [slice(None)] * a.ndim
    index[ax] = slice(start, stop)
    index = tuple(index)
    shape, dt = a.shape, a.dtype

    def backward(g):
        full = np.zeros(shape, dtype=dt)
        full[index] = g
        return (full,)

    return Tensor.from_op(a.data[index], (a,), backward)


def split(a: Tensor, sizes: Sequence[int], axis: int = -1) -> list[Tensor]:
    if sum(sizes) != a.shape[axis]:
        raise DimensionError(f"split: sizes {list(sizes)} do not sum to extent {a.shape[axis]}")
    out, start = [], 0
    for s in sizes:
        out.append(slice_axis(a, start, start + s, axis))
        start += s
    return out


# -- linear algebra ----------------------------------------------------------
def matmul_lastdim(x: Tensor, w: Tensor) -> Tensor:
    """Contract the last axis of ``x`` (extent A) with ``w`` of shape (A, B)."""
    if w.ndim != 2 or x.ndim < 1 or x.shape[-1] != w.shape[0]:
        raise DimensionError(f"matmul_lastdim: cannot contract {x.shape} with {w.shape}")
    xd, wd = x.data, w.data

    def backward(g):
        gx = g @ wd.T
        gw = xd.reshape(-1, xd.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return gx, gw

    return Tensor.from_op(xd @ wd, (x, w), backward)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = matmul_lastdim(x, w)
    return y if b is None else add(y, b)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise DimensionError(f"layer_norm: affine shape mismatch for input {x.shape}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gamma.data

    def backward(g):
        gxhat = g * gd
        gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(xd.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return Tensor.from_op(xhat * gd + beta.data, (x, gamma, beta), backward)


# -- causal depthwise convolution ----------------------------------------------
def causal_pad(x: np.ndarray, cache: np.ndarray | None) -> np.ndarray:
    """Prepend the two-slice temporal context (cache or zeros) on axis -4."""
    if cache is None:
        cache = np.zeros(x.shape[:-4] + (2,) + x.shape[-3:], dtype=x.dtype)
    return np.concatenate([cache.astype(x.dtype, copy=False), x], axis=-4)


def next_cache(x: np.ndarray, cache: np.ndarray | None) -> np.ndarray:
    """The two temporal slices a following chunk needs as causal context."""
    return np.ascontiguousarray(causal_pad(x, cache)[..., -2:, :, :, :])


def dwconv3d_causal(x: Tensor, k: Tensor, b: Tensor, cache: np.ndarray | None = None) -> Tensor:
    """Depthwise 3x3x3 convolution, causal in time, zero-padded in space.

    ``x`` has shape (..., T, H, W, C); ``k`` is (3, 3, 3, C) indexed
    (dt, dh, dw, c) where ``dt = 2`` is the current frame; ``b`` is (C,).
    ``cache`` supplies the two preceding temporal slices (..., 2, H, W, C);
    without it two zero slices are used. The cache itself is not
    differentiated.
    """
    xd = x.data
    if xd.ndim < 4:
        raise DimensionError(f"dwconv3d_causal: expected (..., T, H, W, C), got {xd.shape}")
    C = xd.shape[-1]
    if k.shape != (3, 3, 3, C) or b.shape != (C,):
        raise DimensionError(f"dwconv3d_causal: kernel {k.shape} / bias {b.shape} do not match C={C}")
    if cache is not None:
        want = xd.shape[:-4] + (2,) + xd.shape[-3:]
        if cache.shape != want:
            raise CacheError(f"dwconv3d_causal: cache shape {cache.shape} != {want}")
    T, H, W = xd.shape[-4:-1]
    xp = causal_pad(xd, cache)
    pad = [(0, 0)] * (xp.ndim - 3) + [(1, 1), (1, 1), (0, 0)]
    xp = np.pad(xp, pad)
    kd = k.data
    out = np.empty_like(xd)
    out[...] = b.data
    for a in range(3):
        for i in range(3):
            for j in range(3):
                out += xp[..., a:a + T, i:i + H, j:j + W, :] * kd[a, i, j]

    letters = "abdefghijklmnopq"[: xd.ndim - 1]
    spec = f"{letters}z,{letters}z->z"

    def backward(g):
        gxp = np.zeros_like(xp)
        gk = np.empty_like(kd)
        for a in range(3):
            for i in range(3):
                for j in range(3):
                    gxp[..., a:a + T, i:i + H, j:j + W, :] += g * kd[a, i, j]
                    gk[a, i, j] = np.einsum(spec, g, xp[..., a:a + T, i:i + H, j:j + W, :])
        gx = gxp[..., 2:, 1:-1, 1:-1, :]
        gb = g.reshape(-1, C).sum(axis=0)
        return gx, gk, gb

    return Tensor.from_op(out, (x, k, b), backward)
