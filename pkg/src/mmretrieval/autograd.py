"""Reverse-mode automatic differentiation over numpy arrays.

A ``Tensor`` wraps a float32 (or float64) ndarray. While a ``GradTape`` is
active, every kernel records a backward closure; ``tape.backward(loss)``
replays the closures in exact reverse execution order and accumulates
gradients into ``Tensor.grad`` buffers. With no active tape the kernels are
plain numpy and safe to call from multiple threads; a tape itself is
single-threaded (one tape per training worker).

Float32 is the working precision. Kernels follow the input dtype, so the
same graph can be evaluated in float64 for finite-difference checks.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy.special import erf as _scipy_erf

__all__ = [
    "GradTape",
    "NumericsError",
    "ShapeError",
    "Tensor",
    "concatenate",
    "erf",
    "exp",
    "log",
    "matmul",
    "reduce_max",
    "reduce_mean",
    "reduce_sum",
    "set_finite_checks",
    "softmax",
    "sqrt",
    "tanh",
]

_FLOAT_DTYPES = (np.float32, np.float64)
_INV_SQRT_PI = 1.0 / np.sqrt(np.pi)


class ShapeError(ValueError):
    """Operand dimensions are incompatible with the requested kernel."""


class NumericsError(FloatingPointError):
    """A kernel produced NaN or Inf, which is an error state."""


_CHECK_FINITE = True


def set_finite_checks(enabled: bool) -> bool:
    """Toggle the per-kernel NaN/Inf guard; returns the previous setting."""
    global _CHECK_FINITE
    previous = _CHECK_FINITE
    _CHECK_FINITE = bool(enabled)
    return previous


def _checked(arr: np.ndarray, op: str) -> np.ndarray:
    if _CHECK_FINITE and not np.isfinite(arr).all():
        raise NumericsError(f"{op} produced non-finite values")
    return arr


class Tensor:
    """Dense row-major float tensor with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)

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

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"

    # arithmetic sugar; all routed through the recorded kernels below
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return subtract(other, self)

    def __mul__(self, other):
        return multiply(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return divide(self, other)

    def __rtruediv__(self, other):
        return divide(other, self)

    def __neg__(self):
        return negative(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def max(self, axis=None, keepdims: bool = False):
        return reduce_max(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes: Sequence[int]):
        return transpose(self, axes)

    def swap_axes(self, a: int, b: int):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return transpose(self, axes)


class GradTape:
    """Operation log for one backward pass.

    Kernels append ``(output, backward_fn)`` pairs in execution order;
    ``backward`` walks them strictly in reverse. Gradient buffers live on the
    tensors and have the same dims as the values they belong to.
    """

    def __init__(self):
        self._ops: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []
        self._prev: GradTape | None = None

    def __enter__(self) -> "GradTape":
        global _ACTIVE_TAPE
        self._prev = _ACTIVE_TAPE
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = self._prev
        self._prev = None

    def record(self, out: Tensor, backward: Callable[[np.ndarray], None]) -> None:
        self._ops.append((out, backward))

    def __len__(self) -> int:
        return len(self._ops)

    def backward(self, root: Tensor) -> None:
        """Seed ``root`` with ones and propagate to every recorded input."""
        root.grad = np.ones_like(root.data)
        for out, fn in reversed(self._ops):
            if out.grad is not None:
                fn(out.grad)


_ACTIVE_TAPE: GradTape | None = None


def _to_tensor(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _recording(*tensors: Tensor) -> bool:
    return _ACTIVE_TAPE is not None and any(t.requires_grad for t in tensors)


def _record(out: Tensor, backward: Callable[[np.ndarray], None]) -> None:
    assert _ACTIVE_TAPE is not None
    _ACTIVE_TAPE.record(out, backward)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` along axes numpy broadcast over."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise kernels


def add(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    out = Tensor(_checked(a.data + b.data, "add"), requires_grad=_recording(a, b))
    if out.requires_grad:

        def backward(g):
            _accumulate(a, _unbroadcast(g, a.shape))
            _accumulate(b, _unbroadcast(g, b.shape))

        _record(out, backward)
    return out


def subtract(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    out = Tensor(_checked(a.data - b.data, "subtract"), requires_grad=_recording(a, b))
    if out.requires_grad:

        def backward(g):
            _accumulate(a, _unbroadcast(g, a.shape))
            _accumulate(b, _unbroadcast(-g, b.shape))

        _record(out, backward)
    return out


def multiply(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    out = Tensor(_checked(a.data * b.data, "multiply"), requires_grad=_recording(a, b))
    if out.requires_grad:
        a_data, b_data = a.data, b.data

        def backward(g):
            _accumulate(a, _unbroadcast(g * b_data, a.shape))
            _accumulate(b, _unbroadcast(g * a_data, b.shape))

        _record(out, backward)
    return out


def divide(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    out = Tensor(_checked(a.data / b.data, "divide"), requires_grad=_recording(a, b))
    if out.requires_grad:
        a_data, b_data = a.data, b.data

        def backward(g):
            _accumulate(a, _unbroadcast(g / b_data, a.shape))
            _accumulate(b, _unbroadcast(-g * a_data / (b_data * b_data), b.shape))

        _record(out, backward)
    return out


def negative(a) -> Tensor:
    a = _to_tensor(a, np.float32)
    out = Tensor(-a.data, requires_grad=_recording(a))
    if out.requires_grad:
        _record(out, lambda g: _accumulate(a, -g))
    return out


def _coerce_pair(a, b) -> tuple[Tensor, Tensor]:
    # wrap python scalars with the partner's dtype so float32 graphs stay float32
    if isinstance(a, Tensor):
        return a, _to_tensor(b, a.dtype)
    if isinstance(b, Tensor):
        return _to_tensor(a, b.dtype), b
    return _to_tensor(a, np.float32), _to_tensor(b, np.float32)


def _unary(a, fn_val, fn_grad, name: str) -> Tensor:
    a = _to_tensor(a, np.float32)
    with np.errstate(all="ignore"):  # non-finite output is caught by _checked
        data = _checked(fn_val(a.data), name)
    out = Tensor(data, requires_grad=_recording(a))
    if out.requires_grad:

        def backward(g):
            _accumulate(a, fn_grad(g, a.data, data))

        _record(out, backward)
    return out


def exp(a) -> Tensor:
    return _unary(a, np.exp, lambda g, x, y: g * y, "exp")


def log(a) -> Tensor:
    return _unary(a, np.log, lambda g, x, y: g / x, "log")


def sqrt(a) -> Tensor:
    return _unary(a, np.sqrt, lambda g, x, y: g * (0.5 / y), "sqrt")


def tanh(a) -> Tensor:
    return _unary(a, np.tanh, lambda g, x, y: g * (1.0 - y * y), "tanh")


def erf(a) -> Tensor:
    def grad(g, x, y):
        return g * (2.0 * _INV_SQRT_PI) * np.exp(-x * x)

    return _unary(a, lambda x: _scipy_erf(x).astype(x.dtype, copy=False), grad, "erf")


# ---------------------------------------------------------------------------
# structural kernels


def matmul(a, b) -> Tensor:
    """Matrix product with numpy batch-dimension broadcasting."""
    a, b = _coerce_pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs ndim >= 2 operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    try:
        data = a.data @ b.data
    except ValueError as exc:  # incompatible batch dims
        raise ShapeError(f"matmul batch dims differ: {a.shape} @ {b.shape}") from exc
    out = Tensor(_checked(data, "matmul"), requires_grad=_recording(a, b))
    if out.requires_grad:
        a_data, b_data = a.data, b.data

        def backward(g):
            if a.requires_grad:
                _accumulate(a, _unbroadcast(g @ np.swapaxes(b_data, -1, -2), a.shape))
            if b.requires_grad:
                _accumulate(b, _unbroadcast(np.swapaxes(a_data, -1, -2) @ g, b.shape))

        _record(out, backward)
    return out


def reshape(a, shape) -> Tensor:
    a = _to_tensor(a, np.float32)
    out = Tensor(a.data.reshape(shape), requires_grad=_recording(a))
    if out.requires_grad:
        src_shape = a.shape
        _record(out, lambda g: _accumulate(a, g.reshape(src_shape)))
    return out


def transpose(a, axes: Sequence[int]) -> Tensor:
    a = _to_tensor(a, np.float32)
    axes = tuple(axes)
    out = Tensor(a.data.transpose(axes), requires_grad=_recording(a))
    if out.requires_grad:
        inverse = tuple(np.argsort(axes))
        _record(out, lambda g: _accumulate(a, g.transpose(inverse)))
    return out


def take(a, index) -> Tensor:
    """Basic/fancy indexing; backward scatter-adds into the source."""
    a = _to_tensor(a, np.float32)
    out = Tensor(np.array(a.data[index]), requires_grad=_recording(a))
    if out.requires_grad:

        def backward(g):
            if not a.requires_grad:
                return
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            np.add.at(a.grad, index, g)

        _record(out, backward)
    return out


def concatenate(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [_to_tensor(p, np.float32) for p in parts]
    if not parts:
        raise ShapeError("concatenate of zero tensors")
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis),
                 requires_grad=_recording(*parts))
    if out.requires_grad:
        sizes = [p.shape[axis] for p in parts]
        splits = np.cumsum(sizes)[:-1]

        def backward(g):
            for part, piece in zip(parts, np.split(g, splits, axis=axis)):
                _accumulate(part, piece)

        _record(out, backward)
    return out


# ---------------------------------------------------------------------------
# reductions


def _norm_axis(axis, ndim: int):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _to_tensor(a, np.float32)
    axis = _norm_axis(axis, a.ndim)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims), requires_grad=_recording(a))
    if out.requires_grad:

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(g, a.shape).copy())

        _record(out, backward)
    return out


def reduce_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _to_tensor(a, np.float32)
    axis = _norm_axis(axis, a.ndim)
    count = a.size if axis is None else int(np.prod([a.shape[ax] for ax in axis]))
    out = Tensor(a.data.mean(axis=axis, keepdims=keepdims), requires_grad=_recording(a))
    if out.requires_grad:

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(g / count, a.shape).copy())

        _record(out, backward)
    return out


def reduce_max(a, axis=None, keepdims: bool = False) -> Tensor:
    """Max reduction; gradient routes to the first argmax (deterministic)."""
    a = _to_tensor(a, np.float32)
    if axis is None:
        out = Tensor(a.data.max(), requires_grad=_recording(a))
        if out.requires_grad:
            flat_idx = int(np.argmax(a.data))

            def backward(g):
                buf = np.zeros_like(a.data)
                buf.flat[flat_idx] = g if np.ndim(g) == 0 else g.item()
                _accumulate(a, buf)

            _record(out, backward)
        return out

    ax = axis % a.ndim
    out = Tensor(a.data.max(axis=ax, keepdims=keepdims), requires_grad=_recording(a))
    if out.requires_grad:
        winners = np.expand_dims(np.argmax(a.data, axis=ax), ax)

        def backward(g):
            if not keepdims:
                g = np.expand_dims(g, ax)
            buf = np.zeros_like(a.data)
            np.put_along_axis(buf, winners, g, axis=ax)
            _accumulate(a, buf)

        _record(out, backward)
    return out


# ---------------------------------------------------------------------------
# softmax


def softmax(x, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Numerically stable softmax along ``axis``.

    ``mask`` (broadcastable to ``x``, 1 = keep) zeroes masked positions
    exactly; the remaining entries sum to 1 along the reduced axis. A fully
    masked row is an error state and raises ``NumericsError``.
    """
    x = _to_tensor(x, np.float32)
    if x.ndim == 0 or x.shape[axis % x.ndim] == 0:
        raise ShapeError(f"softmax over empty axis {axis} of shape {x.shape}")
    ax = axis % x.ndim
    data = x.data
    with np.errstate(all="ignore"):  # fully masked rows become NaN, caught below
        if mask is not None:
            mask = np.broadcast_to(np.asarray(mask, dtype=data.dtype), data.shape)
            if mask.shape[ax] != data.shape[ax]:
                raise ShapeError("softmax mask length mismatch")
            masked = np.where(mask > 0, data, -np.inf)
            shift = masked.max(axis=ax, keepdims=True)
            e = np.where(mask > 0, np.exp(np.where(mask > 0, data - shift, 0.0)), 0.0)
        else:
            shift = data.max(axis=ax, keepdims=True)
            e = np.exp(data - shift)
        denom = e.sum(axis=ax, keepdims=True)
        out_data = _checked(e / denom, "softmax")
    out = Tensor(out_data, requires_grad=_recording(x))
    if out.requires_grad:

        def backward(g):
            inner = (g * out_data).sum(axis=ax, keepdims=True)
            _accumulate(x, out_data * (g - inner))

        _record(out, backward)
    return out
