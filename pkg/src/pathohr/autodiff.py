"""Dense numeric kernel with reverse-mode gradients.

Values are numpy arrays.  A `Tensor` wraps an array and, when created under
a `Tape`, every primitive applied to it is recorded so `Tape.backward` can
replay the computation in reverse and accumulate gradients into each input
slot.  All functions in this module are polymorphic: given plain ndarrays
they compute with numpy directly (no recording), given Tensors they build
the tape.  Model code is therefore written once and runs in both modes.

Double precision is the default (gradient checks are meaningless in single
precision); float32 inputs are left in float32 for cheap inference runs.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy.special import erf as _erf, expit as _expit

from .errors import DimensionError, NumericError

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Tape:
    """Ordered record of primitive operations for one forward pass.

    Replaying the records backward produces gradients for every recorded
    input slot; tensors never recorded (constants) get no gradient.  A tape
    belongs to one logical thread of execution.
    """

    def __init__(self):
        self._records: list[tuple["Tensor", tuple["Tensor", ...], Callable]] = []

    def __len__(self) -> int:
        return len(self._records)

    def _record(self, out: "Tensor", inputs: tuple["Tensor", ...], backward: Callable) -> None:
        self._records.append((out, inputs, backward))

    def backward(self, loss: "Tensor") -> None:
        """Seed d(loss)/d(loss) = 1 and accumulate gradients tape-backward."""
        if not isinstance(loss, Tensor) or loss.tape is not self:
            raise ValueError("backward() needs a scalar Tensor recorded on this tape")
        if loss.data.size != 1:
            raise DimensionError("loss must be a scalar")
        if not np.all(np.isfinite(loss.data)):
            raise NumericError("loss is not finite")
        loss.grad = np.ones_like(loss.data)
        for out, inputs, backward_fn in reversed(self._records):
            if out.grad is None:
                continue
            grads = backward_fn(out.grad)
            for inp, g in zip(inputs, grads):
                if inp.tape is None or g is None:
                    continue
                inp.grad = g if inp.grad is None else inp.grad + g


class Tensor:
    """An immutable array value, optionally recorded on a Tape."""

    __slots__ = ("data", "grad", "tape")
    __array_ufunc__ = None  # force numpy to defer to our reflected operators

    def __init__(self, data, tape: Tape | None = None):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.tape = tape

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, tape={'yes' if self.tape else 'no'})"

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def value_of(x) -> np.ndarray:
    """Raw ndarray behind x, whether Tensor or array-like."""
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _tape_of(*tensors: Tensor) -> Tape | None:
    tape = None
    for t in tensors:
        if t.tape is not None:
            if tape is None:
                tape = t.tape
            elif tape is not t.tape:
                raise ValueError("operands were recorded on different tapes")
    return tape


def _make(data: np.ndarray, inputs: tuple[Tensor, ...], backward: Callable) -> Tensor:
    tape = _tape_of(*inputs)
    out = Tensor(data, tape)
    if tape is not None:
        tape._record(out, inputs, backward)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum-reduce a broadcast gradient back to the operand's shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _any_tensor(*xs) -> bool:
    return any(isinstance(x, Tensor) for x in xs)


# ---------------------------------------------------------------------------
# elementwise / arithmetic primitives
# ---------------------------------------------------------------------------

def add(a, b):
    if not _any_tensor(a, b):
        return np.add(a, b)
    a, b = _lift(a), _lift(b)
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)),
    )


def sub(a, b):
    if not _any_tensor(a, b):
        return np.subtract(a, b)
    a, b = _lift(a), _lift(b)
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)),
    )


def mul(a, b):
    if not _any_tensor(a, b):
        return np.multiply(a, b)
    a, b = _lift(a), _lift(b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        ),
    )


def div(a, b):
    if not _any_tensor(a, b):
        return np.divide(a, b)
    a, b = _lift(a), _lift(b)
    return _make(
        a.data / b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        ),
    )


def power(a, p: float):
    if not _any_tensor(a):
        return np.power(a, p)
    a = _lift(a)
    return _make(
        a.data ** p,
        (a,),
        lambda g: (g * p * a.data ** (p - 1),),
    )


def exp(a):
    if not _any_tensor(a):
        return np.exp(a)
    a = _lift(a)
    out_data = np.exp(a.data)
    return _make(out_data, (a,), lambda g: (g * out_data,))


def log(a):
    if not _any_tensor(a):
        return np.log(a)
    a = _lift(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a):
    if not _any_tensor(a):
        return np.sqrt(a)
    a = _lift(a)
    out_data = np.sqrt(a.data)
    # subgradient 0 at exactly zero (e.g. distance between identical tokens)
    def backward(g):
        return (np.where(out_data > 0.0, g / (2.0 * np.where(out_data > 0, out_data, 1.0)), 0.0),)
    return _make(out_data, (a,), backward)


def tanh(a):
    if not _any_tensor(a):
        return np.tanh(a)
    a = _lift(a)
    out_data = np.tanh(a.data)
    return _make(out_data, (a,), lambda g: (g * (1.0 - out_data * out_data),))


def sigmoid(a):
    if not _any_tensor(a):
        return _expit(np.asarray(a, dtype=np.float64))
    a = _lift(a)
    out_data = _expit(a.data)
    return _make(out_data, (a,), lambda g: (g * out_data * (1.0 - out_data),))


def gelu(a):
    """Exact-erf GELU: x * Phi(x) with Phi the standard normal CDF."""
    if not _any_tensor(a):
        a = np.asarray(a, dtype=np.float64)
        return a * 0.5 * (1.0 + _erf(a * _INV_SQRT2))
    a = _lift(a)
    phi_cdf = 0.5 * (1.0 + _erf(a.data * _INV_SQRT2))
    out_data = a.data * phi_cdf
    def backward(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * a.data * a.data)
        return (g * (phi_cdf + a.data * pdf),)
    return _make(out_data, (a,), backward)


def clamp_min(a, floor: float):
    if not _any_tensor(a):
        return np.maximum(a, floor)
    a = _lift(a)
    keep = a.data > floor
    return _make(np.maximum(a.data, floor), (a,), lambda g: (g * keep,))


# ---------------------------------------------------------------------------
# shape / indexing primitives
# ---------------------------------------------------------------------------

def matmul(a, b):
    if not _any_tensor(a, b):
        return np.matmul(a, b)
    a, b = _lift(a), _lift(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError("matmul expects 2-D operands")
    if a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(f"matmul: inner dims {a.data.shape} x {b.data.shape}")
    return _make(
        a.data @ b.data,
        (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g),
    )


def transpose(a):
    if not _any_tensor(a):
        return np.transpose(a)
    a = _lift(a)
    return _make(a.data.T, (a,), lambda g: (g.T,))


def reshape(a, shape):
    if not _any_tensor(a):
        return np.reshape(a, shape)
    a = _lift(a)
    old = a.data.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def getitem(a, key):
    if not _any_tensor(a):
        return np.asarray(a)[key]
    a = _lift(a)
    def backward(g):
        full = np.zeros_like(a.data)
        full[key] += g
        return (full,)
    return _make(a.data[key], (a,), backward)


def take_rows(a, idx):
    """Gather rows by integer index; gradients scatter-add back."""
    idx = np.asarray(idx, dtype=np.intp)
    if not _any_tensor(a):
        return np.asarray(a)[idx]
    a = _lift(a)
    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)
    return _make(a.data[idx], (a,), backward)


def concat(parts: Sequence, axis: int = 0):
    if not _any_tensor(*parts):
        return np.concatenate(parts, axis=axis)
    parts = [_lift(p) for p in parts]
    sizes = [p.data.shape[axis] for p in parts]
    bounds = np.cumsum([0] + sizes)
    def backward(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
            for i in range(len(parts))
        )
    return _make(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), backward)


def reduce_sum(a, axis=None, keepdims=False):
    if not _any_tensor(a):
        return np.sum(a, axis=axis, keepdims=keepdims)
    a = _lift(a)
    shape = a.data.shape
    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)
    return _make(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), backward)


def reduce_mean(a, axis=None, keepdims=False):
    data = value_of(a)
    if axis is None:
        count = data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([data.shape[i] for i in axes]))
    return div(reduce_sum(a, axis=axis, keepdims=keepdims), float(count))


# ---------------------------------------------------------------------------
# spec-level operations
# ---------------------------------------------------------------------------

def softmax_rows(m):
    """Row-wise softmax with per-row max subtraction for stability.

    Each output row is non-negative and sums to 1 (within 1e-12 in double
    precision).  Empty matrices are rejected.
    """
    data = value_of(m)
    if data.ndim != 2 or data.size == 0:
        raise DimensionError("softmax_rows expects a non-empty 2-D matrix")
    if not _any_tensor(m):
        z = data - data.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)
    a = _lift(m)
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)
    def backward(g):
        dot = np.sum(g * s, axis=1, keepdims=True)
        return (s * (g - dot),)
    return _make(s, (a,), backward)


def layer_norm(v, gain, bias, eps: float = 1e-5):
    """Normalize a vector to zero mean / unit variance (1/n variance), then
    scale by `gain` and shift by `bias`."""
    n = value_of(v).shape[-1]
    if value_of(gain).shape[-1] != n or value_of(bias).shape[-1] != n:
        raise DimensionError("layer_norm: v, gain, bias lengths differ")
    if eps <= 0:
        raise ValueError("eps must be positive")
    mu = reduce_mean(v, axis=-1, keepdims=True)
    centered = sub(v, mu)
    var = reduce_mean(mul(centered, centered), axis=-1, keepdims=True)
    inv = div(1.0, sqrt(add(var, eps)))
    return add(mul(mul(centered, inv), gain), bias)


def layer_norm_rows(x, gain, bias, eps: float = 1e-5):
    """layer_norm applied independently to every row of a matrix."""
    return layer_norm(x, gain, bias, eps)


def linear_apply(x, weight, bias=None):
    """Affine map x @ weight + bias; recorded when inputs are on a tape."""
    xs, ws = value_of(x).shape, value_of(weight).shape
    if len(xs) != 2 or len(ws) != 2 or xs[1] != ws[0]:
        raise DimensionError(f"linear_apply: {xs} x {ws}")
    out = matmul(x, weight)
    if bias is not None:
        if value_of(bias).shape[-1] != ws[1]:
            raise DimensionError("linear_apply: bias length mismatch")
        out = add(out, bias)
    return out


def l2_normalize_rows(x, eps: float = 0.0):
    """Scale every row to unit Euclidean norm (rows of norm <= eps untouched)."""
    sq = reduce_sum(mul(x, x), axis=1, keepdims=True)
    norm = sqrt(sq)
    norm_data = value_of(norm)
    if np.any(norm_data <= eps):
        safe = clamp_min(norm, max(eps, np.finfo(np.float64).tiny))
        keep = (norm_data > eps).astype(np.float64)
        return add(mul(div(x, safe), keep), mul(x, 1.0 - keep))
    return div(x, norm)


def assert_all_finite(x, context: str = "value") -> None:
    data = value_of(x)
    if not np.all(np.isfinite(data)):
        raise NumericError(f"{context} contains NaN/Inf")


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def grad_check(f: Callable, params: np.ndarray, h: float = 1e-4) -> float:
    """Compare reverse-mode gradients of `f` against central differences.

    Args:
        f: scalar function of one flat parameter vector, built from the
           primitives in this module; called with a Tensor argument.
        params: evaluation point, flattened to 1-D float64.
        h: central-difference step.

    Returns:
        max over parameters of |analytic - numeric| / max(|analytic|,
        |numeric|, 1e-8).
    """
    params = np.asarray(params, dtype=np.float64).ravel()

    tape = Tape()
    p = Tensor(params.copy(), tape)
    out = f(p)
    out_value = float(value_of(out))
    if not np.isfinite(out_value):
        raise NumericError("f(params) is not finite")
    if isinstance(out, Tensor) and out.tape is tape:
        tape.backward(out)
    analytic = p.grad if p.grad is not None else np.zeros_like(params)

    def eval_plain(vec: np.ndarray) -> float:
        val = float(value_of(f(Tensor(vec))))
        if not np.isfinite(val):
            raise NumericError("f evaluation is not finite")
        return val

    numeric = np.empty_like(params)
    for i in range(params.size):
        step = np.zeros_like(params)
        step[i] = h
        numeric[i] = (eval_plain(params + step) - eval_plain(params - step)) / (2.0 * h)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


def flatten_arrays(arrays: dict[str, np.ndarray]) -> tuple[np.ndarray, list[tuple[str, tuple]]]:
    """Pack named arrays into one flat vector plus a shape manifest."""
    names = list(arrays.keys())
    spec = [(name, np.asarray(arrays[name]).shape) for name in names]
    flat = np.concatenate([np.asarray(arrays[name], dtype=np.float64).ravel() for name in names]) \
        if names else np.zeros(0)
    return flat, spec


def unflatten_arrays(vec, spec: list[tuple[str, tuple]]) -> dict:
    """Slice a flat vector (Tensor or ndarray) back into named arrays."""
    out = {}
    offset = 0
    for name, shape in spec:
        size = int(np.prod(shape)) if shape else 1
        chunk = getitem(vec, slice(offset, offset + size))
        out[name] = reshape(chunk, shape)
        offset += size
    return out
