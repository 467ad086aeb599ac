"""Dense tensors with a reverse-mode gradient tape.

A ``Tensor`` wraps a numpy array and, when gradients are enabled, records
its parents and a backward closure. Calling :meth:`Tensor.backward` on a
scalar walks the recorded graph once in reverse topological order and
accumulates gradients into every reachable tensor with ``requires_grad``.

Dtype policy: float32 is the training default, float64 is used for
finite-difference verification. Ops inherit numpy's promotion rules.
Broadcasting follows numpy's trailing-dimension alignment.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

_DEFAULT_DTYPE = np.float32
_GRAD_ENABLED = True
_CHECK_FINITE = False

Scalar = Union[int, float]
TensorLike = Union["Tensor", np.ndarray, Scalar, Sequence]


def default_dtype() -> np.dtype:
    return np.dtype(_DEFAULT_DTYPE)


def set_default_dtype(dtype) -> None:
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dt}; use float32 or float64")
    global _DEFAULT_DTYPE
    _DEFAULT_DTYPE = dt.type


@contextlib.contextmanager
def use_dtype(dtype):
    """Temporarily switch the default dtype (e.g. float64 for grad checks)."""
    global _DEFAULT_DTYPE
    old = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _DEFAULT_DTYPE = old


@contextlib.contextmanager
def no_grad():
    """Disable graph recording; forward values only."""
    global _GRAD_ENABLED
    old = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = old


@contextlib.contextmanager
def finite_checks():
    """Raise on any non-finite op output (used by grad_check and tests)."""
    global _CHECK_FINITE
    old = _CHECK_FINITE
    _CHECK_FINITE = True
    try:
        yield
    finally:
        _CHECK_FINITE = old


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce ``grad`` back to ``shape`` after trailing-dim broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """A node on the gradient tape: value, parents, backward rule, grad."""

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward", "_grad_owned")

    def __init__(
        self,
        data: TensorLike,
        requires_grad: bool = False,
        dtype=None,
        op: str = "leaf",
        _parents: tuple = (),
        _backward: Optional[Callable[[np.ndarray], None]] = None,
    ):
        if isinstance(data, Tensor):
            data = data.data
        if (
            isinstance(data, (np.ndarray, np.generic))
            and dtype is None
            and data.dtype in (np.dtype(np.float32), np.dtype(np.float64))
        ):
            arr = np.asarray(data)
        else:
            arr = np.asarray(data, dtype=dtype or _DEFAULT_DTYPE)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self._grad_owned = True
        self.requires_grad = requires_grad
        self.op = op
        self._parents = _parents
        self._backward = _backward

    # ------------------------------------------------------------- basics
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        return f"Tensor(op={self.op!r}, shape={self.shape}, dtype={self.data.dtype})"

    def item(self) -> float:
        return float(self.data.item())

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray, own: bool = False) -> None:
        """Add ``g`` into the gradient buffer.

        The first contribution is kept by reference; ``own`` marks arrays
        the caller will not reuse, so a borrowed first contribution is
        only materialized when a second consumer accumulates into it.
        """
        if self.grad is None:
            if g.shape != self.data.shape:
                g = np.broadcast_to(g, self.data.shape)
                own = False
            self.grad = g
            self._grad_owned = own and g.dtype == self.data.dtype
        elif self._grad_owned:
            self.grad += g
        else:
            self.grad = self.grad + g
            self._grad_owned = True

    # ----------------------------------------------------------- backward
    def backward(self, seed: Optional[np.ndarray] = None) -> None:
        """Reverse pass from this tensor; visits each node exactly once."""
        if seed is None:
            if self.size != 1:
                raise ValueError("backward() without seed requires a scalar tensor")
            seed = np.ones_like(self.data)
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.asarray(seed, dtype=self.data.dtype).reshape(self.data.shape)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # --------------------------------------------------------- op helpers
    @staticmethod
    def _lift(x: TensorLike, like: Optional["Tensor"] = None) -> "Tensor":
        if isinstance(x, Tensor):
            return x
        dtype = like.data.dtype if like is not None else None
        return Tensor(np.asarray(x, dtype=dtype))

    @staticmethod
    def _make(data: np.ndarray, op: str, parents: tuple, backward) -> "Tensor":
        if _CHECK_FINITE and not np.all(np.isfinite(data)):
            raise FloatingPointError(f"non-finite values produced by op {op!r}")
        track = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        if not track:
            return Tensor(data, op=op)
        out = Tensor(data, requires_grad=True, op=op, _parents=parents, _backward=None)
        out._backward = backward(out)
        return out

    # -------------------------------------------------------- elementwise
    def __add__(self, other: TensorLike) -> "Tensor":
        a, b = self, self._lift(other, self)
        data = a.data + b.data

        def bk(out):
            def run(g):
                if a.requires_grad:
                    gg = _unbroadcast(g, a.shape)
                    a._accumulate(gg, own=gg is not g)
                if b.requires_grad:
                    gg = _unbroadcast(g, b.shape)
                    b._accumulate(gg, own=gg is not g)
            return run

        return self._make(data, "add", (a, b), bk)

    __radd__ = __add__

    def __sub__(self, other: TensorLike) -> "Tensor":
        a, b = self, self._lift(other, self)
        data = a.data - b.data

        def bk(out):
            def run(g):
                if a.requires_grad:
                    gg = _unbroadcast(g, a.shape)
                    a._accumulate(gg, own=gg is not g)
                if b.requires_grad:
                    b._accumulate(_unbroadcast(-g, b.shape), own=True)
            return run

        return self._make(data, "sub", (a, b), bk)

    def __rsub__(self, other: TensorLike) -> "Tensor":
        return self._lift(other, self).__sub__(self)

    def __mul__(self, other: TensorLike) -> "Tensor":
        a, b = self, self._lift(other, self)
        data = a.data * b.data

        def bk(out):
            def run(g):
                if a.requires_grad:
                    a._accumulate(_unbroadcast(g * b.data, a.shape), own=True)
                if b.requires_grad:
                    b._accumulate(_unbroadcast(g * a.data, b.shape), own=True)
            return run

        return self._make(data, "mul", (a, b), bk)

    __rmul__ = __mul__

    def __truediv__(self, other: TensorLike) -> "Tensor":
        a, b = self, self._lift(other, self)
        if np.any(b.data == 0):
            raise ZeroDivisionError("division by zero operand")
        data = a.data / b.data

        def bk(out):
            def run(g):
                if a.requires_grad:
                    a._accumulate(_unbroadcast(g / b.data, a.shape), own=True)
                if b.requires_grad:
                    b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape), own=True)
            return run

        return self._make(data, "div", (a, b), bk)

    def __rtruediv__(self, other: TensorLike) -> "Tensor":
        return self._lift(other, self).__truediv__(self)

    def __neg__(self) -> "Tensor":
        a = self
        data = -a.data

        def bk(out):
            def run(g):
                if a.requires_grad:
                    a._accumulate(-g, own=True)
            return run

        return self._make(data, "neg", (a,), bk)

    def exp(self) -> "Tensor":
        a = self
        data = np.exp(a.data)

        def bk(out):
            def run(g):
                if a.requires_grad:
                    a._accumulate(g * out.data, own=True)
            return run

        return self._make(data, "exp", (a,), bk)

    def log(self) -> "Tensor":
        a = self
        if np.any(a.data <= 0):
            raise ValueError("log of non-positive operand")
        data = np.log(a.data)

        def bk(out):
            def run(g):
                if a.requires_grad:
                    a._accumulate(g / a.data, own=True)
            return run

        return self._make(data, "log", (a,), bk)

    def sin(self) -> "Tensor":
        a = self
        data = np.sin(a.data)

        def bk(out):
            def run(g):
                if a.requires_grad:
                    a._accumulate(g * np.cos(a.data), own=True)
            return run

        return self._make(data, "sin", (a,), bk)

    def cos(self) -> "Tensor":
        a = self
        data = np.cos(a.data)

        def bk(out):
            def run(g):
                if a.requires_grad:
                    a._accumulate(-g * np.sin(a.data), own=True)
            return run

        return self._make(data, "cos", (a,), bk)

    def sqrt(self) -> "Tensor":
        a = self
        if np.any(a.data < 0):
            raise ValueError("sqrt of negative operand")
        data = np.sqrt(a.data)

        def bk(out):
            def run(g):
                if a.requires_grad:
                    a._accumulate(g * 0.5 / out.data, own=True)
            return run

        return self._make(data, "sqrt", (a,), bk)

    def relu(self) -> "Tensor":
        a = self
        data = np.maximum(a.data, 0)

        def bk(out):
            def run(g):
                if a.requires_grad:
                    a._accumulate(g * (a.data > 0), own=True)
            return run

        return self._make(data, "relu", (a,), bk)

    def softplus(self) -> "Tensor":
        a = self
        data = np.logaddexp(0.0, a.data)

        def bk(out):
            def run(g):
                if a.requires_grad:
                    a._accumulate(g * _sigmoid(a.data), own=True)
            return run

        return self._make(data, "softplus", (a,), bk)

    def sigmoid(self) -> "Tensor":
        a = self
        data = _sigmoid(a.data)

        def bk(out):
            def run(g):
                if a.requires_grad:
                    a._accumulate(g * out.data * (1.0 - out.data), own=True)
            return run

        return self._make(data, "sigmoid", (a,), bk)

    def clamp(self, lo: Optional[float] = None, hi: Optional[float] = None) -> "Tensor":
        a = self
        data = np.clip(a.data, lo, hi)

        def bk(out):
            def run(g):
                if a.requires_grad:
                    mask = np.ones_like(a.data, dtype=bool)
                    if lo is not None:
                        mask &= a.data >= lo
                    if hi is not None:
                        mask &= a.data <= hi
                    a._accumulate(g * mask, own=True)
            return run

        return self._make(data, "clamp", (a,), bk)

    # ------------------------------------------------------------- matmul
    def __matmul__(self, other: TensorLike) -> "Tensor":
        a, b = self, self._lift(other, self)
        if a.ndim != 2 or b.ndim != 2:
            raise ValueError("matmul expects 2-D tensors")
        if a.shape[1] != b.shape[0]:
            raise ValueError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
        data = a.data @ b.data

        def bk(out):
            def run(g):
                if a.requires_grad:
                    a._accumulate(g @ b.data.T, own=True)
                if b.requires_grad:
                    b._accumulate(a.data.T @ g, own=True)
            return run

        return self._make(data, "matmul", (a, b), bk)

    # --------------------------------------------------------- reductions
    def sum(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        a = self
        data = a.data.sum(axis=axis, keepdims=keepdims)

        def bk(out):
            def run(g):
                if a.requires_grad:
                    gg = g
                    if axis is not None and not keepdims:
                        gg = np.expand_dims(gg, axis)
                    a._accumulate(np.broadcast_to(gg, a.shape).copy(), own=True)
            return run

        return self._make(data, "sum", (a,), bk)

    def mean(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        a = self
        n = a.size if axis is None else a.shape[axis]
        if n == 0:
            raise ValueError("mean over empty axis")
        data = a.data.mean(axis=axis, keepdims=keepdims)

        def bk(out):
            def run(g):
                if a.requires_grad:
                    gg = g
                    if axis is not None and not keepdims:
                        gg = np.expand_dims(gg, axis)
                    a._accumulate(np.broadcast_to(gg, a.shape) / n, own=True)
            return run

        return self._make(data, "mean", (a,), bk)

    def max(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        """Max reduction; backward routes to the first argmax (lowest index)."""
        a = self
        if a.size == 0 or (axis is not None and a.shape[axis] == 0):
            raise ValueError("max over empty axis")
        data = a.data.max(axis=axis, keepdims=keepdims)

        def bk(out):
            def run(g):
                if not a.requires_grad:
                    return
                mask = np.zeros_like(a.data)
                if axis is None:
                    idx = np.unravel_index(np.argmax(a.data), a.shape)
                    mask[idx] = 1.0
                    a._accumulate(mask * g.reshape(()), own=True)
                else:
                    idx = np.argmax(a.data, axis=axis)
                    np.put_along_axis(mask, np.expand_dims(idx, axis), 1.0, axis=axis)
                    gg = g
                    if not keepdims:
                        gg = np.expand_dims(gg, axis)
                    a._accumulate(mask * gg, own=True)
            return run

        return self._make(data, "max", (a,), bk)

    def cumsum(self, axis: int) -> "Tensor":
        a = self
        data = np.cumsum(a.data, axis=axis)

        def bk(out):
            def run(g):
                if a.requires_grad:
                    rev = np.flip(np.cumsum(np.flip(g, axis=axis), axis=axis), axis=axis)
                    a._accumulate(rev, own=True)
            return run

        return self._make(data, "cumsum", (a,), bk)

    # ------------------------------------------------------------ reshape
    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        data = a.data.reshape(shape)

        def bk(out):
            def run(g):
                if a.requires_grad:
                    a._accumulate(g.reshape(a.shape))
            return run

        return self._make(data, "reshape", (a,), bk)

    def broadcast_to(self, shape: tuple) -> "Tensor":
        a = self
        data = np.broadcast_to(a.data, shape).copy()

        def bk(out):
            def run(g):
                if a.requires_grad:
                    gg = _unbroadcast(g, a.shape)
                    a._accumulate(gg, own=gg is not g)
            return run

        return self._make(data, "broadcast_to", (a,), bk)

    def __getitem__(self, key) -> "Tensor":
        a = self
        data = a.data[key]
        if np.isscalar(data) or data.ndim == 0:
            data = np.asarray(data)

        def bk(out):
            def run(g):
                if a.requires_grad:
                    full = np.zeros_like(a.data)
                    full[key] = g
                    a._accumulate(full, own=True)
            return run

        return self._make(data, "getitem", (a,), bk)

    # --------------------------------------------------------- conv prep
    def unfold2d(self, kh: int, kw: int, stride: int = 1, pad: int = 0) -> "Tensor":
        """im2col on a [C, H, W] tensor -> [C*kh*kw, OH*OW] (zero padding)."""
        a = self
        if a.ndim != 3:
            raise ValueError("unfold2d expects a [C, H, W] tensor")
        c, h, w = a.shape
        hp, wp = h + 2 * pad, w + 2 * pad
        oh = (hp - kh) // stride + 1
        ow = (wp - kw) // stride + 1
        if oh < 1 or ow < 1:
            raise ValueError("unfold2d: input smaller than kernel footprint")
        x = a.data
        if pad:
            x = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
        win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(1, 2))
        win = win[:, ::stride, ::stride]  # [C, OH, OW, kh, kw]
        data = win.transpose(0, 3, 4, 1, 2).reshape(c * kh * kw, oh * ow).copy()

        def bk(out):
            def run(g):
                if not a.requires_grad:
                    return
                gg = g.reshape(c, kh, kw, oh, ow)
                gpad = np.zeros((c, hp, wp), dtype=a.data.dtype)
                for i in range(kh):
                    for j in range(kw):
                        gpad[:, i : i + stride * oh : stride, j : j + stride * ow : stride] += gg[:, i, j]
                if pad:
                    gpad = gpad[:, pad : pad + h, pad : pad + w]
                a._accumulate(gpad, own=True)
            return run

        return self._make(data, "unfold2d", (a,), bk)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def tensor(data: TensorLike, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    parts = list(tensors)
    if not parts:
        raise ValueError("concat of empty sequence")
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bk(out):
        def run(g):
            for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
                if p.requires_grad:
                    sl = [slice(None)] * g.ndim
                    sl[axis] = slice(lo, hi)
                    p._accumulate(g[tuple(sl)])
        return run

    return Tensor._make(data, "concat", tuple(parts), bk)
