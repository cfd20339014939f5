"""Dense float64 tensors with tape-based reverse-mode differentiation.

Recording is explicit: operations are taped only inside an active
:class:`Tape` and only when at least one operand tracks gradients.
Outside a tape every op is a plain numpy computation, which is what
evaluation and inference use.

    >>> w = Tensor(np.ones((2, 2)), requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = tsum(matmul(w, w))
    >>> tape.backward(loss)

Gradients accumulate into the ``grad`` buffer of leaf tensors until the
caller zeroes them.
"""
from __future__ import annotations

import threading
import weakref

import numpy as np

from . import kernels
from .errors import ContractError, DimensionError, NonFiniteError

__all__ = [
    "Tensor", "Tape", "backward", "no_grad", "set_finite_checks",
    "add", "sub", "mul", "scale", "neg", "power", "matmul", "relu", "tanh",
    "sigmoid", "softmax_rows", "tsum", "mean", "reshape", "transpose",
    "swapaxes", "getitem", "concat", "stack", "conv1d", "maxpool1d",
    "dropout", "elementwise", "as_tensor",
]

_state = threading.local()
_CHECK_FINITE = True


def set_finite_checks(enabled: bool) -> None:
    """Toggle the per-op NaN/Inf scan (on by default)."""
    global _CHECK_FINITE
    _CHECK_FINITE = bool(enabled)


def _stack():
    s = getattr(_state, "tapes", None)
    if s is None:
        s = _state.tapes = []
    return s


def _active_tape():
    if getattr(_state, "paused", 0):
        return None
    s = _stack()
    return s[-1] if s else None


class no_grad:
    """Context manager that suspends recording on this thread."""

    def __enter__(self):
        _state.paused = getattr(_state, "paused", 0) + 1
        return self

    def __exit__(self, *exc):
        _state.paused -= 1
        return False


class _Node:
    __slots__ = ("op", "parents", "fn", "index", "tape", "__weakref__")

    def __init__(self, op, parents, fn, index, tape):
        self.op = op
        self.parents = parents
        self.fn = fn
        self.index = index
        self.tape = tape


class Tensor:
    """A float64 array plus an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_node", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.array(data, dtype=np.float64)
        if _CHECK_FINITE and not np.isfinite(arr).all():
            raise NonFiniteError(f"non-finite value in tensor {name or ''}".rstrip())
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._node = None

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
    def is_leaf(self):
        return self._node is None

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None if self.grad is None else np.zeros_like(self.data)

    def backward(self):
        backward(self)

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        flag = " requires_grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{label}{flag})"

    # operators delegate to the module functions below
    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def T(self):
        return swapaxes(self, -1, -2)


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; tapes nest, the innermost one records.
    Nodes are held weakly: a result keeps its own history alive, so
    discarded intermediates free their buffers without a gc pass.
    """

    def __init__(self):
        self._refs = []
        self._owner = None

    def __enter__(self):
        self._owner = threading.get_ident()
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        s = _stack()
        if s and s[-1] is self:
            s.pop()
        return False

    def __len__(self):
        return len(self._refs)

    @property
    def nodes(self):
        """Recorded nodes still reachable from a live result, in record order."""
        return [n for n in (r() for r in self._refs) if n is not None]

    def record(self, op, out, parents, fn):
        if self._owner is not None and self._owner != threading.get_ident():
            raise ContractError("a tape may only be used from the thread that opened it")
        node = _Node(op, parents, fn, len(self._refs), self)
        self._refs.append(weakref.ref(node))
        out._node = node
        out.requires_grad = True

    def backward(self, loss):
        if not isinstance(loss, Tensor) or loss.data.size != 1 or loss.ndim > 1:
            raise ContractError("backward needs a scalar loss tensor")
        node = loss._node
        if node is None or node.tape is not self:
            raise ContractError("loss was not produced under this tape")
        pending = {node.index: np.ones_like(loss.data)}
        for ref in reversed(self._refs[: node.index + 1]):
            nd = ref()
            if nd is None:
                continue
            g = pending.pop(nd.index, None)
            if g is None:
                continue
            grads = nd.fn(g)
            for parent, pg in zip(nd.parents, grads):
                if pg is None or not parent.requires_grad:
                    continue
                if parent._node is None:
                    if parent.grad is None:
                        parent.grad = np.zeros_like(parent.data)
                    parent.grad += pg
                else:
                    j = parent._node.index
                    if j in pending:
                        pending[j] = pending[j] + pg
                    else:
                        pending[j] = pg


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every tracked leaf reachable from ``loss``."""
    if not isinstance(loss, Tensor):
        raise ContractError("backward needs a Tensor")
    if loss._node is None:
        raise ContractError("loss was not produced under an active tape")
    loss._node.tape.backward(loss)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(op, data, parents, fn):
    if _CHECK_FINITE and not np.isfinite(data).all():
        raise NonFiniteError(f"{op} produced a non-finite value")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = False
    out.name = None
    out._node = None
    tape = _active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        tape.record(op, out, parents, fn)
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_check(op, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ----------------------------------------------------------------- arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("add", a, b)

    def fn(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(g, b.shape) if b.requires_grad else None)
    return _result("add", a.data + b.data, (a, b), fn)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("sub", a, b)

    def fn(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(-g, b.shape) if b.requires_grad else None)
    return _result("sub", a.data - b.data, (a, b), fn)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("mul", a, b)

    def fn(g):
        return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)
    return _result("mul", a.data * b.data, (a, b), fn)


def scale(x, c: float) -> Tensor:
    x = as_tensor(x)
    c = float(c)
    return _result("scale", x.data * c, (x,), lambda g: (g * c,))


def neg(x) -> Tensor:
    return scale(x, -1.0)


def power(x, p: float) -> Tensor:
    """Elementwise ``x**p``; callers keep ``x`` positive for fractional ``p``."""
    x = as_tensor(x)
    p = float(p)
    with np.errstate(divide="ignore", invalid="ignore"):
        y = x.data ** p
    return _result("power", y, (x,), lambda g: (g * p * x.data ** (p - 1.0),))


# -------------------------------------------------------------------- matmul

def _swap(a):
    return np.swapaxes(a, -1, -2)


def _mm(a, b):
    if a.ndim == 2 and b.ndim == 2:
        return a @ b
    if b.ndim == 2:
        return (a.reshape(-1, a.shape[-1]) @ b).reshape(a.shape[:-1] + (b.shape[1],))
    if a.ndim == 2:
        return np.moveaxis(np.tensordot(a, b, axes=([1], [b.ndim - 2])), 0, -2)
    return np.matmul(a, b)


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast.

    Gradients: dL/da = g @ b^T and dL/db = a^T @ g, summed over any
    broadcast batch axes.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul batch axes differ: {a.shape} @ {b.shape}") from None

    def fn(g):
        ga = gb = None
        if a.requires_grad:
            if a.ndim == 2 and b.ndim > 2:
                ax = list(range(g.ndim - 2)) + [g.ndim - 1]
                ga = np.tensordot(g, b.data, axes=(ax, ax))
            else:
                ga = _unbroadcast(_mm(g, _swap(b.data)), a.shape)
        if b.requires_grad:
            if b.ndim == 2 and a.ndim > 2:
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(_mm(_swap(a.data), g), b.shape)
        return ga, gb
    return _result("matmul", _mm(a.data, b.data), (a, b), fn)


# --------------------------------------------------------------- activations

def relu(x) -> Tensor:
    """max(x, 0); the subgradient at exactly 0 is taken as 0."""
    x = as_tensor(x)
    pos = x.data > 0
    return _result("relu", np.where(pos, x.data, 0.0), (x,), lambda g: (g * pos,))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _result("tanh", y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    # split by sign so exp never overflows
    d = x.data
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _result("sigmoid", y, (x,), lambda g: (g * y * (1.0 - y),))


def softmax_rows(x) -> Tensor:
    """Softmax along the last axis with per-row max subtraction."""
    x = as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def fn(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)
    return _result("softmax", y, (x,), fn)


_UNARY = {"relu": relu, "tanh": tanh, "sigmoid": sigmoid}
_BINARY = {"add": add, "mul": mul, "sub": sub}


def elementwise(fn: str, x, other=None) -> Tensor:
    """Name-dispatched pointwise op: relu, tanh, sigmoid, add, sub, mul, scale."""
    if fn in _UNARY:
        return _UNARY[fn](x)
    if fn in _BINARY:
        if other is None:
            raise ContractError(f"{fn} needs a second operand")
        return _BINARY[fn](x, other)
    if fn == "scale":
        return scale(x, other)
    raise ContractError(f"unknown elementwise function {fn!r}")


# ----------------------------------------------------------------- reductions

def tsum(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    y = np.asarray(x.data.sum(axis=axis, keepdims=keepdims))

    def fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)
    return _result("sum", y, (x,), fn)


def mean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    if axis is None:
        count = x.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([x.shape[a] for a in axes]))
    return scale(tsum(x, axis=axis, keepdims=keepdims), 1.0 / count)


# -------------------------------------------------------------- shape moves

def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        y = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {x.shape} into {shape}") from None
    return _result("reshape", y, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    y = np.ascontiguousarray(x.data.transpose(axes))
    return _result("transpose", y, (x,), lambda g: (g.transpose(inv),))


def swapaxes(x, a: int, b: int) -> Tensor:
    x = as_tensor(x)
    axes = list(range(x.ndim))
    axes[a], axes[b] = axes[b], axes[a]
    return transpose(x, axes)


def _is_basic(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis
               for i in items)


def getitem(x, idx) -> Tensor:
    x = as_tensor(x)
    basic = _is_basic(idx)
    y = np.array(x.data[idx])

    def fn(g):
        gx = np.zeros_like(x.data)
        if basic:
            gx[idx] += g
        else:
            np.add.at(gx, idx, g)
        return (gx,)
    return _result("getitem", y, (x,), fn)


def concat(xs, axis=0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    try:
        y = np.concatenate([x.data for x in xs], axis=axis)
    except ValueError as e:
        raise DimensionError(f"concat: {e}") from None
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def fn(g):
        return tuple(np.split(g, bounds, axis=axis))
    return _result("concat", y, tuple(xs), fn)


def stack(xs, axis=0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    try:
        y = np.stack([x.data for x in xs], axis=axis)
    except ValueError as e:
        raise DimensionError(f"stack: {e}") from None

    def fn(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(xs)))
    return _result("stack", y, tuple(xs), fn)


# ------------------------------------------------------------- convolutions

def conv1d(x, kernel, bias=None, stride=1, pad_left=0, pad_right=0, dilation=1) -> Tensor:
    """1-D cross-correlation along the last axis with zero padding.

    ``x`` is (C_in, L) or batched (B, C_in, L); ``kernel`` is (C_out, C_in, k).
    Output length is floor((L + pad_left + pad_right - span) / stride) + 1
    with span = (k - 1) * dilation + 1.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    bias = None if bias is None else as_tensor(bias)
    unbatched = x.ndim == 2
    xd = x.data[None] if unbatched else x.data
    if xd.ndim != 3 or kernel.ndim != 3:
        raise DimensionError(f"conv1d expects x (B,C,L) and kernel (O,C,k); got {x.shape}, {kernel.shape}")
    if xd.shape[1] != kernel.shape[1]:
        raise DimensionError(f"conv1d channel mismatch: x {x.shape} vs kernel {kernel.shape}")
    if stride < 1 or dilation < 1 or pad_left < 0 or pad_right < 0:
        raise DimensionError("conv1d needs stride, dilation >= 1 and non-negative padding")
    length = xd.shape[2]
    span = (kernel.shape[2] - 1) * dilation + 1
    if span > length + pad_left + pad_right:
        raise DimensionError(
            f"conv1d kernel span {span} exceeds padded length {length + pad_left + pad_right} (x {x.shape})")
    if bias is not None and bias.shape != (kernel.shape[0],):
        raise DimensionError(f"conv1d bias shape {bias.shape} != ({kernel.shape[0]},)")
    xpad = np.pad(xd, ((0, 0), (0, 0), (pad_left, pad_right))) if pad_left or pad_right else xd
    y = kernels.conv1d_forward(xpad, kernel.data, stride, dilation)
    if bias is not None:
        y += bias.data[None, :, None]
    if unbatched:
        y = y[0]

    def fn(g):
        gb_ = g[None] if unbatched else g
        need = x.requires_grad or kernel.requires_grad
        gx = gw = gbias = None
        if need:
            gxpad, gw = kernels.conv1d_backward(gb_, xpad, kernel.data, stride, dilation)
            if x.requires_grad:
                gx = gxpad[:, :, pad_left:pad_left + length]
                gx = gx[0] if unbatched else gx
            if not kernel.requires_grad:
                gw = None
        if bias is not None and bias.requires_grad:
            gbias = gb_.sum(axis=(0, 2))
        return gx, gw, gbias
    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _result("conv1d", y, parents, fn)


def maxpool1d(x, window=2, stride=None) -> Tensor:
    """Max pooling along the last axis, no padding; the first maximum wins ties."""
    x = as_tensor(x)
    stride = window if stride is None else stride
    unbatched = x.ndim == 2
    xd = x.data[None] if unbatched else x.data
    if xd.ndim != 3 or xd.shape[2] < window:
        raise DimensionError(f"maxpool1d window {window} does not fit input {x.shape}")
    y, pos = kernels.maxpool1d_forward(xd, window, stride)
    length = xd.shape[2]

    def fn(g):
        gx = kernels.maxpool1d_backward(g[None] if unbatched else g, pos, length)
        return (gx[0] if unbatched else gx,)
    return _result("maxpool1d", y[0] if unbatched else y, (x,), fn)


def dropout(x, p: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout; the identity when not training or p == 0."""
    x = as_tensor(x)
    if not training or p <= 0.0:
        return x
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return mul(x, Tensor(keep))
