"""Float64 tensors with a reverse-mode tape.

Every differentiable operation returns a new :class:`Tensor` that remembers its
parents and a closure mapping the upstream gradient to one gradient per parent.
The tape is rebuilt on every forward pass; :func:`backward` walks it once in
reverse topological order.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Iterator, Optional, Sequence

import numpy as np
from scipy.special import erf, expit

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_SQRT_HALF = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327

_grad_enabled = True


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an operation."""

    def __init__(self, op: str, *shapes: tuple) -> None:
        listed = " and ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {listed}")
        self.op = op
        self.shapes = shapes


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable tape recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """Dense float64 array plus the bookkeeping needed for backprop."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_op")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None) -> None:
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Optional[BackwardFn] = None
        self._op = "leaf"

    # -- metadata ---------------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self._op}{tag})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- arithmetic -------------------------------------------------------
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
        return neg(self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    # -- method sugar -----------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def flip(self, axis: int):
        return flip(self, axis)

    def exp(self):
        return exp(self)

    def backward(self) -> None:
        backward(self)


class Param(Tensor):
    """A named leaf tensor whose gradient is accumulated by :func:`backward`."""

    __slots__ = ()

    def __init__(self, data, name: str = "") -> None:
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True, name=name)
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Param({self.name!r}, shape={self.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def custom_op(data: np.ndarray, parents: Sequence[Tensor], backward_fn: BackwardFn,
              op: str = "custom") -> Tensor:
    """Wrap ``data`` as the output of a differentiable operation.

    ``backward_fn`` receives the upstream gradient (shaped like ``data``) and
    returns one gradient per parent, or ``None`` for parents it skips.
    """
    out = Tensor(data)
    out._op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(op: str, a: np.ndarray, b: np.ndarray) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# -- elementwise binary ------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a.data, b.data)
    sa, sb = a.shape, b.shape
    return custom_op(a.data + b.data, (a, b),
                     lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a.data, b.data)
    sa, sb = a.shape, b.shape
    return custom_op(a.data - b.data, (a, b),
                     lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    """Elementwise (Hadamard) product with broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a.data, b.data)
    ad, bd = a.data, b.data
    return custom_op(ad * bd, (a, b),
                     lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
                     "mul")


hadamard = mul


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a.data, b.data)
    ad, bd = a.data, b.data
    out = ad / bd
    return custom_op(out, (a, b),
                     lambda g: (_unbroadcast(g / bd, ad.shape),
                                _unbroadcast(-g * out / bd, bd.shape)), "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return custom_op(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    x = a.data
    return custom_op(x ** exponent, (a,),
                     lambda g: (g * exponent * x ** (exponent - 1),), "pow")


# -- linear algebra ----------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes, broadcasting leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape) from None
    ad, bd = a.data, b.data

    def _bw(g):
        ga = g @ np.swapaxes(bd, -1, -2) if a.requires_grad else None
        gb = np.swapaxes(ad, -1, -2) @ g if b.requires_grad else None
        return (None if ga is None else _unbroadcast(ga, ad.shape),
                None if gb is None else _unbroadcast(gb, bd.shape))

    return custom_op(ad @ bd, (a, b), _bw, "matmul")


_ROW_BLOCK = 128


def _rowwise_matmul(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    # Fixed-height GEMM blocks: BLAS picks its kernel from the block shape, so
    # every row goes through the same code path whatever the total row count.
    k = x.shape[-1]
    rows = x.reshape(-1, k)
    M = rows.shape[0]
    P = -(-M // _ROW_BLOCK) * _ROW_BLOCK
    padded = np.zeros((P, k))
    padded[:M] = rows
    out = (padded.reshape(-1, _ROW_BLOCK, k) @ w).reshape(P, -1)[:M]
    return out.reshape(*x.shape[:-1], w.shape[1])


def linear(x, w, b=None) -> Tensor:
    """``x @ w (+ b)`` for a 2-D weight, applied to every row of ``x``.

    A row's result never depends on how many other rows share the call;
    causal runs over prefixes of different lengths rely on this.
    """
    x, w = as_tensor(x), as_tensor(w)
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ShapeError("linear", x.shape, w.shape)
    xd, wd = x.data, w.data
    out = _rowwise_matmul(xd, wd)

    def _bw(g):
        gx = g @ wd.T if x.requires_grad else None
        gw = None
        if w.requires_grad:
            gw = xd.reshape(-1, xd.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return gx, gw

    y = custom_op(out, (x, w), _bw, "linear")
    if b is not None:
        y = add(y, b)
    return y


# -- shape manipulation ------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    try:
        out = np.ascontiguousarray(a.data).reshape(shape)
    except ValueError:
        raise ShapeError("reshape", src, tuple(shape)) from None
    return custom_op(out, (a,), lambda g: (g.reshape(src),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    if sorted(a_ % a.ndim for a_ in axes) != list(range(a.ndim)):
        raise ShapeError(f"transpose{axes}", a.shape)
    inv = tuple(np.argsort([a_ % a.ndim for a_ in axes]))
    out = np.ascontiguousarray(np.transpose(a.data, axes))
    return custom_op(out, (a,), lambda g: (np.transpose(g, inv),), "transpose")


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    axes = list(range(a.ndim))
    axes[ax1], axes[ax2] = axes[ax2], axes[ax1]
    return transpose(a, axes)


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    out = a.data[index]

    def _bw(g):
        full = np.zeros(src)
        np.add.at(full, index, g)
        return (full,)

    return custom_op(np.array(out, dtype=np.float64), (a,), _bw, "getitem")


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError("concat", *(t.shape for t in ts)) from None
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return custom_op(out, ts, lambda g: tuple(np.split(g, sizes, axis=axis)), "concat")


def flip(a, axis: int) -> Tensor:
    """Reverse ``a`` along ``axis``."""
    a = as_tensor(a)
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"flip(axis={axis})", a.shape)
    out = np.ascontiguousarray(np.flip(a.data, axis))
    return custom_op(out, (a,), lambda g: (np.flip(g, axis),), "flip")


# -- reductions --------------------------------------------------------------

def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def _bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return custom_op(np.asarray(out, dtype=np.float64), (a,), _bw, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return tsum(a, axis, keepdims) * (1.0 / count)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)
    return custom_op(s, (a,), lambda g: (s * (g - (g * s).sum(axis=axis, keepdims=True)),),
                     "softmax")


def l2norm(a, axis: int = -1) -> Tensor:
    """Euclidean norm along ``axis``; the subgradient at 0 is taken as 0."""
    a = as_tensor(a)
    x = a.data
    n = np.sqrt((x * x).sum(axis=axis))

    def _bw(g):
        nk = np.expand_dims(n, axis)
        safe = np.where(nk > 0, nk, 1.0)
        return (np.where(nk > 0, x / safe, 0.0) * np.expand_dims(g, axis),)

    return custom_op(n, (a,), _bw, "l2norm")


# -- elementwise unary -------------------------------------------------------

def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return custom_op(out, (a,), lambda g: (g * out,), "exp")


def expm1(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    return custom_op(np.expm1(x), (a,), lambda g: (g * np.exp(x),), "expm1")


def log(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    return custom_op(np.log(x), (a,), lambda g: (g / x,), "log")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return custom_op(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return custom_op(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def gelu(a) -> Tensor:
    """Exact GELU, ``x * Phi(x)``."""
    a = as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _SQRT_HALF))

    def _bw(g):
        return (g * (cdf + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)),)

    return custom_op(x * cdf, (a,), _bw, "gelu")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return custom_op(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid_np(x: np.ndarray) -> np.ndarray:
    return expit(x)


def softplus(a) -> Tensor:
    """``log(1 + e^x)``, evaluated without overflow."""
    a = as_tensor(a)
    x = a.data
    e = np.exp(-np.abs(x))
    out = np.maximum(x, 0.0) + np.log1p(e)

    def _bw(g):
        inv = 1.0 / (1.0 + e)
        return (g * np.where(x >= 0, inv, e * inv),)

    return custom_op(out, (a,), _bw, "softplus")


# -- reverse pass ------------------------------------------------------------

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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, grad: Optional[np.ndarray] = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    ``loss`` must be a scalar unless an explicit upstream ``grad`` is given.
    Leaves off every path keep whatever gradient they had (zero after
    ``zero_grad``).
    """
    if grad is None:
        if loss.size != 1:
            raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
        grad = np.ones_like(loss.data)
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.asarray(grad, dtype=np.float64)}
    for node in reversed(_toposort(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for p, pg in zip(node._parents, node._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            if pg.shape != p.shape:
                raise ShapeError(f"backward through {node._op}", pg.shape, p.shape)
            key = id(p)
            grads[key] = grads[key] + pg if key in grads else pg


def zero_grad(params: Iterable[Param]) -> None:
    for p in params:
        p.zero_grad()
