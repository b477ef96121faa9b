"""Minimal dense tensor with reverse-mode automatic differentiation.

Every tensor holds a float64 numpy array. Operations on tensors that require
gradients record their parents and a backward closure; :meth:`Tensor.backward`
and :func:`grad` walk that record in reverse topological order.

A forward result containing NaN or Inf raises :class:`NonFiniteError`.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

from . import fft as _fft


class NonFiniteError(FloatingPointError):
    """A forward operation produced NaN or Inf."""


class GraphConsumedError(RuntimeError):
    """Backward was called through a graph that was already released."""


_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    prev = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __array_priority__ = 100.0
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op", "_consumed")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward: Callable | None = None
        self._op = ""
        self._consumed = False

    # -- basic protocol ----------------------------------------------------
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

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- operators ---------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)

    # -- method forms ------------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def var(self, axis=None, keepdims=False):
        return var(self, axis, keepdims)

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

    def backward(self, retain_graph: bool = False) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf needing it."""
        if self.data.size != 1:
            raise ValueError("backward() needs a scalar tensor")
        grads = _propagate(self, retain_graph)
        for node, g in grads.items():
            if node._backward is None and not node._consumed and not node._parents:
                node.grad = g.copy() if node.grad is None else node.grad + g


# ---------------------------------------------------------------------------
# graph machinery
# ---------------------------------------------------------------------------

def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _finite(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite output from '{op}'")
    return arr


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = _finite(np.asarray(data, dtype=np.float64), op)
    out.grad = None
    out._op = op
    out._consumed = False
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
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


def _propagate(root: Tensor, retain_graph: bool) -> dict:
    if root._consumed:
        raise GraphConsumedError("backward through a graph that was already consumed")
    if not root.requires_grad:
        raise RuntimeError("tensor does not require grad")
    order = _toposort(root)
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    nodes: dict[int, Tensor] = {}
    for node in reversed(order):
        nodes[id(node)] = node
        g = grads.get(id(node))
        if node._backward is None:
            if node._consumed:
                raise GraphConsumedError("backward through a graph that was already consumed")
            continue
        if g is None:
            continue
        pgrads = node._backward(g)
        for p, pg in zip(node._parents, pgrads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    if not retain_graph:
        for node in order:
            if node._backward is not None:
                node._backward = None
                node._parents = ()
                node._consumed = True
    return {nodes[k]: v for k, v in grads.items() if k in nodes}


def grad(output: Tensor, inputs: Sequence[Tensor], retain_graph: bool = False) -> list[np.ndarray]:
    """Gradients of a scalar ``output`` w.r.t. ``inputs`` without touching ``.grad``."""
    if output.data.size != 1:
        raise ValueError("grad() needs a scalar output")
    table = _propagate(output, retain_graph)
    by_id = {id(k): v for k, v in table.items()}
    return [by_id.get(id(t), np.zeros_like(t.data)) for t in inputs]


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


def _broadcast_shape(a: Tensor, b: Tensor) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}") from exc


# ---------------------------------------------------------------------------
# binary elementwise
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
                 "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data

    def back(g):
        gb = -g * out / b.data if b.requires_grad else None
        return (_unbroadcast(g / b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(gb, b.shape) if gb is not None else None)

    return _make(out, (a, b), back, "div")


def maximum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    take_a = a.data >= b.data
    return _make(np.where(take_a, a.data, b.data), (a, b),
                 lambda g: (_unbroadcast(g * take_a, a.shape), _unbroadcast(g * ~take_a, b.shape)),
                 "maximum")


# ---------------------------------------------------------------------------
# unary elementwise
# ---------------------------------------------------------------------------

def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    p = float(p)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data ** p
    return _make(out, (a,), lambda g: (g * p * a.data ** (p - 1.0),), "pow")


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return _make(out, (a,), lambda g: (g / a.data,), "log")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(invalid="ignore"):
        out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (0.5 * g / out,), "sqrt")


def absolute(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def silu(a) -> Tensor:
    a = as_tensor(a)
    s = _sigmoid(a.data)
    return _make(a.data * s, (a,), lambda g: (g * s * (1.0 + a.data * (1.0 - s)),), "silu")


def elu(a) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0
    em1 = np.expm1(np.minimum(a.data, 0.0))
    return _make(np.where(pos, a.data, em1), (a,),
                 lambda g: (g * np.where(pos, 1.0, em1 + 1.0),), "elu")


def softplus(a) -> Tensor:
    a = as_tensor(a)
    out = np.log1p(np.exp(-np.abs(a.data))) + np.maximum(a.data, 0.0)
    return _make(out, (a,), lambda g: (g * _sigmoid(a.data),), "softplus")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def cos(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),), "cos")


def sin(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),), "sin")


def asinh(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.arcsinh(a.data), (a,), lambda g: (g / np.sqrt(1.0 + a.data ** 2),), "asinh")


def clamp(a, lo: float | None = None, hi: float | None = None) -> Tensor:
    a = as_tensor(a)
    lo_ = -np.inf if lo is None else lo
    hi_ = np.inf if hi is None else hi
    inside = (a.data >= lo_) & (a.data <= hi_)
    return _make(np.clip(a.data, lo_, hi_), (a,), lambda g: (g * inside,), "clamp")


_ELEMENTWISE = {
    "add": add, "sub": sub, "mul": mul, "div": div,
    "relu": relu, "silu": silu, "elu": elu, "tanh": tanh, "sigmoid": sigmoid,
    "exp": exp, "cos": cos, "neg": neg,
}


def elementwise(kind: str, a, b=None, lo: float | None = None, hi: float | None = None) -> Tensor:
    """Dispatch by name; ``clamp`` takes ``lo``/``hi``, binary kinds take ``b``."""
    if kind == "clamp":
        return clamp(a, lo, hi)
    fn = _ELEMENTWISE.get(kind)
    if fn is None:
        raise ValueError(f"unknown elementwise op {kind!r}")
    if kind in ("add", "sub", "mul", "div"):
        if b is None:
            raise ValueError(f"{kind} needs two operands")
        return fn(a, b)
    return fn(a)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(ax % ndim for ax in axis))


def _expand_back(g: np.ndarray, shape: tuple, axes: tuple, keepdims: bool) -> np.ndarray:
    if not keepdims:
        for ax in axes:
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)
    return _make(out, (a,), lambda g: (_expand_back(g, a.shape, axes, keepdims),), "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    n = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    if n == 0:
        raise ValueError("mean over an empty axis")
    out = a.data.mean(axis=axes, keepdims=keepdims)
    return _make(out, (a,), lambda g: (_expand_back(g, a.shape, axes, keepdims) / n,), "mean")


def var(a, axis=None, keepdims: bool = False) -> Tensor:
    """Population variance (denominator N)."""
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    n = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    if n == 0:
        raise ValueError("var over an empty axis")
    centred = a.data - a.data.mean(axis=axes, keepdims=True)
    out = (centred ** 2).mean(axis=axes, keepdims=keepdims)
    return _make(out, (a,),
                 lambda g: (_expand_back(g, a.shape, axes, keepdims) * (2.0 / n) * centred,), "var")


def reduce(kind: str, a, axis=None, keepdims: bool = False) -> Tensor:
    fns = {"mean": mean, "var": var, "sum": tsum}
    if kind not in fns:
        raise ValueError(f"unknown reduction {kind!r}")
    return fns[kind](a, axis, keepdims)


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def _is_basic(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def index(a, idx) -> Tensor:
    a = as_tensor(a)
    if isinstance(idx, Tensor):
        idx = idx.data.astype(int)
    out = a.data[idx]
    basic = _is_basic(idx)

    def back(g):
        full = np.zeros_like(a.data)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _make(np.array(out, copy=True), (a,), back, "index")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in ts], axis=axis)
    return _make(out, ts, lambda g: tuple(np.split(g, splits, axis=axis)), "concat")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in ts], axis=axis)
    n = len(ts)
    return _make(out, ts,
                 lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)), "stack")


# ---------------------------------------------------------------------------
# linear algebra and composite kernels
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Batched matrix product over the last two axes (leading axes broadcast)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul needs operands with at least two axes")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul inner-dimension mismatch: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def back(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), back, "matmul")


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)
    return _make(out, (a,),
                 lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),), "softmax")


def layernorm(a, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then apply ``gain`` and ``bias``."""
    if eps <= 0:
        raise ValueError("layernorm eps must be positive")
    a, gain, bias = as_tensor(a), as_tensor(gain), as_tensor(bias)
    n = a.shape[-1]
    mu = a.data.mean(axis=-1, keepdims=True)
    centred = a.data - mu
    inv = 1.0 / np.sqrt((centred ** 2).mean(axis=-1, keepdims=True) + eps)
    xhat = centred * inv
    out = xhat * gain.data + bias.data

    def back(g):
        dxhat = g * gain.data
        dx = inv / n * (n * dxhat - dxhat.sum(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
        return (dx, _unbroadcast(g * xhat, gain.shape), _unbroadcast(g, bias.shape))

    return _make(out, (a, gain, bias), back, "layernorm")


# ---------------------------------------------------------------------------
# real FFT along the last axis
# ---------------------------------------------------------------------------

class ComplexTensor:
    """A pair of real tensors (re, im) of equal shape."""

    __slots__ = ("re", "im")

    def __init__(self, re, im):
        re, im = as_tensor(re), as_tensor(im)
        if re.shape != im.shape:
            raise ValueError(f"complex parts differ in shape: {re.shape} vs {im.shape}")
        self.re, self.im = re, im

    @property
    def shape(self):
        return self.re.shape

    def __mul__(self, other: "ComplexTensor") -> "ComplexTensor":
        return ComplexTensor(self.re * other.re - self.im * other.im,
                             self.re * other.im + self.im * other.re)

    def numpy(self) -> np.ndarray:
        return self.re.data + 1j * self.im.data


def rfft(x) -> ComplexTensor:
    """Real FFT over the last axis; returns ``n//2+1`` complex bins."""
    x = as_tensor(x)
    n = x.shape[-1]
    if n < 1:
        raise ValueError("rfft of an empty axis")
    spec = _fft.rfft(x.data)
    nf = n // 2 + 1

    def back(g):
        full = np.zeros(g.shape[1:-1] + (n,), dtype=complex)
        full[..., :nf] = g[0] - 1j * g[1]
        return (_fft.fft(full).real,)

    both = _make(np.stack([spec.real, spec.imag]), (x,), back, "rfft")
    return ComplexTensor(both[0], both[1])


def irfft(spec: ComplexTensor, n: int) -> Tensor:
    """Inverse of :func:`rfft` for a length-``n`` real signal."""
    re, im = spec.re, spec.im
    out = _fft.irfft(re.data + 1j * im.data, n)
    scale = _fft.hermitian_weights(n) / n

    def back(g):
        r = _fft.rfft(g) * scale
        return (r.real, r.imag)

    return _make(out, (re, im), back, "irfft")


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
