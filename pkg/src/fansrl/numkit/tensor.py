"""Float64 tensors with a reverse-mode tape.

Operations record onto the innermost active :class:`Tape`; outside a tape
they are plain numpy evaluations. A backward pass walks the tape once in
reverse, so each node's adjoint is complete before it is propagated.

    with Tape() as tape:
        loss = ((x @ w) ** 2).sum()
    gx, gw = grad(loss, [x, w])
"""

from __future__ import annotations

import os
import threading
from typing import Callable, Sequence

import numpy as np

from ..errors import ContractViolation, NumericalError

_state = threading.local()
_DEBUG = os.environ.get("FANSRL_DEBUG", "") == "1"


def set_debug(flag: bool) -> None:
    """Check every op output for NaN/Inf (slow)."""
    global _DEBUG
    _DEBUG = bool(flag)


def _stack() -> list:
    s = getattr(_state, "tapes", None)
    if s is None:
        s = _state.tapes = []
    return s


def active_tape() -> "Tape | None":
    s = _stack()
    return s[-1] if s else None


class Tape:
    """Append-only record of differentiable ops, in execution order."""

    def __init__(self):
        self.nodes: list[tuple["Tensor", tuple, Callable]] = []
        self._index: dict[int, int] = {}

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _stack().remove(self)

    def record(self, out: "Tensor", parents: tuple, backward: Callable) -> None:
        self._index[id(out)] = len(self.nodes)
        self.nodes.append((out, parents, backward))

    def free(self) -> None:
        self.nodes = []
        self._index = {}

    def backward(self, loss: "Tensor", params: Sequence["Tensor"], retain: bool = False):
        if loss.data.shape != ():
            raise ContractViolation(f"loss must be a scalar, got shape {loss.shape}")
        if loss.requires_grad and id(loss) not in self._index:
            raise ContractViolation("loss was not recorded on this tape (already freed?)")
        wanted = {id(p) for p in params}
        adj: dict[int, np.ndarray] = {id(loss): np.ones(())}
        start = self._index.get(id(loss), -1)
        for k in range(start, -1, -1):
            out, parents, back = self.nodes[k]
            key = id(out)
            g = adj.get(key) if key in wanted else adj.pop(key, None)
            if g is None:
                continue
            for p, gp in zip(parents, back(g)):
                if gp is None or not p.requires_grad:
                    continue
                pk = id(p)
                if pk in adj:
                    adj[pk] = adj[pk] + gp
                else:
                    adj[pk] = gp
        grads = []
        for p in params:
            g = adj.get(id(p))
            if g is None:
                g = np.zeros_like(p.data)
            elif not np.all(np.isfinite(g)):
                raise NumericalError(f"non-finite gradient for parameter {p.name or '?'}")
            grads.append(np.asarray(g, dtype=np.float64).reshape(p.data.shape))
        if not retain:
            self.free()
        return grads


def grad(loss: "Tensor", params: Sequence["Tensor"], retain: bool = False) -> list[np.ndarray]:
    """Gradients of a scalar ``loss`` w.r.t. ``params`` (zeros where untouched)."""
    tape = getattr(loss, "_tape", None) or active_tape()
    if tape is None:
        if loss.data.shape != ():
            raise ContractViolation(f"loss must be a scalar, got shape {loss.shape}")
        return [np.zeros_like(p.data) for p in params]
    return tape.backward(loss, params, retain=retain)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    nd = g.ndim - len(shape)
    if nd > 0:
        g = g.sum(axis=tuple(range(nd)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class Tensor:
    """An immutable float64 array, optionally tracked for differentiation."""

    __slots__ = ("data", "requires_grad", "name", "_tape", "__weakref__")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NumericalError(f"non-finite value in tensor {name or ''}".strip())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._tape = None

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = requires_grad
        t.name = None
        t._tape = None
        return t

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
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data, False)

    def __repr__(self) -> str:
        flag = ", requires_grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # arithmetic -------------------------------------------------------
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

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, k):
        return power(self, k)

    def __matmul__(self, o):
        return matmul(self, o)

    def __rmatmul__(self, o):
        return matmul(o, self)

    def __getitem__(self, idx):
        return index(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _op(data: np.ndarray, parents: tuple, backward: Callable) -> Tensor:
    tape = active_tape()
    need = tape is not None and any(p.requires_grad for p in parents)
    out = Tensor._wrap(data, need)
    if need:
        out._tape = tape
        tape.record(out, parents, backward)
    if _DEBUG and not np.all(np.isfinite(data)):
        raise NumericalError("non-finite value produced by an op")
    return out


# elementwise binary ---------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _op(a.data + b.data, (a, b),
               lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _op(a.data - b.data, (a, b),
               lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _op(ad * bd, (a, b),
               lambda g: (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                          _unbroadcast(g * ad, bd.shape) if b.requires_grad else None))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad / bd
    return _op(out, (a, b),
               lambda g: (_unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
                          _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None))


def minimum(a, b) -> Tensor:
    """Elementwise min; ties send the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    take_a = a.data <= b.data
    return _op(np.where(take_a, a.data, b.data), (a, b),
               lambda g: (_unbroadcast(g * take_a, a.shape),
                          _unbroadcast(g * ~take_a, b.shape)))


def where(cond, a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    cond = np.asarray(cond, dtype=bool)
    return _op(np.where(cond, a.data, b.data), (a, b),
               lambda g: (_unbroadcast(g * cond, a.shape),
                          _unbroadcast(g * ~cond, b.shape)))


# elementwise unary ----------------------------------------------------------
def neg(a) -> Tensor:
    a = as_tensor(a)
    return _op(-a.data, (a,), lambda g: (-g,))


def power(a, k: float) -> Tensor:
    a = as_tensor(a)
    k = float(k)
    ad = a.data
    return _op(ad ** k, (a,), lambda g: (g * k * ad ** (k - 1.0),))


def square(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _op(ad * ad, (a,), lambda g: (2.0 * g * ad,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _op(out, (a,), lambda g: (0.5 * g / out,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _op(out, (a,), lambda g: (g * out,))


def expm1(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _op(np.expm1(ad), (a,), lambda g: (g * np.exp(ad),))


def log(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _op(np.log(ad), (a,), lambda g: (g / ad,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _op(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = 0.5 * (np.tanh(0.5 * a.data) + 1.0)
    return _op(out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0
    return _op(np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    out = np.logaddexp(0.0, ad)
    return _op(out, (a,), lambda g: (g * 0.5 * (np.tanh(0.5 * ad) + 1.0),))


def tabs(a) -> Tensor:
    """|a|; the subgradient at 0 is taken as 0."""
    a = as_tensor(a)
    sgn = np.sign(a.data)
    return _op(np.abs(a.data), (a,), lambda g: (g * sgn,))


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient passes only where the input is inside."""
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _op(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


# reductions and shape ops ---------------------------------------------------
def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _op(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), back)


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / float(n))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _op(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    inv = None if axes is None else tuple(np.argsort(axes))
    return _op(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def swapaxes(a, i: int, j: int) -> Tensor:
    a = as_tensor(a)
    return _op(np.swapaxes(a.data, i, j), (a,), lambda g: (np.swapaxes(g, i, j),))


def _is_advanced(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def index(a, idx) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    adv = _is_advanced(idx)

    def back(g):
        z = np.zeros(shape)
        if adv:
            np.add.at(z, idx, g)
        else:
            z[idx] += g
        return (z,)

    return _op(a.data[idx], (a,), back)


def take(a, idx, axis: int = 0) -> Tensor:
    """Gather along ``axis`` with an integer index array (repeats allowed)."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    shape = a.shape

    def back(g):
        z = np.zeros(shape)
        zm = np.moveaxis(z, axis, 0)
        np.add.at(zm, idx.ravel(), np.moveaxis(g, axis, 0).reshape((-1,) + zm.shape[1:]))
        return (z,)

    return _op(np.take(a.data, idx, axis=axis), (a,), back)


def concat(xs: Sequence, axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    cuts = np.cumsum(sizes)[:-1]
    return _op(np.concatenate([x.data for x in xs], axis=axis), tuple(xs),
               lambda g: tuple(np.split(g, cuts, axis=axis)))


def stack(xs: Sequence, axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    n = len(xs)
    return _op(np.stack([x.data for x in xs], axis=axis), tuple(xs),
               lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)))


def matmul(a, b) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading dims."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ContractViolation("matmul operands must be at least 2-D")
    if a.shape[-1] != b.shape[-2]:
        raise ContractViolation(f"matmul shape mismatch {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def back(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return _op(ad @ bd, (a, b), back)


def custom(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    """Register a fused op with a hand-written backward (used by lstm_sequence)."""
    return _op(data, tuple(parents), backward)
