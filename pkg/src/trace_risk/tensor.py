"""Dense float64 tensors with an eager reverse-mode tape.

Operations executed while a :class:`Tape` is active record themselves when at
least one input needs a gradient. ``backward(loss)`` replays the tape in
reverse and writes ``dloss/dtensor`` into ``.grad`` of every trainable tensor
that took part. Outside a tape nothing is recorded, which is how inference and
finite-difference probes run.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

SELU_ALPHA = 1.6732632423543772
SELU_SCALE = 1.0507009873554805


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(ValueError):
    """A caller broke an operation's precondition."""


class ConfigError(ValueError):
    """Unknown or invalid configuration value."""


_local = threading.local()


def _tape_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class _Record:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out, inputs, backward):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered log of primitive operations for one forward pass.

    Use as a context manager; tapes are thread-local and may nest (the
    innermost one records).
    """

    def __init__(self):
        self.records: list[_Record] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def __len__(self) -> int:
        return len(self.records)

    def backward(self, loss: "Tensor") -> None:
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, Tensor] = {}
        if loss.trainable:
            leaves[id(loss)] = loss
        for rec in reversed(self.records):
            g = grads.pop(id(rec.out), None)
            if g is None:
                continue
            for parent, pg in zip(rec.inputs, rec.backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
                if parent.trainable:
                    leaves[key] = parent
        for key, t in leaves.items():
            t.grad = np.array(grads.get(key, np.zeros_like(t.data)), dtype=np.float64)


def backward(loss: "Tensor") -> None:
    """Populate ``.grad`` on the trainable tensors reachable from ``loss``."""
    tape = loss._tape
    if tape is None:
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss.trainable:
            loss.grad = np.ones_like(loss.data)
        return
    tape.backward(loss)


class Tensor:
    """Row-major float64 array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "trainable", "name", "_tape")
    __array_priority__ = 100

    def __init__(self, data, trainable: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.trainable = trainable
        self.name = name
        self._tape: Tape | None = None

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.grad = None
        t.trainable = False
        t.name = None
        t._tape = None
        return t

    @property
    def requires_grad(self) -> bool:
        return self.trainable or self._tape is not None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, trainable={self.trainable})"

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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor._wrap(np.asarray(x, dtype=np.float64))


def _make(data: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    out = Tensor._wrap(data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out._tape = tape
        tape.records.append(_Record(out, tuple(inputs), backward_fn))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


# element-wise binary ------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def bw(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * out / b.data, b.shape))

    return _make(out, (a, b), bw)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    """Matrix product, batched over leading axes like ``np.matmul``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            if b.ndim == 2 and a.ndim > 2:
                k = a.shape[-1]
                gb = a.data.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _make(out, (a, b), bw)


def einsum(subscripts: str, *operands) -> Tensor:
    """``np.einsum`` with explicit output subscripts.

    Each operand label must appear in the output or in another operand; the
    gradient for operand ``i`` is the einsum of the output gradient with the
    other operands.
    """
    ops = [as_tensor(o) for o in operands]
    lhs, out_subs = subscripts.replace(" ", "").split("->")
    in_subs = lhs.split(",")
    if len(in_subs) != len(ops):
        raise ShapeError("einsum operand count does not match subscripts")
    for i, s in enumerate(in_subs):
        others = out_subs + "".join(x for j, x in enumerate(in_subs) if j != i)
        if any(c not in others for c in s) or len(set(s)) != len(s):
            raise ContractError(f"unsupported einsum operand subscripts {s!r}")
    try:
        out = np.einsum(subscripts, *(o.data for o in ops))
    except ValueError as exc:
        raise ShapeError(str(exc)) from None

    def bw(g):
        grads = []
        for i, o in enumerate(ops):
            if not o.requires_grad:
                grads.append(None)
                continue
            rest = [in_subs[j] for j in range(len(ops)) if j != i]
            spec = ",".join([out_subs] + rest) + "->" + in_subs[i]
            grads.append(np.einsum(spec, g, *(ops[j].data for j in range(len(ops)) if j != i)))
        return tuple(grads)

    return _make(out, ops, bw)


# reductions and shape -----------------------------------------------------
def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(np.asarray(out, dtype=np.float64), (a,), bw)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([a.shape[ax] for ax in axes]))
    out = np.mean(a.data, axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, a.shape).copy(),)

    return _make(np.asarray(out, dtype=np.float64), (a,), bw)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat of an empty sequence")
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _make(out, ts, lambda g: tuple(np.split(g, bounds, axis=axis)))


def take_rows(table, indices) -> Tensor:
    """Row lookup ``table[indices]``; gradients scatter-add into the table."""
    table = as_tensor(table)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ContractError(f"row index out of range [0, {table.shape[0]})")
    out = table.data[idx]

    def bw(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx.reshape(-1), g.reshape(-1, table.shape[-1]))
        return (gt,)

    return _make(out, (table,), bw)


def where_keep(a, keep) -> Tensor:
    """Entries where ``keep`` is true pass through; the rest become +0.0."""
    a = as_tensor(a)
    keep = np.broadcast_to(np.asarray(keep, dtype=bool), a.shape)
    return _make(np.where(keep, a.data, 0.0), (a,), lambda g: (np.where(keep, g, 0.0),))


# element-wise unary -------------------------------------------------------
def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def relu(a) -> Tensor:
    # derivative at exactly 0 is 0
    a = as_tensor(a)
    pos = a.data > 0
    return _make(np.where(pos, a.data, 0.0), (a,), lambda g: (np.where(pos, g, 0.0),))


def selu(a) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0
    negpart = SELU_SCALE * SELU_ALPHA * np.exp(np.minimum(a.data, 0.0))
    out = np.where(pos, SELU_SCALE * a.data, negpart - SELU_SCALE * SELU_ALPHA)
    return _make(out, (a,), lambda g: (g * np.where(pos, SELU_SCALE, negpart),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def log_sigmoid(a) -> Tensor:
    """log(sigmoid(x)) without overflow for large |x|."""
    a = as_tensor(a)
    x = a.data
    out = np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))
    return _make(out, (a,), lambda g: (g * _sigmoid(-x),))


def clip_min(a, lo: float) -> Tensor:
    a = as_tensor(a)
    keep = a.data >= lo
    return _make(np.where(keep, a.data, lo), (a,), lambda g: (np.where(keep, g, 0.0),))


_ACTIVATIONS = {"relu": relu, "selu": selu, "sigmoid": sigmoid}


def activation(a, kind: str) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ConfigError(f"unknown activation {kind!r}; expected one of {sorted(_ACTIVATIONS)}") from None
    return fn(a)


def softmax_rows(a) -> Tensor:
    """Softmax over the last axis, max-shifted for stability."""
    a = as_tensor(a)
    if a.ndim == 0 or a.shape[-1] < 1:
        raise ShapeError("softmax_rows needs a non-empty last axis")
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _make(out, (a,), bw)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    if eps <= 0:
        raise ContractError("layer_norm eps must be positive")
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data
    n = x.shape[-1]

    def bw(g):
        gx = gg = gb = None
        if x.requires_grad:
            gh = g * gain.data
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                        - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        if gain.requires_grad:
            gg = (g * xhat).reshape(-1, n).sum(axis=0).reshape(gain.shape)
        if bias.requires_grad:
            gb = g.reshape(-1, n).sum(axis=0).reshape(bias.shape)
        return gx, gg, gb

    return _make(out, (x, gain, bias), bw)


# verification oracle ------------------------------------------------------
def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` maps ``x`` to a scalar tensor and must be deterministic. The
    relative error per element uses ``max(|a|, |b|, 1e-8)`` as denominator.
    """
    if not 1e-6 <= h <= 1e-3:
        raise ContractError("finite-difference step must lie in [1e-6, 1e-3]")
    was_trainable, saved_grad = x.trainable, x.grad
    x.trainable = True
    try:
        with Tape() as tape:
            loss = f(x)
        tape.backward(loss)
        analytic = np.array(x.grad if x.grad is not None else np.zeros_like(x.data))
        numeric = np.zeros_like(x.data)
        flat = x.data.reshape(-1)
        num_flat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(x).item()
            flat[i] = orig - h
            fm = f(x).item()
            flat[i] = orig
            num_flat[i] = (fp - fm) / (2.0 * h)
    finally:
        x.trainable = was_trainable
        x.grad = saved_grad
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom)) if numeric.size else 0.0
