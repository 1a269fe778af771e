"""Dense tensors with reverse-mode automatic differentiation.

Every differentiable operation produces a new :class:`Tensor` that remembers
its operands and a closure mapping the output gradient to operand gradients.
Nodes carry a global sequence number, so sorting the reachable graph by that
number descending replays the operations in strict reverse execution order
(see :class:`Tape`).

Only one broadcasting rule exists: a rank-1 right operand whose length equals
the left operand's last extent (bias broadcast).
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import AxisError, ContractError, ShapeError

_DEFAULT_DTYPE = np.dtype(np.float32)
_seq = itertools.count()


def get_default_dtype() -> np.dtype:
    return _DEFAULT_DTYPE


def set_default_dtype(dtype) -> None:
    """Switch the precision used for newly created tensors (float32 or float64)."""
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ContractError(f"unsupported precision {dtype}")
    _DEFAULT_DTYPE = dtype


@contextmanager
def precision(dtype) -> Iterator[None]:
    """Temporarily change the default dtype, e.g. ``with precision("float64"):``."""
    previous = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


class Tensor:
    """N-dimensional real array that optionally participates in autodiff."""

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.array(data, dtype=dtype or _DEFAULT_DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._seq = next(_seq)

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        out._seq = next(_seq)
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data, dtype=self.data.dtype)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else shift(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else shift(self, -other)

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else scale(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ShapeError("tensor division is not supported")
        return scale(self, 1.0 / other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> Tensor:
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self) -> Tensor:
        return transpose(self, None)

    def sum(self, axis=None) -> Tensor:
        return reduce("sum", self, "all" if axis is None else axis)

    def mean(self, axis=None) -> Tensor:
        return reduce("mean", self, "all" if axis is None else axis)

    def relu(self) -> Tensor:
        return relu(self)

    def backward(self) -> None:
        backward(self)


class Parameter(Tensor):
    """Trainable tensor with a persistent, zero-initialized gradient buffer."""

    def __init__(self, data, name: str = "", dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.grad = np.zeros_like(self.data)
        self.name = name

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def tensor_create(shape: Sequence[int], fill=0.0, requires_grad: bool = False) -> Tensor:
    """Build a tensor of ``shape`` from a scalar fill or a flat list of values."""
    shape = tuple(int(s) for s in shape)
    if any(s < 0 for s in shape):
        raise ShapeError(f"negative extent in {shape}")
    if np.isscalar(fill):
        return Tensor(np.full(shape, fill), requires_grad=requires_grad)
    values = np.asarray(fill).ravel()
    expected = int(np.prod(shape, dtype=np.int64))
    if values.size != expected:
        raise ShapeError(f"{values.size} values cannot fill shape {list(shape)} ({expected} elements)")
    return Tensor(values.reshape(shape), requires_grad=requires_grad)


class Tape:
    """Ordered records of the differentiable operations reachable from an output.

    ``records`` lists graph nodes in strict reverse execution order; replaying
    it applies each node's local-gradient rule exactly once.
    """

    def __init__(self, records: list[Tensor]):
        self.records = records

    @classmethod
    def from_output(cls, output: Tensor) -> Tape:
        seen: set[int] = set()
        nodes: list[Tensor] = []
        stack = [output]
        while stack:
            node = stack.pop()
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            nodes.append(node)
            stack.extend(node._parents)
        nodes.sort(key=lambda n: n._seq, reverse=True)
        return cls(nodes)

    def __len__(self) -> int:
        return len(self.records)


def backward(loss: Tensor, tape: Tape | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable grad-requiring leaf."""
    if loss.ndim != 0:
        raise ContractError(f"backward needs a scalar loss, got shape {list(loss.shape)}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor that requires grad")
    tape = tape or Tape.from_output(loss)
    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in tape.records:
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.grad is None:
                node.grad = np.array(g, dtype=node.data.dtype)
            else:
                node.grad += g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + pg
            else:
                pending[key] = pg


# ----------------------------------------------------------------------------
# elementwise


def _check_pair(a: Tensor, b: Tensor) -> bool:
    """Return True when ``b`` is bias-broadcast over ``a``'s last axis."""
    if a.shape == b.shape:
        return False
    if b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        return True
    raise ShapeError(f"incompatible shapes {list(a.shape)} and {list(b.shape)}")


def _unbias(g: np.ndarray, broadcast: bool) -> np.ndarray:
    return g.reshape(-1, g.shape[-1]).sum(axis=0) if broadcast else g


def elementwise(kind: str, a: Tensor, b: Tensor) -> Tensor:
    if kind == "add":
        return add(a, b)
    if kind == "sub":
        return sub(a, b)
    if kind == "mul":
        return mul(a, b)
    raise ContractError(f"unknown elementwise op {kind!r}")


def add(a: Tensor, b: Tensor) -> Tensor:
    bc = _check_pair(a, b)
    return Tensor._from_op(a.data + b.data, (a, b), lambda g: (g, _unbias(g, bc)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    bc = _check_pair(a, b)
    return Tensor._from_op(a.data - b.data, (a, b), lambda g: (g, -_unbias(g, bc)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    bc = _check_pair(a, b)
    ad, bd = a.data, b.data
    return Tensor._from_op(ad * bd, (a, b), lambda g: (g * bd, _unbias(g * ad, bc)))


def scale(a: Tensor, c: float) -> Tensor:
    c = a.data.dtype.type(c)
    return Tensor._from_op(a.data * c, (a,), lambda g: (g * c,))


def shift(a: Tensor, c: float) -> Tensor:
    c = a.data.dtype.type(c)
    return Tensor._from_op(a.data + c, (a,), lambda g: (g,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return Tensor._from_op(np.where(mask, a.data, 0).astype(a.dtype), (a,), lambda g: (g * mask,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor._from_op(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return Tensor._from_op(np.log(ad), (a,), lambda g: (g / ad,))


# ----------------------------------------------------------------------------
# products


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Rank-2 matrix product."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {list(a.shape)} and {list(b.shape)}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions differ: {list(a.shape)} x {list(b.shape)}")
    ad, bd = a.data, b.data
    return Tensor._from_op(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over identical leading axes (rank >= 3)."""
    if a.ndim < 3 or a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"bmm cannot combine {list(a.shape)} and {list(b.shape)}")
    ad, bd = a.data, b.data
    return Tensor._from_op(
        ad @ bd,
        (a, b),
        lambda g: (g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g),
    )


# ----------------------------------------------------------------------------
# reductions and shape ops


def reduce(kind: str, a: Tensor, axis="all") -> Tensor:
    if kind not in ("sum", "mean"):
        raise ContractError(f"unknown reduction {kind!r}")
    shape = a.shape
    if axis == "all" or axis is None:
        count = max(a.size, 1)
        total = a.data.sum()
        out = total / count if kind == "mean" else total
        factor = 1.0 / count if kind == "mean" else 1.0
        return Tensor._from_op(
            np.asarray(out, dtype=a.dtype),
            (a,),
            lambda g: (np.broadcast_to(g * factor, shape).astype(a.dtype),),
        )
    if not isinstance(axis, (int, np.integer)) or not -a.ndim <= axis < a.ndim:
        raise AxisError(f"axis {axis} out of range for rank {a.ndim}")
    axis = int(axis) % a.ndim
    n = shape[axis]
    out = a.data.sum(axis=axis)
    factor = 1.0
    if kind == "mean":
        factor = 1.0 / n
        out = out * a.dtype.type(factor)

    def back(g):
        return (np.broadcast_to(np.expand_dims(g * a.dtype.type(factor), axis), shape).copy(),)

    return Tensor._from_op(np.asarray(out, dtype=a.dtype), (a,), back)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    src = a.shape
    return Tensor._from_op(out, (a,), lambda g: (g.reshape(src),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(int(x) % a.ndim for x in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise AxisError(f"invalid permutation {axes} for rank {a.ndim}")
    inverse = tuple(np.argsort(axes))
    return Tensor._from_op(
        np.ascontiguousarray(a.data.transpose(axes)), (a,), lambda g: (g.transpose(inverse),)
    )


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    ref = tensors[0]
    axis = axis % ref.ndim
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(
            t.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != axis
        ):
            raise ShapeError(f"cannot concat {list(ref.shape)} with {list(t.shape)} on axis {axis}")
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return Tensor._from_op(out, tuple(tensors), lambda g: tuple(np.split(g, bounds, axis=axis)))


def pad2d(a: Tensor, top: int, bottom: int, left: int, right: int) -> Tensor:
    """Zero-pad the last two axes."""
    widths = [(0, 0)] * (a.ndim - 2) + [(top, bottom), (left, right)]
    h, w = a.shape[-2:]
    return Tensor._from_op(
        np.pad(a.data, widths), (a,), lambda g: (g[..., top : top + h, left : left + w],)
    )


# ----------------------------------------------------------------------------
# verification


def grad_check(fn: Callable[[Tensor], Tensor], x: Tensor, step: float = 1e-3) -> float:
    """Max over coordinates of |analytic - central difference| / max(1, |analytic|)."""
    probe = Tensor(x.data.copy(), requires_grad=True, dtype=x.dtype)
    out = fn(probe)
    if out.ndim != 0:
        raise ContractError(f"grad_check needs a scalar function, got shape {list(out.shape)}")
    if out.requires_grad:
        backward(out)
    analytic = probe.grad if probe.grad is not None else np.zeros_like(probe.data)
    numeric = np.zeros_like(probe.data)
    base = x.data.copy()
    flat = base.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        plus = fn(Tensor(base, dtype=x.dtype)).item()
        flat[i] = orig - step
        minus = fn(Tensor(base, dtype=x.dtype)).item()
        flat[i] = orig
        numeric.reshape(-1)[i] = (plus - minus) / (2 * step)
    return _rel_error(analytic, numeric)


def grad_check_params(
    fn: Callable[[], Tensor],
    params: Sequence[Parameter],
    step: float = 1e-3,
    max_coords: int | None = None,
    seed: int = 0,
) -> float:
    """Finite-difference check of ``fn``'s gradient w.r.t. parameter coordinates.

    With ``max_coords`` set, each parameter contributes at most that many
    randomly chosen coordinates.
    """
    for p in params:
        p.zero_grad()
    out = fn()
    if out.ndim != 0:
        raise ContractError(f"grad_check needs a scalar function, got shape {list(out.shape)}")
    backward(out)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p in params:
        analytic = p.grad.reshape(-1).copy()
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = rng.choice(flat.size, size=max_coords, replace=False)
        numeric = np.empty(len(idx))
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + step
            plus = fn().item()
            flat[i] = orig - step
            minus = fn().item()
            flat[i] = orig
            numeric[j] = (plus - minus) / (2 * step)
        worst = max(worst, _rel_error(analytic[idx], numeric))
    for p in params:
        p.zero_grad()
    return worst


def _rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    if analytic.size == 0:
        return 0.0
    err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
    return float(err.max())
