"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every primitive records its inputs and a vector-Jacobian closure on the active
:class:`Tape`.  The closures are written with the same primitives, so running
``backward(..., create_graph=True)`` records the backward pass as well and the
resulting gradients can be differentiated again.  The gradient penalty relies
on this.
"""
from __future__ import annotations

import contextlib
from collections.abc import Mapping, Sequence
from typing import Callable, Iterator

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "ParamSet",
    "ShapeError",
    "NonFiniteError",
    "no_record",
    "current_tape",
    "backward",
    "tensor",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "tanh",
    "sigmoid",
    "exp",
    "log",
    "sqrt",
    "square",
    "power",
    "maximum",
    "tsum",
    "mean",
    "softmax",
    "concat",
    "stack",
    "reshape",
    "transpose",
    "broadcast_to",
    "sum_to",
]


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


# Stack of recording targets; ``None`` entries suspend recording.
_ACTIVE: list[Tape | None] = []


class _Record:
    __slots__ = ("out", "inputs", "vjp")

    def __init__(self, out: Tensor, inputs: tuple[Tensor, ...], vjp: Callable):
        self.out = out
        self.inputs = inputs
        self.vjp = vjp


class Tape:
    """Ordered record of primitive applications.

    Use as a context manager; operations on tensors that require gradients are
    appended while the tape is active.
    """

    def __init__(self) -> None:
        self.records: list[_Record] = []

    def __enter__(self) -> Tape:
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.pop()

    def __len__(self) -> int:
        return len(self.records)


@contextlib.contextmanager
def no_record() -> Iterator[None]:
    _ACTIVE.append(None)
    try:
        yield
    finally:
        _ACTIVE.pop()


@contextlib.contextmanager
def _recording(tape: Tape | None) -> Iterator[None]:
    _ACTIVE.append(tape)
    try:
        yield
    finally:
        _ACTIVE.pop()


def _active() -> Tape | None:
    return _ACTIVE[-1] if _ACTIVE else None


def current_tape() -> Tape | None:
    """The tape new operations are recorded on, if any."""
    return _active()


class Tensor:
    __slots__ = ("data", "requires_grad", "name", "_tape", "_index")

    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name
        self._tape: Tape | None = None
        self._index = -1

    @property
    def shape(self) -> tuple[int, ...]:
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
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> Tensor:
        return Tensor(self.data, name=self.name)

    def all_finite(self) -> bool:
        return bool(np.isfinite(self.data).all())

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

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

    def __matmul__(self, o):
        return matmul(self, o)

    def __rmatmul__(self, o):
        return matmul(o, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims: bool = False) -> Tensor:
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> Tensor:
        return mean(self, axis, keepdims)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> Tensor:
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def tensor(x, requires_grad: bool = False, name: str | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, requires_grad=requires_grad, name=name)


def _make(data: np.ndarray, inputs: tuple[Tensor, ...], vjp: Callable) -> Tensor:
    out = Tensor(data)
    tape = _active()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._tape = tape
        out._index = len(tape.records)
        tape.records.append(_Record(out, inputs, vjp))
    return out


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- shape ops


def sum_to(x: Tensor, shape) -> Tensor:
    """Sum ``x`` down to ``shape`` (the adjoint of broadcasting)."""
    shape = tuple(shape)
    if x.shape == shape:
        return x
    lead = x.ndim - len(shape)
    if lead < 0:
        raise ShapeError(f"sum_to: cannot reduce {x.shape} to {shape}")
    axes = tuple(range(lead)) + tuple(
        i + lead for i, s in enumerate(shape) if s == 1 and x.shape[i + lead] != 1
    )
    data = x.data.sum(axis=axes, keepdims=True).reshape(shape)
    return _make(data, (x,), lambda g: (broadcast_to(g, x.shape),))


def broadcast_to(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    if x.shape == shape:
        return x
    try:
        data = np.broadcast_to(x.data, shape)
    except ValueError:
        raise ShapeError(f"broadcast_to: cannot broadcast {x.shape} to {shape}") from None
    return _make(data, (x,), lambda g: (sum_to(g, x.shape),))


def reshape(x: Tensor, shape) -> Tensor:
    try:
        data = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {x.shape} to {tuple(shape)}") from None
    return _make(data, (x,), lambda g: (reshape(g, x.shape),))


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _make(x.data.transpose(axes), (x,), lambda g: (transpose(g, inverse),))


def _swap_last(x: Tensor) -> Tensor:
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, axes)


def getitem(x: Tensor, index) -> Tensor:
    data = x.data[index]
    return _make(data, (x,), lambda g: (_scatter(g, index, x.shape),))


def _scatter(g: Tensor, index, shape) -> Tensor:
    """Zeros of ``shape`` with ``g`` added at ``index`` (adjoint of getitem)."""
    data = np.zeros(shape)
    np.add.at(data, index, g.data)
    return _make(data, (g,), lambda h: (getitem(h, index),))


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = [tensor(x) for x in xs]
    try:
        data = np.concatenate([x.data for x in xs], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[x.shape for x in xs]}") from None
    ax = axis % data.ndim
    bounds = np.cumsum([0] + [x.shape[ax] for x in xs])

    def vjp(g):
        out = []
        for k, x in enumerate(xs):
            idx = [slice(None)] * g.ndim
            idx[ax] = slice(int(bounds[k]), int(bounds[k + 1]))
            out.append(getitem(g, tuple(idx)) if x.requires_grad else None)
        return tuple(out)

    return _make(data, tuple(xs), vjp)


def stack(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [tensor(x) for x in xs]
    expanded = [reshape(x, x.shape[:axis % (x.ndim + 1)] + (1,) + x.shape[axis % (x.ndim + 1):]) for x in xs]
    return concat(expanded, axis=axis)


# ----------------------------------------------------------- arithmetic ops


def add(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    _broadcast_shape(a, b, "add")
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (
            sum_to(g, a.shape) if a.requires_grad else None,
            sum_to(g, b.shape) if b.requires_grad else None,
        ),
    )


def sub(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    _broadcast_shape(a, b, "sub")
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (
            sum_to(g, a.shape) if a.requires_grad else None,
            sum_to(neg(g), b.shape) if b.requires_grad else None,
        ),
    )


def mul(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    _broadcast_shape(a, b, "mul")
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (
            sum_to(mul(g, b), a.shape) if a.requires_grad else None,
            sum_to(mul(g, a), b.shape) if b.requires_grad else None,
        ),
    )


def div(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    _broadcast_shape(a, b, "div")
    out = None

    def vjp(g):
        ga = sum_to(div(g, b), a.shape) if a.requires_grad else None
        gb = sum_to(neg(div(mul(g, out), b)), b.shape) if b.requires_grad else None
        return ga, gb

    out = _make(a.data / b.data, (a, b), vjp)
    return out


def neg(a) -> Tensor:
    a = tensor(a)
    return _make(-a.data, (a,), lambda g: (neg(g),))


def matmul(a, b) -> Tensor:
    """Batched matrix product over the last two axes, broadcasting the rest."""
    a, b = tensor(a), tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: incompatible batch dims {a.shape} and {b.shape}") from None
    return _make(
        np.matmul(a.data, b.data),
        (a, b),
        lambda g: (
            sum_to(matmul(g, _swap_last(b)), a.shape) if a.requires_grad else None,
            sum_to(matmul(_swap_last(a), g), b.shape) if b.requires_grad else None,
        ),
    )


def tanh(a) -> Tensor:
    a = tensor(a)
    out = None
    out = _make(np.tanh(a.data), (a,), lambda g: (mul(g, sub(1.0, mul(out, out))),))
    return out


def _sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a) -> Tensor:
    a = tensor(a)
    out = None
    out = _make(_sigmoid(a.data), (a,), lambda g: (mul(g, mul(out, sub(1.0, out))),))
    return out


def exp(a) -> Tensor:
    a = tensor(a)
    out = None
    out = _make(np.exp(a.data), (a,), lambda g: (mul(g, out),))
    return out


def log(a) -> Tensor:
    a = tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (div(g, a),))


def sqrt(a) -> Tensor:
    """Square root whose derivative at exactly zero is taken as zero."""
    a = tensor(a)
    out = None

    def vjp(g):
        zero = out.data == 0.0
        # zero entries: 0 * g / (2 * 1) keeps the expression finite and taped
        safe = add(out, Tensor(zero.astype(np.float64)))
        return (mul(div(g, mul(2.0, safe)), Tensor((~zero).astype(np.float64))),)

    out = _make(np.sqrt(a.data), (a,), vjp)
    return out


def square(a) -> Tensor:
    a = tensor(a)
    return _make(a.data * a.data, (a,), lambda g: (mul(g, mul(2.0, a)),))


def power(a, p: float) -> Tensor:
    a = tensor(a)
    p = float(p)
    return _make(a.data**p, (a,), lambda g: (mul(g, mul(p, power(a, p - 1.0))),))


def maximum(a, floor: float) -> Tensor:
    """Elementwise ``max(a, floor)`` for a constant floor."""
    a = tensor(a)
    mask = Tensor((a.data > floor).astype(np.float64))
    return _make(np.maximum(a.data, floor), (a,), lambda g: (mul(g, mask),))


def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(ax % ndim for ax in axis))


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = tensor(a)
    axes = _norm_axes(axis, a.ndim)
    kept = tuple(1 if i in axes else s for i, s in enumerate(a.shape))
    data = a.data.sum(axis=axes, keepdims=keepdims)
    return _make(data, (a,), lambda g: (broadcast_to(reshape(g, kept), a.shape),))


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = tensor(a)
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return div(tsum(a, axes, keepdims), float(count))


def softmax(a) -> Tensor:
    """Softmax over the last axis."""
    a = tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = None

    def vjp(g):
        inner = tsum(mul(g, out), -1, keepdims=True)
        return (mul(out, sub(g, inner)),)

    out = _make(e / e.sum(axis=-1, keepdims=True), (a,), vjp)
    return out


# ------------------------------------------------------------------ backward


def backward(tape: Tape, output: Tensor, wrt, create_graph: bool = False):
    """Gradients of scalar ``output`` with respect to ``wrt``.

    ``wrt`` may be a mapping of names to tensors (a dict of the same keys is
    returned) or a sequence (a list is returned).  Gradients from several uses
    of one tensor are summed.  With ``create_graph`` the backward computation
    is appended to ``tape`` so the returned gradients are themselves
    differentiable.
    """
    if output.size != 1:
        raise ShapeError(f"backward needs a scalar output, got shape {output.shape}")
    if not output.requires_grad or output._tape is not tape:
        raise ValueError("output is detached from this tape")

    named = isinstance(wrt, Mapping)
    targets = list(wrt.values()) if named else list(wrt)
    keep = {id(t) for t in targets}

    grads: dict[int, Tensor] = {id(output): Tensor(np.ones(output.shape))}
    records = tape.records[: output._index + 1]
    with _recording(tape if create_graph else None):
        for rec in reversed(records):
            key = id(rec.out)
            g = grads.get(key)
            if g is None:
                continue
            if key not in keep:
                del grads[key]
            for inp, gi in zip(rec.inputs, rec.vjp(g)):
                if gi is None or not inp.requires_grad:
                    continue
                k = id(inp)
                prev = grads.get(k)
                grads[k] = gi if prev is None else add(prev, gi)

    result = [grads.get(id(t), Tensor(np.zeros(t.shape))) for t in targets]
    if named:
        return dict(zip(wrt.keys(), result))
    return result


# ------------------------------------------------------------------ params


ROLES = ("generator", "discriminator", "reward")


class ParamSet(Mapping):
    """Named, fixed-shape parameter tensors of one network.

    Instances are treated as immutable; optimizer steps build new sets.
    """

    def __init__(self, role: str, arrays: Mapping[str, np.ndarray]):
        if role not in ROLES:
            raise ValueError(f"unknown parameter role {role!r}")
        self.role = role
        self._tensors = {
            name: Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
            for name, value in arrays.items()
        }

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __iter__(self):
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self._tensors.items()}

    def replace(self, arrays: Mapping[str, np.ndarray]) -> ParamSet:
        if set(arrays) != set(self._tensors):
            raise KeyError("parameter names differ from the existing set")
        for name, value in arrays.items():
            if np.shape(value) != self._tensors[name].shape:
                raise ShapeError(
                    f"{name}: shape {np.shape(value)} differs from {self._tensors[name].shape}"
                )
        return ParamSet(self.role, {name: arrays[name] for name in self._tensors})

    def frozen(self) -> ParamSet:
        """Same values, but not tracked by the tape."""
        out = ParamSet(self.role, {})
        out._tensors = {n: Tensor(t.data, name=n) for n, t in self._tensors.items()}
        return out

    def equal(self, other: ParamSet) -> bool:
        return (
            self.role == other.role
            and list(self) == list(other)
            and all(np.array_equal(self[n].data, other[n].data) for n in self)
        )
