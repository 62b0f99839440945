"""Reverse-mode automatic differentiation over float64 numpy arrays.

Every primitive records its inputs together with a vector-Jacobian product
written in terms of other primitives. Replaying those products while graph
recording is enabled yields gradients that are themselves differentiable,
which is what the gradient penalty of a WGAN-GP critic needs.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "ContractError",
    "tensor",
    "grad",
    "no_grad",
    "is_grad_enabled",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "concat",
    "stack",
    "reshape",
    "transpose",
    "broadcast_to",
    "sum_to",
    "tsum",
    "mean",
    "sqrt",
    "exp",
    "log",
    "tanh",
    "sigmoid",
    "leaky_relu",
    "dropout",
    "replicate_pad1d",
    "conv1d",
    "avg_pool1d",
    "upsample_linear1d",
    "logsumexp",
]


class ShapeError(ValueError):
    """Operand shapes do not conform for the requested operation."""


class ContractError(ValueError):
    """A documented precondition of an operation was violated."""


_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def _grad_mode(enabled: bool):
    previous = is_grad_enabled()
    _state.enabled = enabled
    try:
        yield
    finally:
        _state.enabled = previous


def no_grad():
    """Context manager under which operations are not recorded."""
    return _grad_mode(False)


class Tensor:
    """Dense float64 array plus the record needed to differentiate it.

    Tensors are treated as immutable: operations always return new tensors
    and optimizers replace parameters rather than writing into them.
    """

    __slots__ = ("data", "requires_grad", "_parents", "_vjp", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[Tensor], Sequence[Tensor | None]] | None = None

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
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"expected a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({np.array2string(self.data, precision=4)}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    __add__ = lambda self, other: add(self, other)
    __radd__ = lambda self, other: add(other, self)
    __sub__ = lambda self, other: sub(self, other)
    __rsub__ = lambda self, other: sub(other, self)
    __mul__ = lambda self, other: mul(self, other)
    __rmul__ = lambda self, other: mul(other, self)
    __truediv__ = lambda self, other: div(self, other)
    __rtruediv__ = lambda self, other: div(other, self)
    __matmul__ = lambda self, other: matmul(self, other)
    __neg__ = lambda self: neg(self)

    def __getitem__(self, index) -> Tensor:
        return _getitem(self, index)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims: bool = False) -> Tensor:
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> Tensor:
        return mean(self, axis, keepdims)

    @property
    def mT(self) -> Tensor:
        axes = list(range(self.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
        return transpose(self, axes)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(data: np.ndarray, parents: tuple[Tensor, ...], vjp) -> Tensor:
    out = Tensor(data)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    return out


# ---------------------------------------------------------------------------
# differentiation


def _topological_order(root: Tensor) -> list[Tensor]:
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
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def grad(output: Tensor, inputs: Sequence[Tensor], higher_order: bool = False) -> list[Tensor]:
    """Gradients of a scalar ``output`` with respect to each of ``inputs``.

    Inputs that did not contribute to ``output`` receive zeros. With
    ``higher_order`` the returned tensors stay attached to the graph and can
    be differentiated again.
    """
    if output.size != 1:
        raise ContractError(f"grad needs a scalar output, got shape {output.shape}")
    inputs = list(inputs)
    if not output.requires_grad:
        return [Tensor(np.zeros_like(x.data)) for x in inputs]

    wanted = {id(x) for x in inputs}
    grads: dict[int, Tensor] = {id(output): Tensor(np.ones_like(output.data))}
    kept: dict[int, Tensor] = {}
    with _grad_mode(higher_order):
        for node in reversed(_topological_order(output)):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if id(node) in wanted:
                kept[id(node)] = g
            if node._vjp is None:
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg

    result = []
    for x in inputs:
        g = kept.get(id(x))
        if g is None:
            result.append(Tensor(np.zeros_like(x.data)))
        else:
            result.append(g if higher_order else g.detach())
    return result


# ---------------------------------------------------------------------------
# shape plumbing


def _unbroadcast(g: Tensor, shape: tuple[int, ...]) -> Tensor:
    return g if g.shape == shape else sum_to(g, shape)


def broadcast_to(x, shape) -> Tensor:
    x = _as_tensor(x)
    shape = tuple(shape)
    if x.shape == shape:
        return x
    try:
        data = np.broadcast_to(x.data, shape)
    except ValueError:
        raise ShapeError(f"cannot broadcast {x.shape} to {shape}") from None
    return _record(np.ascontiguousarray(data), (x,), lambda g: (sum_to(g, x.shape),))


def sum_to(x, shape) -> Tensor:
    """Sum ``x`` down to ``shape``, undoing numpy broadcasting."""
    x = _as_tensor(x)
    shape = tuple(shape)
    if x.shape == shape:
        return x
    lead = x.ndim - len(shape)
    if lead < 0:
        raise ShapeError(f"cannot sum {x.shape} down to {shape}")
    axes = list(range(lead))
    for i, n in enumerate(shape):
        if n == 1 and x.shape[lead + i] != 1:
            axes.append(lead + i)
        elif n != x.shape[lead + i] and n != 1:
            raise ShapeError(f"cannot sum {x.shape} down to {shape}")
    data = x.data.sum(axis=tuple(axes), keepdims=True)
    data = data.reshape(shape)
    return _record(data, (x,), lambda g: (broadcast_to(g, x.shape),))


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    try:
        data = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {x.shape} to {tuple(shape)}") from None
    return _record(data, (x,), lambda g: (reshape(g, x.shape),))


def transpose(x, axes: Sequence[int]) -> Tensor:
    x = _as_tensor(x)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _record(np.transpose(x.data, axes), (x,), lambda g: (transpose(g, inverse),))


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (slice, int, type(None), type(Ellipsis))) for i in items)


def _scatter(g, index, shape) -> Tensor:
    """Zeros of ``shape`` with ``g`` added at ``index`` (adjoint of indexing)."""
    g = _as_tensor(g)
    out = np.zeros(shape)
    if _is_basic_index(index):
        out[index] = g.data
    else:
        np.add.at(out, index, g.data)
    return _record(out, (g,), lambda h: (_getitem(h, index),))


def _getitem(x, index) -> Tensor:
    x = _as_tensor(x)
    if isinstance(index, Tensor):
        index = index.data.astype(np.intp)
    data = x.data[index]
    return _record(data, (x,), lambda g: (_scatter(g, index, x.shape),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    ndim = tensors[0].ndim
    axis = axis % ndim
    for t in tensors[1:]:
        if t.ndim != ndim or any(
            a != b for i, (a, b) in enumerate(zip(t.shape, tensors[0].shape)) if i != axis
        ):
            raise ShapeError(f"cannot concatenate {tensors[0].shape} and {t.shape} on axis {axis}")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def vjp(g):
        out = []
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if not t.requires_grad:
                out.append(None)
                continue
            index = (slice(None),) * axis + (slice(int(lo), int(hi)),)
            out.append(_getitem(g, index))
        return out

    return _record(data, tuple(tensors), vjp)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    expanded = []
    for t in tensors:
        ax = axis % (t.ndim + 1)
        expanded.append(reshape(t, t.shape[:ax] + (1,) + t.shape[ax:]))
    return concat(expanded, axis=axis)


# ---------------------------------------------------------------------------
# arithmetic


def _binary_shapes(a: Tensor, b: Tensor, name: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{name}: shapes {a.shape} and {b.shape} do not broadcast") from None


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b, "add")

    def vjp(g):
        return (
            _unbroadcast(g, a.shape) if a.requires_grad else None,
            _unbroadcast(g, b.shape) if b.requires_grad else None,
        )

    return _record(a.data + b.data, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b, "sub")

    def vjp(g):
        return (
            _unbroadcast(g, a.shape) if a.requires_grad else None,
            _unbroadcast(neg(g), b.shape) if b.requires_grad else None,
        )

    return _record(a.data - b.data, (a, b), vjp)


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _record(-a.data, (a,), lambda g: (neg(g),))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b, "mul")

    def vjp(g):
        return (
            _unbroadcast(mul(g, b), a.shape) if a.requires_grad else None,
            _unbroadcast(mul(g, a), b.shape) if b.requires_grad else None,
        )

    return _record(a.data * b.data, (a, b), vjp)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b, "div")
    if np.any(b.data == 0):
        raise ContractError("division by zero")

    def vjp(g):
        return (
            _unbroadcast(div(g, b), a.shape) if a.requires_grad else None,
            _unbroadcast(neg(div(mul(g, a), mul(b, b))), b.shape) if b.requires_grad else None,
        )

    return _record(a.data / b.data, (a, b), vjp)


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes, broadcasting leading axes."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    # stacks against a plain matrix become one 2-D product
    if a.ndim > 2 and b.ndim == 2:
        flat = matmul(reshape(a, (-1, a.shape[-1])), b)
        return reshape(flat, a.shape[:-1] + (b.shape[1],))
    if a.ndim == 2 and b.ndim > 2:
        lead = b.ndim - 2
        moved = transpose(b, (lead,) + tuple(range(lead)) + (lead + 1,))
        flat = matmul(a, reshape(moved, (b.shape[-2], -1)))
        out = reshape(flat, (a.shape[0],) + b.shape[:-2] + (b.shape[-1],))
        return transpose(out, tuple(range(1, lead + 1)) + (0, lead + 1))
    try:
        data = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform") from None

    def vjp(g):
        return (
            _unbroadcast(matmul(g, b.mT), a.shape) if a.requires_grad else None,
            _unbroadcast(matmul(a.mT, g), b.shape) if b.requires_grad else None,
        )

    return _record(data, (a, b), vjp)


def tsum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    data = x.data.sum(axis=axis, keepdims=keepdims)
    if axis is None:
        kept_shape = (1,) * x.ndim
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(a % x.ndim for a in axes)
        kept_shape = tuple(1 if i in axes else n for i, n in enumerate(x.shape))
    return _record(
        np.asarray(data), (x,), lambda g: (broadcast_to(reshape(g, kept_shape), x.shape),)
    )


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    total = tsum(x, axis, keepdims)
    count = x.size // max(total.size, 1) if x.size else 1
    return mul(total, 1.0 / count)


# ---------------------------------------------------------------------------
# elementwise nonlinearities


def sqrt(x) -> Tensor:
    x = _as_tensor(x)
    if np.any(x.data < 0):
        raise ContractError("sqrt of a negative value")
    out = _record(np.sqrt(x.data), (x,), None)
    if out.requires_grad:
        out._vjp = lambda g: (div(g, mul(out, 2.0)),)
    return out


def exp(x) -> Tensor:
    x = _as_tensor(x)
    out = _record(np.exp(x.data), (x,), None)
    if out.requires_grad:
        out._vjp = lambda g: (mul(g, out),)
    return out


def log(x) -> Tensor:
    x = _as_tensor(x)
    if np.any(x.data <= 0):
        raise ContractError("log of a non-positive value")
    return _record(np.log(x.data), (x,), lambda g: (div(g, x),))


def tanh(x) -> Tensor:
    x = _as_tensor(x)
    out = _record(np.tanh(x.data), (x,), None)
    if out.requires_grad:
        out._vjp = lambda g: (mul(g, sub(1.0, mul(out, out))),)
    return out


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    # tanh form avoids overflow in exp for large |x|
    out = _record(0.5 * (np.tanh(0.5 * x.data) + 1.0), (x,), None)
    if out.requires_grad:
        out._vjp = lambda g: (mul(g, mul(out, sub(1.0, out))),)
    return out


def logsumexp(x, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    shift = Tensor(np.max(x.data, axis=axis, keepdims=True))
    return add(log(tsum(exp(sub(x, shift)), axis=axis, keepdims=True)), shift)


def leaky_relu(x, slope: float = 0.2) -> Tensor:
    x = _as_tensor(x)
    if not 0.0 < slope < 1.0:
        raise ContractError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    factor = Tensor(np.where(x.data >= 0, 1.0, slope))
    return _record(x.data * factor.data, (x,), lambda g: (mul(g, factor),))


def dropout(x, rate: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity outside training or when ``rate`` is 0."""
    x = _as_tensor(x)
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ContractError("dropout in training mode needs a random generator")
    keep = rng.random(x.shape) >= rate
    return mul(x, Tensor(keep / (1.0 - rate)))


# ---------------------------------------------------------------------------
# sequence layers; time-major layout is (batch, time, channels)


def replicate_pad1d(x, amount: int) -> Tensor:
    x = _as_tensor(x)
    if amount < 0:
        raise ContractError(f"padding amount must be non-negative, got {amount}")
    if amount == 0:
        return x
    axis = 0 if x.ndim == 1 else 1
    lead = (slice(None),) * axis
    first = x[lead + (slice(0, 1),)]
    last = x[lead + (slice(-1, None),)]
    return concat([first] * amount + [x] + [last] * amount, axis=axis)


def _unfold3(x: Tensor) -> Tensor:
    """(batch, time, ch) -> (batch, time, 3 * ch) windows over a replicate-padded copy."""
    length = x.shape[1]
    index = np.clip(np.arange(length)[:, None] + np.arange(-1, 2)[None, :], 0, length - 1)
    data = x.data[:, index].reshape(x.shape[0], length, 3 * x.shape[2])
    return _record(data, (x,), lambda g: (_fold3(g, x.shape),))


def _fold3(g: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Adjoint of :func:`_unfold3`: add each window slot back onto its source step."""
    batch, length, channels = shape
    w = g.data.reshape(batch, length, 3, channels)
    out = w[:, :, 1].copy()
    out[:, : length - 1] += w[:, 1:, 0]
    out[:, 0] += w[:, 0, 0]
    out[:, 1:] += w[:, : length - 1, 2]
    out[:, length - 1] += w[:, length - 1, 2]
    return _record(out, (g,), lambda h: (_unfold3(h),))


def conv1d(x, kernel, bias) -> Tensor:
    """Stride-1, width-3 convolution with one step of replicate padding.

    ``x`` is (batch, time, in_ch), ``kernel`` is (out_ch, in_ch, 3) and
    ``bias`` is (out_ch,). The output keeps the input length.
    """
    x, kernel, bias = _as_tensor(x), _as_tensor(kernel), _as_tensor(bias)
    if x.ndim != 3:
        raise ShapeError(f"conv1d input must be (batch, time, channels), got {x.shape}")
    if kernel.ndim != 3 or kernel.shape[2] != 3:
        raise ShapeError(f"conv1d kernel must be (out, in, 3), got {kernel.shape}")
    if kernel.shape[1] != x.shape[2]:
        raise ShapeError(f"conv1d: input {x.shape} has {x.shape[2]} channels, kernel {kernel.shape} expects {kernel.shape[1]}")
    if bias.shape != (kernel.shape[0],):
        raise ShapeError(f"conv1d: bias {bias.shape} does not match kernel {kernel.shape}")
    if x.shape[1] < 1:
        raise ContractError("conv1d needs at least one time step")
    columns = _unfold3(x)
    # (out, in, 3) -> (3 * in, out), matching the window layout
    weight = reshape(transpose(kernel, (2, 1, 0)), (3 * kernel.shape[1], kernel.shape[0]))
    return add(matmul(columns, weight), bias)


def avg_pool1d(x, kernel: int = 2, stride: int = 2) -> Tensor:
    x = _as_tensor(x)
    if kernel != 2 or stride != 2:
        raise ContractError("only kernel=2, stride=2 pooling is supported")
    batch, length, channels = x.shape
    if length % 2:
        raise ContractError(f"avg_pool1d needs an even length, got {length}")
    return mean(reshape(x, (batch, length // 2, 2, channels)), axis=2)


def _interpolation_matrix(length: int, scale: int) -> np.ndarray:
    out_len = length * scale
    source = (np.arange(out_len) + 0.5) / scale - 0.5
    source = np.clip(source, 0.0, length - 1)
    lo = np.floor(source).astype(int)
    hi = np.minimum(lo + 1, length - 1)
    frac = source - lo
    matrix = np.zeros((out_len, length))
    rows = np.arange(out_len)
    np.add.at(matrix, (rows, lo), 1.0 - frac)
    np.add.at(matrix, (rows, hi), frac)
    return matrix


def upsample_linear1d(x, scale: int = 2) -> Tensor:
    """Linear interpolation along time using half-pixel centres, edge-clamped."""
    x = _as_tensor(x)
    if x.ndim != 3 or x.shape[1] < 1:
        raise ContractError(f"upsample needs (batch, time >= 1, channels), got {x.shape}")
    return matmul(Tensor(_interpolation_matrix(x.shape[1], scale)), x)
