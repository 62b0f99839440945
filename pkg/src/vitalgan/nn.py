"""Layers and the RMSprop optimizer on top of :mod:`vitalgan.tensor`."""

from __future__ import annotations

from collections.abc import Iterator, Sequence
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import ContractError, ShapeError, Tensor

__all__ = [
    "ParamSpec",
    "ParameterSet",
    "init_parameters",
    "linear_forward",
    "embedding_lookup",
    "lstm_forward",
    "lstm_param_specs",
    "RMSprop",
]

PARAM_KINDS = ("conv", "linear", "lstm", "embedding", "bias")


@dataclass(frozen=True)
class ParamSpec:
    """Name, shape and initialization role of one parameter."""

    name: str
    shape: tuple[int, ...]
    kind: str

    def __post_init__(self):
        if self.kind not in PARAM_KINDS:
            raise ValueError(f"unknown parameter kind {self.kind!r}")

    @property
    def fan_in(self) -> int:
        if self.kind == "conv":
            return int(np.prod(self.shape[1:]))
        return int(self.shape[-1])


class ParameterSet:
    """Ordered mapping from dotted parameter names to tensors."""

    def __init__(self, entries: dict[str, Tensor] | None = None, rng_seed: int | None = None):
        self.entries: dict[str, Tensor] = dict(entries or {})
        self.rng_seed = rng_seed

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self.entries[name]
        except KeyError:
            raise KeyError(f"no parameter named {name!r}") from None

    def __setitem__(self, name: str, value: Tensor) -> None:
        self.entries[name] = value

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def __iter__(self) -> Iterator[str]:
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def names(self) -> list[str]:
        return list(self.entries)

    def tensors(self) -> list[Tensor]:
        return list(self.entries.values())

    def count(self) -> int:
        """Total number of scalar parameters."""
        return sum(t.size for t in self.entries.values())

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.entries.items()}

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray], rng_seed: int | None = None) -> ParameterSet:
        return cls(
            {name: Tensor(np.asarray(a, dtype=np.float64), requires_grad=True) for name, a in arrays.items()},
            rng_seed=rng_seed,
        )

    def copy(self) -> ParameterSet:
        return ParameterSet.from_arrays(self.to_arrays(), self.rng_seed)


def init_parameters(specs: Sequence[ParamSpec], seed: int) -> ParameterSet:
    """Draw a fresh parameter set; a pure function of ``(specs, seed)``.

    Weights are uniform in +/- sqrt(1/fan_in), biases zero and embedding
    tables standard normal.
    """
    rng = np.random.default_rng(seed)
    entries: dict[str, Tensor] = {}
    for spec in specs:
        if spec.name in entries:
            raise ValueError(f"duplicate parameter name {spec.name!r}")
        if spec.kind == "bias":
            values = np.zeros(spec.shape)
        elif spec.kind == "embedding":
            values = rng.standard_normal(spec.shape)
        else:
            bound = np.sqrt(1.0 / spec.fan_in)
            values = rng.uniform(-bound, bound, size=spec.shape)
        entries[spec.name] = Tensor(values, requires_grad=True)
    return ParameterSet(entries, rng_seed=seed)


def linear_forward(params: ParameterSet, x: Tensor, name: str) -> Tensor:
    """``x @ W.T + b`` with ``W`` stored as ``name.weight`` (out, in)."""
    weight = params[f"{name}.weight"]
    bias = params[f"{name}.bias"]
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"{name}: input {x.shape} does not match weight {weight.shape}")
    return T.add(T.matmul(x, weight.mT), bias)


def embedding_lookup(params: ParameterSet, labels, name: str) -> Tensor:
    table = params[f"{name}.weight"]
    labels = np.asarray(labels.data if isinstance(labels, Tensor) else labels)
    if labels.size and not np.all(np.isin(labels, np.arange(table.shape[0]))):
        raise ValueError(f"labels must lie in 0..{table.shape[0] - 1}, got {np.unique(labels)}")
    return table[labels.astype(np.intp)]


def lstm_param_specs(prefix: str, input_size: int, hidden_size: int, layers: int = 1) -> list[ParamSpec]:
    specs = []
    for layer in range(layers):
        in_size = input_size if layer == 0 else hidden_size
        specs += [
            ParamSpec(f"{prefix}.l{layer}.weight_ih", (4 * hidden_size, in_size), "lstm"),
            ParamSpec(f"{prefix}.l{layer}.weight_hh", (4 * hidden_size, hidden_size), "lstm"),
            ParamSpec(f"{prefix}.l{layer}.bias", (4 * hidden_size,), "bias"),
        ]
    return specs


def _lstm_layer(params: ParameterSet, x: Tensor, name: str, hidden_size: int, keep_sequence: bool):
    w_ih = params[f"{name}.weight_ih"]
    w_hh = params[f"{name}.weight_hh"]
    bias = params[f"{name}.bias"]
    if w_ih.shape[1] != x.shape[2]:
        raise ShapeError(f"{name}: input {x.shape} does not match weight_ih {w_ih.shape}")
    H = hidden_size
    # input projections for every step at once; gate order is i, f, g, o
    projected = T.add(T.matmul(x, w_ih.mT), bias)
    w_hh_t = w_hh.mT
    h = c = None
    outputs = []
    for t in range(x.shape[1]):
        gates = projected[:, t]
        if h is not None:
            gates = T.add(gates, T.matmul(h, w_hh_t))
        i = T.sigmoid(gates[:, 0:H])
        f = T.sigmoid(gates[:, H : 2 * H])
        g = T.tanh(gates[:, 2 * H : 3 * H])
        o = T.sigmoid(gates[:, 3 * H : 4 * H])
        c = T.mul(i, g) if c is None else T.add(T.mul(f, c), T.mul(i, g))
        h = T.mul(o, T.tanh(c))
        if keep_sequence:
            outputs.append(h)
    return h, outputs


def lstm_forward(
    params: ParameterSet,
    x: Tensor,
    hidden_size: int,
    name: str = "lstm",
    layers: int = 1,
) -> Tensor:
    """Stacked unidirectional LSTM from a zero state; returns the last hidden state.

    ``x`` is (batch, time, features); the result is (batch, hidden_size).
    """
    if x.ndim != 3:
        raise ShapeError(f"lstm input must be (batch, time, features), got {x.shape}")
    if x.shape[1] < 1:
        raise ContractError("lstm needs at least one time step")
    sequence = x
    h = None
    for layer in range(layers):
        last = layer == layers - 1
        h, outputs = _lstm_layer(params, sequence, f"{name}.l{layer}", hidden_size, keep_sequence=not last)
        if not last:
            sequence = T.stack(outputs, axis=1)
    return h


@dataclass
class RMSprop:
    """RMSprop without momentum.

    ``v <- alpha * v + (1 - alpha) * g**2`` then
    ``theta <- theta - lr * g / (sqrt(v) + eps)``.
    """

    lr: float = 5e-5
    alpha: float = 0.99
    eps: float = 1e-8
    square_avg: dict[str, np.ndarray] = field(default_factory=dict)
    steps: int = 0

    def step(self, params: ParameterSet, grads: Sequence[Tensor] | dict[str, Tensor]) -> ParameterSet:
        """Apply one update, replacing the tensors held by ``params``."""
        names = params.names()
        if not isinstance(grads, dict):
            if len(grads) != len(names):
                raise ShapeError(f"got {len(grads)} gradients for {len(names)} parameters")
            grads = dict(zip(names, grads))
        for name in names:
            theta = params[name]
            g = grads[name]
            g = g.data if isinstance(g, Tensor) else np.asarray(g, dtype=np.float64)
            if g.shape != theta.shape:
                raise ShapeError(f"{name}: gradient {g.shape} does not match parameter {theta.shape}")
            v = self.square_avg.get(name)
            if v is None:
                v = np.zeros_like(theta.data)
            v = self.alpha * v + (1.0 - self.alpha) * g * g
            self.square_avg[name] = v
            params[name] = Tensor(theta.data - self.lr * g / (np.sqrt(v) + self.eps), requires_grad=True)
        self.steps += 1
        return params

    def state_arrays(self, prefix: str) -> dict[str, np.ndarray]:
        return {f"{prefix}.{name}": v for name, v in self.square_avg.items()}
