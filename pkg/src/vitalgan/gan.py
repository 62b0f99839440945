"""Conditional WGAN-GP with 1D-convolutional generator and critic."""

from __future__ import annotations

import logging
from collections.abc import Callable, Sequence
from dataclasses import asdict, dataclass
from typing import TextIO

import numpy as np

from . import tensor as T
from .checkpoint import CheckpointBundle
from .data import SERIES_LENGTH, LabeledDataset, NormStats, balanced_batches, channel_specs
from .nn import ParameterSet, ParamSpec, RMSprop, embedding_lookup, init_parameters, linear_forward
from .tensor import ShapeError, Tensor

log = logging.getLogger(__name__)

LEAKY_SLOPE = 0.2


class NumericalError(RuntimeError):
    pass


@dataclass(frozen=True)
class ArchitectureConfig:
    s: int
    c: int = 8
    m: int = 32
    h: int = 64

    def __post_init__(self):
        for key in ("s", "c", "m", "h"):
            if getattr(self, key) < 1:
                raise ValueError(f"{key} must be positive, got {getattr(self, key)}")
        if self.s > 5:
            raise ValueError(f"at most 5 signals are supported, got s={self.s}")


@dataclass(frozen=True)
class TrainConfig:
    lambda_gp: float = 10.0
    n_critic: int = 5
    learning_rate: float = 5e-5
    batch_size: int = 64
    generator_steps: int = 1000
    seed: int = 0
    dropout_rate: float = 0.5

    def __post_init__(self):
        if self.lambda_gp < 0:
            raise ValueError("lambda_gp must be non-negative")
        if self.n_critic < 1:
            raise ValueError("n_critic must be at least 1")
        if self.batch_size < 2 or self.batch_size % 2:
            raise ValueError(f"batch_size must be a positive even number, got {self.batch_size}")
        if self.generator_steps < 0:
            raise ValueError("generator_steps must be non-negative")


# ---------------------------------------------------------------------------
# parameters


def generator_param_specs(arch: ArchitectureConfig) -> list[ParamSpec]:
    s, c, m, h = arch.s, arch.c, arch.m, arch.h
    specs = [
        ParamSpec("gen.embed.weight", (2, c), "embedding"),
        ParamSpec("gen.fc.weight", (5 * h, m * (1 + c)), "linear"),
        ParamSpec("gen.fc.bias", (5 * h,), "bias"),
    ]
    for i in range(1, 5):
        specs += [ParamSpec(f"gen.conv{i}.weight", (h, h, 3), "conv"), ParamSpec(f"gen.conv{i}.bias", (h,), "bias")]
    specs += [ParamSpec("gen.out.weight", (s, h, 3), "conv"), ParamSpec("gen.out.bias", (s,), "bias")]
    return specs


def critic_param_specs(arch: ArchitectureConfig) -> list[ParamSpec]:
    s, c, h = arch.s, arch.c, arch.h
    specs = [
        ParamSpec("critic.embed.weight", (2, c), "embedding"),
        ParamSpec("critic.conv1.weight", (h, s + c, 3), "conv"),
        ParamSpec("critic.conv1.bias", (h,), "bias"),
    ]
    for i in range(2, 5):
        specs += [ParamSpec(f"critic.conv{i}.weight", (h, h, 3), "conv"), ParamSpec(f"critic.conv{i}.bias", (h,), "bias")]
    specs += [ParamSpec("critic.fc.weight", (1, 5 * h), "linear"), ParamSpec("critic.fc.bias", (1,), "bias")]
    return specs


def parameter_counts(arch: ArchitectureConfig) -> dict[str, int]:
    count = lambda specs: sum(int(np.prod(p.shape)) for p in specs)  # noqa: E731
    return {"generator": count(generator_param_specs(arch)), "critic": count(critic_param_specs(arch))}


# ---------------------------------------------------------------------------
# networks


def _append_label(x: Tensor, emb: Tensor) -> Tensor:
    """Concatenate the per-example embedding to every position of ``x``."""
    batch, length, _ = x.shape
    tiled = T.broadcast_to(T.reshape(emb, (batch, 1, emb.shape[1])), (batch, length, emb.shape[1]))
    return T.concat([x, tiled], axis=2)


def _conv(params: ParameterSet, x: Tensor, name: str) -> Tensor:
    return T.conv1d(x, params[f"{name}.weight"], params[f"{name}.bias"])


def generator_forward(
    params: ParameterSet,
    z,
    labels,
    arch: ArchitectureConfig,
    training: bool = False,
    rng: np.random.Generator | None = None,
    dropout_rate: float = 0.5,
    trace: list | None = None,
) -> Tensor:
    """Map seeds ``z`` (batch, m) and labels to series of shape (batch, 20, s)."""
    z = T.tensor(z) if not isinstance(z, Tensor) else z
    if z.ndim != 2 or z.shape[1] != arch.m:
        raise ShapeError(f"seed must be (batch, {arch.m}), got {z.shape}")
    if params["gen.fc.weight"].shape[1] != arch.m * (1 + arch.c) or params["gen.out.weight"].shape[0] != arch.s:
        raise ShapeError("generator parameters do not match the architecture config")
    batch = z.shape[0]
    note = (lambda name, t: trace.append((name, t.shape[1:]))) if trace is not None else (lambda name, t: None)
    drop = lambda t: T.dropout(t, dropout_rate, training, rng)  # noqa: E731

    note("seed", z)
    x = _append_label(T.reshape(z, (batch, arch.m, 1)), embedding_lookup(params, labels, "gen.embed"))
    note("append_embedding", x)
    x = linear_forward(params, T.reshape(x, (batch, arch.m * (1 + arch.c))), "gen.fc")
    x = T.reshape(drop(T.leaky_relu(x, LEAKY_SLOPE)), (batch, 5, arch.h))
    note("linear", x)
    for first, second in (("gen.conv1", "gen.conv2"), ("gen.conv3", "gen.conv4")):
        x = T.upsample_linear1d(x, 2)
        note("upsample", x)
        x = T.leaky_relu(_conv(params, x, first), LEAKY_SLOPE)
        note("conv", x)
        x = drop(T.leaky_relu(_conv(params, x, second), LEAKY_SLOPE))
        note("conv", x)
    x = _conv(params, x, "gen.out")
    note("conv_out", x)
    return x


def critic_forward(params: ParameterSet, x, labels, arch: ArchitectureConfig, trace: list | None = None) -> Tensor:
    """Unbounded score per example for series ``x`` of shape (batch, 20, s)."""
    x = T.tensor(x) if not isinstance(x, Tensor) else x
    if x.ndim != 3 or x.shape[1:] != (SERIES_LENGTH, arch.s):
        raise ShapeError(f"critic input must be (batch, {SERIES_LENGTH}, {arch.s}), got {x.shape}")
    note = (lambda name, t: trace.append((name, t.shape[1:]))) if trace is not None else (lambda name, t: None)
    batch = x.shape[0]

    note("input", x)
    x = _append_label(x, embedding_lookup(params, labels, "critic.embed"))
    note("append_embedding", x)
    for first, second in (("critic.conv1", "critic.conv2"), ("critic.conv3", "critic.conv4")):
        x = T.leaky_relu(_conv(params, x, first), LEAKY_SLOPE)
        note("conv", x)
        x = T.leaky_relu(_conv(params, x, second), LEAKY_SLOPE)
        note("conv", x)
        x = T.avg_pool1d(x)
        note("avg_pool", x)
    x = linear_forward(params, T.reshape(x, (batch, 5 * arch.h)), "critic.fc")
    note("linear", x)
    return T.reshape(x, (batch,))


# ---------------------------------------------------------------------------
# objective


def gradient_penalty(
    critic: Callable[[Tensor, np.ndarray], Tensor],
    x_real,
    x_fake,
    labels,
    rng: np.random.Generator,
) -> Tensor:
    """Mean of ``(||grad_x critic(x_hat)|| - 1)**2`` at random interpolates.

    The input gradient is taken with higher-order recording on, so the
    result back-propagates into whatever parameters ``critic`` closes over.
    """
    x_real = x_real.data if isinstance(x_real, Tensor) else np.asarray(x_real, dtype=np.float64)
    x_fake = x_fake.data if isinstance(x_fake, Tensor) else np.asarray(x_fake, dtype=np.float64)
    if x_real.shape != x_fake.shape:
        raise ShapeError(f"real {x_real.shape} and fake {x_fake.shape} batches differ in shape")
    batch = x_real.shape[0]
    eps = rng.uniform(0.0, 1.0, size=(batch,) + (1,) * (x_real.ndim - 1))
    x_hat = Tensor(eps * x_real + (1.0 - eps) * x_fake, requires_grad=True)
    scores = critic(x_hat, labels)
    (g,) = T.grad(T.tsum(scores), [x_hat], higher_order=True)
    axes = tuple(range(1, g.ndim))
    # tiny offset keeps sqrt differentiable at a zero gradient
    norms = T.sqrt(T.add(T.tsum(T.mul(g, g), axis=axes), 1e-12))
    deviation = T.sub(norms, 1.0)
    return T.mean(T.mul(deviation, deviation))


def critic_loss(scores_real, scores_fake, penalty, lambda_gp: float) -> Tensor:
    return T.add(T.sub(T.mean(scores_fake), T.mean(scores_real)), T.mul(penalty, lambda_gp))


def generator_loss(scores_fake) -> Tensor:
    return T.neg(T.mean(scores_fake))


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainRecord:
    step: int
    critic_loss: float
    generator_loss: float
    penalty: float

    def to_line(self) -> str:
        return (
            f"step={self.step} critic_loss={self.critic_loss!r} "
            f"generator_loss={self.generator_loss!r} penalty={self.penalty!r}"
        )

    @classmethod
    def from_line(cls, line: str) -> TrainRecord:
        fields = dict(part.split("=", 1) for part in line.split())
        return cls(int(fields["step"]), float(fields["critic_loss"]), float(fields["generator_loss"]), float(fields["penalty"]))


def write_training_log(records: Sequence[TrainRecord], stream: TextIO) -> None:
    for record in records:
        stream.write(record.to_line() + "\n")


def read_training_log(stream: TextIO) -> list[TrainRecord]:
    return [TrainRecord.from_line(line) for line in stream if line.strip()]


def _finite_or_raise(value: float, what: str, step: int) -> float:
    if not np.isfinite(value):
        raise NumericalError(f"non-finite {what} ({value}) at generator step {step}")
    return value


def train(
    train_ds: LabeledDataset,
    arch: ArchitectureConfig,
    cfg: TrainConfig,
    callbacks: Sequence[Callable[[TrainRecord], None]] = (),
    init: CheckpointBundle | None = None,
) -> tuple[CheckpointBundle, list[TrainRecord]]:
    """Alternate ``n_critic`` critic updates with one generator update.

    Returns the checkpoint and one log record per generator step. The run is
    a deterministic function of the data, ``arch`` and ``cfg``.
    """
    if train_ds.norm_stats is None:
        raise ValueError("train expects a normalized dataset")
    if len(train_ds.channels) != arch.s:
        raise ShapeError(f"dataset has {len(train_ds.channels)} channels, architecture expects s={arch.s}")
    X, y = train_ds.X, train_ds.y

    gen_seed, critic_seed, loop_seed = (int(v) for v in np.random.SeedSequence(cfg.seed).generate_state(3))
    if init is None:
        gen = init_parameters(generator_param_specs(arch), gen_seed)
        critic = init_parameters(critic_param_specs(arch), critic_seed)
    else:
        gen = ParameterSet.from_arrays(init.group("gen"))
        critic = ParameterSet.from_arrays(init.group("critic"))
    gen_opt = RMSprop(lr=cfg.learning_rate)
    critic_opt = RMSprop(lr=cfg.learning_rate)
    rng = np.random.default_rng(loop_seed)
    batches = balanced_batches(y, cfg.batch_size, rng)
    B = cfg.batch_size

    def critic_fn(x, labels):
        return critic_forward(critic, x, labels, arch)

    records: list[TrainRecord] = []
    for step in range(1, cfg.generator_steps + 1):
        for _ in range(cfg.n_critic):
            idx = next(batches)
            labels = y[idx]
            with T.no_grad():
                fake = generator_forward(
                    gen, rng.standard_normal((B, arch.m)), labels, arch, True, rng, cfg.dropout_rate
                ).data
            scores = critic_fn(Tensor(np.concatenate([X[idx], fake])), np.concatenate([labels, labels]))
            penalty = gradient_penalty(critic_fn, X[idx], fake, labels, rng)
            loss = critic_loss(scores[:B], scores[B:], penalty, cfg.lambda_gp)
            c_loss = _finite_or_raise(loss.item(), "critic loss", step)
            grads = T.grad(loss, critic.tensors())
            critic_opt.step(critic, grads)

        labels = rng.integers(0, 2, size=B)
        fake = generator_forward(gen, rng.standard_normal((B, arch.m)), labels, arch, True, rng, cfg.dropout_rate)
        g_loss_t = generator_loss(critic_fn(fake, labels))
        g_loss = _finite_or_raise(g_loss_t.item(), "generator loss", step)
        gen_opt.step(gen, T.grad(g_loss_t, gen.tensors()))

        record = TrainRecord(step, c_loss, g_loss, penalty.item())
        records.append(record)
        for callback in callbacks:
            callback(record)
        if step % 100 == 0:
            log.info("%s", record.to_line())

    tensors = {**gen.to_arrays(), **critic.to_arrays()}
    tensors.update({f"opt.{k}": v for k, v in gen_opt.square_avg.items()})
    tensors.update({f"opt.{k}": v for k, v in critic_opt.square_avg.items()})
    bundle = CheckpointBundle(
        arch=asdict(arch),
        train=asdict(cfg),
        channels=train_ds.channel_names,
        norm_stats=train_ds.norm_stats.to_list(),
        meta={"kind": "gan", "generator_steps_done": cfg.generator_steps},
        tensors=tensors,
    )
    return bundle, records


def generator_from_bundle(bundle: CheckpointBundle) -> tuple[ParameterSet, ArchitectureConfig]:
    return ParameterSet.from_arrays(bundle.group("gen")), ArchitectureConfig(**bundle.arch)


def synthesize_balanced(
    bundle: CheckpointBundle,
    n_total: int,
    norm_stats: NormStats | None = None,
    clamp: bool = False,
    rng: np.random.Generator | int | None = 0,
    chunk: int = 256,
) -> LabeledDataset:
    """Draw ``n_total // 2`` series per class in original units.

    Generation runs in inference mode; the output order is shuffled so the
    label sequence carries no information.
    """
    if n_total < 2:
        raise ValueError(f"n_total must be at least 2, got {n_total}")
    if norm_stats is None:
        if bundle.norm_stats is None:
            raise ValueError("no normalization statistics to map samples back to original units")
        norm_stats = NormStats.from_list(bundle.norm_stats)
    rng = np.random.default_rng(rng)
    gen, arch = generator_from_bundle(bundle)
    channels = channel_specs(bundle.channels)
    per_class = n_total // 2
    labels = rng.permutation(np.repeat([0, 1], per_class))

    parts = []
    with T.no_grad():
        for start in range(0, len(labels), chunk):
            lab = labels[start : start + chunk]
            z = rng.standard_normal((len(lab), arch.m))
            parts.append(generator_forward(gen, z, lab, arch, training=False).data)
    X = np.concatenate(parts) * norm_stats.max_abs + norm_stats.mean
    if clamp:
        X = np.clip(X, [c.lower for c in channels], [c.upper for c in channels])
    ids = [f"synth-{i:06d}" for i in range(len(labels))]
    return LabeledDataset.from_arrays(X, labels, channels, ids)
