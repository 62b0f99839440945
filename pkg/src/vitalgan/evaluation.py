"""Proxy-quality evaluation: LSTM classifier, random search and train-on-synthetic/test-on-real.

Only per-class accuracies and their mean ever leave this module. Confusion
counts stay internal because several count-based metrics taken together
would reveal the class ratio of the private data.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .checkpoint import CheckpointBundle
from .data import (
    ChannelMismatchError,
    LabeledDataset,
    NormStats,
    StratificationError,
    balanced_batches,
    channel_specs,
    channel_tag,
    normalize,
    split_train_test,
)
from .gan import NumericalError
from .nn import ParameterSet, ParamSpec, RMSprop, init_parameters, linear_forward, lstm_forward, lstm_param_specs
from .tensor import ShapeError, Tensor

log = logging.getLogger(__name__)

REPORT_FIELDS = ("role", "channels", "acc_class0", "acc_class1", "balanced_accuracy")
ROLES = ("real", "proxy")


@dataclass(frozen=True)
class ClassifierConfig:
    hidden_size: int = 32
    lstm_layers: int = 1
    dropout_rate: float = 0.0
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.hidden_size < 1:
            raise ValueError("hidden_size must be at least 1")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.lstm_layers < 1:
            raise ValueError("lstm_layers must be at least 1")
        if self.batch_size < 2 or self.batch_size % 2:
            raise ValueError("batch_size must be a positive even number")


# ---------------------------------------------------------------------------
# classifier


def classifier_param_specs(n_features: int, cfg: ClassifierConfig) -> list[ParamSpec]:
    return lstm_param_specs("clf.lstm", n_features, cfg.hidden_size, cfg.lstm_layers) + [
        ParamSpec("clf.fc.weight", (2, cfg.hidden_size), "linear"),
        ParamSpec("clf.fc.bias", (2,), "bias"),
    ]


def classifier_forward(
    params: ParameterSet,
    x,
    cfg: ClassifierConfig,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Two logits per series: LSTM final hidden state, dropout, then a linear layer."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"classifier input must be (batch, time, channels), got {x.shape}")
    h = lstm_forward(params, x, cfg.hidden_size, name="clf.lstm", layers=cfg.lstm_layers)
    h = T.dropout(h, cfg.dropout_rate, training, rng)
    return linear_forward(params, h, "clf.fc")


def predict_from_logits(logits: np.ndarray) -> np.ndarray:
    """Argmax over two logits; an exact tie goes to class 0."""
    return (logits[:, 1] > logits[:, 0]).astype(np.int64)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    onehot = Tensor(np.eye(2)[labels])
    picked = T.tsum(T.mul(logits, onehot), axis=1, keepdims=True)
    return T.mean(T.sub(T.logsumexp(logits, axis=1), picked))


@dataclass
class TrainedClassifier:
    params: ParameterSet
    cfg: ClassifierConfig
    norm_stats: NormStats
    channels: list[str]

    def logits(self, ds: LabeledDataset) -> np.ndarray:
        if ds.channel_names != self.channels:
            raise ChannelMismatchError(f"classifier expects {self.channels}, got {ds.channel_names}")
        X = ds.X if ds.norm_stats is not None else normalize(ds, self.norm_stats).X
        with T.no_grad():
            return classifier_forward(self.params, X, self.cfg).data

    def predict(self, ds: LabeledDataset) -> np.ndarray:
        return predict_from_logits(self.logits(ds))

    def to_bundle(self) -> CheckpointBundle:
        return CheckpointBundle(
            arch={"n_features": len(self.channels)},
            train=asdict(self.cfg),
            channels=list(self.channels),
            norm_stats=self.norm_stats.to_list(),
            meta={"kind": "classifier"},
            tensors=self.params.to_arrays(),
        )

    @classmethod
    def from_bundle(cls, bundle: CheckpointBundle) -> TrainedClassifier:
        return cls(
            ParameterSet.from_arrays(bundle.tensors),
            ClassifierConfig(**bundle.train),
            NormStats.from_list(bundle.norm_stats),
            list(bundle.channels),
        )


def train_classifier(train_ds: LabeledDataset, cfg: ClassifierConfig) -> TrainedClassifier:
    """Minimise softmax cross-entropy with RMSprop over class-balanced mini-batches.

    An unnormalized dataset is scaled with statistics fitted on itself; those
    statistics travel with the classifier and are applied at prediction time.
    """
    if train_ds.norm_stats is None:
        train_ds = normalize(train_ds)
    X, y = train_ds.X, train_ds.y
    if not ((y == 0).any() and (y == 1).any()):
        raise StratificationError("classifier training needs both classes")
    init_seed, loop_seed = (int(v) for v in np.random.SeedSequence(cfg.seed).generate_state(2))
    params = init_parameters(classifier_param_specs(X.shape[2], cfg), init_seed)
    opt = RMSprop(lr=cfg.learning_rate)
    rng = np.random.default_rng(loop_seed)
    batches = balanced_batches(y, cfg.batch_size, rng)
    steps_per_epoch = math.ceil(len(y) / cfg.batch_size)
    for epoch in range(1, cfg.epochs + 1):
        for _ in range(steps_per_epoch):
            idx = next(batches)
            logits = classifier_forward(params, X[idx], cfg, training=True, rng=rng)
            loss = cross_entropy(logits, y[idx])
            if not np.isfinite(loss.item()):
                raise NumericalError(f"non-finite classifier loss in epoch {epoch}")
            opt.step(params, T.grad(loss, params.tensors()))
    return TrainedClassifier(params, cfg, train_ds.norm_stats, train_ds.channel_names)


# ---------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class ConfusionMatrix:
    """Binary confusion counts. Internal only: never serialized or reported."""

    tn: int = field(repr=False)
    fp: int = field(repr=False)
    fn: int = field(repr=False)
    tp: int = field(repr=False)

    def __post_init__(self):
        if min(self.tn, self.fp, self.fn, self.tp) < 0:
            raise ValueError("confusion counts must be non-negative")

    @classmethod
    def from_predictions(cls, preds, labels) -> ConfusionMatrix:
        preds = np.asarray(preds)
        labels = np.asarray(labels)
        if preds.shape != labels.shape:
            raise ShapeError(f"predictions {preds.shape} and labels {labels.shape} differ")
        return cls(
            tn=int(np.sum((labels == 0) & (preds == 0))),
            fp=int(np.sum((labels == 0) & (preds == 1))),
            fn=int(np.sum((labels == 1) & (preds == 0))),
            tp=int(np.sum((labels == 1) & (preds == 1))),
        )


def _class_accuracies(cm: ConfusionMatrix) -> tuple[float, float]:
    if cm.tn + cm.fp == 0 or cm.tp + cm.fn == 0:
        raise StratificationError("per-class accuracy needs at least one example of each class")
    return cm.tn / (cm.tn + cm.fp), cm.tp / (cm.tp + cm.fn)


def per_class_accuracy(preds, labels) -> tuple[float, float]:
    """Fraction of class-0 and of class-1 examples predicted correctly."""
    return _class_accuracies(ConfusionMatrix.from_predictions(preds, labels))


def balanced_accuracy(acc0: float, acc1: float) -> float:
    return (acc0 + acc1) / 2


@dataclass(frozen=True)
class MetricsReport:
    role: str
    channels: str
    acc_class0: float
    acc_class1: float
    balanced_accuracy: float

    def to_dict(self) -> dict:
        return {
            "role": self.role,
            "channels": self.channels,
            "acc_class0": float(self.acc_class0),
            "acc_class1": float(self.acc_class1),
            "balanced_accuracy": float(self.balanced_accuracy),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=False)

    @classmethod
    def from_dict(cls, obj: dict) -> MetricsReport:
        validate_report(obj)
        return cls(**obj)


def validate_report(obj) -> None:
    """Reject anything but the five permitted fields, and any count-valued field."""
    if not isinstance(obj, dict):
        raise ValueError("a metrics report must be an object")
    if set(obj) != set(REPORT_FIELDS):
        raise ValueError(f"report fields must be exactly {REPORT_FIELDS}, got {sorted(obj)}")
    if obj["role"] not in ROLES:
        raise ValueError(f"role must be one of {ROLES}, got {obj['role']!r}")
    if not isinstance(obj["channels"], str):
        raise ValueError("channels must be a string tag")
    for key in ("acc_class0", "acc_class1", "balanced_accuracy"):
        value = obj[key]
        if isinstance(value, (bool, int)) or not isinstance(value, float):
            raise ValueError(f"{key} must be a float, got {type(value).__name__}")
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"{key} must lie in [0, 1], got {value}")


def privacy_gate(cm: ConfusionMatrix, role: str, channels: str) -> MetricsReport:
    if role not in ROLES:
        raise ValueError(f"role must be one of {ROLES}, got {role!r}")
    acc0, acc1 = _class_accuracies(cm)
    return MetricsReport(role, channels, acc0, acc1, balanced_accuracy(acc0, acc1))


def dump_reports(reports, stream) -> None:
    json.dump([r.to_dict() for r in reports], stream, indent=2)
    stream.write("\n")


# ---------------------------------------------------------------------------
# hyperparameter search


@dataclass(frozen=True)
class HPOSpace:
    hidden_size: tuple[int, ...] = (16, 32, 64, 128)
    lstm_layers: tuple[int, ...] = (1, 2)
    dropout_rate: tuple[float, ...] = (0.0, 0.2, 0.5)
    learning_rate: tuple[float, float] = (1e-4, 1e-2)
    batch_size: tuple[int, ...] = (32, 64)
    epochs: tuple[int, ...] = (20, 50, 100)
    trials: int = 20
    seed: int = 0

    def __post_init__(self):
        for key in ("hidden_size", "lstm_layers", "dropout_rate", "batch_size", "epochs"):
            if not getattr(self, key):
                raise ValueError(f"{key} choices must be non-empty")
        lo, hi = self.learning_rate
        if not 0 < lo <= hi:
            raise ValueError(f"learning_rate range must satisfy 0 < lo <= hi, got {self.learning_rate}")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")

    def sample(self, trial: int) -> ClassifierConfig:
        """Configuration of trial ``trial``; depends only on (seed, trial)."""
        rng = np.random.default_rng([self.seed, trial])
        pick = lambda choices: choices[int(rng.integers(len(choices)))]  # noqa: E731
        lo, hi = self.learning_rate
        return ClassifierConfig(
            hidden_size=int(pick(self.hidden_size)),
            lstm_layers=int(pick(self.lstm_layers)),
            dropout_rate=float(pick(self.dropout_rate)),
            learning_rate=float(math.exp(rng.uniform(math.log(lo), math.log(hi)))),
            batch_size=int(pick(self.batch_size)),
            epochs=int(pick(self.epochs)),
            seed=int(rng.integers(2**31)),
        )

    @classmethod
    def from_dict(cls, obj: dict) -> HPOSpace:
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown HPO keys {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in obj.items()})


@dataclass(frozen=True)
class TrialResult:
    index: int
    config: ClassifierConfig
    score: float | None
    error: str | None = None


def _run_trial(index: int, cfg: ClassifierConfig, train_ds: LabeledDataset, test_ds: LabeledDataset) -> TrialResult:
    try:
        model = train_classifier(train_ds, cfg)
        acc0, acc1 = per_class_accuracy(model.predict(test_ds), test_ds.y)
    except (NumericalError, FloatingPointError) as exc:
        return TrialResult(index, cfg, None, f"{type(exc).__name__}: {exc}")
    return TrialResult(index, cfg, balanced_accuracy(acc0, acc1))


def select_best(trials) -> TrialResult:
    """Highest score; ties go to the lowest trial index whatever the log order."""
    scored = [t for t in trials if t.score is not None]
    if not scored:
        raise RuntimeError("every hyperparameter trial failed")
    return min(scored, key=lambda t: (-t.score, t.index))


def random_search(
    real_train: LabeledDataset,
    real_test: LabeledDataset,
    space: HPOSpace,
    n_jobs: int = 1,
) -> tuple[ClassifierConfig, list[TrialResult]]:
    """Pick the classifier configuration with the best balanced accuracy on ``real_test``."""
    configs = [space.sample(i) for i in range(space.trials)]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            futures = [pool.submit(_run_trial, i, c, real_train, real_test) for i, c in enumerate(configs)]
            trials = [f.result() for f in futures]
    else:
        trials = []
        for i, c in enumerate(configs):
            trials.append(_run_trial(i, c, real_train, real_test))
            log.info("trial %d: %s -> %s", i, c, trials[-1].score)
    return select_best(trials).config, trials


# ---------------------------------------------------------------------------
# train on synthetic, test on real


@dataclass
class TSTRResult:
    real: MetricsReport
    proxy: MetricsReport
    best_config: ClassifierConfig
    trials: list[TrialResult]


def _report(model: TrainedClassifier, test_ds: LabeledDataset, role: str) -> MetricsReport:
    cm = ConfusionMatrix.from_predictions(model.predict(test_ds), test_ds.y)
    return privacy_gate(cm, role, channel_tag(test_ds.channels))


def evaluate_tstr(
    real_train: LabeledDataset,
    real_test: LabeledDataset,
    proxy_ds: LabeledDataset,
    space: HPOSpace,
    n_jobs: int = 1,
) -> TSTRResult:
    """Tune on real data, then train the tuned classifier on real and on proxy data.

    Both classifiers are scored on the same held-out real series.
    """
    if proxy_ds.channel_names != real_train.channel_names or real_test.channel_names != real_train.channel_names:
        raise ChannelMismatchError(
            f"channel sets differ: real {real_train.channel_names}, proxy {proxy_ds.channel_names}"
        )
    counts = np.bincount(proxy_ds.y, minlength=2)
    if counts[0] != counts[1]:
        log.warning("proxy dataset is not class-balanced")
    best, trials = random_search(real_train, real_test, space, n_jobs=n_jobs)
    real_report = _report(train_classifier(real_train, best), real_test, "real")
    proxy_report = _report(train_classifier(proxy_ds, best), real_test, "proxy")
    return TSTRResult(real_report, proxy_report, best, trials)


def tstr_protocol(
    real_ds: LabeledDataset,
    proxy_ds: LabeledDataset,
    space: HPOSpace,
    test_fraction: float = 0.30,
    split_seed: int = 0,
    n_jobs: int = 1,
) -> TSTRResult:
    """Stratified holdout of ``real_ds`` followed by :func:`evaluate_tstr`."""
    if proxy_ds.channel_names != real_ds.channel_names:
        raise ChannelMismatchError(
            f"channel sets differ: real {real_ds.channel_names}, proxy {proxy_ds.channel_names}"
        )
    real_train, real_test = split_train_test(real_ds, test_fraction, split_seed)
    return evaluate_tstr(real_train, real_test, proxy_ds, space, n_jobs=n_jobs)


def check_channels(names) -> str:
    return channel_tag(channel_specs(names))
