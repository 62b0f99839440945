"""Loading, validating, filtering, scaling, splitting and sampling vital-sign series."""

from __future__ import annotations

import csv
import math
from collections.abc import Iterator, Sequence
from dataclasses import dataclass, replace
from typing import TextIO

import numpy as np

SERIES_LENGTH = 20


class DataError(ValueError):
    """Base class for problems with input data."""


class CSVParseError(DataError):
    pass


class IncompleteSeriesError(DataError):
    pass


class LabelConflictError(DataError):
    pass


class DegenerateChannelError(DataError):
    pass


class StratificationError(DataError):
    pass


class ChannelMismatchError(DataError):
    pass


@dataclass(frozen=True)
class ChannelSpec:
    name: str
    abbreviation: str
    unit: str
    lower: float
    upper: float


CHANNELS: tuple[ChannelSpec, ...] = (
    ChannelSpec("temperature", "T", "degC", 30.0, 45.0),
    ChannelSpec("respiratory_rate", "RR", "breaths/min", 5.0, 75.0),
    ChannelSpec("heart_rate", "HR", "beats/min", 10.0, 250.0),
    ChannelSpec("systolic_abp", "SBP", "mmHg", 20.0, 300.0),
    ChannelSpec("diastolic_abp", "DBP", "mmHg", 10.0, 200.0),
)
CHANNELS_BY_NAME = {c.name: c for c in CHANNELS}
CSV_HEADER = ["patient_id", "t_index", *(c.name for c in CHANNELS), "label"]

# the four vital-sign sets compared in the evaluation; ABP is two channels
CHANNEL_SETS: dict[str, tuple[str, ...]] = {
    "T": ("temperature",),
    "T,RR": ("temperature", "respiratory_rate"),
    "T,RR,HR": ("temperature", "respiratory_rate", "heart_rate"),
    "T,RR,HR,ABP": tuple(c.name for c in CHANNELS),
}


def channel_specs(names: Sequence[str]) -> list[ChannelSpec]:
    unknown = [n for n in names if n not in CHANNELS_BY_NAME]
    if unknown:
        raise DataError(f"unknown channel(s) {unknown}; expected a subset of {[c.name for c in CHANNELS]}")
    if len(set(names)) != len(names):
        raise DataError(f"duplicate channel in {list(names)}")
    order = {c.name: i for i, c in enumerate(CHANNELS)}
    return sorted((CHANNELS_BY_NAME[n] for n in names), key=lambda c: order[c.name])


def channel_tag(channels: Sequence[ChannelSpec]) -> str:
    """Row label such as ``"T,RR,HR,ABP"``; the two pressures print as ABP."""
    parts: list[str] = []
    for c in channels:
        abbrev = "ABP" if c.name in ("systolic_abp", "diastolic_abp") else c.abbreviation
        if abbrev not in parts:
            parts.append(abbrev)
    return ",".join(parts)


@dataclass(frozen=True)
class PatientSeries:
    patient_id: str
    values: np.ndarray  # (20, s), time-major
    label: int

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != SERIES_LENGTH:
            raise DataError(f"patient {self.patient_id}: expected {SERIES_LENGTH} time steps, got shape {values.shape}")
        if not 1 <= values.shape[1] <= len(CHANNELS):
            raise DataError(f"patient {self.patient_id}: channel count {values.shape[1]} outside 1..5")
        if self.label not in (0, 1):
            raise DataError(f"patient {self.patient_id}: label must be 0 or 1, got {self.label}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class NormStats:
    """Per-channel centre and scale: ``x' = (x - mean) / max_abs``."""

    mean: np.ndarray
    max_abs: np.ndarray

    def to_list(self) -> list[list[float]]:
        return [[float(m), float(a)] for m, a in zip(self.mean, self.max_abs)]

    @classmethod
    def from_list(cls, pairs) -> NormStats:
        arr = np.asarray(pairs, dtype=np.float64).reshape(-1, 2)
        return cls(arr[:, 0].copy(), arr[:, 1].copy())


@dataclass(frozen=True)
class LabeledDataset:
    series: tuple[PatientSeries, ...]
    channels: tuple[ChannelSpec, ...]
    norm_stats: NormStats | None = None

    def __post_init__(self):
        object.__setattr__(self, "series", tuple(self.series))
        object.__setattr__(self, "channels", tuple(self.channels))
        s = len(self.channels)
        for p in self.series:
            if p.values.shape[1] != s:
                raise ChannelMismatchError(
                    f"patient {p.patient_id} has {p.values.shape[1]} channels, dataset has {s}"
                )
        if self.norm_stats is not None and np.any(self.norm_stats.max_abs <= 0):
            raise DegenerateChannelError("normalization scale must be strictly positive")

    def __len__(self) -> int:
        return len(self.series)

    @property
    def X(self) -> np.ndarray:
        if not self.series:
            return np.zeros((0, SERIES_LENGTH, len(self.channels)))
        return np.stack([p.values for p in self.series])

    @property
    def y(self) -> np.ndarray:
        return np.array([p.label for p in self.series], dtype=np.int64)

    @property
    def channel_names(self) -> list[str]:
        return [c.name for c in self.channels]

    def subset(self, indices) -> LabeledDataset:
        return replace(self, series=tuple(self.series[i] for i in indices))

    def select_channels(self, names: Sequence[str]) -> LabeledDataset:
        wanted = channel_specs(names)
        missing = [c.name for c in wanted if c not in self.channels]
        if missing:
            raise ChannelMismatchError(f"dataset lacks channel(s) {missing}")
        cols = [self.channels.index(c) for c in wanted]
        stats = None
        if self.norm_stats is not None:
            stats = NormStats(self.norm_stats.mean[cols], self.norm_stats.max_abs[cols])
        series = tuple(PatientSeries(p.patient_id, p.values[:, cols], p.label) for p in self.series)
        return LabeledDataset(series, tuple(wanted), stats)

    @classmethod
    def from_arrays(
        cls,
        X: np.ndarray,
        y: Sequence[int],
        channels: Sequence[ChannelSpec],
        ids: Sequence[str] | None = None,
        norm_stats: NormStats | None = None,
    ) -> LabeledDataset:
        X = np.asarray(X, dtype=np.float64)
        if ids is None:
            ids = [f"p{i:06d}" for i in range(len(X))]
        series = tuple(PatientSeries(str(i), x, int(label)) for i, x, label in zip(ids, X, y))
        return cls(series, tuple(channels), norm_stats)


# ---------------------------------------------------------------------------
# CSV


def parse_csv(stream: TextIO, channels: Sequence[str] | None = None) -> LabeledDataset:
    """Read the long-format CSV (one row per patient and time index).

    Channel columns left blank on every row are treated as absent; the
    dataset keeps the channels that are fully populated, or exactly
    ``channels`` when given.
    """
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise CSVParseError("line 1: missing header row") from None
    header = [h.strip() for h in header]
    if header != CSV_HEADER:
        raise CSVParseError(f"line 1: expected header {','.join(CSV_HEADER)}, got {','.join(header)}")

    rows: dict[str, dict[int, list[float]]] = {}
    labels: dict[str, int] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(CSV_HEADER):
            raise CSVParseError(f"line {lineno}: expected {len(CSV_HEADER)} fields, got {len(row)}")
        pid = row[0].strip()
        try:
            t = int(row[1])
            label = int(row[-1])
            values = [float(v) if v.strip() else math.nan for v in row[2:-1]]
        except ValueError as exc:
            raise CSVParseError(f"line {lineno}: {exc}") from None
        if not 0 <= t < SERIES_LENGTH:
            raise CSVParseError(f"line {lineno}: t_index {t} outside 0..{SERIES_LENGTH - 1}")
        if label not in (0, 1):
            raise CSVParseError(f"line {lineno}: label must be 0 or 1, got {label}")
        if pid in labels and labels[pid] != label:
            raise LabelConflictError(f"patient {pid}: inconsistent labels {labels[pid]} and {label} (line {lineno})")
        labels[pid] = label
        steps = rows.setdefault(pid, {})
        if t in steps:
            raise CSVParseError(f"line {lineno}: duplicate t_index {t} for patient {pid}")
        steps[t] = values

    for pid, steps in rows.items():
        if len(steps) != SERIES_LENGTH:
            missing = sorted(set(range(SERIES_LENGTH)) - set(steps))
            raise IncompleteSeriesError(f"patient {pid}: missing t_index {missing}")

    matrices = {pid: np.array([steps[t] for t in range(SERIES_LENGTH)]) for pid, steps in rows.items()}
    if channels is not None:
        specs = channel_specs(channels)
    elif not matrices:
        specs = list(CHANNELS)
    else:
        filled = ~np.isnan(np.stack(list(matrices.values()))).all(axis=(0, 1))
        specs = [c for c, keep in zip(CHANNELS, filled) if keep]
    cols = [CSV_HEADER.index(c.name) - 2 for c in specs]

    series = []
    for pid, matrix in matrices.items():
        sub = matrix[:, cols]
        if np.isnan(sub).any():
            raise CSVParseError(f"patient {pid}: blank value in selected channel(s)")
        series.append(PatientSeries(pid, sub, labels[pid]))
    if not specs and series:
        raise CSVParseError("no channel column is populated")
    return LabeledDataset(tuple(series), tuple(specs))


def write_csv(ds: LabeledDataset, stream: TextIO) -> None:
    """Write ``ds`` in the ingestion format; absent channels are left blank."""
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    positions = {c.name: j for j, c in enumerate(ds.channels)}
    for p in ds.series:
        for t in range(SERIES_LENGTH):
            cells = [repr(float(p.values[t, positions[c.name]])) if c.name in positions else "" for c in CHANNELS]
            writer.writerow([p.patient_id, t, *cells, p.label])


# ---------------------------------------------------------------------------
# transforms


def in_range_mask(ds: LabeledDataset) -> np.ndarray:
    if not len(ds):
        return np.zeros(0, dtype=bool)
    lower = np.array([c.lower for c in ds.channels])
    upper = np.array([c.upper for c in ds.channels])
    X = ds.X
    return ((X >= lower) & (X <= upper)).all(axis=(1, 2))


def filter_ranges(ds: LabeledDataset) -> LabeledDataset:
    """Drop every patient with at least one value outside its channel bounds (inclusive)."""
    if ds.norm_stats is not None:
        raise DataError("filter_ranges expects an unnormalized dataset")
    keep = np.flatnonzero(in_range_mask(ds))
    return ds.subset(keep)


def fit_norm_stats(X: np.ndarray) -> NormStats:
    centre = X.mean(axis=(0, 1))
    max_abs = np.abs(X - centre).max(axis=(0, 1))
    return NormStats(centre, max_abs)


def normalize(ds: LabeledDataset, stats: NormStats | None = None) -> LabeledDataset:
    """Centre each channel and divide by its largest absolute deviation.

    Statistics are fitted on ``ds`` unless supplied (e.g. training-split
    statistics applied to a test split).
    """
    if ds.norm_stats is not None:
        raise DataError("dataset is already normalized")
    if stats is None:
        if not len(ds):
            raise DataError("cannot fit normalization statistics on an empty dataset")
        stats = fit_norm_stats(ds.X)
    degenerate = [c.name for c, a in zip(ds.channels, stats.max_abs) if not a > 0]
    if degenerate:
        raise DegenerateChannelError(f"constant channel(s) cannot be scaled: {degenerate}")
    if len(stats.mean) != len(ds.channels):
        raise ChannelMismatchError(f"{len(stats.mean)} statistics for {len(ds.channels)} channels")
    X = (ds.X - stats.mean) / stats.max_abs
    return LabeledDataset.from_arrays(X, ds.y, ds.channels, [p.patient_id for p in ds.series], stats)


def denormalize(ds: LabeledDataset) -> LabeledDataset:
    if ds.norm_stats is None:
        raise DataError("dataset carries no normalization statistics")
    stats = ds.norm_stats
    X = ds.X * stats.max_abs + stats.mean
    return LabeledDataset.from_arrays(X, ds.y, ds.channels, [p.patient_id for p in ds.series])


def split_train_test(
    ds: LabeledDataset, test_fraction: float = 0.30, rng: np.random.Generator | int | None = 0
) -> tuple[LabeledDataset, LabeledDataset]:
    """Stratified holdout; each class contributes ``round(n_class * test_fraction)``."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(rng)
    y = ds.y
    test_idx: list[int] = []
    for label in (0, 1):
        members = np.flatnonzero(y == label)
        if members.size == 0:
            raise StratificationError(f"class {label} has no members")
        n_test = int(math.floor(members.size * test_fraction + 0.5))
        test_idx.extend(rng.permutation(members)[:n_test].tolist())
    test_set = set(test_idx)
    train_idx = [i for i in range(len(ds)) if i not in test_set]
    return ds.subset(train_idx), ds.subset(sorted(test_idx))


def balanced_batches(labels, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    """Endless stream of index batches, half from each class, drawn with replacement."""
    if batch_size <= 0 or batch_size % 2:
        raise ValueError(f"batch_size must be a positive even number, got {batch_size}")
    y = labels.y if isinstance(labels, LabeledDataset) else np.asarray(labels)
    pools = [np.flatnonzero(y == label) for label in (0, 1)]
    for label, pool in enumerate(pools):
        if pool.size == 0:
            raise StratificationError(f"class {label} has no members")
    half = batch_size // 2
    while True:
        yield np.concatenate([rng.choice(pool, size=half, replace=True) for pool in pools])
