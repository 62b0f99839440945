"""Synthetic ground-truth datasets standing in for private clinical data."""

from __future__ import annotations

import numpy as np

from .data import CHANNELS, SERIES_LENGTH, LabeledDataset, channel_specs

# midpoint of each channel's admissible range
_CENTRES = {c.name: 0.5 * (c.lower + c.upper) for c in CHANNELS}


def _class_counts(n: int, minority_fraction: float) -> tuple[int, int]:
    n_pos = int(round(n * minority_fraction))
    if not 0 < n_pos < n:
        raise ValueError(f"minority_fraction {minority_fraction} leaves an empty class for n={n}")
    return n - n_pos, n_pos


def sine_cycles(
    n: int,
    minority_fraction: float = 0.2,
    noise: float = 0.1,
    amplitude: float = 1.0,
    channels=("temperature", "respiratory_rate"),
    phase_jitter: float = 0.0,
    rng: np.random.Generator | int | None = 0,
) -> LabeledDataset:
    """Class 0 traces one sine cycle over the 20 steps, class 1 (the minority) two.

    Channel ``j`` is phase-shifted by ``j * pi / 2`` (sine, cosine, ...) and
    offset to the middle of its admissible range, so the data also passes
    range filtering.
    """
    rng = np.random.default_rng(rng)
    specs = channel_specs(channels)
    n0, n1 = _class_counts(n, minority_fraction)
    labels = rng.permutation(np.repeat([0, 1], [n0, n1]))
    t = np.arange(SERIES_LENGTH) / SERIES_LENGTH
    cycles = labels + 1
    phase = rng.uniform(-phase_jitter, phase_jitter, size=n) if phase_jitter else np.zeros(n)
    offsets = np.arange(len(specs)) * (np.pi / 2)
    angle = 2 * np.pi * cycles[:, None, None] * t[None, :, None] + phase[:, None, None] + offsets[None, None, :]
    X = amplitude * np.sin(angle) + noise * rng.standard_normal((n, SERIES_LENGTH, len(specs)))
    X += np.array([_CENTRES[c.name] for c in specs])
    return LabeledDataset.from_arrays(X, labels, specs, [f"toy-{i:06d}" for i in range(n)])


def constant_levels(
    n: int,
    channels=("temperature",),
    level: float = 0.5,
    minority_fraction: float = 0.5,
    rng: np.random.Generator | int | None = 0,
) -> LabeledDataset:
    """Class 1 sits at ``+level``, class 0 at ``-level``, around the range midpoint."""
    rng = np.random.default_rng(rng)
    specs = channel_specs(channels)
    n0, n1 = _class_counts(n, minority_fraction)
    labels = rng.permutation(np.repeat([0, 1], [n0, n1]))
    sign = np.where(labels == 1, 1.0, -1.0)
    X = np.broadcast_to(sign[:, None, None] * level, (n, SERIES_LENGTH, len(specs))).copy()
    X += np.array([_CENTRES[c.name] for c in specs])
    return LabeledDataset.from_arrays(X, labels, specs, [f"lvl-{i:06d}" for i in range(n)])
