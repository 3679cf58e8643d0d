"""Synthetic dataset generators and CSV ingestion.

Generators draw every sample from its own child seed, so a dataset is a pure
function of (seed, shape parameters) and individual samples can be reproduced
without regenerating the rest.  The CSV schema is the interchange contract:
header ``series_id,t,x1..xd[,y]``, UTF-8, '.' decimal, comma separated, one
row per sample point, rows of one series contiguous or not (they are grouped
on read and ordered by t).
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as npoly

from .features import TimeSeries

__all__ = [
    "Dataset",
    "make_splits",
    "gen_sinusoidal",
    "gen_long_sinusoidal",
    "gen_spatial_pair",
    "save_csv",
    "load_csv",
]

OMEGA_RANGE = (10.0, 500.0)
DEFAULT_SPLIT = (0.7, 0.15, 0.15)


@dataclass
class Dataset:
    """Samples plus task declaration, split indices, and provenance."""

    samples: list
    task: str  # "classify" | "regress"
    num_outputs: int
    splits: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.task not in ("classify", "regress"):
            raise ValueError(f"unknown task {self.task!r}")
        if not self.samples:
            raise ValueError("dataset has no samples")
        dims = {s.dim for s in self.samples}
        if len(dims) != 1:
            raise ValueError(f"samples disagree on dimension: {sorted(dims)}")
        if self.splits:
            seen = sorted(i for idx in self.splits.values() for i in idx)
            if seen != list(range(len(self.samples))):
                raise ValueError("splits must be disjoint and cover all samples")

    @property
    def dim(self) -> int:
        return self.samples[0].dim

    def split_samples(self, name: str) -> list:
        return [self.samples[i] for i in self.splits[name]]

    def targets(self, name: str) -> np.ndarray:
        out = [self.samples[i].target for i in self.splits[name]]
        if self.task == "classify":
            return np.asarray(out, dtype=np.int64)
        return np.asarray(out, dtype=np.float64).reshape(len(out), self.num_outputs)

    def domain(self) -> tuple[float, float]:
        return (
            min(s.times[0] for s in self.samples),
            max(s.times[-1] for s in self.samples),
        )


def make_splits(targets, fractions=DEFAULT_SPLIT, seed=0, stratify=True) -> dict:
    """Seeded train/val/test index partition, stratified by class when asked.

    Fractions are renormalized; within each stratum the train and val shares
    round down and test absorbs the remainder, so the partition is exact.
    """
    fractions = np.asarray(fractions, dtype=float)
    if fractions.shape != (3,) or np.any(fractions <= 0):
        raise ValueError("need three positive split fractions")
    fractions = fractions / fractions.sum()
    targets = np.asarray(targets)
    rng = np.random.default_rng(seed)
    groups = (
        [np.flatnonzero(targets == c) for c in np.unique(targets)]
        if stratify
        else [np.arange(len(targets))]
    )
    splits = {"train": [], "val": [], "test": []}
    for idx in groups:
        idx = rng.permutation(idx)
        n_train = int(fractions[0] * len(idx))
        n_val = int(fractions[1] * len(idx))
        splits["train"].extend(idx[:n_train].tolist())
        splits["val"].extend(idx[n_train : n_train + n_val].tolist())
        splits["test"].extend(idx[n_train + n_val :].tolist())
    return {k: sorted(v) for k, v in splits.items()}


def _class_frequencies(num_classes: int) -> np.ndarray:
    return np.linspace(OMEGA_RANGE[0], OMEGA_RANGE[1], num_classes)


def _sinusoid(times, omega, nu, trend_coeffs):
    trend = npoly.polyval(times, np.asarray(trend_coeffs, dtype=float))
    return trend * np.sin(omega * times + nu)


def gen_sinusoidal(
    num_classes: int,
    samples_per_class: int,
    length: int,
    t_end: float = 1.0,
    noise_sigma: float = 0.1,
    trend_coeffs=(1.0, 0.0, 0.5),
    seed=0,
    split_fractions=DEFAULT_SPLIT,
) -> Dataset:
    """Frequency-classification task: label j gets the j-th of num_classes
    frequencies evenly spaced over [10, 500] rad/time.

    Each sample is trend(t) * sin(omega t + nu) + noise on a regular grid of
    ``length`` points over [0, t_end], nu uniform on [0, 2pi), noise iid
    Gaussian, trend a polynomial with the given ascending coefficients.
    """
    if num_classes < 2 or samples_per_class < 1:
        raise ValueError("need at least 2 classes and 1 sample per class")
    if length < 2:
        raise ValueError("length must be at least 2")
    omegas = _class_frequencies(num_classes)
    times = np.linspace(0.0, t_end, length)
    samples = []
    for j in range(num_classes):
        for r in range(samples_per_class):
            rng = np.random.default_rng([seed, j, r])
            nu = rng.uniform(0.0, 2.0 * np.pi)
            noise = rng.normal(0.0, noise_sigma, size=length) if noise_sigma > 0 else 0.0
            x = _sinusoid(times, omegas[j], nu, trend_coeffs) + noise
            samples.append(TimeSeries(times, x[:, None], target=j))
    labels = [s.target for s in samples]
    return Dataset(
        samples=samples,
        task="classify",
        num_outputs=num_classes,
        splits=make_splits(labels, split_fractions, seed),
        provenance={
            "generator": "sinusoidal",
            "num_classes": num_classes,
            "samples_per_class": samples_per_class,
            "length": length,
            "t_end": t_end,
            "noise_sigma": noise_sigma,
            "trend_coeffs": list(trend_coeffs),
            "seed": seed,
        },
    )


def gen_long_sinusoidal(
    num_classes: int,
    samples_per_class: int,
    length: int,
    t_end: float = 1.0,
    noise_sigma: float = 0.1,
    trend_coeffs=(1.0, 0.0, 0.5),
    switch_frac: float = 0.1,
    seed=0,
    split_fractions=DEFAULT_SPLIT,
) -> Dataset:
    """Long-range variant: the class frequency only lasts until
    t0 = switch_frac * t_end, after which a per-sample uniform frequency
    takes over; the label is still decided by the early frequency.

    switch_frac = 1.0 never switches and reduces to gen_sinusoidal exactly
    (samples draw phase and noise before the unused late frequency).
    """
    if not 0.0 < switch_frac <= 1.0:
        raise ValueError(f"switch_frac must be in (0, 1], got {switch_frac}")
    if num_classes < 2 or samples_per_class < 1:
        raise ValueError("need at least 2 classes and 1 sample per class")
    if length < 2:
        raise ValueError("length must be at least 2")
    omegas = _class_frequencies(num_classes)
    times = np.linspace(0.0, t_end, length)
    t0 = switch_frac * t_end
    early = times <= t0
    samples = []
    for j in range(num_classes):
        for r in range(samples_per_class):
            # same draw order as gen_sinusoidal, late frequency drawn last
            rng = np.random.default_rng([seed, j, r])
            nu = rng.uniform(0.0, 2.0 * np.pi)
            noise = rng.normal(0.0, noise_sigma, size=length) if noise_sigma > 0 else 0.0
            omega_late = rng.uniform(*OMEGA_RANGE)
            x = np.where(
                early,
                _sinusoid(times, omegas[j], nu, trend_coeffs),
                _sinusoid(times, omega_late, nu, trend_coeffs),
            ) + noise
            samples.append(TimeSeries(times, x[:, None], target=j))
    labels = [s.target for s in samples]
    return Dataset(
        samples=samples,
        task="classify",
        num_outputs=num_classes,
        splits=make_splits(labels, split_fractions, seed),
        provenance={
            "generator": "long_sinusoidal",
            "num_classes": num_classes,
            "samples_per_class": samples_per_class,
            "length": length,
            "t_end": t_end,
            "noise_sigma": noise_sigma,
            "trend_coeffs": list(trend_coeffs),
            "switch_frac": switch_frac,
            "seed": seed,
        },
    )


def gen_spatial_pair(
    num_samples: int,
    length: int,
    equal_frac: float = 0.01,
    seed=0,
    split_fractions=DEFAULT_SPLIT,
) -> Dataset:
    """Two-channel equality task: each channel is an independent sinusoid;
    for the positive half the trailing ceil(equal_frac * length) samples of
    channel 2 are copied from channel 1, and the label says whether that
    final stretch matches.
    """
    if length < 100:
        raise ValueError("length must be at least 100 so the tail is nonempty")
    if num_samples < 2:
        raise ValueError("need at least 2 samples")
    if not 0.0 < equal_frac <= 1.0:
        raise ValueError(f"equal_frac must be in (0, 1], got {equal_frac}")
    tail = int(np.ceil(equal_frac * length))
    times = np.linspace(0.0, 1.0, length)
    labels = np.zeros(num_samples, dtype=np.int64)
    labels[: num_samples // 2] = 1
    labels = np.random.default_rng([seed, 0]).permutation(labels)
    samples = []
    for i in range(num_samples):
        rng = np.random.default_rng([seed, 1, i])
        w1, v1, w2, v2 = rng.uniform(0.0, 2.0 * np.pi, size=4)
        values = np.stack(
            [np.sin(w1 * times + v1), np.sin(w2 * times + v2)], axis=1
        )
        if labels[i] == 1:
            values[-tail:, 1] = values[-tail:, 0]
        samples.append(TimeSeries(times, values, target=int(labels[i])))
    return Dataset(
        samples=samples,
        task="classify",
        num_outputs=2,
        splits=make_splits(labels, split_fractions, seed),
        provenance={
            "generator": "spatial_pair",
            "num_samples": num_samples,
            "length": length,
            "equal_frac": equal_frac,
            "seed": seed,
        },
    )


def save_csv(dataset: Dataset, path):
    """Serialize to the interchange schema; float repr round-trips exactly."""
    if dataset.task == "regress" and dataset.num_outputs != 1:
        raise ValueError("CSV schema stores a single target column")
    dim = dataset.dim
    header = ["series_id", "t"] + [f"x{j + 1}" for j in range(dim)] + ["y"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for sid, ts in enumerate(dataset.samples):
            if dataset.task == "classify":
                y = str(int(ts.target))
            else:
                y = repr(float(np.asarray(ts.target).ravel()[0]))
            for t, row in zip(ts.times, ts.values):
                writer.writerow([sid, repr(float(t))] + [repr(float(v)) for v in row] + [y])


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def load_csv(
    path,
    task: str = "classify",
    split_fractions=DEFAULT_SPLIT,
    split_seed=0,
) -> Dataset:
    """Parse the interchange schema back into a Dataset.

    Rows are grouped by series_id and ordered by t; a duplicated timestamp
    within a series is rejected with its series id and file row number.
    """
    if task not in ("classify", "regress"):
        raise ValueError(f"unknown task {task!r}")
    with open(path, "r", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        if len(header) < 3 or header[0] != "series_id" or header[1] != "t":
            raise ValueError(f"{path}: header must start with series_id,t,x1...")
        has_target = header[-1] == "y"
        x_cols = header[2 : -1 if has_target else len(header)]
        expected = [f"x{j + 1}" for j in range(len(x_cols))]
        if x_cols != expected or not x_cols:
            raise ValueError(f"{path}: value columns must be named x1..xd, got {x_cols}")

        groups: dict = {}
        for row_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValueError(
                    f"{path}: row {row_no} has {len(row)} fields, expected {len(header)}"
                )
            sid = row[0]
            try:
                t = float(row[1])
                xs = [float(v) for v in row[2 : 2 + len(x_cols)]]
                y = row[-1] if has_target else None
            except ValueError as exc:
                raise ValueError(f"{path}: row {row_no}: {exc}") from None
            groups.setdefault(sid, []).append((t, row_no, xs, y))

    if not groups:
        raise ValueError(f"{path}: no data rows")
    samples = []
    for sid, rows in groups.items():
        rows.sort(key=lambda r: r[0])
        for (t0, _, _, _), (t1, row_no, _, _) in zip(rows, rows[1:]):
            if t1 <= t0:
                raise ValueError(
                    f"{path}: series {sid!r}: duplicate timestamp {t1} at row {row_no}"
                )
        target = None
        if has_target:
            raw = {r[3] for r in rows}
            if task == "classify":
                if len(raw) != 1:
                    raise ValueError(f"{path}: series {sid!r} has inconsistent labels {raw}")
                target = int(rows[0][3])
                if target < 0:
                    raise ValueError(f"{path}: series {sid!r}: negative class {target}")
            else:
                if len(raw) != 1:
                    raise ValueError(f"{path}: series {sid!r} has inconsistent targets {raw}")
                target = np.array([float(rows[0][3])])
        samples.append(
            TimeSeries(
                np.array([r[0] for r in rows]),
                np.array([r[2] for r in rows]),
                target=target,
            )
        )

    if task == "classify":
        labels = [s.target for s in samples]
        if has_target and any(l is None for l in labels):
            raise ValueError(f"{path}: missing labels")
        num_outputs = int(max(labels)) + 1 if has_target else 0
        split_targets = labels if has_target else np.zeros(len(samples))
    else:
        num_outputs = 1
        split_targets = np.zeros(len(samples))
    return Dataset(
        samples=samples,
        task=task,
        num_outputs=num_outputs,
        splits=make_splits(
            split_targets, split_fractions, split_seed, stratify=task == "classify"
        ),
        provenance={"source": str(path), "sha256": file_hash(path)},
    )
