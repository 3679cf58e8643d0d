"""Fixed-window signature features for irregularly sampled series.

A series is lifted to its piecewise-linear interpolation and summarized over
a fixed grid of time windows.  Each window contributes its local signature
(over the window alone) and a global signature (from the domain start up to
the window's right edge, accumulated incrementally via Chen's relation); the
transform emits one row per window in local, global, or combined view mode.
Because the window boundaries are fixed times rather than sample indices,
two samplings of the same underlying path map to (nearly) the same feature
matrix, which is what makes training under random point drops possible.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .sigcore import TruncatedSignature, feature_count, running_chen_levels, sig_path

__all__ = [
    "TimeSeries",
    "WindowGrid",
    "FeatureMatrix",
    "FeatureConfig",
    "FeatureScaler",
    "make_grid",
    "eval_at",
    "window_signature",
    "multiview_transform",
    "univariate_transform",
    "random_drop",
    "expected_width",
    "series_hash",
    "save_feature_cache",
    "load_feature_cache",
]

VIEW_MODES = ("local", "global", "multiview")


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """One sample: strictly increasing times, values, optional target.

    ``times`` has shape (m,), ``values`` shape (m, d) with m >= 2.  The
    target is a class index for classification or a float vector for
    regression; generators fill it, transforms carry it through untouched.
    """

    times: np.ndarray
    values: np.ndarray
    target: object = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64)
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        if times.ndim != 1:
            raise ValueError("times must be 1-D")
        if values.ndim != 2 or values.shape[0] != times.shape[0]:
            raise ValueError(
                f"values shape {values.shape} inconsistent with {times.shape[0]} times"
            )
        if times.shape[0] < 2:
            raise ValueError("a series needs at least 2 points")
        if not np.all(np.diff(times) > 0):
            raise ValueError("times must be strictly increasing")
        if not (np.all(np.isfinite(times)) and np.all(np.isfinite(values))):
            raise ValueError("times and values must be finite")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def num_points(self) -> int:
        return self.times.shape[0]

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.times[0]), float(self.times[-1])


@dataclass(frozen=True, eq=False)
class WindowGrid:
    """Strictly increasing window boundaries b_0 < ... < b_{num_windows}."""

    boundaries: np.ndarray

    def __post_init__(self):
        boundaries = np.asarray(self.boundaries, dtype=np.float64)
        if boundaries.ndim != 1 or boundaries.shape[0] < 2:
            raise ValueError("a grid needs at least 2 boundaries")
        if not np.all(np.diff(boundaries) > 0):
            raise ValueError("boundaries must be strictly increasing")
        object.__setattr__(self, "boundaries", boundaries)

    @property
    def num_windows(self) -> int:
        return self.boundaries.shape[0] - 1


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """num_windows x width feature matrix, one token row per window."""

    data: np.ndarray
    mode: str
    depth: int
    univariate: bool
    time_augmented: bool

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]


@dataclass
class FeatureConfig:
    """How to turn a series into token rows."""

    mode: str = "multiview"
    depth: int = 2
    num_windows: int = 40
    univariate: bool = False
    time_augment: bool = False

    def __post_init__(self):
        if self.mode not in VIEW_MODES:
            raise ValueError(f"mode must be one of {VIEW_MODES}, got {self.mode!r}")
        if self.depth < 1:
            raise ValueError("depth must be positive")
        if self.num_windows < 1:
            raise ValueError("num_windows must be positive")

    def width(self, dim: int) -> int:
        return expected_width(
            dim, self.depth, self.mode, self.univariate, self.time_augment
        )


def make_grid(domain_start: float, domain_end: float, num_windows: int) -> WindowGrid:
    """Evenly spaced boundaries over [domain_start, domain_end]."""
    if not domain_start < domain_end:
        raise ValueError(
            f"degenerate domain [{domain_start}, {domain_end}]"
        )
    if num_windows < 1:
        raise ValueError("num_windows must be positive")
    return WindowGrid(np.linspace(domain_start, domain_end, num_windows + 1))


def eval_at(ts: TimeSeries, t) -> np.ndarray:
    """Linear interpolation of the series at time(s) t, clamped at the ends.

    Scalar t gives a (d,) vector, an array of m query times an (m, d) matrix.
    """
    t_arr = np.asarray(t, dtype=np.float64)
    out = np.empty(t_arr.shape + (ts.dim,))
    for j in range(ts.dim):
        out[..., j] = np.interp(t_arr, ts.times, ts.values[:, j])
    return out


def _window_points(ts: TimeSeries, a: float, b: float) -> np.ndarray:
    """Interpolated boundary values plus the samples strictly inside (a, b)."""
    lo = int(np.searchsorted(ts.times, a, side="right"))
    hi = int(np.searchsorted(ts.times, b, side="left"))
    return np.vstack([eval_at(ts, a)[None, :], ts.values[lo:hi], eval_at(ts, b)[None, :]])


def window_signature(ts: TimeSeries, a: float, b: float, depth: int) -> TruncatedSignature:
    """Signature of the interpolated path restricted to [a, b]."""
    if not a < b:
        raise ValueError(f"window start {a} must precede end {b}")
    return sig_path(_window_points(ts, a, b), depth)


def expected_width(
    dim: int, depth: int, mode: str, univariate: bool = False, time_augment: bool = False
) -> int:
    """Token width implied by the mode, depth, and augmentation flags."""
    views = 2 if mode == "multiview" else 1
    if univariate:
        return views * dim * feature_count(2, depth)
    d_path = dim + 1 if time_augment else dim
    return views * feature_count(d_path, depth)


def _check_grid_domain(ts: TimeSeries, grid: WindowGrid):
    t0, t1 = ts.domain
    tol = 1e-9 * max(1.0, t1 - t0)
    if grid.boundaries[0] < t0 - tol or grid.boundaries[-1] > t1 + tol:
        raise ValueError(
            f"grid [{grid.boundaries[0]}, {grid.boundaries[-1]}] extends beyond "
            f"the sampled domain [{t0}, {t1}]"
        )


def _segments_by_window(ts: TimeSeries, grid: WindowGrid):
    """Increments of the boundary-extended path plus each window's first segment.

    The extended path visits every window boundary (interpolated) and every
    sample strictly inside a window, in time order, so no segment straddles a
    boundary and window k owns one contiguous run of segments.
    """
    bounds = grid.boundaries
    bvals = eval_at(ts, bounds)
    pos = np.minimum(np.searchsorted(bounds, ts.times), bounds.shape[0] - 1)
    on_boundary = bounds[pos] == ts.times
    inner = (ts.times > bounds[0]) & (ts.times < bounds[-1]) & ~on_boundary
    ext_t = np.concatenate([bounds, ts.times[inner]])
    ext_v = np.concatenate([bvals, ts.values[inner]])
    order = np.argsort(ext_t, kind="stable")
    deltas = np.diff(ext_v[order], axis=0)
    seg_window = np.searchsorted(bounds, ext_t[order][:-1], side="right") - 1
    starts = np.searchsorted(seg_window, np.arange(grid.num_windows))
    return deltas, starts


def _window_levels(deltas: np.ndarray, starts: np.ndarray, depth: int):
    """Signature levels of every window in one cumulative sweep.

    Same recursion as sig_path, but running prefixes are taken relative to
    the owning window's first segment, so one pass yields all windows' local
    signatures; level k comes back as a (num_windows, dim**k) array.
    """
    nseg, dim = deltas.shape
    ends = np.append(starts[1:], nseg) - 1
    counts = np.diff(np.append(starts, nseg))
    powers = [deltas]
    for p in range(2, depth + 1):
        powers.append(
            (powers[-1][:, :, None] * deltas[:, None, :]).reshape(nseg, -1) / p
        )
    locals_ = []
    run_before = []  # window-relative running levels before each segment
    for k in range(1, depth + 1):
        term = powers[k - 1]
        if k > 1:
            term = term.copy()
            for j in range(1, k):
                term += (
                    run_before[j - 1][:, :, None] * powers[k - j - 1][:, None, :]
                ).reshape(nseg, -1)
        csum = np.vstack([np.zeros((1, term.shape[1])), np.cumsum(term, axis=0)])
        base = csum[starts]
        run_before.append(csum[:-1] - np.repeat(base, counts, axis=0))
        locals_.append(csum[ends + 1] - base)
    return locals_


def multiview_transform(
    ts: TimeSeries,
    grid: WindowGrid,
    depth: int,
    mode: str = "multiview",
    time_augment: bool = False,
) -> FeatureMatrix:
    """One token row per window: local and/or accumulated global signature.

    Row k holds the flattened signature levels of the window [b_{k-1}, b_k]
    (local), of [b_0, b_k] (global), or their concatenation with the global
    block first (multiview).  Locals are computed in one vectorized sweep
    over the samples and globals accumulate them with Chen's relation, so the
    transform costs a handful of passes regardless of the window count.  With
    time_augment the sampling times are appended as an extra value channel
    before any signature is computed.
    """
    if mode not in VIEW_MODES:
        raise ValueError(f"mode must be one of {VIEW_MODES}, got {mode!r}")
    if depth < 1:
        raise ValueError("depth must be positive")
    _check_grid_domain(ts, grid)

    work = ts
    if time_augment:
        work = TimeSeries(ts.times, np.hstack([ts.values, ts.times[:, None]]))

    local_levels = _window_levels(*_segments_by_window(work, grid), depth)
    if mode == "local":
        rows = np.hstack(local_levels)
    elif mode == "global":
        rows = np.hstack(running_chen_levels(local_levels))
    else:
        rows = np.hstack(running_chen_levels(local_levels) + local_levels)
    return FeatureMatrix(rows, mode, depth, False, time_augment)


def univariate_transform(
    ts: TimeSeries, grid: WindowGrid, depth: int, mode: str = "multiview"
) -> FeatureMatrix:
    """Per-channel transform of each (value, time) plane, blocks concatenated.

    Channel i is paired with the time channel and transformed on its own, so
    the width grows linearly in the number of channels instead of
    exponentially.  For a 1-channel series this coincides exactly with
    ``multiview_transform(..., time_augment=True)``.
    """
    blocks = []
    for i in range(ts.dim):
        channel = TimeSeries(ts.times, ts.values[:, i : i + 1])
        blocks.append(
            multiview_transform(channel, grid, depth, mode, time_augment=True).data
        )
    return FeatureMatrix(np.hstack(blocks), mode, depth, True, True)


def random_drop(ts: TimeSeries, keep_prob: float, seed) -> TimeSeries:
    """Keep each interior point with probability keep_prob; endpoints always stay."""
    if not 0.0 < keep_prob <= 1.0:
        raise ValueError(f"keep_prob must be in (0, 1], got {keep_prob}")
    if ts.num_points < 3:
        raise ValueError("dropping needs at least 3 points")
    rng = np.random.default_rng(seed)
    keep = rng.random(ts.num_points - 2) < keep_prob
    idx = np.concatenate([[0], np.flatnonzero(keep) + 1, [ts.num_points - 1]])
    return TimeSeries(ts.times[idx], ts.values[idx], ts.target)


@dataclass
class FeatureScaler:
    """Per-column z-score with statistics frozen from the training tokens."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, matrices) -> "FeatureScaler":
        stacked = np.concatenate([np.asarray(m, dtype=np.float64) for m in matrices])
        mean = stacked.mean(axis=0)
        std = stacked.std(axis=0)
        # constant columns (e.g. the local time increment) map to zero
        std = np.where(std < 1e-12, 1.0, std)
        return cls(mean, std)

    def transform(self, matrix) -> np.ndarray:
        return (np.asarray(matrix, dtype=np.float64) - self.mean) / self.std


def series_hash(ts: TimeSeries) -> str:
    """Content hash of a series, used to key cached features to their source."""
    h = hashlib.sha256()
    h.update(np.int64(ts.num_points).tobytes())
    h.update(np.int64(ts.dim).tobytes())
    h.update(np.ascontiguousarray(ts.times).tobytes())
    h.update(np.ascontiguousarray(ts.values).tobytes())
    return h.hexdigest()


def save_feature_cache(path, features: np.ndarray, grid: WindowGrid, config: FeatureConfig, hashes):
    """Write an (N, rows, width) feature stack plus its provenance to ``path``.

    The container is an npz archive; float64 payloads round-trip bit-exactly.
    """
    meta = {
        "mode": config.mode,
        "depth": config.depth,
        "num_windows": config.num_windows,
        "univariate": config.univariate,
        "time_augment": config.time_augment,
    }
    np.savez(
        path,
        features=np.asarray(features, dtype=np.float64),
        boundaries=grid.boundaries,
        meta=np.array(json.dumps(meta)),
        hashes=np.array(list(hashes)),
    )


def load_feature_cache(path):
    """Read back a feature cache: (features, grid, config, hashes)."""
    with np.load(path, allow_pickle=False) as archive:
        features = archive["features"]
        grid = WindowGrid(archive["boundaries"])
        meta = json.loads(str(archive["meta"]))
        hashes = [str(h) for h in archive["hashes"]]
    config = FeatureConfig(
        mode=meta["mode"],
        depth=int(meta["depth"]),
        num_windows=int(meta["num_windows"]),
        univariate=bool(meta["univariate"]),
        time_augment=bool(meta["time_augment"]),
    )
    return features, grid, config, hashes
