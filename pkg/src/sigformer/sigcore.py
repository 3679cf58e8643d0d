"""Exact truncated signatures of piecewise-linear paths.

The signature of a path collects its iterated integrals, level k holding one
entry per length-k multi-index over the path's channels.  For a single linear
segment the signature is the tensor exponential of the increment, so level k
is ``delta^(tensor k) / k!``, and the signature of a concatenation of segments
is the truncated tensor product of the pieces' signatures (Chen's relation).
Both facts together give the signature of any piecewise-linear path in closed
form, which is what this module computes.

Levels are stored as dense float64 arrays flattened in row-major multi-index
order, so level k of a d-channel path occupies ``d**k`` slots.  The level-0
entry is the constant 1 and is never stored.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "TruncatedSignature",
    "Segment",
    "identity",
    "feature_count",
    "one_variation",
    "sig_segment",
    "chen_product",
    "sig_path",
    "decay_bound",
]


def feature_count(dim: int, depth: int) -> int:
    """Number of stored entries, sum of dim**k for k = 1..depth.

    Equals d(d^n - 1)/(d - 1) for dim d > 1 and truncation depth n.
    """
    if dim < 1 or depth < 1:
        raise ValueError("dim and depth must be positive")
    return sum(dim**k for k in range(1, depth + 1))


@dataclass(frozen=True, eq=False)
class TruncatedSignature:
    """Signature truncated at ``depth``, one flat float64 array per level.

    ``levels[k - 1]`` holds level k with ``dim**k`` entries ordered row-major
    by multi-index (i1, ..., ik).
    """

    dim: int
    depth: int
    levels: tuple[np.ndarray, ...]

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"dim must be positive, got {self.dim}")
        if self.depth < 1:
            raise ValueError(f"depth must be positive, got {self.depth}")
        if len(self.levels) != self.depth:
            raise ValueError(
                f"expected {self.depth} level tensors, got {len(self.levels)}"
            )
        for k, lvl in enumerate(self.levels, start=1):
            if lvl.shape != (self.dim**k,):
                raise ValueError(
                    f"level {k} must have {self.dim**k} entries, "
                    f"got shape {lvl.shape}"
                )
            if not np.all(np.isfinite(lvl)):
                raise ValueError(f"level {k} contains non-finite entries")

    def level(self, k: int) -> np.ndarray:
        """Flattened level-k tensor, k in 1..depth."""
        if not 1 <= k <= self.depth:
            raise ValueError(f"level {k} outside 1..{self.depth}")
        return self.levels[k - 1]

    def flatten(self) -> np.ndarray:
        """All stored levels concatenated, level 1 first."""
        return np.concatenate(self.levels)

    def __repr__(self):
        return f"TruncatedSignature(dim={self.dim}, depth={self.depth})"


@dataclass(frozen=True)
class Segment:
    """One linear piece of a path, with its endpoint values and times."""

    start_value: np.ndarray
    end_value: np.ndarray
    start_time: float
    end_time: float

    def __post_init__(self):
        start = np.asarray(self.start_value, dtype=np.float64)
        end = np.asarray(self.end_value, dtype=np.float64)
        if start.ndim != 1 or end.ndim != 1:
            raise ValueError("segment endpoints must be 1-D vectors")
        if start.shape != end.shape:
            raise ValueError(
                f"endpoint dimensions differ: {start.shape} vs {end.shape}"
            )
        if not self.start_time < self.end_time:
            raise ValueError(
                f"start_time {self.start_time} must precede end_time {self.end_time}"
            )
        object.__setattr__(self, "start_value", start)
        object.__setattr__(self, "end_value", end)


def identity(dim: int, depth: int) -> TruncatedSignature:
    """Neutral element of chen_product: every stored level is zero."""
    levels = tuple(np.zeros(dim**k) for k in range(1, depth + 1))
    return TruncatedSignature(dim, depth, levels)


def one_variation(values) -> float:
    """Total length of a piecewise-linear path: sum of Euclidean increment norms.

    Row norms are computed with max-rescaling so the squares cannot underflow
    or overflow even for extreme increment magnitudes.
    """
    values = _as_path(values)
    inc = np.abs(np.diff(values, axis=0))
    peak = inc.max(axis=1)
    norms = np.zeros(inc.shape[0])
    nz = peak > 0
    scaled = inc[nz] / peak[nz, None]
    norms[nz] = peak[nz] * np.sqrt((scaled * scaled).sum(axis=1))
    return float(norms.sum())


def sig_segment(seg: Segment, depth: int) -> TruncatedSignature:
    """Closed-form signature of one linear segment.

    Level k equals the k-fold tensor power of the increment divided by k!,
    so the result depends only on the endpoint values, not the timestamps.
    """
    if depth < 1:
        raise ValueError(f"depth must be positive, got {depth}")
    delta = seg.end_value - seg.start_value
    levels = [delta.copy()]
    for k in range(2, depth + 1):
        levels.append(np.outer(levels[-1], delta).ravel() / k)
    return TruncatedSignature(delta.shape[0], depth, tuple(levels))


def chen_product(a: TruncatedSignature, b: TruncatedSignature) -> TruncatedSignature:
    """Truncated tensor product of two signatures.

    Output level k is the sum over j of (level j of a) tensor (level k-j of b),
    with the implicit level-0 scalars equal to 1; levels above the common
    truncation depth are discarded.  When a and b are signatures of adjacent
    path pieces this is the signature of their concatenation.
    """
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    if a.depth != b.depth:
        raise ValueError(f"depth mismatch: {a.depth} vs {b.depth}")
    levels = []
    for k in range(1, a.depth + 1):
        out = a.levels[k - 1] + b.levels[k - 1]
        for j in range(1, k):
            out = out + np.outer(a.levels[j - 1], b.levels[k - j - 1]).ravel()
        levels.append(out)
    return TruncatedSignature(a.dim, a.depth, tuple(levels))


def _as_path(values) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    if values.ndim != 2:
        raise ValueError(f"path values must be a 2-D array, got ndim={values.ndim}")
    return values


def sig_path(values, depth: int) -> TruncatedSignature:
    """Signature of the piecewise-linear path through ``values``.

    ``values`` is an (m, d) array of at least two points (a 1-D array is read
    as a d=1 path).  Equivalent to folding the segment signatures left to
    right under chen_product, but computed level by level with cumulative
    sums so long paths cost a handful of vectorized passes.
    """
    if depth < 1:
        raise ValueError(f"depth must be positive, got {depth}")
    values = _as_path(values)
    if values.shape[0] < 2:
        raise ValueError("a path needs at least 2 points")
    deltas = np.diff(values, axis=0)
    nseg, dim = deltas.shape

    # powers[p] holds delta^(tensor p+1) / (p+1)! per segment, flattened
    powers = [deltas]
    for p in range(2, depth + 1):
        nxt = (powers[-1][:, :, None] * deltas[:, None, :]).reshape(nseg, -1) / p
        powers.append(nxt)

    # running[k][m] = level k+1 of the signature of the first m segments;
    # the recursion is one application of Chen's relation per segment.
    running = [np.vstack([np.zeros(dim), np.cumsum(deltas, axis=0)])]
    for k in range(2, depth + 1):
        term = powers[k - 1].copy()
        for j in range(1, k):
            prefix = running[j - 1][:-1]
            term += (prefix[:, :, None] * powers[k - j - 1][:, None, :]).reshape(
                nseg, -1
            )
        running.append(np.vstack([np.zeros(dim**k), np.cumsum(term, axis=0)]))

    return TruncatedSignature(dim, depth, tuple(r[-1] for r in running))


def running_chen_levels(piece_levels: list[np.ndarray]) -> list[np.ndarray]:
    """Prefix products of consecutive piece signatures, level by level.

    ``piece_levels[k - 1]`` holds level k of N consecutive pieces as an
    (N, dim**k) array; the result has the same layout and row m carries the
    signature of pieces 0..m combined.  This is the cumulative form of
    folding chen_product left to right.
    """
    out = [np.cumsum(piece_levels[0], axis=0)]
    n = piece_levels[0].shape[0]
    for k in range(2, len(piece_levels) + 1):
        term = piece_levels[k - 1].copy()
        for j in range(1, k):
            prev = out[j - 1]
            shifted = np.vstack([np.zeros((1, prev.shape[1])), prev[:-1]])
            term += (shifted[:, :, None] * piece_levels[k - j - 1][:, None, :]).reshape(
                n, -1
            )
        out.append(np.cumsum(term, axis=0))
    return out


def decay_bound(sig: TruncatedSignature, path_one_variation: float) -> bool:
    """Check the factorial decay bound at every stored level.

    True iff the max-norm of level k is at most (1-variation)^k / k! for all
    k up to the truncation depth.  The caller supplies the 1-variation of the
    generating path.  Intended as a test oracle.
    """
    if path_one_variation < 0:
        raise ValueError(f"1-variation must be nonnegative, got {path_one_variation}")
    for k in range(1, sig.depth + 1):
        bound = path_one_variation**k / math.factorial(k)
        if np.abs(sig.levels[k - 1]).max(initial=0.0) > bound:
            return False
    return True
