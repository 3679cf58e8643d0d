"""Randomized self-tests of the signature identities.

Each trial draws a random piecewise-linear path and checks, numerically, the
algebraic facts the rest of the package relies on: concatenation consistency
(splitting a path and multiplying the pieces reproduces the whole), the
equivalence of the vectorized path signature with an explicit left fold of
segment signatures, associativity of the product, invariance under inserting
collinear interior points, and the factorial decay bound.

Errors are reported relative to max(1, scale of the reference level), so the
numbers are comparable across levels whose magnitudes differ by factorials.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .sigcore import (
    Segment,
    TruncatedSignature,
    chen_product,
    decay_bound,
    identity,
    one_variation,
    sig_path,
    sig_segment,
)

__all__ = ["PropertyReport", "run_property_suite"]


def signature_error(a: TruncatedSignature, b: TruncatedSignature) -> float:
    """Max over levels of |a - b|_inf / max(1, |b|_inf)."""
    err = 0.0
    for la, lb in zip(a.levels, b.levels):
        scale = max(1.0, float(np.abs(lb).max(initial=0.0)))
        err = max(err, float(np.abs(la - lb).max(initial=0.0)) / scale)
    return err


def fold_segments(values: np.ndarray, depth: int) -> TruncatedSignature:
    """Left fold of closed-form segment signatures under chen_product."""
    sig = identity(values.shape[1], depth)
    for i in range(values.shape[0] - 1):
        seg = Segment(values[i], values[i + 1], float(i), float(i + 1))
        sig = chen_product(sig, sig_segment(seg, depth))
    return sig


@dataclass
class PropertyReport:
    """Worst observed errors over all trials, one slot per property."""

    trials: int
    max_chen_error: float = 0.0
    max_fold_error: float = 0.0
    max_assoc_error: float = 0.0
    max_insert_error: float = 0.0
    decay_failures: int = 0
    errors_by_property: dict = field(default_factory=dict)

    def passed(self, tol: float = 1e-12) -> bool:
        return (
            self.max_chen_error <= tol
            and self.max_fold_error <= tol
            and self.max_assoc_error <= tol
            and self.max_insert_error <= tol
            and self.decay_failures == 0
        )

    def lines(self, tol: float = 1e-12) -> list[str]:
        def fmt(name, err):
            status = "pass" if err <= tol else "FAIL"
            return f"{status}  {name:<28s} max error {err:.3e}"

        decay = "pass" if self.decay_failures == 0 else "FAIL"
        return [
            fmt("chen split consistency", self.max_chen_error),
            fmt("segment-fold equivalence", self.max_fold_error),
            fmt("associativity", self.max_assoc_error),
            fmt("collinear insertion", self.max_insert_error),
            f"{decay}  factorial decay bound        "
            f"{self.decay_failures} violations in {self.trials} trials",
        ]


def _insert_collinear(values: np.ndarray, rng) -> np.ndarray:
    """Insert one interior point exactly on a randomly chosen segment."""
    i = int(rng.integers(values.shape[0] - 1))
    frac = float(rng.uniform(0.1, 0.9))
    point = values[i] + frac * (values[i + 1] - values[i])
    return np.vstack([values[: i + 1], point, values[i + 1 :]])


def run_property_suite(
    trials: int = 200,
    max_dim: int = 4,
    max_depth: int = 5,
    max_segments: int = 50,
    seed: int = 0,
) -> PropertyReport:
    """Run every property on ``trials`` random paths and report worst errors."""
    if trials < 1:
        raise ValueError("trials must be positive")
    report = PropertyReport(trials=trials)
    for trial in range(trials):
        rng = np.random.default_rng([seed, trial])
        dim = int(rng.integers(1, max_dim + 1))
        depth = int(rng.integers(1, max_depth + 1))
        nseg = int(rng.integers(1, max_segments + 1))
        values = rng.normal(size=(nseg + 1, dim))

        whole = sig_path(values, depth)

        report.max_fold_error = max(
            report.max_fold_error, signature_error(fold_segments(values, depth), whole)
        )

        if nseg >= 2:
            split = int(rng.integers(1, nseg))
            joined = chen_product(
                sig_path(values[: split + 1], depth), sig_path(values[split:], depth)
            )
            report.max_chen_error = max(
                report.max_chen_error, signature_error(joined, whole)
            )

        if nseg >= 3:
            cuts = sorted(rng.choice(np.arange(1, nseg), size=2, replace=False))
            a = sig_path(values[: cuts[0] + 1], depth)
            b = sig_path(values[cuts[0] : cuts[1] + 1], depth)
            c = sig_path(values[cuts[1] :], depth)
            left = chen_product(chen_product(a, b), c)
            right = chen_product(a, chen_product(b, c))
            report.max_assoc_error = max(
                report.max_assoc_error, signature_error(left, right)
            )

        inserted = _insert_collinear(values, rng)
        report.max_insert_error = max(
            report.max_insert_error,
            signature_error(sig_path(inserted, depth), whole),
        )

        if not decay_bound(whole, one_variation(values)):
            report.decay_failures += 1

    report.errors_by_property = {
        "chen": report.max_chen_error,
        "fold": report.max_fold_error,
        "assoc": report.max_assoc_error,
        "insert": report.max_insert_error,
    }
    return report
