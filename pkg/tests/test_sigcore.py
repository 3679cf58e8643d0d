import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sigformer.sigcore import (
    Segment,
    TruncatedSignature,
    chen_product,
    decay_bound,
    feature_count,
    identity,
    one_variation,
    sig_path,
    sig_segment,
)
from sigformer.selfcheck import fold_segments, run_property_suite, signature_error


def seg(start, end):
    return Segment(np.asarray(start, float), np.asarray(end, float), 0.0, 1.0)


def quadrature_level2(points, steps_per_segment=200):
    """Independent oracle: level-2 iterated integrals by composite quadrature.

    Integrates int_0^T (X_i(u) - X_i(0)) dX_j(u) segment by segment.  Within a
    segment the integrand is linear, so the trapezoid rule is exact up to
    rounding; the fine grid only guards against implementation slips.
    """
    points = np.asarray(points, float)
    d = points.shape[1]
    level2 = np.zeros((d, d))
    x_rel = np.zeros(d)
    for a, b in zip(points[:-1], points[1:]):
        u = np.linspace(0.0, 1.0, steps_per_segment + 1)
        rel = x_rel[None, :] + u[:, None] * (b - a)[None, :]
        slope = b - a
        for j in range(d):
            integrand = rel * slope[j]
            level2[:, j] += np.trapezoid(integrand, u, axis=0)
        x_rel = x_rel + (b - a)
    return level2.ravel()


class TestSegmentSignature:
    def test_1d_closed_form(self):
        sig = sig_segment(seg([0.0], [2.0]), depth=3)
        assert np.allclose(sig.level(1), [2.0])
        assert np.allclose(sig.level(2), [2.0])
        assert np.allclose(sig.level(3), [4.0 / 3.0])

    def test_zero_increment(self):
        sig = sig_segment(seg([1.0, 1.0], [1.0, 1.0]), depth=2)
        assert np.all(sig.level(1) == 0.0)
        assert np.all(sig.level(2) == 0.0)

    def test_2d_outer_product(self):
        sig = sig_segment(seg([0.0, 0.0], [1.0, 0.0]), depth=2)
        assert np.allclose(sig.level(1), [1.0, 0.0])
        assert np.allclose(sig.level(2).reshape(2, 2), [[0.5, 0.0], [0.0, 0.0]])

    def test_timestamps_do_not_matter(self):
        a = Segment(np.array([0.0, 1.0]), np.array([2.0, -1.0]), 0.0, 1.0)
        b = Segment(np.array([0.0, 1.0]), np.array([2.0, -1.0]), 5.0, 100.0)
        for la, lb in zip(sig_segment(a, 3).levels, sig_segment(b, 3).levels):
            assert np.array_equal(la, lb)

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            Segment(np.array([0.0]), np.array([1.0, 2.0]), 0.0, 1.0)
        with pytest.raises(ValueError):
            Segment(np.array([0.0]), np.array([1.0]), 1.0, 1.0)
        with pytest.raises(ValueError):
            sig_segment(seg([0.0], [1.0]), depth=0)


class TestChenProduct:
    def test_identity_element(self):
        sig = sig_segment(seg([0.5, -1.0], [1.0, 2.0]), depth=3)
        for other in (chen_product(sig, identity(2, 3)), chen_product(identity(2, 3), sig)):
            for la, lb in zip(other.levels, sig.levels):
                assert np.allclose(la, lb, atol=0, rtol=0)

    def test_corner_path_level2(self):
        # right-then-up corner: known level-2 entries and the quadrature oracle
        a = sig_segment(seg([0.0, 0.0], [1.0, 0.0]), depth=2)
        b = sig_segment(seg([1.0, 0.0], [1.0, 1.0]), depth=2)
        joined = chen_product(a, b)
        assert np.allclose(joined.level(1), [1.0, 1.0])
        assert np.allclose(joined.level(2), [0.5, 1.0, 0.0, 0.5])
        corner = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]])
        assert np.allclose(joined.level(2), quadrature_level2(corner), atol=1e-12)

    def test_1d_products_commute_into_sum(self):
        a = sig_segment(seg([0.0], [0.7]), depth=3)
        b = sig_segment(seg([0.7], [1.9]), depth=3)
        total = sig_segment(seg([0.0], [1.9]), depth=3)
        for la, lb in zip(chen_product(a, b).levels, total.levels):
            assert np.allclose(la, lb, atol=1e-15)

    def test_mismatch_errors(self):
        with pytest.raises(ValueError):
            chen_product(identity(2, 2), identity(3, 2))
        with pytest.raises(ValueError):
            chen_product(identity(2, 2), identity(2, 3))


class TestPathSignature:
    def test_1d_depends_only_on_total_increment(self):
        sig = sig_path(np.array([0.0, 1.0, 3.0]), depth=2)
        assert np.allclose(sig.level(1), [3.0])
        assert np.allclose(sig.level(2), [4.5])

    def test_single_segment_reduces_to_sig_segment(self):
        values = np.array([[0.2, -0.3], [1.4, 0.9]])
        a = sig_path(values, depth=4)
        b = sig_segment(seg(values[0], values[1]), depth=4)
        for la, lb in zip(a.levels, b.levels):
            assert np.allclose(la, lb, atol=0, rtol=0)

    def test_corner_path_matches_quadrature(self):
        corner = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]])
        sig = sig_path(corner, depth=2)
        assert np.allclose(sig.level(2), quadrature_level2(corner), atol=1e-8)

    def test_collinear_point_is_invisible(self):
        values = np.array([[0.0, 0.0], [1.0, 2.0], [3.0, -1.0]])
        midpoint = 0.5 * (values[0] + values[1])
        inserted = np.vstack([values[:1], midpoint, values[1:]])
        a, b = sig_path(values, 3), sig_path(inserted, 3)
        assert signature_error(b, a) < 1e-14

    def test_rejects_short_paths(self):
        with pytest.raises(ValueError):
            sig_path(np.array([[1.0, 2.0]]), depth=2)


class TestDecayBound:
    def test_equality_case_single_segment(self):
        sig = sig_segment(seg([0.0], [2.0]), depth=3)
        assert decay_bound(sig, 2.0)

    def test_zero_path(self):
        assert decay_bound(identity(3, 4), 0.0)

    def test_random_path(self):
        rng = np.random.default_rng(7)
        values = rng.normal(size=(6, 2))
        assert decay_bound(sig_path(values, 4), one_variation(values))

    def test_violated_bound_detected(self):
        sig = sig_segment(seg([0.0], [2.0]), depth=2)
        assert not decay_bound(sig, 1.0)

    def test_negative_norm_rejected(self):
        with pytest.raises(ValueError):
            decay_bound(identity(1, 1), -0.5)


class TestFeatureCount:
    @pytest.mark.parametrize("d,n,expected", [(2, 3, 14), (6, 2, 42), (1, 5, 5)])
    def test_known_counts(self, d, n, expected):
        assert feature_count(d, n) == expected

    @pytest.mark.parametrize("d", range(2, 7))
    @pytest.mark.parametrize("n", range(1, 5))
    def test_closed_form(self, d, n):
        assert feature_count(d, n) == d * (d**n - 1) // (d - 1)

    def test_matches_stored_sizes(self):
        sig = sig_path(np.zeros((3, 4)), depth=3)
        assert sig.flatten().size == feature_count(4, 3)


paths = st.integers(min_value=2, max_value=12).flatmap(
    lambda n: st.integers(min_value=1, max_value=3).flatmap(
        lambda d: st.lists(
            st.lists(
                st.floats(min_value=-5, max_value=5, allow_nan=False),
                min_size=d,
                max_size=d,
            ),
            min_size=n,
            max_size=n,
        )
    )
)


@settings(max_examples=60, deadline=None)
@given(values=paths, depth=st.integers(min_value=1, max_value=4))
def test_chen_split_consistency(values, depth):
    values = np.asarray(values, float)
    whole = sig_path(values, depth)
    if values.shape[0] >= 3:
        split = values.shape[0] // 2
        joined = chen_product(sig_path(values[: split + 1], depth), sig_path(values[split:], depth))
        assert signature_error(joined, whole) < 1e-12
    assert signature_error(fold_segments(values, depth), whole) < 1e-12
    assert decay_bound(whole, one_variation(values))


@settings(max_examples=40, deadline=None)
@given(values=paths, depth=st.integers(min_value=1, max_value=4), frac=st.floats(0.05, 0.95))
def test_collinear_insertion_invariance(values, depth, frac):
    values = np.asarray(values, float)
    i = values.shape[0] // 2 - 1
    point = values[i] + frac * (values[i + 1] - values[i])
    inserted = np.vstack([values[: i + 1], point, values[i + 1 :]])
    assert signature_error(sig_path(inserted, depth), sig_path(values, depth)) < 1e-12


def test_property_suite_clean():
    report = run_property_suite(trials=50, max_dim=3, max_depth=4, max_segments=20, seed=1)
    assert report.passed(1e-12), report.lines()


def test_signature_validation():
    with pytest.raises(ValueError):
        TruncatedSignature(2, 2, (np.zeros(2),))
    with pytest.raises(ValueError):
        TruncatedSignature(2, 1, (np.array([1.0, np.nan]),))
    with pytest.raises(ValueError):
        TruncatedSignature(2, 1, (np.zeros(3),))
