import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cirl.errors import InvalidInputError
from cirl.metrics import (
    DOWNWARD,
    UPWARD,
    accuracy,
    change_directions,
    detection,
    detection_scopes,
    incidence_errors,
    summarize,
)
from cirl.renewal import IncidenceSeries, RenewalIntensity, RtTrajectory


def sorted_quantile(x, q):
    """Linear interpolation between order statistics, from a plain sort."""
    s = sorted(x)
    h = (len(s) - 1) * q
    lo = math.floor(h)
    hi = min(lo + 1, len(s) - 1)
    return s[lo] + (h - lo) * (s[hi] - s[lo])


class TestAccuracy:
    def test_identical(self):
        r = RtTrajectory([1.0, 2.0, 3.0])
        rep = accuracy(r, r, 1)
        assert rep.rmse == 0 and rep.mae == 0 and rep.n_valid == 3

    def test_constant_offset(self):
        truth = RtTrajectory(np.linspace(0.5, 2, 10))
        rep = accuracy(truth.scaled(1.0).__class__(truth.values + 0.5), truth, 1)
        assert rep.mae == pytest.approx(0.5, abs=1e-15)
        assert rep.rmse == pytest.approx(0.5, abs=1e-15)

    def test_hand_example(self):
        rep = accuracy(RtTrajectory([1.0, 4.0, 1.0, 1.0]), RtTrajectory([1.0, 1.0, 1.0, 1.0]), 1)
        assert rep.mae == 0.75 and rep.rmse == 1.5

    def test_valid_from_and_undefined_days(self):
        est = RtTrajectory([9.0, np.nan, 2.0, 3.0], start=1)
        truth = RtTrajectory([0.0, 0.0, 1.0, 1.0, 1.0], start=1)
        rep = accuracy(est, truth, 2)
        assert rep.valid_days.tolist() == [3, 4]
        assert rep.mae == 1.5

    def test_partial_overlap(self):
        est = RtTrajectory([2.0, 2.0], start=21)
        truth = RtTrajectory(np.ones(30), start=1)
        assert accuracy(est, truth, 5).n_valid == 2

    def test_empty(self):
        with pytest.raises(InvalidInputError):
            accuracy(RtTrajectory([1.0]), RtTrajectory([1.0]), 5)
        with pytest.raises(InvalidInputError):
            accuracy(RtTrajectory([np.nan]), RtTrajectory([1.0]), 1)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(0, 5), min_size=1, max_size=30), st.integers(0, 10_000))
    def test_symmetric(self, xs, seed):
        rng = np.random.default_rng(seed)
        a = RtTrajectory(xs)
        b = RtTrajectory(rng.uniform(0, 5, len(xs)))
        ab, ba = accuracy(a, b, 1), accuracy(b, a, 1)
        assert ab.rmse == ba.rmse and ab.mae == ba.mae
        assert ab.rmse >= 0 and ab.mae >= 0


class TestDetection:
    def test_cross_at_change_point(self):
        r = detection(RtTrajectory([1.4, 1.2, 0.9, 0.8], start=0), 2, DOWNWARD)
        assert r.detected_cp == 2 and r.delay == 0 and not r.missed
        assert detection(RtTrajectory([1.4, 1.2, 0.9, 0.8], start=0), 1, DOWNWARD).delay == 1

    def test_never_crosses(self):
        r = detection(RtTrajectory([1.5, 2.0, 1.7, 1.5]), 2, DOWNWARD)
        assert r.missed and r.delay is None and r.detected_cp is None

    def test_threshold_is_strict(self):
        assert detection(RtTrajectory([1.2, 1.0, 1.0]), 2, DOWNWARD).missed
        assert detection(RtTrajectory([1.2, 1.0, 0.99]), 2, DOWNWARD).detected_cp == 3
        assert detection(RtTrajectory([0.5, 1.0, 1.0]), 2, UPWARD).missed

    def test_upward(self):
        r = detection(RtTrajectory([0.7, 0.9, 1.0, 1.1]), 3, UPWARD)
        assert r.detected_cp == 4 and r.delay == 1

    def test_early_noise_gives_negative_delay(self):
        est = RtTrajectory([2.0, 0.9, 1.5, 1.5, 0.8])
        assert detection(est, 5, DOWNWARD).delay == -3

    def test_scope_limits_search(self):
        est = RtTrajectory([2.0, 0.9, 1.5, 1.5, 0.8, 0.7])
        assert detection(est, 5, DOWNWARD, scope_start=3).detected_cp == 5
        assert detection(est, 5, DOWNWARD, scope_start=3, scope_end=4).missed

    def test_skips_undefined(self):
        est = RtTrajectory([np.nan, 1.3, np.nan, 0.8])
        assert detection(est, 3, DOWNWARD).detected_cp == 4

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(0, 3), min_size=2, max_size=40), st.integers(1, 40), st.integers(-50, 50))
    def test_translation_equivariant(self, xs, cp, k):
        a = detection(RtTrajectory(xs, start=1), cp, DOWNWARD)
        b = detection(RtTrajectory(xs, start=1 + k), cp + k, DOWNWARD)
        assert a.delay == b.delay and a.missed == b.missed

    def test_unknown_direction(self):
        with pytest.raises(InvalidInputError):
            detection(RtTrajectory([1.0, 2.0]), 1, "sideways")

    def test_directions_and_scopes(self):
        assert change_directions([2.5, 0.8, 1.8]) == [DOWNWARD, UPWARD]
        assert detection_scopes([40, 80], 21, 120) == [(21, 79), (40, 120)]
        assert detection_scopes([40, 80], 21, 120, grace=5) == [(21, 84), (40, 120)]


class TestSummarize:
    def test_five_values(self):
        s = summarize([1, 2, 3, 4, 5])
        assert (s.median, s.q1, s.q3, s.mdr) == (3, 2, 4, 0)

    def test_single_value(self):
        s = summarize([2.5])
        assert s.median == s.q1 == s.q3 == 2.5

    def test_all_missed(self):
        s = summarize([None, None])
        assert s.mdr == 1.0 and s.median is None and s.q1 is None and s.q3 is None
        assert s.format() == "~"

    def test_missing_excluded_from_quantiles(self):
        s = summarize([1, None, 3, None])
        assert s.median == 2 and s.mdr == 0.5 and s.n_present == 2

    def test_explicit_flags(self):
        s = summarize([1.0, 2.0, 3.0], missed=[False, False, True])
        assert s.mdr == pytest.approx(1 / 3)

    def test_format(self):
        assert summarize([1, 2, 3, 4, 5]).format(2) == "3.00 [2.00, 4.00]"

    def test_against_sort_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            x = rng.normal(0, rng.uniform(0.1, 100), int(rng.integers(1, 60)))
            s = summarize(list(x))
            for q, got in ((0.25, s.q1), (0.5, s.median), (0.75, s.q3)):
                assert abs(got - sorted_quantile(x, q)) <= 1e-12 * max(1.0, abs(got))
            assert s.q1 <= s.median <= s.q3


class TestIncidenceErrors:
    def test_identical(self):
        lam = RenewalIntensity([np.nan, 3.0, 4.0])
        assert incidence_errors(lam, lam).rmse == 0

    def test_constant_absolute_error(self):
        target = IncidenceSeries(np.arange(10, 20), start=101)
        est = RenewalIntensity(np.arange(10, 20) + np.array([2, -2] * 5), start=101)
        assert incidence_errors(est, target).mae == 2.0

    def test_spreadsheet_oracle(self):
        est = RenewalIntensity([np.nan, 1.5, 2.0, 7.25, 3.0])
        target = IncidenceSeries([4, 1, 3, 5, 0])
        rep = incidence_errors(est, target, 2, 4)
        # diffs 0.5, -1.0, 2.25
        assert rep.mae == pytest.approx((0.5 + 1.0 + 2.25) / 3, abs=1e-15)
        assert rep.rmse == pytest.approx(math.sqrt((0.25 + 1 + 5.0625) / 3), abs=1e-15)

    def test_no_overlap(self):
        with pytest.raises(InvalidInputError):
            incidence_errors(RenewalIntensity([1.0], 1), IncidenceSeries([1], 5))
