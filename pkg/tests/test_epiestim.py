import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special, stats

from cirl import epiestim
from cirl.epiestim import EpiEstimConfig, estimate, posterior, to_trajectory, write_csv
from cirl.errors import InvalidInputError, InvalidParameterError
from cirl.renewal import GenerationInterval, IncidenceSeries, RtTrajectory, discretize_generation_interval, simulate_epidemic

GI = discretize_generation_interval(8.0, 3.0, 30)


def test_conjugate_update_by_hand():
    shape, rate = posterior(10, 5, EpiEstimConfig())
    assert shape / rate == pytest.approx(11 / 5.2, abs=1e-12)
    assert shape / rate == pytest.approx(2.11538, abs=1e-5)


def test_undefined_when_no_infectiousness():
    est = estimate(IncidenceSeries([0] * 12), GI, EpiEstimConfig(window=3))
    assert all(not e.defined and np.isnan(e.mean) for e in est)


def test_first_estimate_day_and_count():
    est = estimate(IncidenceSeries(np.arange(1, 21)), GI)
    assert est[0].day == 8
    assert est[-1].day == 20
    assert len(est) == 13


def test_window_sums_match_direct_loop():
    rng = np.random.default_rng(0)
    counts = rng.poisson(30, 60)
    cfg = EpiEstimConfig(window=5, prior_shape=2.0, prior_scale=3.0)
    w = GI.weights
    for e in estimate(IncidenceSeries(counts), GI, cfg):
        i = e.day - 1
        s_i = sum(counts[i - k] for k in range(cfg.window))
        s_l = 0.0
        for s in range(i - cfg.window + 1, i + 1):
            s_l += sum(counts[s - tau] * w[tau - 1] for tau in range(1, min(len(w), s) + 1))
        assert e.shape == pytest.approx(2.0 + s_i, rel=1e-13)
        assert e.rate == pytest.approx(1 / 3 + s_l, rel=1e-10)


def test_quantiles_invert_cdf():
    rng = np.random.default_rng(1)
    for e in estimate(IncidenceSeries(rng.poisson(15, 40)), GI):
        # regularized lower incomplete gamma is the Gamma CDF
        assert special.gammainc(e.shape, e.rate * e.q025) == pytest.approx(0.025, abs=1e-8)
        assert special.gammainc(e.shape, e.rate * e.q975) == pytest.approx(0.975, abs=1e-8)
        assert e.q025 < e.mean < e.q975


def test_truth_recovery_constant_r():
    # runs that die out leave only undefined windows and drop out of the pool
    pooled = []
    for seed in range(20):
        counts, _ = simulate_epidemic(RtTrajectory(np.full(300, 1.5)), GI, 2, 300, seed)
        traj = to_trajectory(estimate(counts, GI))
        pooled.append(traj.values[traj.days >= 30])
    assert abs(np.nanmean(np.concatenate(pooled)) - 1.5) <= 0.15


def test_shift_invariance():
    rng = np.random.default_rng(2)
    counts = rng.poisson(20, 50)
    a = estimate(IncidenceSeries(counts, start=1), GI)
    b = estimate(IncidenceSeries(counts, start=101), GI)
    assert [e.mean for e in a] == [e.mean for e in b]
    assert [e.day + 100 for e in a] == [e.day for e in b]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 50))
def test_more_cases_raise_mean(seed, extra):
    shape0, rate0 = posterior(seed % 300, 17.0, EpiEstimConfig())
    shape1, rate1 = posterior(seed % 300 + extra, 17.0, EpiEstimConfig())
    assert shape1 / rate1 > shape0 / rate0


def test_unit_window_responds_within_one_step():
    gi = GenerationInterval([1.0])
    counts = [10] * 10 + [20] + [10] * 5
    est = estimate(IncidenceSeries(counts), gi, EpiEstimConfig(window=1))
    means = {e.day: e.mean for e in est}
    assert means[11] > means[10] * 1.8
    assert means[12] < 1.0 < means[11]


def test_too_short():
    with pytest.raises(InvalidInputError):
        estimate(IncidenceSeries([1] * 8), GI)


def test_config_validation():
    for kw in ({"window": 0}, {"prior_shape": 0}, {"prior_scale": -1}):
        with pytest.raises(InvalidParameterError):
            EpiEstimConfig(**kw)


def test_csv_output(tmp_path):
    counts = [0] * 10 + [5] * 5
    est = estimate(IncidenceSeries(counts), GI, EpiEstimConfig(window=3))
    p = tmp_path / "ee.csv"
    write_csv(est, p)
    lines = p.read_text().splitlines()
    assert lines[0] == "day,mean,q025,q975,defined_flag"
    assert lines[1] == "4,,,,0"
    last = lines[-1].split(",")
    assert last[-1] == "1" and float(last[1]) == est[-1].mean
    assert stats.gamma.ppf(0.975, est[-1].shape, scale=1 / est[-1].rate) == float(last[3])


def test_module_exports():
    assert epiestim.EpiEstimConfig().window == 7
