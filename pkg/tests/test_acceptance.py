"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL`` line (also collected into
the terminal summary by ``conftest.py``).  Criteria 5 and 6 train 20 full-size
models each and take several minutes on one core.
"""

from __future__ import annotations

import json
import math
import os
import time

import numpy as np
import pytest
from scipy import stats

from cirl import autograd as ag
from cirl import bench, epiestim
from cirl.autograd import Tensor
from cirl.cli import main as cli_main
from cirl.gradcheck import check, check_params
from cirl.metrics import DOWNWARD, UPWARD, accuracy, detection, summarize
from cirl.network import ModelConfig, init_params, forward_series
from cirl.renewal import (
    IncidenceSeries,
    RenewalIntensity,
    RtTrajectory,
    discretize_generation_interval,
    expected_incidence,
    simulate_epidemic,
)
from cirl.synth import DOUBLE_STEP, SINGLE_STEP, MaskSpec, generate_ensemble, make_replica
from cirl.training import (
    FitResult,
    TrainConfig,
    fit,
    forecast,
    poisson_nll,
    reconstruction_report,
    recursive_forecast,
    total_loss,
    zip_nll,
)

RESULTS: dict[int, tuple[bool, str]] = {}
GI = discretize_generation_interval(8.0, 3.0, 30)
WORKERS = os.cpu_count() or 1


def verdict(n: int, ok: bool, detail: str) -> None:
    RESULTS[n] = (bool(ok), detail)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


# ---------------------------------------------------------------------------
# 1. gradients


def _ops(rng):
    """(name, fn, inputs) for every differentiable op, inputs kept off kinks."""
    r = lambda *s, lo=-2.0, hi=2.0: rng.uniform(lo, hi, s)  # noqa: E731
    off_kink = r(12)
    off_kink = np.where(np.abs(np.abs(off_kink) - 0.25) < 1e-2, off_kink + 0.1, off_kink)
    away = r(6)
    away = np.where(np.abs(away) < 1e-2, away + 0.1, away)
    return [
        ("add", ag.add, [r(2, 3), r(3)]),
        ("sub", ag.sub, [r(2, 3), r(2, 3)]),
        ("mul", ag.mul, [r(2, 3), r(2, 1)]),
        ("div", ag.div, [r(4), r(4, lo=0.5, hi=2.0)]),
        ("neg", ag.neg, [r(3)]),
        ("exp", ag.exp, [r(3, 2)]),
        ("log", ag.log, [r(5, lo=0.1, hi=3.0)]),
        ("sigmoid", ag.sigmoid, [r(5)]),
        ("softplus", ag.softplus, [r(5)]),
        ("tanh", ag.tanh, [r(5)]),
        ("huber", lambda x: ag.huber(x, 0.25), [off_kink]),
        ("logaddexp", ag.logaddexp, [r(4), r(4)]),
        ("clamp_min", lambda x: ag.clamp_min(x, 0.0), [away]),
        ("sum", lambda x: ag.sum(x, axis=1), [r(3, 4)]),
        ("mean", lambda x: ag.mean(x, axis=0), [r(3, 4)]),
        ("reshape", lambda x: ag.reshape(x, (4, 3)), [r(3, 4)]),
        ("transpose", lambda x: ag.transpose(x, (2, 0, 1)), [r(2, 3, 4)]),
        ("swapaxes", lambda x: ag.swapaxes(x, 0, 1), [r(2, 3)]),
        ("getitem", lambda x: x[np.array([2, 0, 2]), 1:], [r(3, 3)]),
        ("concat", lambda a, b: ag.concat([a, b], axis=1), [r(2, 3), r(2, 2)]),
        ("matmul", ag.matmul, [r(2, 3, 4), r(4, 2)]),
        ("softmax", ag.softmax, [r(3, 5)]),
        ("softmax_attention", lambda q, k, v: ag.softmax_attention(q, k, v, 0.5), [r(2, 3, 4), r(2, 5, 4), r(2, 5, 3)]),
        ("layer_norm", ag.layer_norm, [r(3, 5), r(5), r(5)]),
        ("causal_conv1d", lambda x, w: ag.causal_conv1d(x, w, 2), [r(2, 2, 9), r(3, 2, 3)]),
    ]


MICRO = ModelConfig(
    context_len=5,
    fourier_freqs=(1.0,),
    kernel_sizes=(2, 3),
    tcn_channels=2,
    dilations=(1, 2),
    embed_dim=4,
    attn_heads=2,
    attn_layers=1,
    head_hidden=3,
)


def test_criterion_1_gradient_soundness():
    t0 = time.time()
    worst_op, worst_op_name = 0.0, ""
    worst_e2e = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        for name, fn, inputs in _ops(rng):
            err = check(fn, inputs)
            if err > worst_op:
                worst_op, worst_op_name = err, name
        series, _ = simulate_epidemic(RtTrajectory(np.full(20, 1.6)), GI, 5, 20, seed)
        params = init_params(MICRO, 1.0 + series.counts.max(), 20.0, seed)
        for t in params.values():
            t.data += rng.normal(0, 0.05, t.shape)
        cfg = TrainConfig(smooth_weight=0.5, huber_delta=0.05)
        errs = check_params(lambda: total_loss(series, forward_series(series, params), GI, cfg), params.tensors)
        worst_e2e = max(worst_e2e, max(errs.values()))
    elapsed = time.time() - t0
    verdict(
        1,
        worst_op < 1e-4 and worst_e2e < 1e-3,
        f"max op rel err {worst_op:.2e} ({worst_op_name}), max end-to-end rel err {worst_e2e:.2e}, {elapsed:.0f}s",
    )


# ---------------------------------------------------------------------------
# 2. zero-inflated Poisson


def test_criterion_2_zip():
    worst_mass = 0.0
    for lam in (1e-3, 0.1, 1.0, 3.0, 10.0, 50.0, 200.0):
        for pi in (0.0, 0.05, 0.3, 0.5, 0.9, 0.999):
            kmax = int(lam + 40 * math.sqrt(lam) + 40)
            total = math.fsum(math.exp(-zip_nll(k, lam, pi)) for k in range(kmax + 1))
            worst_mass = max(worst_mass, abs(total - 1.0))
    rng = np.random.default_rng(0)
    worst_pois = 0.0
    for _ in range(2000):
        k, lam = int(rng.integers(0, 300)), float(np.exp(rng.uniform(-8, 6)))
        worst_pois = max(worst_pois, abs(zip_nll(k, lam, 0.0) - poisson_nll(k, lam)))
    # worked examples: closed forms evaluated independently
    examples = [
        (zip_nll(0, 1.0, 0.0), 1.0),
        (zip_nll(0, 1.0, 0.5), -math.log(0.5 + 0.5 * math.exp(-1.0))),
        (zip_nll(3, 3.0, 0.0), 3 - 3 * math.log(3) + math.log(6)),
    ]
    literals = [(examples[1][0], 0.37989), (examples[2][0], 1.495923), (examples[2][0], -stats.poisson.logpmf(3, 3.0))]
    worst_ex = max(abs(a - b) for a, b in examples + literals)
    verdict(
        2,
        worst_mass <= 1e-9 and worst_pois <= 1e-10 and worst_ex <= 1e-5,
        f"mass err {worst_mass:.1e}, pi=0 vs Poisson {worst_pois:.1e}, worked examples {worst_ex:.1e}",
    )


# ---------------------------------------------------------------------------
# 3. renewal equation


def _double_loop(rt, counts, w):
    out = [math.nan]
    for i in range(1, len(counts)):
        acc = 0.0
        for tau in range(1, min(len(w), i) + 1):
            acc += counts[i - tau] * w[tau - 1]
        out.append(rt[i] * acc)
    return np.array(out)


def test_criterion_3_renewal_oracle():
    rng = np.random.default_rng(2024)
    mismatches = 0
    for _ in range(50):
        n = int(rng.integers(2, 201))
        gi = discretize_generation_interval(rng.uniform(2, 12), rng.uniform(1, 5), int(rng.integers(2, 41)))
        counts = rng.poisson(rng.uniform(0, 500), n)
        rt = rng.uniform(0, 4, n)
        got = expected_incidence(RtTrajectory(rt), IncidenceSeries(counts), gi).values
        if not np.array_equal(got, _double_loop(rt, counts, gi.weights), equal_nan=True):
            mismatches += 1
    verdict(3, mismatches == 0, f"{50 - mismatches}/50 instances bit-identical")


# ---------------------------------------------------------------------------
# 4-6. benchmark ensembles


def _config(**sections):
    return bench.merge_config(bench.default_config(), sections)


@pytest.fixture(scope="module")
def single_ensemble():
    return generate_ensemble(SINGLE_STEP, GI, 20, 2, None, 0)


def test_criterion_4_baseline_sanity(single_ensemble):
    cfg = bench.resolve(_config())
    delays = []
    for rep in single_ensemble.replicas:
        est = epiestim.to_trajectory(epiestim.estimate(rep.observed_incidence, GI, cfg.baseline))
        delays.append(detection(est, 40, DOWNWARD, cfg.valid_from, 120).delay)
    s = summarize(delays)
    verdict(
        4,
        s.median is not None and 4 <= s.median <= 8 and s.mdr == 0,
        f"EpiEstim delay {s.format()} MDR {s.mdr:.2f}",
    )


def test_criterion_5_cirl_responsiveness(single_ensemble):
    t0 = time.time()
    results = bench.run_replicas(single_ensemble, _config(), WORKERS)
    cirl = summarize([r.methods[bench.CIRL].delays[0] for r in results])
    ee = summarize([r.methods[bench.EPIESTIM].delays[0] for r in results])
    ok = cirl.median is not None and cirl.median <= 3 and cirl.mdr <= 0.10 and cirl.median < ee.median
    verdict(
        5,
        ok,
        f"CIRL delay {cirl.format()} MDR {cirl.mdr:.2f} vs EpiEstim {ee.format()}, {time.time() - t0:.0f}s",
    )


def test_criterion_6_masked_robustness():
    t0 = time.time()
    ens = generate_ensemble(DOUBLE_STEP, GI, 20, 2, MaskSpec(p_pre=0.3, p_post=0.05), 0)
    results = bench.run_replicas(ens, _config(), WORKERS)
    cirl = summarize([r.methods[bench.CIRL].rmse for r in results])
    ee = summarize([r.methods[bench.EPIESTIM].rmse for r in results])
    w_cirl, w_ee = cirl.q3 - cirl.q1, ee.q3 - ee.q1
    verdict(
        6,
        cirl.median <= ee.median and w_cirl < w_ee,
        f"RMSE CIRL {cirl.format()} (IQR {w_cirl:.2f}) vs EpiEstim {ee.format()} (IQR {w_ee:.2f}), "
        f"{time.time() - t0:.0f}s",
    )


# ---------------------------------------------------------------------------
# 7. reconstruction


def test_criterion_7_reconstruction():
    tcfg = TrainConfig(epochs=100)
    clean = make_replica(SINGLE_STEP, GI, 2, None, 11)
    rep_clean = reconstruction_report(fit(clean.observed_incidence, GI, None, tcfg), clean, GI)
    same = rep_clean["I_obs"].rmse == rep_clean["I_raw"].rmse and rep_clean["I_obs"].mae == rep_clean["I_raw"].mae

    masked = make_replica(DOUBLE_STEP, GI, 2, MaskSpec(), 12)
    res = fit(masked.observed_incidence, GI, None, tcfg)
    got = reconstruction_report(res, masked, GI)["I_raw"]
    # hand oracle: plain loops over the fitted days
    sq = ab = 0.0
    n = 0
    for day, lam in zip(res.lambda_hat.days, res.lambda_hat.values):
        if math.isnan(lam):
            continue
        diff = lam - int(masked.raw_incidence.counts[day - masked.raw_incidence.start])
        sq += diff * diff
        ab += abs(diff)
        n += 1
    err = max(abs(got.rmse - math.sqrt(sq / n)), abs(got.mae - ab / n))
    verdict(7, same and err <= 1e-9 and got.n_valid == n, f"unmasked I_obs == I_raw: {same}; masked oracle err {err:.1e}")


# ---------------------------------------------------------------------------
# 8. forecast


def test_criterion_8_forecast_fixed_point():
    assert abs(GI.weights.sum() - 1.0) < 1e-12
    _, lam = recursive_forecast(lambda d, w: 1.0, np.full(60, 20.0), 60, GI, 10, 21)
    err_direct = float(np.max(np.abs(lam.values - 20.0)))
    # same through the network with an R head that outputs exactly 1
    cfg = ModelConfig()
    params = init_params(cfg, 21.0, 60.0, 0)
    for name in ("r_head.w1", "r_head.b1", "r_head.w2"):
        params[name].data[...] = 0.0
    series = IncidenceSeries(np.full(60, 20))
    res = FitResult(params, RtTrajectory([1.0]), np.zeros(1), RenewalIntensity([20.0]), [0.0], cfg, TrainConfig())
    rt, lam_net = forecast(res, series, GI, 10)
    err_net = float(np.max(np.abs(lam_net.values - 20.0)))
    ok = len(lam.values) == 10 and len(lam_net.values) == 10 and max(err_direct, err_net) <= 1e-9
    verdict(8, ok, f"max |lambda - 20| {err_direct:.1e} (direct), {err_net:.1e} (network, R={float(rt.values[0])!r})")


# ---------------------------------------------------------------------------
# 9. determinism


def _tree(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_9_manifest_rerun(tmp_path):
    a, b = tmp_path / "first", tmp_path / "rerun"
    args = ["benchmark", "--replicas", "2", "--epochs", "40", "--out", str(a)]
    assert cli_main(args) == 0
    assert cli_main(["benchmark", "--from-manifest", str(a / "manifest.json"), "--out", str(b)]) == 0
    ta, tb = _tree(a), _tree(b)
    differing = sorted(k for k in ta.keys() | tb.keys() if ta.get(k) != tb.get(k))
    manifest = json.loads((a / "manifest.json").read_text())
    verdict(
        9,
        not differing and len(ta) > 10 and set(manifest["scenarios"]) == set(bench.SCENARIOS),
        f"{len(ta)} files compared, {len(differing)} differ {differing[:3]}",
    )


# ---------------------------------------------------------------------------
# 10. metric oracles


def _sorted_quantile(x, q):
    s = sorted(x)
    h = (len(s) - 1) * q
    lo = math.floor(h)
    hi = min(lo + 1, len(s) - 1)
    return s[lo] + (h - lo) * (s[hi] - s[lo])


def test_criterion_10_metric_oracles():
    checks = []
    a = accuracy(RtTrajectory([1.0, 4.0, 1.0, 1.0]), RtTrajectory([1.0, 1.0, 1.0, 1.0]), 1)
    checks.append(a.mae == 0.75 and a.rmse == 1.5)
    a = accuracy(RtTrajectory([9.0, math.nan, 2.0, 3.0]), RtTrajectory([0.0, 0.0, 1.0, 1.0]), 2)
    checks.append(a.mae == 1.5 and a.n_valid == 2 and a.rmse == math.sqrt(2.5))
    d = detection(RtTrajectory([1.4, 1.2, 0.9, 0.8], start=0), 2, DOWNWARD)
    checks.append((d.detected_cp, d.delay, d.missed) == (2, 0, False))
    checks.append(detection(RtTrajectory([1.2, 1.0, 1.0]), 2, DOWNWARD).missed)
    checks.append(detection(RtTrajectory([0.7, 0.9, 1.0, 1.1]), 3, UPWARD).delay == 1)
    checks.append(detection(RtTrajectory([2.0, 0.9, 1.5, 1.5, 0.8]), 5, DOWNWARD).delay == -3)
    checks.append(detection(RtTrajectory([math.nan, 1.3, math.nan, 0.8]), 3, DOWNWARD).detected_cp == 4)
    s = summarize([1, 2, 3, 4, 5])
    checks.append((s.median, s.q1, s.q3, s.mdr) == (3, 2, 4, 0))
    s = summarize([1, None, 3, None])
    checks.append(s.median == 2 and s.mdr == 0.5 and s.n_present == 2)
    s = summarize([None, None])
    checks.append(s.median is None and s.mdr == 1.0)
    hand_ok = all(checks)

    rng = np.random.default_rng(10)
    worst = 0.0
    for _ in range(1000):
        x = rng.normal(0, rng.uniform(0.1, 100), int(rng.integers(1, 80)))
        s = summarize(list(x))
        for q, got in ((0.25, s.q1), (0.5, s.median), (0.75, s.q3)):
            worst = max(worst, abs(got - _sorted_quantile(x, q)))
    verdict(10, hand_ok and worst <= 1e-12, f"hand examples {sum(checks)}/{len(checks)}, quantile max err {worst:.1e}")
