"""Run configuration and the replica-level experiment pipeline.

A run configuration is a nested dict with fixed sections; every value has a
default so a resolved configuration is fully concrete and can be written to a
manifest and replayed.
"""

from __future__ import annotations

import copy
import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import __version__
from . import epiestim
from .epiestim import EpiEstimConfig
from .errors import ConfigError, NonFiniteLossError
from .metrics import accuracy, change_directions, detection, detection_scopes
from .network import ModelConfig
from .renewal import GenerationInterval, RenewalIntensity, RtTrajectory, discretize_generation_interval
from .report import PlotRow, SummaryRow, band_rows, fmt, summary_rows
from .synth import (
    DOUBLE_STEP,
    SINGLE_STEP,
    MaskSpec,
    ScenarioEnsemble,
    ScenarioReplica,
    StepProfileSpec,
    generate_ensemble,
)
from .training import FitResult, TrainConfig, fit, fitted_intensity, reconstruction_report

CIRL = "CIRL"
EPIESTIM = "EpiEstim"
METHODS = (CIRL, EPIESTIM)

# scenario name -> (step profile, masked?)
SCENARIOS: dict[str, tuple[StepProfileSpec, bool]] = {
    "single": (SINGLE_STEP, False),
    "double": (DOUBLE_STEP, False),
    "masked": (DOUBLE_STEP, True),
}

DEFAULTS: dict[str, dict[str, Any]] = {
    "gi": {"mean_days": 8.0, "sd_days": 3.0, "max_lag": 30},
    "ensemble": {"n": 20, "seed_cases": 2, "base_seed": 0},
    "profile": {"levels": None, "change_points": None, "horizon": None},
    "mask": {"p_pre": MaskSpec.p_pre, "p_post": MaskSpec.p_post, "peak_rule": MaskSpec.peak_rule},
    "model": ModelConfig().to_dict(),
    "train": TrainConfig().to_dict(),
    "baseline": {"window": 7, "prior_shape": 1.0, "prior_scale": 5.0},
    "eval": {"valid_from": None, "grace": 0},
}


def default_config() -> dict:
    return copy.deepcopy(DEFAULTS)


def merge_config(base: dict, override: dict, where: str = "config") -> dict:
    """Deep-merge ``override`` into a copy of ``base``; unknown keys are errors."""
    out = copy.deepcopy(base)
    for section, values in override.items():
        if section not in DEFAULTS:
            raise ConfigError(f"{where}: unknown section {section!r} (known: {', '.join(DEFAULTS)})")
        if not isinstance(values, dict):
            raise ConfigError(f"{where}: section {section!r} must be an object")
        for key, value in values.items():
            if key not in DEFAULTS[section]:
                raise ConfigError(
                    f"{where}: unknown key {section}.{key} (known: {', '.join(DEFAULTS[section])})"
                )
            out[section][key] = value
    return out


def parse_assignment(text: str) -> dict:
    """``section.key=value`` -> ``{section: {key: value}}``; the value is JSON or a bare string."""
    import json

    if "=" not in text or "." not in text.split("=", 1)[0]:
        raise ConfigError(f"--set expects section.key=value, got {text!r}")
    path, raw = text.split("=", 1)
    section, key = path.split(".", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return {section: {key: value}}


@dataclass(frozen=True)
class Resolved:
    """Typed views of a resolved configuration."""

    config: dict
    gi: GenerationInterval
    model: ModelConfig
    train: TrainConfig
    baseline: EpiEstimConfig
    mask: MaskSpec
    valid_from: int
    grace: int


def resolve(config: dict) -> Resolved:
    """Validate a merged configuration and build the typed objects it describes."""
    try:
        g = config["gi"]
        gi = discretize_generation_interval(float(g["mean_days"]), float(g["sd_days"]), int(g["max_lag"]))
        model = ModelConfig.from_dict(config["model"])
        train = TrainConfig(**config["train"])
        baseline = EpiEstimConfig(**config["baseline"])
        mask = MaskSpec(**config["mask"])
        ens = config["ensemble"]
        if int(ens["n"]) < 1 or int(ens["seed_cases"]) < 1:
            raise ConfigError("ensemble.n and ensemble.seed_cases must be >= 1")
        ev = config["eval"]
        valid_from = model.context_len if ev["valid_from"] is None else int(ev["valid_from"])
        grace = int(ev["grace"])
        if grace < 0:
            raise ConfigError("eval.grace must be >= 0")
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from None
    return Resolved(config, gi, model, train, baseline, mask, valid_from, grace)


def concrete(config: dict) -> dict:
    """The configuration with every derived default filled in (for manifests)."""
    r = resolve(config)
    out = copy.deepcopy(config)
    out["eval"]["valid_from"] = r.valid_from
    out["model"] = r.model.to_dict()
    out["train"] = r.train.to_dict()
    return out


def scenario_spec(name: str, config: dict) -> tuple[StepProfileSpec, MaskSpec | None]:
    if name not in SCENARIOS:
        raise ConfigError(f"unknown scenario {name!r} (known: {', '.join(SCENARIOS)})")
    spec, masked = SCENARIOS[name]
    prof = config["profile"]
    try:
        spec = StepProfileSpec(
            tuple(prof["levels"]) if prof["levels"] is not None else spec.levels,
            tuple(prof["change_points"]) if prof["change_points"] is not None else spec.change_points,
            int(prof["horizon"]) if prof["horizon"] is not None else spec.horizon,
        )
    except ValueError as exc:
        raise ConfigError(f"invalid profile: {exc}") from None
    return spec, (MaskSpec(**config["mask"]) if masked else None)


def build_ensemble(name: str, config: dict) -> ScenarioEnsemble:
    r = resolve(config)
    spec, mask = scenario_spec(name, config)
    ens = config["ensemble"]
    return generate_ensemble(spec, r.gi, int(ens["n"]), int(ens["seed_cases"]), mask, int(ens["base_seed"]))


# ---------------------------------------------------------------------------
# per-replica work


@dataclass(frozen=True)
class MethodResult:
    method: str
    rt_hat: RtTrajectory
    lambda_hat: RenewalIntensity
    rmse: float
    mae: float
    n_valid: int
    detected: tuple[int | None, ...]
    delays: tuple[int | None, ...]


@dataclass(frozen=True)
class ReplicaResult:
    index: int
    seed: int
    methods: dict[str, MethodResult]
    reconstruction: dict[str, dict[str, tuple[float, float]]]
    loss_history: tuple[float, ...]


def _score(method, rt_hat, lam_hat, replica, spec, r: Resolved) -> MethodResult:
    acc = accuracy(rt_hat, replica.true_rt, r.valid_from)
    scopes = detection_scopes(spec.change_points, r.valid_from, spec.horizon, r.grace)
    dets = [
        detection(rt_hat, cp, direction, lo, hi)
        for cp, direction, (lo, hi) in zip(spec.change_points, change_directions(spec.levels), scopes)
    ]
    return MethodResult(
        method,
        rt_hat,
        lam_hat,
        acc.rmse,
        acc.mae,
        acc.n_valid,
        tuple(d.detected_cp for d in dets),
        tuple(d.delay for d in dets),
    )


def evaluate_replica(index: int, replica: ScenarioReplica, spec: StepProfileSpec, config: dict) -> ReplicaResult:
    """Fit CIRL and the baseline on one replica and score both."""
    r = resolve(config)
    series = replica.observed_incidence
    try:
        fr = fit(series, r.gi, r.model, r.train, replica=index)
    except NonFiniteLossError as exc:
        raise NonFiniteLossError(exc.epoch, exc.value, index) from None
    ee = epiestim.to_trajectory(epiestim.estimate(series, r.gi, r.baseline))
    ee_lam = fitted_intensity(ee, series, r.gi)
    methods = {
        CIRL: _score(CIRL, fr.rt_hat, fr.lambda_hat, replica, spec, r),
        EPIESTIM: _score(EPIESTIM, ee, ee_lam, replica, spec, r),
    }
    recon = {}
    for name, m in methods.items():
        # both methods are compared on the days CIRL covers
        lam = _clip_start(m.lambda_hat, fr.lambda_hat.start)
        recon[name] = {k: (v.rmse, v.mae) for k, v in reconstruction_report(lam, replica, r.gi).items()}
    return ReplicaResult(index, replica.rng_seed, methods, recon, tuple(fr.loss_history))


def _clip_start(lam: RenewalIntensity, first_day: int) -> RenewalIntensity:
    keep = lam.days >= first_day
    return RenewalIntensity(lam.values[keep], int(lam.days[keep][0]))


def _evaluate_job(args):
    return evaluate_replica(*args)


def run_replicas(
    ensemble: ScenarioEnsemble,
    config: dict,
    workers: int = 1,
    progress: Callable[[ReplicaResult], None] | None = None,
) -> list[ReplicaResult]:
    """Evaluate every replica, in a process pool when ``workers > 1``.

    Results come back in replica order whatever the pool size.
    """
    jobs = [(i, rep, ensemble.spec, config) for i, rep in enumerate(ensemble.replicas)]
    results: list[ReplicaResult] = []
    if workers <= 1:
        for job in jobs:
            res = _evaluate_job(job)
            results.append(res)
            if progress:
                progress(res)
        return results
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for res in pool.map(_evaluate_job, jobs):
            results.append(res)
            if progress:
                progress(res)
    return results


# ---------------------------------------------------------------------------
# aggregation and output


ACCURACY_COLUMNS = ("replica", "seed", "method", "rmse", "mae", "n_valid")
DETECTION_COLUMNS = ("replica", "seed", "method", "change_point", "direction", "detected_day", "delay", "missed")
RECONSTRUCTION_COLUMNS = ("replica", "seed", "method", "target", "rmse", "mae")


def scenario_summary(scenario: str, spec: StepProfileSpec, results: Sequence[ReplicaResult]) -> list[SummaryRow]:
    """Headline rows (first change point's delay) per method."""
    rows = []
    for method in METHODS:
        ms = [res.methods[method] for res in results]
        delays = [m.delays[0] if m.delays else None for m in ms]
        rows += summary_rows(
            method,
            scenario,
            {"delay": delays, "rmse": [m.rmse for m in ms], "mae": [m.mae for m in ms]},
            [d is None for d in delays],
        )
    return rows


def change_point_summary(scenario: str, spec: StepProfileSpec, results: Sequence[ReplicaResult]) -> list[SummaryRow]:
    rows = []
    for method in METHODS:
        for k, cp in enumerate(spec.change_points):
            delays = [res.methods[method].delays[k] for res in results]
            rows += summary_rows(method, scenario, {f"delay@{cp}": delays}, None)
    return rows


def write_scenario_tables(directory: Path, spec: StepProfileSpec, results: Sequence[ReplicaResult]) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    directions = change_directions(spec.levels)
    with open(directory / "accuracy.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ACCURACY_COLUMNS)
        for res in results:
            for m in res.methods.values():
                w.writerow([res.index, res.seed, m.method, fmt(m.rmse), fmt(m.mae), m.n_valid])
    with open(directory / "detections.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DETECTION_COLUMNS)
        for res in results:
            for m in res.methods.values():
                for cp, direction, det, delay in zip(spec.change_points, directions, m.detected, m.delays):
                    w.writerow([res.index, res.seed, m.method, cp, direction, "" if det is None else det,
                                "" if delay is None else delay, int(delay is None)])
    with open(directory / "reconstruction.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECONSTRUCTION_COLUMNS)
        for res in results:
            for method, targets in res.reconstruction.items():
                for target, (rmse, mae) in targets.items():
                    w.writerow([res.index, res.seed, method, target, fmt(rmse), fmt(mae)])


def rt_plot_rows(ensemble: ScenarioEnsemble, results: Sequence[ReplicaResult]) -> list[PlotRow]:
    rows = band_rows("true R", [rep.true_rt for rep in ensemble.replicas])
    for method in METHODS:
        rows += band_rows(method, [res.methods[method].rt_hat for res in results])
    return rows


def incidence_plot_rows(ensemble: ScenarioEnsemble, results: Sequence[ReplicaResult]) -> list[PlotRow]:
    rows = band_rows("observed", [_as_real(rep.observed_incidence) for rep in ensemble.replicas])
    if ensemble.mask is not None:
        rows += band_rows("raw", [_as_real(rep.raw_incidence) for rep in ensemble.replicas])
    for method in METHODS:
        rows += band_rows(f"{method} fit", [res.methods[method].lambda_hat for res in results])
    return rows


def _as_real(series) -> RtTrajectory:
    return RtTrajectory(series.counts.astype(np.float64), series.start)


def manifest(command: str, config: dict, **extra) -> dict:
    out = {"format": "cirl-run", "version": __version__, "command": command, "config": concrete(config)}
    out.update(extra)
    return out


def fit_from_config(series, config: dict) -> FitResult:
    r = resolve(config)
    return fit(series, r.gi, r.model, r.train)
