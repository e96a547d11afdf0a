"""Synthetic step-change epidemics with optional zero-inflation masking."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InvalidInputError, InvalidParameterError
from .renewal import (
    GenerationInterval,
    IncidenceSeries,
    RenewalIntensity,
    RtTrajectory,
    simulate_epidemic,
)

TRUE_LAMBDA_PEAK = "true_lambda_peak"
OBSERVED_PEAK = "observed_peak"
FIRST_WAVE_PEAK = "first_wave_peak"
PEAK_RULES = (TRUE_LAMBDA_PEAK, OBSERVED_PEAK, FIRST_WAVE_PEAK)

# independent stream for mask draws, so masking never perturbs the epidemic
_MASK_STREAM = 1
ENSEMBLE_FORMAT = "cirl-ensemble"
ENSEMBLE_VERSION = 1
REPLICA_COLUMNS = ("day", "true_rt", "lambda_true", "raw", "observed", "masked_flag")


@dataclass(frozen=True)
class StepProfileSpec:
    levels: tuple[float, ...]
    change_points: tuple[int, ...]
    horizon: int

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(float(v) for v in self.levels))
        object.__setattr__(self, "change_points", tuple(int(c) for c in self.change_points))
        if len(self.levels) != len(self.change_points) + 1:
            raise InvalidParameterError("need exactly one more level than change points")
        if any(v < 0 for v in self.levels):
            raise InvalidParameterError("R levels must be >= 0")
        if self.horizon < 2:
            raise InvalidParameterError("horizon must be at least 2 days")
        cps = self.change_points
        if any(b <= a for a, b in zip(cps[:-1], cps[1:])):
            raise InvalidParameterError("change points must be strictly increasing")
        if cps and not (1 < cps[0] and cps[-1] < self.horizon):
            raise InvalidParameterError("change points must lie strictly inside (1, horizon)")


SINGLE_STEP = StepProfileSpec((2.5, 0.8), (40,), 120)
DOUBLE_STEP = StepProfileSpec((2.5, 0.8, 1.8), (40, 80), 120)


@dataclass(frozen=True)
class MaskSpec:
    p_pre: float = 0.3
    p_post: float = 0.05
    peak_rule: str = FIRST_WAVE_PEAK

    def __post_init__(self):
        if not (0.0 <= self.p_pre <= 1.0 and 0.0 <= self.p_post <= 1.0):
            raise InvalidParameterError("mask probabilities must lie in [0, 1]")
        if self.peak_rule not in PEAK_RULES:
            raise InvalidParameterError(f"unknown peak rule {self.peak_rule!r}")


@dataclass(frozen=True, eq=False)
class ScenarioReplica:
    true_rt: RtTrajectory
    lambda_true: RenewalIntensity
    raw_incidence: IncidenceSeries
    observed_incidence: IncidenceSeries
    mask_indicator: np.ndarray
    rng_seed: int


@dataclass(frozen=True, eq=False)
class ScenarioEnsemble:
    replicas: tuple[ScenarioReplica, ...]
    spec: StepProfileSpec
    mask: MaskSpec | None
    gi: GenerationInterval
    seed_cases: int = 2
    base_seed: int = 0

    def __len__(self) -> int:
        return len(self.replicas)


def make_step_profile(spec: StepProfileSpec) -> RtTrajectory:
    """Piecewise-constant R over days 1..horizon; a change takes effect on its day."""
    days = np.arange(1, spec.horizon + 1)
    idx = np.searchsorted(np.asarray(spec.change_points), days, side="right")
    return RtTrajectory(np.asarray(spec.levels)[idx], 1)


def peak_day(
    lambda_true: RenewalIntensity,
    raw: IncidenceSeries,
    rule: str,
    true_rt: RtTrajectory | None = None,
) -> int:
    """Day index of the epidemic peak under ``rule`` (earliest day on ties).

    ``first_wave_peak`` takes the arg-max of the true intensity over the days
    before true R first drops below 1 (the whole series if it never does).
    """
    if rule == OBSERVED_PEAK:
        return raw.start + int(np.argmax(raw.counts))
    lam = np.nan_to_num(lambda_true.values, nan=-np.inf)
    if rule == FIRST_WAVE_PEAK:
        if true_rt is None:
            raise InvalidInputError("first_wave_peak needs the true R trajectory")
        below = np.flatnonzero(true_rt.values < 1.0)
        if below.size:
            end_day = true_rt.start + int(below[0])
            lam = lam[: max(1, end_day - lambda_true.start)]
    elif rule != TRUE_LAMBDA_PEAK:
        raise InvalidParameterError(f"unknown peak rule {rule!r}")
    if np.all(np.isneginf(lam)):
        return raw.start
    return lambda_true.start + int(np.argmax(lam))


def apply_zero_mask(
    raw: IncidenceSeries,
    lambda_true: RenewalIntensity,
    mask: MaskSpec,
    rng_seed: int,
    true_rt: RtTrajectory | None = None,
) -> tuple[IncidenceSeries, np.ndarray]:
    """Zero each day independently: with ``p_pre`` up to and including the
    peak day, with ``p_post`` after it.  Returns (observed, mask flags)."""
    if len(raw) != len(lambda_true) or raw.start != lambda_true.start:
        raise InvalidInputError("raw counts and true intensity must be aligned")
    peak = peak_day(lambda_true, raw, mask.peak_rule, true_rt)
    p = np.where(raw.days <= peak, mask.p_pre, mask.p_post)
    u = np.random.default_rng([rng_seed, _MASK_STREAM]).random(len(raw))
    flags = u < p
    observed = np.where(flags, 0, raw.counts)
    return IncidenceSeries(observed, raw.start), flags


def make_replica(
    spec: StepProfileSpec,
    gi: GenerationInterval,
    seed_cases: int,
    mask: MaskSpec | None,
    rng_seed: int,
) -> ScenarioReplica:
    rt = make_step_profile(spec)
    raw, lam = simulate_epidemic(rt, gi, seed_cases, spec.horizon, rng_seed)
    if mask is None:
        observed, flags = raw, np.zeros(len(raw), dtype=bool)
    else:
        observed, flags = apply_zero_mask(raw, lam, mask, rng_seed, rt)
    flags.setflags(write=False)
    return ScenarioReplica(rt, lam, raw, observed, flags, int(rng_seed))


def generate_ensemble(
    spec: StepProfileSpec,
    gi: GenerationInterval,
    n: int,
    seed_cases: int = 2,
    mask: MaskSpec | None = None,
    base_seed: int = 0,
) -> ScenarioEnsemble:
    """``n`` replicas with ``rng_seed = base_seed + i``."""
    if n < 1:
        raise InvalidParameterError("ensemble size must be >= 1")
    replicas = tuple(make_replica(spec, gi, seed_cases, mask, base_seed + i) for i in range(n))
    return ScenarioEnsemble(replicas, spec, mask, gi, seed_cases, base_seed)


# ---------------------------------------------------------------------------
# serialisation


def _fmt(x: float) -> str:
    return "" if np.isnan(x) else repr(float(x))


def _parse_float(s: str) -> float:
    return float("nan") if s == "" else float(s)


def write_ensemble(ensemble: ScenarioEnsemble, directory, extra: dict | None = None) -> Path:
    """One CSV per replica plus ``manifest.json`` describing how to regenerate it."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for i, rep in enumerate(ensemble.replicas):
        name = f"replica_{i:03d}.csv"
        files.append(name)
        with open(out / name, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPLICA_COLUMNS)
            for j, day in enumerate(rep.raw_incidence.days):
                w.writerow(
                    [
                        int(day),
                        _fmt(rep.true_rt.values[j]),
                        _fmt(rep.lambda_true.values[j]),
                        int(rep.raw_incidence.counts[j]),
                        int(rep.observed_incidence.counts[j]),
                        int(rep.mask_indicator[j]),
                    ]
                )
    manifest = {
        "format": ENSEMBLE_FORMAT,
        "version": ENSEMBLE_VERSION,
        "spec": asdict(ensemble.spec),
        "mask": None if ensemble.mask is None else asdict(ensemble.mask),
        "gi": {
            "mean_days": ensemble.gi.mean_days,
            "sd_days": ensemble.gi.sd_days,
            "max_lag": ensemble.gi.max_lag,
            "weights": [float(x) for x in ensemble.gi.weights],
        },
        "seed_cases": ensemble.seed_cases,
        "base_seed": ensemble.base_seed,
        "seeds": [r.rng_seed for r in ensemble.replicas],
        "replica_files": files,
    }
    if extra:
        manifest.update(extra)
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out


def read_ensemble(directory) -> ScenarioEnsemble:
    src = Path(directory)
    with open(src / "manifest.json") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != ENSEMBLE_FORMAT:
        raise InvalidInputError(f"{src}: not an ensemble directory")
    spec = StepProfileSpec(**{k: tuple(v) if isinstance(v, list) else v for k, v in manifest["spec"].items()})
    mask = None if manifest["mask"] is None else MaskSpec(**manifest["mask"])
    g = manifest["gi"]
    gi = GenerationInterval(np.asarray(g["weights"]), g["mean_days"], g["sd_days"])
    replicas = []
    for name, seed in zip(manifest["replica_files"], manifest["seeds"]):
        with open(src / name, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows or tuple(rows[0].keys()) != REPLICA_COLUMNS:
            raise InvalidInputError(f"{src / name}: unexpected columns")
        start = int(rows[0]["day"])
        col = lambda key, conv: [conv(r[key]) for r in rows]  # noqa: E731
        flags = np.asarray(col("masked_flag", int), dtype=bool)
        flags.setflags(write=False)
        replicas.append(
            ScenarioReplica(
                RtTrajectory(col("true_rt", _parse_float), start),
                RenewalIntensity(col("lambda_true", _parse_float), start),
                IncidenceSeries(col("raw", int), start),
                IncidenceSeries(col("observed", int), start),
                flags,
                int(seed),
            )
        )
    return ScenarioEnsemble(
        tuple(replicas), spec, mask, gi, manifest["seed_cases"], manifest["base_seed"]
    )


def step_spec(levels: Sequence[float], change_points: Sequence[int], horizon: int) -> StepProfileSpec:
    return StepProfileSpec(tuple(levels), tuple(change_points), int(horizon))
