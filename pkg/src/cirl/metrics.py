"""Accuracy, change-point detection and ensemble summary metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidInputError
from .renewal import RtTrajectory

DOWNWARD = "downward"
UPWARD = "upward"


@dataclass(frozen=True)
class AccuracyReport:
    rmse: float
    mae: float
    valid_days: np.ndarray
    n_valid: int


@dataclass(frozen=True)
class DetectionReport:
    true_cp: int
    detected_cp: int | None
    delay: int | None
    missed: bool


@dataclass(frozen=True)
class EnsembleSummary:
    """Median and quartiles over present values; ``mdr`` is the missed fraction."""

    median: float | None
    q1: float | None
    q3: float | None
    mdr: float
    n_replicas: int
    n_present: int

    def format(self, digits: int = 2) -> str:
        if self.median is None:
            return "~"
        f = f"{{:.{digits}f}}"
        return f"{f.format(self.median)} [{f.format(self.q1)}, {f.format(self.q3)}]"


def _series_arrays(s) -> tuple[np.ndarray, np.ndarray]:
    if hasattr(s, "values"):
        return s.days, np.asarray(s.values, dtype=np.float64)
    return s.days, np.asarray(s.counts, dtype=np.float64)


def _errors(est, target, first: int | None, last: int | None) -> AccuracyReport:
    d_e, v_e = _series_arrays(est)
    d_t, v_t = _series_arrays(target)
    lo = max(d_e[0], d_t[0], first if first is not None else d_e[0])
    hi = min(d_e[-1], d_t[-1], last if last is not None else d_e[-1])
    if hi < lo:
        raise InvalidInputError("no overlapping days to score")
    days = np.arange(lo, hi + 1)
    a = v_e[days - d_e[0]]
    b = v_t[days - d_t[0]]
    ok = ~(np.isnan(a) | np.isnan(b))
    if not ok.any():
        raise InvalidInputError("no day where both series are defined")
    diff = a[ok] - b[ok]
    return AccuracyReport(
        rmse=float(np.sqrt(np.mean(diff * diff))),
        mae=float(np.mean(np.abs(diff))),
        valid_days=days[ok],
        n_valid=int(ok.sum()),
    )


def accuracy(est: RtTrajectory, truth: RtTrajectory, valid_from: int) -> AccuracyReport:
    """RMSE and MAE over days ``t >= valid_from`` where both series are defined."""
    return _errors(est, truth, valid_from, None)


def incidence_errors(est, target, first: int | None = None, last: int | None = None) -> AccuracyReport:
    """RMSE/MAE between an incidence estimate and a target over ``[first, last]``.

    Both arguments may be intensities (``.values``) or count series
    (``.counts``); the range defaults to their overlap.
    """
    return _errors(est, target, first, last)


def detection(
    est: RtTrajectory,
    true_cp: int,
    direction: str,
    scope_start: int | None = None,
    scope_end: int | None = None,
) -> DetectionReport:
    """First crossing of the threshold R = 1 inside ``[scope_start, scope_end]``.

    A downward crossing is a day with ``R < 1`` whose previous defined value
    (inside the scope) is ``>= 1``; upward is ``R > 1`` after ``<= 1``.  Days
    where the estimate is undefined are skipped.  Crossings before the true
    change point give negative delays.
    """
    if direction not in (DOWNWARD, UPWARD):
        raise InvalidInputError(f"unknown direction {direction!r}")
    lo = est.start if scope_start is None else max(scope_start, est.start)
    hi = est.end if scope_end is None else min(scope_end, est.end)
    prev = math.nan
    for day in range(lo, hi + 1):
        r = est.values[day - est.start]
        if math.isnan(r):
            continue
        if not math.isnan(prev):
            crossed = (prev >= 1.0 and r < 1.0) if direction == DOWNWARD else (prev <= 1.0 and r > 1.0)
            if crossed:
                return DetectionReport(true_cp, day, day - true_cp, False)
        prev = r
    return DetectionReport(true_cp, None, None, True)


def change_directions(levels: Sequence[float]) -> list[str]:
    return [DOWNWARD if b < a else UPWARD for a, b in zip(levels[:-1], levels[1:])]


def detection_scopes(
    change_points: Sequence[int], first_day: int, last_day: int, grace: int = 0
) -> list[tuple[int, int]]:
    """Search window per change point: previous change (or ``first_day``) up
    to the day before the next change plus ``grace`` (or ``last_day``)."""
    scopes = []
    for i, _ in enumerate(change_points):
        lo = first_day if i == 0 else change_points[i - 1]
        hi = last_day if i + 1 == len(change_points) else min(last_day, change_points[i + 1] - 1 + grace)
        scopes.append((lo, hi))
    return scopes


def summarize(values: Sequence[float | None], missed: Sequence[bool] | None = None) -> EnsembleSummary:
    """Median and linear-interpolation quartiles of the present values.

    ``None``/``nan`` entries are absent; ``missed`` flags (default: absent
    entries) give the missed-detection rate.
    """
    arr = np.array([math.nan if v is None else float(v) for v in values], dtype=np.float64)
    present = arr[~np.isnan(arr)]
    flags = np.isnan(arr) if missed is None else np.asarray(missed, dtype=bool)
    n = arr.size
    mdr = float(flags.mean()) if n else 0.0
    if present.size == 0:
        return EnsembleSummary(None, None, None, mdr, n, 0)
    q1, med, q3 = np.quantile(present, [0.25, 0.5, 0.75])
    return EnsembleSummary(float(med), float(q1), float(q3), mdr, n, int(present.size))
