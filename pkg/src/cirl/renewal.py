"""Renewal-equation forward operator, generation intervals and simulation.

Day indices are 1-based integers.  A series stores its values in a numpy
array together with ``start``, the day index of element 0.  Undefined
real-valued entries (for instance the intensity on day 1, which has no
history) are ``nan``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import InvalidInputError, InvalidParameterError

DEFAULT_MAX_LAG = 30


def _frozen(values, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True).reshape(-1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class IncidenceSeries:
    """Daily non-negative case counts starting at day ``start``."""

    counts: np.ndarray
    start: int = 1

    def __post_init__(self):
        raw = np.asarray(self.counts)
        if raw.size == 0:
            raise InvalidInputError("incidence series must hold at least one day")
        if raw.dtype.kind == "f":
            if not np.all(np.isfinite(raw)) or np.any(raw != np.round(raw)):
                raise InvalidInputError("incidence counts must be integers")
        if np.any(raw < 0):
            raise InvalidInputError("incidence counts must be non-negative")
        object.__setattr__(self, "counts", _frozen(raw, np.int64))
        object.__setattr__(self, "start", int(self.start))

    def __len__(self) -> int:
        return self.counts.size

    @property
    def end(self) -> int:
        return self.start + self.counts.size - 1

    @property
    def days(self) -> np.ndarray:
        return np.arange(self.start, self.end + 1)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, IncidenceSeries)
            and self.start == other.start
            and np.array_equal(self.counts, other.counts)
        )

    def at(self, day: int) -> int:
        return int(self.counts[day - self.start])


@dataclass(frozen=True, eq=False)
class _RealSeries:
    values: np.ndarray
    start: int = 1

    def __post_init__(self):
        vals = _frozen(self.values, np.float64)
        if np.any(vals[~np.isnan(vals)] < 0):
            raise InvalidInputError(f"{type(self).__name__} values must be non-negative")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "start", int(self.start))

    def __len__(self) -> int:
        return self.values.size

    @property
    def end(self) -> int:
        return self.start + self.values.size - 1

    @property
    def days(self) -> np.ndarray:
        return np.arange(self.start, self.end + 1)

    def __eq__(self, other) -> bool:
        return (
            type(other) is type(self)
            and self.start == other.start
            and np.array_equal(self.values, other.values, equal_nan=True)
        )

    def at(self, day: int) -> float:
        return float(self.values[day - self.start])

    def scaled(self, factor: float):
        return type(self)(self.values * factor, self.start)


class RtTrajectory(_RealSeries):
    """Reproduction numbers per day; ``nan`` marks days without an estimate."""


class RenewalIntensity(_RealSeries):
    """Expected incidence per day; ``nan`` marks days without history."""


@dataclass(frozen=True, eq=False)
class GenerationInterval:
    """Weights ``w_1..w_M``; ``weights[0]`` is the one-day lag."""

    weights: np.ndarray
    mean_days: float = float("nan")
    sd_days: float = float("nan")
    shape: float = field(default=float("nan"), compare=False)
    scale: float = field(default=float("nan"), compare=False)

    def __post_init__(self):
        w = _frozen(self.weights, np.float64)
        if w.size == 0 or np.any(w < 0) or not np.all(np.isfinite(w)):
            raise InvalidParameterError("generation interval weights must be finite and >= 0")
        if abs(w.sum() - 1.0) > 1e-9:
            raise InvalidParameterError(f"generation interval sums to {w.sum()!r}, not 1")
        object.__setattr__(self, "weights", w)

    @property
    def max_lag(self) -> int:
        return self.weights.size

    def __eq__(self, other) -> bool:
        return isinstance(other, GenerationInterval) and np.array_equal(self.weights, other.weights)


# below this the renormalised weights are dominated by rounding noise
_MIN_WINDOW_MASS = 1e-12


def discretize_generation_interval(
    mean_days: float, sd_days: float, max_lag: int = DEFAULT_MAX_LAG
) -> GenerationInterval:
    """Gamma generation interval matched to ``mean_days``/``sd_days``.

    The density is integrated over the unit bins ``[tau - 1, tau]`` for
    ``tau = 1..max_lag`` and the weights are renormalised so the truncated
    tail is folded back in.
    """
    if not (mean_days > 0 and sd_days > 0):
        raise InvalidParameterError("generation interval mean and sd must be positive")
    if int(max_lag) < 2:
        raise InvalidParameterError("max_lag must be at least 2")
    shape = (mean_days / sd_days) ** 2
    scale = sd_days**2 / mean_days
    cdf = stats.gamma.cdf(np.arange(int(max_lag) + 1), shape, scale=scale)
    w = np.diff(cdf)
    if not w.sum() > _MIN_WINDOW_MASS:
        raise InvalidParameterError(
            f"gamma({shape:.4g}, {scale:.4g}) puts no usable mass within {int(max_lag)} days"
        )
    w = w / w.sum()
    return GenerationInterval(w, float(mean_days), float(sd_days), shape, scale)


def total_infectiousness(counts, gi: GenerationInterval) -> np.ndarray:
    """``Lambda[i] = sum_{tau=1}^{min(i, M)} counts[i - tau] * w_tau``.

    Lags are accumulated in increasing order, so each entry is bit-identical
    to a plain ``acc += I * w`` loop.  ``Lambda[0]`` is 0 (no history).
    """
    c = np.asarray(counts, dtype=np.float64)
    lam = np.zeros(c.size)
    for tau in range(1, min(gi.max_lag, c.size - 1) + 1):
        lam[tau:] += c[:-tau] * gi.weights[tau - 1]
    return lam


def _infectiousness_at(counts: np.ndarray, gi: GenerationInterval, i: int) -> float:
    acc = 0.0
    for tau in range(1, min(gi.max_lag, i) + 1):
        acc += counts[i - tau] * gi.weights[tau - 1]
    return acc


def renewal_intensity(
    rt: RtTrajectory, history: IncidenceSeries, gi: GenerationInterval, t: int
) -> float:
    """Expected incidence on day ``t`` from the counts strictly before ``t``.

    Days before the start of ``history`` contribute nothing.
    """
    if t < 2 or not (rt.start <= t <= rt.end):
        raise IndexError(f"day {t} is outside the trajectory range [{max(rt.start, 2)}, {rt.end}]")
    if t - 1 > history.end:
        raise IndexError(f"history ends on day {history.end}, needs day {t - 1}")
    acc = 0.0
    for tau in range(1, gi.max_lag + 1):
        day = t - tau
        if day < history.start:
            break
        acc += history.counts[day - history.start] * gi.weights[tau - 1]
    return rt.at(t) * acc


def expected_incidence(
    rt: RtTrajectory, observed: IncidenceSeries, gi: GenerationInterval
) -> RenewalIntensity:
    """Renewal intensity for every day after the first, using observed history."""
    if len(rt) != len(observed) or rt.start != observed.start:
        raise InvalidInputError(
            f"rt covers days {rt.start}..{rt.end}, observations {observed.start}..{observed.end}"
        )
    lam = rt.values * total_infectiousness(observed.counts, gi)
    lam[0] = np.nan
    return RenewalIntensity(lam, observed.start)


def simulate_epidemic(
    rt: RtTrajectory,
    gi: GenerationInterval,
    seed_cases: int,
    horizon: int,
    rng_seed: int,
) -> tuple[IncidenceSeries, RenewalIntensity]:
    """Poisson renewal simulation seeded with ``seed_cases`` on day 1.

    The returned intensity on day ``t`` uses the realised counts before
    ``t``; it is the Poisson rate each count was actually drawn from.
    """
    if horizon < 2:
        raise InvalidParameterError("horizon must be at least 2 days")
    if seed_cases < 1:
        raise InvalidParameterError("seed_cases must be positive")
    if rt.start != 1 or len(rt) < horizon:
        raise InvalidInputError("rt must start on day 1 and cover the horizon")
    rng = np.random.default_rng(rng_seed)
    counts = np.zeros(horizon, dtype=np.int64)
    lam = np.full(horizon, np.nan)
    counts[0] = seed_cases
    for i in range(1, horizon):
        lam[i] = rt.values[i] * _infectiousness_at(counts, gi, i)
        counts[i] = rng.poisson(lam[i])
    return IncidenceSeries(counts, 1), RenewalIntensity(lam, 1)
