"""Sliding-window Gamma-Poisson estimator of R_t (the EpiEstim method).

Within a window of ``tau`` days ending on day ``t`` the reproduction number
is held constant.  With a Gamma(shape ``a``, scale ``b``) prior and Poisson
counts ``I_s ~ Poisson(R * Lambda_s)``, the posterior is Gamma with

    shape = a + sum_s I_s,     rate = 1/b + sum_s Lambda_s.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats

from .errors import InvalidInputError, InvalidParameterError
from .renewal import GenerationInterval, IncidenceSeries, RtTrajectory, total_infectiousness


@dataclass(frozen=True)
class EpiEstimConfig:
    window: int = 7
    prior_shape: float = 1.0
    prior_scale: float = 5.0

    def __post_init__(self):
        if self.window < 1:
            raise InvalidParameterError("window must be >= 1 day")
        if self.prior_shape <= 0 or self.prior_scale <= 0:
            raise InvalidParameterError("prior shape and scale must be positive")


@dataclass(frozen=True)
class PosteriorEstimate:
    day: int
    shape: float
    rate: float
    mean: float
    q025: float
    q975: float
    defined: bool


def posterior(sum_cases: float, sum_infectiousness: float, cfg: EpiEstimConfig) -> tuple[float, float]:
    """Posterior (shape, rate) for one window."""
    return cfg.prior_shape + sum_cases, 1.0 / cfg.prior_scale + sum_infectiousness


def estimate(
    series: IncidenceSeries, gi: GenerationInterval, cfg: EpiEstimConfig | None = None
) -> list[PosteriorEstimate]:
    """Posterior for every window end from ``start + window`` to the last day.

    Windows whose total infectiousness is zero carry ``defined=False`` and
    ``nan`` summaries.
    """
    cfg = cfg or EpiEstimConfig()
    n = len(series)
    if n <= cfg.window + 1:
        raise InvalidInputError(f"series of {n} days is too short for a {cfg.window}-day window")
    counts = series.counts.astype(np.float64)
    lam = total_infectiousness(series.counts, gi)
    cum_i = np.concatenate([[0.0], np.cumsum(counts)])
    cum_l = np.concatenate([[0.0], np.cumsum(lam)])
    out = []
    for end in range(cfg.window, n):
        lo = end - cfg.window + 1
        s_i = cum_i[end + 1] - cum_i[lo]
        s_l = cum_l[end + 1] - cum_l[lo]
        shape, rate = posterior(s_i, s_l, cfg)
        day = series.start + end
        if s_l <= 0:
            out.append(PosteriorEstimate(day, shape, rate, np.nan, np.nan, np.nan, False))
            continue
        q025, q975 = stats.gamma.ppf([0.025, 0.975], shape, scale=1.0 / rate)
        out.append(PosteriorEstimate(day, shape, rate, shape / rate, float(q025), float(q975), True))
    return out


def to_trajectory(estimates: list[PosteriorEstimate]) -> RtTrajectory:
    """Posterior means as a trajectory; undefined windows become ``nan``."""
    if not estimates:
        raise InvalidInputError("no estimates")
    return RtTrajectory([e.mean for e in estimates], estimates[0].day)


def write_csv(estimates: list[PosteriorEstimate], path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["day", "mean", "q025", "q975", "defined_flag"])
        for e in estimates:
            cells = [repr(float(v)) if e.defined else "" for v in (e.mean, e.q025, e.q975)]
            w.writerow([e.day, *cells, int(e.defined)])
