"""Renewal-based zero-inflated Poisson objective, optimisation and inference products."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.special import gammaln

from . import autograd as ag
from .autograd import Tensor
from .errors import InvalidInputError, InvalidParameterError, NonFiniteLossError
from .metrics import AccuracyReport, incidence_errors
from .network import (
    ForwardPass,
    InferenceOutput,
    ModelConfig,
    ModelParams,
    forward,
    forward_series,
    infer_trajectory,
    init_params,
)
from .renewal import (
    GenerationInterval,
    IncidenceSeries,
    RenewalIntensity,
    RtTrajectory,
    expected_incidence,
    total_infectiousness,
)

LAMBDA_FLOOR = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    smooth_weight: float = 0.1
    huber_delta: float = 0.25
    learning_rate: float = 3e-3
    epochs: int = 1000
    optimizer: str = "adam"
    rng_seed: int = 0
    grad_clip: float | None = 5.0

    def __post_init__(self):
        if self.smooth_weight < 0:
            raise InvalidParameterError("smooth_weight must be >= 0")
        if self.huber_delta <= 0 or self.learning_rate <= 0 or self.epochs < 1:
            raise InvalidParameterError("huber_delta, learning_rate and epochs must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise InvalidParameterError(f"unknown optimizer {self.optimizer!r}")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise InvalidParameterError("grad_clip must be positive when set")

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# objective


def zip_nll(count: int, lam: float, pi: float) -> float:
    """-log P(count | lam, pi) under the zero-inflated Poisson."""
    lam = max(float(lam), LAMBDA_FLOOR)
    if count == 0:
        if pi == 0:
            return lam
        return -float(np.logaddexp(math.log(pi), math.log1p(-pi) - lam))
    return -(math.log1p(-pi) + count * math.log(lam) - lam - math.lgamma(count + 1))


def poisson_nll(count: int, lam: float) -> float:
    lam = max(float(lam), LAMBDA_FLOOR)
    return lam - count * math.log(lam) + math.lgamma(count + 1)


def zip_nll_terms(counts, lam: Tensor, pi_logit: Tensor) -> Tensor:
    """Per-day ZIP negative log-likelihood with ``pi = sigmoid(pi_logit)``.

    Works in log space: ``-log(1 - pi) = softplus(logit)`` and
    ``-log(pi) = softplus(-logit)``, and the zero branch uses log-sum-exp.
    """
    c = np.asarray(counts, dtype=np.float64)
    positive = (c > 0).astype(np.float64)
    lam = ag.clamp_min(lam, LAMBDA_FLOOR)
    nlog_keep = ag.softplus(pi_logit)
    nlog_zero = ag.softplus(-pi_logit)
    pos = nlog_keep - c * ag.log(lam) + lam + gammaln(c + 1.0)
    zero = -ag.logaddexp(-nlog_zero, -nlog_keep - lam)
    return positive * pos + (1.0 - positive) * zero


def smoothness_penalty(rt, delta: float) -> float:
    """Sum of Huber losses of consecutive differences; 0 for fewer than 2 values."""
    r = np.asarray(rt.values if hasattr(rt, "values") else rt, dtype=np.float64)
    if r.size < 2:
        return 0.0
    d = np.diff(r)
    a = np.abs(d)
    return float(np.sum(np.where(a <= delta, 0.5 * d * d, delta * (a - 0.5 * delta))))


def smoothness_term(rt: Tensor, delta: float) -> Tensor:
    if rt.shape[0] < 2:
        return Tensor(0.0)
    return ag.sum(ag.huber(rt[1:] - rt[:-1], delta))


def _aligned(series: IncidenceSeries, days: np.ndarray, gi: GenerationInterval):
    idx = np.asarray(days) - series.start
    return series.counts[idx], total_infectiousness(series.counts, gi)[idx]


def total_loss(
    series: IncidenceSeries, output: ForwardPass, gi: GenerationInterval, cfg: TrainConfig
) -> Tensor:
    """Mean ZIP NLL over the scored days plus ``smooth_weight`` times the Huber penalty."""
    counts, infectiousness = _aligned(series, output.days, gi)
    nll = zip_nll_terms(counts, output.rt * infectiousness, output.pi_logit)
    loss = ag.mean(nll)
    if cfg.smooth_weight > 0:
        loss = loss + cfg.smooth_weight * smoothness_term(output.rt, cfg.huber_delta)
    return loss


# ---------------------------------------------------------------------------
# optimisation


class Adam:
    def __init__(self, params: list[Tensor], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad * p.grad
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class SGD:
    def __init__(self, params: list[Tensor], lr: float):
        self.params, self.lr = params, lr

    def step(self) -> None:
        for p in self.params:
            if p.grad is not None:
                p.data -= self.lr * p.grad


def clip_grad_norm(params: list[Tensor], max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params if p.grad is not None))
    if norm > max_norm:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= scale
    return norm


@dataclass
class FitResult:
    params: ModelParams
    rt_hat: RtTrajectory
    pi_hat: np.ndarray
    lambda_hat: RenewalIntensity
    loss_history: list[float]
    model_config: ModelConfig
    train_config: TrainConfig
    meta: dict = field(default_factory=dict)

    def rows(self, series: IncidenceSeries):
        for i, day in enumerate(self.rt_hat.days):
            yield (
                int(day),
                float(self.rt_hat.values[i]),
                float(self.pi_hat[i]),
                float(self.lambda_hat.values[i]),
                series.at(int(day)),
            )

    def save(self, directory, series: IncidenceSeries) -> None:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        self.params.save(out / "params.npz")
        with open(out / "fit.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "rt_hat", "pi_hat", "lambda_hat", "observed"])
            for day, r, p, lam, obs in self.rows(series):
                w.writerow([day, repr(r), repr(p), repr(lam), obs])
        with open(out / "loss_history.json", "w") as fh:
            json.dump(
                {
                    "loss_history": self.loss_history,
                    "train_config": self.train_config.to_dict(),
                    "model_config": self.model_config.to_dict(),
                },
                fh,
                indent=1,
            )


def fit(
    series: IncidenceSeries,
    gi: GenerationInterval,
    mcfg: ModelConfig | None = None,
    tcfg: TrainConfig | None = None,
    replica: int | None = None,
    on_epoch: Callable[[int, float], None] | None = None,
) -> FitResult:
    """Train one model on one series by full-batch gradient descent."""
    mcfg = mcfg or ModelConfig()
    tcfg = tcfg or TrainConfig()
    if len(series) <= mcfg.context_len + 5:
        raise InvalidInputError(
            f"series of {len(series)} days is too short for context length {mcfg.context_len}"
        )
    params = init_params(
        mcfg, 1.0 + float(series.counts.max()), float(series.end), seed=tcfg.rng_seed
    )
    tensors = params.values()
    opt = Adam(tensors, tcfg.learning_rate) if tcfg.optimizer == "adam" else SGD(tensors, tcfg.learning_rate)
    history: list[float] = []
    for epoch in range(tcfg.epochs):
        loss = total_loss(series, forward_series(series, params), gi, tcfg)
        value = loss.item()
        if not math.isfinite(value):
            raise NonFiniteLossError(epoch, value, replica)
        history.append(value)
        ag.zero_grad(tensors)
        ag.backward(loss)
        if tcfg.grad_clip is not None:
            clip_grad_norm(tensors, tcfg.grad_clip)
        opt.step()
        if on_epoch is not None:
            on_epoch(epoch, value)
    ag.zero_grad(tensors)
    out = infer_trajectory(series, params)
    return FitResult(
        params=params,
        rt_hat=out.rt_hat,
        pi_hat=out.pi_hat,
        lambda_hat=fitted_intensity(out, series, gi),
        loss_history=history,
        model_config=mcfg,
        train_config=tcfg,
    )


def fitted_intensity(
    output: InferenceOutput | RtTrajectory, series: IncidenceSeries, gi: GenerationInterval
) -> RenewalIntensity:
    """``R_hat_t * Lambda_t`` with observed history, on the days ``R_hat`` covers."""
    rt = output.rt_hat if isinstance(output, InferenceOutput) else output
    _, infectiousness = _aligned(series, rt.days, gi)
    return RenewalIntensity(rt.values * infectiousness, rt.start)


# ---------------------------------------------------------------------------
# forecasting and reconstruction


def recursive_forecast(
    predict_rt: Callable[[int, np.ndarray], float],
    history,
    last_day: int,
    gi: GenerationInterval,
    horizon: int,
    context_len: int,
) -> tuple[RtTrajectory, RenewalIntensity]:
    """Roll the renewal equation forward, feeding expected incidence back in."""
    if horizon < 1:
        raise InvalidParameterError("forecast horizon must be >= 1")
    hist = [float(x) for x in history]
    rts, lams = [], []
    for h in range(1, horizon + 1):
        r = float(predict_rt(last_day + h, np.asarray(hist[-context_len:])))
        acc = 0.0
        for tau in range(1, min(gi.max_lag, len(hist)) + 1):
            acc += hist[-tau] * gi.weights[tau - 1]
        lam = r * acc
        rts.append(r)
        lams.append(lam)
        hist.append(lam)
    return RtTrajectory(rts, last_day + 1), RenewalIntensity(lams, last_day + 1)


def forecast(
    fit_result: FitResult | ModelParams, series: IncidenceSeries, gi: GenerationInterval, horizon: int = 10
) -> tuple[RtTrajectory, RenewalIntensity]:
    """Point forecast of ``R`` and expected incidence for ``horizon`` days after ``series``.

    Accepts a fit or bare parameters.  The zero-inflation head is evaluated
    by ``forward`` but plays no part in the deterministic forecast.
    """
    params = getattr(fit_result, "params", fit_result)
    return recursive_forecast(
        lambda day, window: forward(day, window, params)[0],
        series.counts,
        series.end,
        gi,
        horizon,
        params.config.context_len,
    )


RECONSTRUCTION_TARGETS = ("lambda_true", "I_obs", "I_raw", "lambda_renewal")


def reconstruction_report(fit_or_lambda, replica, gi: GenerationInterval) -> dict[str, AccuracyReport]:
    """Errors of a fitted intensity against the four simulation targets.

    ``fit_or_lambda`` is a :class:`FitResult` or a :class:`RenewalIntensity`
    (e.g. a baseline's ``R_hat * Lambda``).  All targets are scored on the
    same days.
    """
    lam_hat = getattr(fit_or_lambda, "lambda_hat", fit_or_lambda)
    for name in ("true_rt", "lambda_true", "raw_incidence", "observed_incidence"):
        if getattr(replica, name, None) is None:
            raise InvalidInputError(f"replica lacks ground truth field {name!r}")
    targets = {
        "lambda_true": replica.lambda_true,
        "I_obs": replica.observed_incidence,
        "I_raw": replica.raw_incidence,
        "lambda_renewal": expected_incidence(replica.true_rt, replica.observed_incidence, gi),
    }
    first = lam_hat.start
    days = lam_hat.days[~np.isnan(lam_hat.values)]
    for target in targets.values():
        vals = target.values if hasattr(target, "values") else target.counts
        days = days[~np.isnan(np.asarray(vals, dtype=float)[days - target.start])]
    # score every target on the same day set
    keep = np.full(len(lam_hat), np.nan)
    keep[days - first] = lam_hat.values[days - first]
    masked_hat = RenewalIntensity(keep, first)
    reports = {name: incidence_errors(masked_hat, t) for name, t in targets.items()}
    if len({r.n_valid for r in reports.values()}) != 1:
        raise InvalidInputError("reconstruction targets were scored on different day sets")
    return reports
