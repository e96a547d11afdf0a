"""Conditional inverse mapping ``(t, recent counts) -> (R_t, pi_t)``.

Pipeline for one day ``t`` with history window ``I[t-L .. t-1]``:

* time embedding: Fourier features of ``t / T`` through a two-layer MLP;
* history encoder: a (counts, first differences) input through two dilated
  causal TCN stacks with different kernel sizes, concatenated, projected to
  ``embed_dim`` and passed through self-attention encoder layers;
* fusion: the time embedding queries the encoded window tokens with
  multi-head cross-attention; the result is concatenated with the time
  embedding and the last token;
* heads: an MLP ending in softplus gives ``R_t > 0``, a parallel MLP ending
  in a sigmoid gives the zero-inflation probability ``pi_t``.

All days are processed as one batch; the batch axis is the leading axis of
every activation.
"""

from __future__ import annotations

import io
import json
import math
import zipfile
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import InvalidInputError, InvalidParameterError, OutOfContextError, ShapeError
from .renewal import IncidenceSeries, RtTrajectory

PARAMS_FORMAT = "cirl-params"
PARAMS_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    context_len: int = 21
    fourier_freqs: tuple[float, ...] = (1.0, 2.0, 4.0, 8.0, 16.0)
    kernel_sizes: tuple[int, ...] = (3, 7)
    tcn_channels: int = 16
    dilations: tuple[int, ...] = (1, 2, 4)
    embed_dim: int = 32
    attn_heads: int = 2
    attn_layers: int = 1
    head_hidden: int = 32

    def __post_init__(self):
        object.__setattr__(self, "fourier_freqs", tuple(float(a) for a in self.fourier_freqs))
        object.__setattr__(self, "kernel_sizes", tuple(int(k) for k in self.kernel_sizes))
        object.__setattr__(self, "dilations", tuple(int(d) for d in self.dilations))
        if not self.fourier_freqs or any(a <= 0 for a in self.fourier_freqs):
            raise InvalidParameterError("fourier_freqs must be a non-empty list of positive values")
        if not self.kernel_sizes or any(k < 1 for k in self.kernel_sizes):
            raise InvalidParameterError("kernel_sizes must be positive")
        if not self.dilations or any(d < 1 for d in self.dilations):
            raise InvalidParameterError("dilations must be positive")
        for name in ("context_len", "tcn_channels", "embed_dim", "attn_heads", "head_hidden"):
            if getattr(self, name) < 1:
                raise InvalidParameterError(f"{name} must be positive")
        if self.attn_layers < 0:
            raise InvalidParameterError("attn_layers must be >= 0")
        if self.context_len < max(self.kernel_sizes):
            raise InvalidParameterError("context_len must be at least the largest kernel size")
        if self.embed_dim % self.attn_heads:
            raise InvalidParameterError("embed_dim must be divisible by attn_heads")

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class ModelParams:
    """Trainable tensors plus the input scalings fixed at training time.

    ``count_scale`` divides raw counts (``1 + max`` of the training series);
    ``time_scale`` divides day indices before the Fourier features (the
    training series' last day).
    """

    tensors: dict[str, Tensor]
    count_scale: float
    time_scale: float
    config: ModelConfig = field(default_factory=ModelConfig)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def values(self) -> list[Tensor]:
        return list(self.tensors.values())

    def n_parameters(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def copy(self) -> "ModelParams":
        return ModelParams(
            {k: Tensor(v.data.copy(), requires_grad=True, name=k) for k, v in self.tensors.items()},
            self.count_scale,
            self.time_scale,
            self.config,
        )

    def save(self, path) -> None:
        meta = {
            "format": PARAMS_FORMAT,
            "version": PARAMS_VERSION,
            "config": self.config.to_dict(),
            "count_scale": self.count_scale,
            "time_scale": self.time_scale,
            "names": list(self.tensors),
        }
        arrays = {"__meta__": np.array(json.dumps(meta))}
        arrays.update({f"p:{k}": v.data for k, v in self.tensors.items()})
        # same layout as np.savez, but with fixed member timestamps so that
        # identical parameters always give identical bytes
        with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
            for key, arr in arrays.items():
                info = zipfile.ZipInfo(f"{key}.npy", date_time=(1980, 1, 1, 0, 0, 0))
                buf = io.BytesIO()
                np.lib.format.write_array(buf, np.asarray(arr), allow_pickle=False)
                zf.writestr(info, buf.getvalue())

    @classmethod
    def load(cls, path) -> "ModelParams":
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["__meta__"]))
            if meta.get("format") != PARAMS_FORMAT or meta.get("version") != PARAMS_VERSION:
                raise InvalidInputError(f"{path}: unsupported parameter file format")
            tensors = {
                k: Tensor(z[f"p:{k}"].astype(np.float64), requires_grad=True, name=k)
                for k in meta["names"]
            }
        return cls(
            tensors, meta["count_scale"], meta["time_scale"], ModelConfig.from_dict(meta["config"])
        )


def init_params(
    config: ModelConfig, count_scale: float, time_scale: float, seed: int = 0
) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation from ``seed``.

    The output biases start at R = 1 and pi ~= 0.12 so training begins from
    a neutral epidemic and mostly-Poisson observations.
    """
    rng = np.random.default_rng(seed)
    shapes = param_shapes(config)
    tensors = {}
    for name, (shape, fan_in) in shapes.items():
        s = 1.0 / math.sqrt(fan_in)
        tensors[name] = Tensor(rng.uniform(-s, s, size=shape), requires_grad=True, name=name)
    for name in list(tensors):
        if name.endswith(".gamma"):
            tensors[name].data[...] = 1.0
        elif name.endswith(".beta"):
            tensors[name].data[...] = 0.0
    tensors["r_head.b2"].data[...] = math.log(math.expm1(1.0))
    tensors["pi_head.b2"].data[...] = -2.0
    return ModelParams(tensors, float(count_scale), float(time_scale), config)


def param_shapes(config: ModelConfig) -> dict[str, tuple[tuple[int, ...], int]]:
    """Name -> (shape, fan_in) for every trainable tensor."""
    e, c, h = config.embed_dim, config.tcn_channels, config.head_hidden
    n_ff = 2 * len(config.fourier_freqs)
    shapes: dict[str, tuple[tuple[int, ...], int]] = {
        "time.w1": ((n_ff, e), n_ff),
        "time.b1": ((e,), n_ff),
        "time.w2": ((e, e), e),
        "time.b2": ((e,), e),
    }
    for k in config.kernel_sizes:
        c_in = 2
        for li, _ in enumerate(config.dilations):
            shapes[f"tcn{k}.{li}.w"] = ((c, c_in, k), c_in * k)
            shapes[f"tcn{k}.{li}.b"] = ((c, 1), c_in * k)
            c_in = c
    n_cat = c * len(config.kernel_sizes)
    shapes["proj.w"] = ((n_cat, e), n_cat)
    shapes["proj.b"] = ((e,), n_cat)
    for li in range(config.attn_layers):
        p = f"enc{li}"
        for m in ("wq", "wk", "wv", "wo"):
            shapes[f"{p}.{m}"] = ((e, e), e)
        shapes[f"{p}.bo"] = ((e,), e)
        shapes[f"{p}.ln1.gamma"] = ((e,), 1)
        shapes[f"{p}.ln1.beta"] = ((e,), 1)
        shapes[f"{p}.ff.w1"] = ((e, 2 * e), e)
        shapes[f"{p}.ff.b1"] = ((2 * e,), e)
        shapes[f"{p}.ff.w2"] = ((2 * e, e), 2 * e)
        shapes[f"{p}.ff.b2"] = ((e,), 2 * e)
        shapes[f"{p}.ln2.gamma"] = ((e,), 1)
        shapes[f"{p}.ln2.beta"] = ((e,), 1)
    for m in ("wq", "wk", "wv", "wo"):
        shapes[f"cross.{m}"] = ((e, e), e)
    shapes["cross.bo"] = ((e,), e)
    for head in ("r_head", "pi_head"):
        shapes[f"{head}.w1"] = ((3 * e, h), 3 * e)
        shapes[f"{head}.b1"] = ((h,), 3 * e)
        shapes[f"{head}.w2"] = ((h, 1), h)
        shapes[f"{head}.b2"] = ((1,), h)
    return shapes


# ---------------------------------------------------------------------------
# building blocks


def fourier_time_features(t, freqs, horizon: float) -> np.ndarray:
    """``[cos(a_j pi t/T)..., sin(a_j pi t/T)...]`` for each frequency ``a_j``.

    ``t`` may be a scalar or an array of days; the result has one row per day.
    """
    freqs = np.asarray(freqs, dtype=np.float64).reshape(-1)
    if freqs.size == 0:
        raise InvalidParameterError("at least one Fourier frequency is required")
    if horizon < 1:
        raise InvalidParameterError("time horizon must be >= 1")
    arg = np.pi * np.outer(np.atleast_1d(np.asarray(t, dtype=np.float64)) / horizon, freqs)
    feats = np.concatenate([np.cos(arg), np.sin(arg)], axis=1)
    return feats[0] if np.ndim(t) == 0 else feats


def history_input(windows: np.ndarray, count_scale: float) -> np.ndarray:
    """(B, L) raw windows -> (B, 2, L) of scaled counts and first differences."""
    x = np.asarray(windows, dtype=np.float64) / count_scale
    diff = np.zeros_like(x)
    diff[:, 1:] = x[:, 1:] - x[:, :-1]
    return np.stack([x, diff], axis=1)


def _linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = ag.matmul(x, w)
    return y if b is None else y + b


def _split_heads(x: Tensor, heads: int) -> Tensor:
    bsz, n, e = x.shape
    return ag.transpose(ag.reshape(x, (bsz, n, heads, e // heads)), (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    bsz, heads, n, dh = x.shape
    return ag.reshape(ag.transpose(x, (0, 2, 1, 3)), (bsz, n, heads * dh))


def _attention(q_in: Tensor, kv_in: Tensor, params: ModelParams, prefix: str, heads: int) -> Tensor:
    q = _split_heads(_linear(q_in, params[f"{prefix}.wq"]), heads)
    k = _split_heads(_linear(kv_in, params[f"{prefix}.wk"]), heads)
    v = _split_heads(_linear(kv_in, params[f"{prefix}.wv"]), heads)
    att = ag.softmax_attention(q, k, v, 1.0 / math.sqrt(q.shape[-1]))
    return _linear(_merge_heads(att), params[f"{prefix}.wo"], params[f"{prefix}.bo"])


def _tcn(x: Tensor, params: ModelParams, kernel: int, dilations) -> Tensor:
    h = x
    for li, d in enumerate(dilations):
        y = ag.tanh(ag.causal_conv1d(h, params[f"tcn{kernel}.{li}.w"], d) + params[f"tcn{kernel}.{li}.b"])
        h = y if li == 0 else h + y
    return h


def encode_history(windows, params: ModelParams) -> Tensor:
    """Encode (B, L) raw count windows into (B, L, embed_dim) tokens.

    The last token (index ``-1``) summarises the whole window; the full token
    sequence is used as keys/values by the fusion step.
    """
    cfg = params.config
    windows = np.atleast_2d(np.asarray(windows, dtype=np.float64))
    if windows.shape[1] != cfg.context_len:
        raise ShapeError(f"history window has length {windows.shape[1]}, expected {cfg.context_len}")
    x = Tensor(history_input(windows, params.count_scale))
    branches = [_tcn(x, params, k, cfg.dilations) for k in cfg.kernel_sizes]
    feats = ag.swapaxes(ag.concat(branches, axis=1), 1, 2)
    h = _linear(feats, params["proj.w"], params["proj.b"])
    for li in range(cfg.attn_layers):
        p = f"enc{li}"
        h = ag.layer_norm(h + _attention(h, h, params, p, cfg.attn_heads), params[f"{p}.ln1.gamma"], params[f"{p}.ln1.beta"])
        ff = _linear(ag.tanh(_linear(h, params[f"{p}.ff.w1"], params[f"{p}.ff.b1"])), params[f"{p}.ff.w2"], params[f"{p}.ff.b2"])
        h = ag.layer_norm(h + ff, params[f"{p}.ln2.gamma"], params[f"{p}.ln2.beta"])
    return h


def embed_time(days, params: ModelParams) -> Tensor:
    feats = Tensor(np.atleast_2d(fourier_time_features(np.atleast_1d(days), params.config.fourier_freqs, params.time_scale)))
    h = ag.tanh(_linear(feats, params["time.w1"], params["time.b1"]))
    return _linear(h, params["time.w2"], params["time.b2"])


@dataclass
class ForwardPass:
    """Differentiable outputs for a batch of days (each of shape (B,))."""

    days: np.ndarray
    rt: Tensor
    pi_logit: Tensor

    @property
    def pi(self) -> Tensor:
        return ag.sigmoid(self.pi_logit)


def forward_batch(days, windows, params: ModelParams) -> ForwardPass:
    days = np.atleast_1d(np.asarray(days))
    cfg = params.config
    tokens = encode_history(windows, params)
    e = embed_time(days, params)
    bsz = e.shape[0]
    query = ag.reshape(e, (bsz, 1, cfg.embed_dim))
    fused = ag.reshape(_attention(query, tokens, params, "cross", cfg.attn_heads), (bsz, cfg.embed_dim))
    z = ag.concat([e, fused, tokens[:, -1, :]], axis=1)
    outs = {}
    for head in ("r_head", "pi_head"):
        hidden = ag.tanh(_linear(z, params[f"{head}.w1"], params[f"{head}.b1"]))
        outs[head] = ag.reshape(_linear(hidden, params[f"{head}.w2"], params[f"{head}.b2"]), (bsz,))
    return ForwardPass(days, ag.softplus(outs["r_head"]), outs["pi_head"])


def forward(t: int, window, params: ModelParams) -> tuple[float, float]:
    """Point estimate ``(R_t, pi_t)`` for one day from ``I[t-L .. t-1]``."""
    if t <= params.config.context_len:
        raise OutOfContextError(f"day {t} needs {params.config.context_len} days of history")
    out = forward_batch([t], np.asarray(window, dtype=np.float64).reshape(1, -1), params)
    return float(out.rt.data[0]), float(out.pi.data[0])


def history_windows(counts, context_len: int) -> np.ndarray:
    """Row ``i`` holds ``counts[i : i + L]``, the window for element ``i + L``."""
    c = np.asarray(counts, dtype=np.float64)
    return np.lib.stride_tricks.sliding_window_view(c, context_len)[: c.size - context_len].copy()


@dataclass(frozen=True)
class InferenceOutput:
    rt_hat: RtTrajectory
    pi_hat: np.ndarray

    @property
    def days(self) -> np.ndarray:
        return self.rt_hat.days


def forward_series(series: IncidenceSeries, params: ModelParams) -> ForwardPass:
    """Differentiable pass over every day with a complete history window."""
    L = params.config.context_len
    if len(series) <= L:
        raise InvalidInputError(f"series of {len(series)} days is too short for context {L}")
    days = series.days[L:]
    return forward_batch(days, history_windows(series.counts, L), params)


def infer_trajectory(series: IncidenceSeries, params: ModelParams) -> InferenceOutput:
    out = forward_series(series, params)
    return InferenceOutput(
        RtTrajectory(out.rt.data, int(out.days[0])), np.array(out.pi.data, copy=True)
    )
