"""Central finite-difference checks for the autodiff engine."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .autograd import Tensor, backward

# denominators below this are treated as this, so gradients that are zero up to
# finite-difference noise do not blow up the relative error
ABS_FLOOR = 1e-6


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = ABS_FLOOR) -> np.ndarray:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def numeric_gradient(f: Callable[[], float], x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """d f / d x by central differences, perturbing ``x`` in place."""
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f()
        flat[i] = orig - step
        lo = f()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * step)
    return grad


def check(
    fn: Callable[..., Tensor],
    inputs: Sequence[np.ndarray],
    step: float = 1e-5,
    weights: np.ndarray | None = None,
) -> float:
    """Largest relative error between reverse-mode and numeric gradients.

    ``fn`` maps tensors to a tensor; non-scalar outputs are reduced with fixed
    random ``weights`` so every output element contributes.
    """
    arrays = [np.array(a, dtype=np.float64) for a in inputs]
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    loss = _reduce(fn(*leaves), weights)
    backward(loss)

    worst = 0.0
    for leaf, arr in zip(leaves, arrays):

        def f() -> float:
            return float(_reduce(fn(*[Tensor(a) for a in arrays]), weights).data)

        num = numeric_gradient(f, arr, step)
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(arr)
        if arr.size:
            worst = max(worst, float(relative_error(analytic, num).max()))
    return worst


def _probe_weights(shape: tuple[int, ...]) -> np.ndarray:
    return np.random.default_rng(12345).uniform(0.5, 1.5, shape)


def _reduce(out: Tensor, weights: np.ndarray | None) -> Tensor:
    from . import autograd as ag

    if out.size == 1:
        return ag.reshape(out, ())
    w = weights if weights is not None else _probe_weights(out.shape)
    return ag.sum(ag.mul(out, w))


def check_params(
    loss_fn: Callable[[], Tensor],
    params: dict[str, Tensor],
    step: float = 1e-5,
) -> dict[str, float]:
    """Per-parameter worst relative error for a scalar loss over named leaves."""
    for p in params.values():
        p.grad = None
    backward(loss_fn())
    out = {}
    for name, p in params.items():
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        num = numeric_gradient(lambda: float(loss_fn().data), p.data, step)
        out[name] = float(relative_error(analytic, num).max()) if p.data.size else 0.0
    return out
