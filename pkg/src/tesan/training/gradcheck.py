"""Central finite differences, used to check the analytic gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from ..attention import Mode, ModelParams
from .backprop import batch_loss, forward_backward


def finite_diff_grad(
    loss_fn: Callable[[ModelParams], float], params: ModelParams, epsilon: float = 1e-4
) -> dict[str, np.ndarray]:
    """``(f(theta + eps) - f(theta - eps)) / (2 eps)`` for every scalar parameter.

    ``params`` is perturbed in place and restored entry by entry.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    grads = {}
    for name, arr in params.tensors():
        g = np.zeros_like(arr, dtype=np.float64)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + epsilon
            up = loss_fn(params)
            flat[k] = orig - epsilon
            down = loss_fn(params)
            flat[k] = orig
            gflat[k] = (up - down) / (2.0 * epsilon)
        grads[name] = g
    return grads


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """Entry-wise ``|a - n| / max(|a|, |n|, floor)``.

    The floor keeps entries that are zero up to truncation error from
    dominating the maximum.
    """
    a, n = np.asarray(analytic, dtype=np.float64), np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def random_case(rng: np.random.Generator, mode: Mode | str, *, dim=None, length=None, n_neg=None,
                dual_tables: bool = False):
    """A small random (params, batch) problem with non-trivial parameter scales."""
    d = int(dim if dim is not None else rng.integers(2, 5))
    m = int(length if length is not None else rng.integers(1, 5))
    r = int(n_neg if n_neg is not None else rng.integers(0, 4))
    n_concepts = int(rng.integers(3, 7))
    max_interval = int(rng.integers(1, 6))

    def nrm(*shape, scale=0.7):
        return rng.normal(0.0, scale, size=shape)

    params = ModelParams(
        concept_table=nrm(n_concepts, d), interval_table=nrm(max_interval + 1, d),
        attn_w1=nrm(d, d), attn_w2=nrm(d, d), attn_w3=nrm(d, d), attn_b1=nrm(d),
        attn_w=nrm(d, d), attn_b=nrm(d), attn_v=nrm(d), attn_c=nrm(1),
        pool_w1=nrm(d, d), pool_b1=nrm(d), pool_w=nrm(d, d), pool_b=nrm(d),
        gate_w1=nrm(d, d), gate_w2=nrm(d, d), gate_b=nrm(d),
        output_table=nrm(n_concepts, d) if dual_tables else None, mode=mode,
    )
    ids = rng.integers(0, n_concepts, size=(1, m))
    # occasionally exceed the table so clamping is exercised
    days = np.sort(rng.integers(0, max_interval + 3, size=(1, m)), axis=1)
    mask = np.ones((1, m), dtype=bool)
    target = rng.integers(0, n_concepts, size=1)
    negatives = rng.integers(0, n_concepts, size=(1, r))
    return params, (ids, days, mask, target, negatives)


def check_case(params: ModelParams, batch, epsilon: float = 1e-4) -> float:
    """Max relative error between :func:`forward_backward` and finite differences."""
    _, analytic = forward_backward(params, *batch)
    numeric = finite_diff_grad(lambda p: batch_loss(p, *batch), params, epsilon)
    return max(float(relative_error(analytic[k], numeric[k]).max()) for k in numeric)


def run_gradcheck(trials: int = 200, epsilon: float = 1e-4, seed: int = 0) -> float:
    """Worst relative error over ``trials`` random configurations cycling all modes."""
    rng = np.random.default_rng(seed)
    modes = list(Mode)
    worst = 0.0
    for t in range(trials):
        params, batch = random_case(rng, modes[t % len(modes)], dual_tables=bool(t % 7 == 3))
        worst = max(worst, check_case(params, batch, epsilon))
    return worst
