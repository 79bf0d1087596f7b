"""Finite-difference gradient checks for tensor operations and layers."""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import Tape, Tensor, elementwise_mul, total


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``max |a - n| / max(1e-6, |a| + |n|)`` over all elements."""

    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - n) / np.maximum(1e-6, np.abs(a) + np.abs(n))))


def _project(out: Tensor, weights: np.ndarray) -> Tensor:
    return total(elementwise_mul(out, Tensor(weights, dtype=out.dtype)))


def check_gradients(
    fn: Callable[..., Tensor],
    inputs: Sequence[np.ndarray],
    dtype: np.dtype = np.float32,
    seed: int = 0,
    step: float = 1e-5,
    indices: Optional[Sequence[int]] = None,
) -> float:
    """Worst relative error between analytic and numeric input gradients of *fn*.

    The scalar checked is ``sum(fn(*inputs) * W)`` for fixed random ``W``.
    The analytic side runs in *dtype*; the numeric side always uses float64
    central differences. *indices* restricts which inputs are checked.
    """

    arrays = [np.asarray(x, dtype=np.float64) for x in inputs]
    chosen = list(range(len(arrays))) if indices is None else list(indices)

    tensors = [Tensor(x, requires_grad=True, dtype=dtype) for x in arrays]
    with Tape() as tape:
        out = fn(*tensors)
        rng = np.random.default_rng(seed)
        weights = rng.uniform(-1.0, 1.0, size=out.shape)
        loss = _project(out, weights)
        tape.backward(loss)

    def value(values: Sequence[np.ndarray]) -> float:
        result = fn(*[Tensor(v, dtype=np.float64) for v in values])
        return float(np.sum(result.data.astype(np.float64) * weights))

    worst = 0.0
    for index in chosen:
        numeric = np.zeros_like(arrays[index])
        flat = numeric.reshape(-1)
        for k in range(flat.size):
            plus = [a.copy() for a in arrays]
            minus = [a.copy() for a in arrays]
            plus[index].reshape(-1)[k] += step
            minus[index].reshape(-1)[k] -= step
            flat[k] = (value(plus) - value(minus)) / (2 * step)
        grad = tensors[index].grad
        analytic = np.zeros_like(numeric) if grad is None else grad
        worst = max(worst, relative_error(analytic, numeric))
    return worst
