"""3D max pooling."""

from __future__ import annotations

from typing import Optional

import numpy as np

from ..tensor import ShapeError, Tensor, emit
from .conv import IntOrTriple, Triple, as_triple


def maxpool3d(x: Tensor, window: IntOrTriple, stride: Optional[IntOrTriple] = None) -> Tensor:
    """Per-window maximum over ``x[T, H, W, C]`` without padding.

    The gradient goes to the first maximal element in scan order.
    """

    win = as_triple(window, "window")
    step = win if stride is None else as_triple(stride, "stride")
    if x.ndim != 4:
        raise ShapeError(f"maxpool3d expects [T, H, W, C], got {x.shape}")
    if min(win) < 1 or min(step) < 1:
        raise ShapeError(f"maxpool3d: invalid window {win} / stride {step}")
    out_shape: Triple = tuple((n - k) // s + 1 for n, k, s in zip(x.shape[:3], win, step))  # type: ignore[assignment]
    if any(n < k for n, k in zip(x.shape[:3], win)):
        raise ShapeError(f"maxpool3d: window {win} does not fit input {x.shape[:3]}")

    def _slices(tap):
        return tuple(slice(t, t + s * (o - 1) + 1, s) for t, s, o in zip(tap, step, out_shape))

    data = x.data
    taps = list(np.ndindex(*win))
    best = data[_slices(taps[0])].copy()
    arg = np.zeros(best.shape, dtype=np.int32)
    for index, tap in enumerate(taps[1:], start=1):
        candidate = data[_slices(tap)]
        better = candidate > best
        best = np.where(better, candidate, best)
        arg[better] = index

    def _backward(g: np.ndarray):
        grad = np.zeros(data.shape, dtype=g.dtype)
        for index, tap in enumerate(taps):
            grad[_slices(tap)] += np.where(arg == index, g, 0)
        return (grad,)

    return emit("maxpool3d", best, (x,), _backward, arithmetic=best.size * len(taps))
