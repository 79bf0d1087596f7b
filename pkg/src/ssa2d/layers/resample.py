"""Separable resampling of ``[T, H, W, C]`` volumes.

Each axis is resampled by a dense interpolation matrix, so forward and
backward are plain contractions and the reduction order is fixed.
"""

from __future__ import annotations

from functools import lru_cache
from typing import Sequence, Tuple

import numpy as np

from ..tensor import ShapeError, Tensor, emit
from .conv import IntOrTriple, as_triple


@lru_cache(maxsize=64)
def _linear_matrix(size: int, factor: int) -> np.ndarray:
    """Align-corners-false linear interpolation from *size* to ``size * factor`` samples."""

    target = size * factor
    source = (np.arange(target, dtype=np.float64) + 0.5) / factor - 0.5
    source = np.clip(source, 0.0, size - 1)
    lower = np.floor(source).astype(np.int64)
    upper = np.minimum(lower + 1, size - 1)
    weight = source - lower
    matrix = np.zeros((target, size), dtype=np.float64)
    rows = np.arange(target)
    np.add.at(matrix, (rows, lower), 1.0 - weight)
    np.add.at(matrix, (rows, upper), weight)
    return matrix


@lru_cache(maxsize=64)
def _nearest_matrix(size: int, target: int) -> np.ndarray:
    index = np.minimum(((np.arange(target) + 0.5) * size / target).astype(np.int64), size - 1)
    matrix = np.zeros((target, size), dtype=np.float64)
    matrix[np.arange(target), index] = 1.0
    return matrix


def _contract(volume: np.ndarray, matrices: Sequence[np.ndarray]) -> np.ndarray:
    out = volume
    for axis, matrix in enumerate(matrices):
        if matrix.shape[0] == matrix.shape[1] and np.array_equal(matrix, np.eye(matrix.shape[0])):
            continue
        m = matrix.astype(volume.dtype, copy=False)
        out = np.moveaxis(np.tensordot(m, out, axes=([1], [axis])), 0, axis)
    return np.ascontiguousarray(out)


def _resample(op: str, x: Tensor, matrices: Tuple[np.ndarray, ...]) -> Tensor:
    transposed = tuple(m.T for m in matrices)
    out = _contract(x.data, matrices)
    arithmetic = 2 * out.size * sum(int(np.count_nonzero(m)) // max(m.shape[0], 1) for m in matrices)
    return emit(op, out, (x,), lambda g: (_contract(g, transposed),), arithmetic)


def upsample_trilinear(x: Tensor, factor: IntOrTriple) -> Tensor:
    """Linear interpolation by integer factors along T, H and W.

    Sample *i* of an upsampled axis reads source position
    ``(i + 0.5) / factor - 0.5`` clamped to the valid range.
    """

    factors = as_triple(factor, "factor")
    if x.ndim != 4:
        raise ShapeError(f"upsample_trilinear expects [T, H, W, C], got {x.shape}")
    if min(factors) < 1:
        raise ShapeError(f"upsample_trilinear: factors must be >= 1, got {factors}")
    matrices = tuple(_linear_matrix(n, f) for n, f in zip(x.shape[:3], factors))
    return _resample("upsample", x, matrices)


def resize_nearest(x: Tensor, shape: Sequence[int]) -> Tensor:
    """Nearest-neighbour resize of the T, H, W axes to *shape*."""

    target = tuple(int(n) for n in shape)
    if x.ndim != 4 or len(target) != 3 or min(target) < 1:
        raise ShapeError(f"resize_nearest: cannot resize {x.shape} to {target}")
    matrices = tuple(_nearest_matrix(n, m) for n, m in zip(x.shape[:3], target))
    return _resample("resize_nearest", x, matrices)
