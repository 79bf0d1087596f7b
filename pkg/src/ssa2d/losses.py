"""Training objective: per-task cross-entropy plus generalized dice."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .config import LossWeights
from .tensor import (
    ShapeError,
    Tensor,
    add,
    affine,
    as_tensor,
    clamp,
    div,
    elementwise_mul,
    log,
    mean,
    square,
    total,
)

PROB_FLOOR = 1e-7

Target = Union[Tensor, np.ndarray]


def _target(gt: Target, like: Tensor) -> Tensor:
    target = gt if isinstance(gt, Tensor) else as_tensor(gt, like.dtype)
    if target.shape != like.shape:
        raise ShapeError(f"Prediction {like.shape} and target {target.shape} differ in shape")
    if target.dtype != like.dtype:
        target = as_tensor(target.data, like.dtype)
    return target


def _clamped(pred: Tensor) -> Tensor:
    return clamp(pred, PROB_FLOOR, 1.0 - PROB_FLOOR)


def one_hot(labels: np.ndarray, num_classes: int, dtype: np.dtype = np.float32) -> np.ndarray:
    """``[..., num_classes]`` indicator volume for integer *labels*."""

    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ShapeError(f"Labels outside [0, {num_classes})")
    return np.eye(num_classes, dtype=dtype)[labels]


def dice_loss(pred: Tensor, gt: Target, eps: float = 1e-6) -> Tensor:
    """``1 - 2 * sum(p * g) / (sum(g^2) + sum(p^2) + C * eps)``.

    The last axis holds the classes; the overlap terms are summed over every
    class and every pixel, and the smoothing term is added once per class.
    """

    target = _target(gt, pred)
    p = _clamped(pred)
    classes = pred.shape[-1] if pred.ndim else 1
    overlap = total(elementwise_mul(p, target))
    denominator = affine(add(total(square(target)), total(square(p))), 1.0, classes * eps)
    return affine(div(overlap, denominator), -2.0, 1.0)


def cross_entropy(pred: Tensor, gt: Target) -> Tensor:
    """Mean over pixels of ``-sum_c g_c * log(p_c)``."""

    target = _target(gt, pred)
    pixels = max(pred.size // max(pred.shape[-1], 1), 1)
    return affine(total(elementwise_mul(target, log(_clamped(pred)))), -1.0 / pixels)


def binary_cross_entropy(pred: Tensor, gt: Target) -> Tensor:
    """Mean of ``-(g log p + (1 - g) log(1 - p))``."""

    target = _target(gt, pred)
    p = _clamped(pred)
    positive = elementwise_mul(target, log(p))
    negative = elementwise_mul(affine(target, -1.0, 1.0), log(affine(p, -1.0, 1.0)))
    return affine(mean(add(positive, negative)), -1.0)


def actor_loss(actor_d: Tensor, gt_onehot: Target, eps: float = 1e-6) -> Tensor:
    return add(cross_entropy(actor_d, gt_onehot), dice_loss(actor_d, gt_onehot, eps))


def action_loss(action_d: Tensor, gt_onehot: Target, eps: float = 1e-6, multi_label: bool = False) -> Tensor:
    """Action objective; *multi_label* scores each channel independently (sigmoid heads)."""

    if multi_label:
        return add(binary_cross_entropy(action_d, gt_onehot), dice_loss(action_d, gt_onehot, eps))
    return add(cross_entropy(action_d, gt_onehot), dice_loss(action_d, gt_onehot, eps))


def mask_loss(stu_mask_fg: Tensor, gt_mask: Target, eps: float = 1e-6) -> Tensor:
    """Binary cross-entropy plus single-class dice on the foreground probability."""

    target = gt_mask
    if not isinstance(target, Tensor):
        target = np.asarray(target)
        if target.shape == stu_mask_fg.shape[:-1] and stu_mask_fg.shape[-1:] == (1,):
            target = target[..., None]
    return add(binary_cross_entropy(stu_mask_fg, target), dice_loss(stu_mask_fg, target, eps))


@dataclass(slots=True)
class LossTerms:
    l_actor: Tensor
    l_action: Tensor
    l_mask: Tensor
    total: Tensor

    def values(self) -> dict:
        return {
            "l_actor": self.l_actor.item(),
            "l_action": self.l_action.item(),
            "l_mask": self.l_mask.item(),
            "total": self.total.item(),
        }


def total_loss(l_actor: Tensor, l_action: Tensor, l_mask: Tensor, w: LossWeights) -> Tensor:
    """``w_actor * l_actor + w_action * l_action + w_mask * l_mask``."""

    weighted = add(affine(l_actor, w.w_actor), affine(l_action, w.w_action))
    return add(weighted, affine(l_mask, w.w_mask))

