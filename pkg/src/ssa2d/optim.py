"""Adam with bias correction and global-norm gradient clipping."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .tensor import ContractError, Tensor

LOGGER = logging.getLogger(__name__)


@dataclass(slots=True)
class OptimState:
    """Adam moments, one pair per parameter in registration order."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)


def adam_step(params: Sequence[Tensor], grads: Sequence[Optional[np.ndarray]], state: OptimState) -> None:
    """Apply one bias-corrected Adam update; a missing gradient counts as zero."""

    if len(params) != len(grads):
        raise ContractError(f"adam_step: {len(params)} parameters but {len(grads)} gradients")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    if len(state.m) != len(params):
        raise ContractError(f"adam_step: state tracks {len(state.m)} parameters, got {len(params)}")

    state.step += 1
    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step
    for index, (param, grad) in enumerate(zip(params, grads)):
        if state.m[index].shape != param.shape:
            raise ContractError(
                f"adam_step: moment shape {state.m[index].shape} does not match parameter {param.name or index} "
                f"{param.shape}"
            )
        g = np.zeros_like(param.data) if grad is None else np.asarray(grad, dtype=param.dtype)
        if g.shape != param.shape:
            raise ContractError(f"adam_step: gradient {g.shape} does not match parameter {param.shape}")
        m = state.beta1 * state.m[index] + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[index] + (1.0 - state.beta2) * g * g
        state.m[index], state.v[index] = m.astype(param.dtype), v.astype(param.dtype)
        update = state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
        param.data = (param.data - update).astype(param.dtype)


def global_grad_norm(params: Sequence[Tensor]) -> float:
    total = 0.0
    for param in params:
        if param.grad is not None:
            total += float(np.sum(np.square(param.grad, dtype=np.float64)))
    return math.sqrt(total)


def clip_grad_norm(params: Sequence[Tensor], max_norm: float) -> float:
    """Rescale gradients in place so their global L2 norm is at most *max_norm*.

    Returns the norm before clipping.
    """

    norm = global_grad_norm(params)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for param in params:
            if param.grad is not None:
                param.grad = (param.grad * scale).astype(param.dtype)
        LOGGER.debug("Clipped gradient norm %.4g to %.4g", norm, max_norm)
    return norm


class Adam:
    """Optimizer owning a fixed parameter list."""

    def __init__(self, params: Sequence[Tensor], lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, grad_clip: float = 0.0) -> None:
        self.params = list(params)
        self.state = OptimState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
        self.grad_clip = grad_clip

    @property
    def lr(self) -> float:
        return self.state.lr

    @lr.setter
    def lr(self, value: float) -> None:
        self.state.lr = float(value)

    def zero_grad(self) -> None:
        for param in self.params:
            param.zero_grad()

    def step(self) -> float:
        """Clip, update, and return the pre-clip gradient norm."""

        norm = clip_grad_norm(self.params, self.grad_clip)
        adam_step(self.params, [p.grad for p in self.params], self.state)
        return norm
