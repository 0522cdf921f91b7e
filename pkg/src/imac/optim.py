"""AdamW with decoupled weight decay, plus global-norm gradient clipping."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .autograd import Tensor


class FrozenModelError(RuntimeError):
    """Raised when an update is applied to a frozen model."""


@dataclass
class OptState:
    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step_count: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[Tensor]) -> OptState:
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params], 0)


def adamw_step(
    params: Sequence[Tensor],
    grads: Sequence[np.ndarray],
    state: OptState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> None:
    """One AdamW update, in place on ``params`` and ``state``.

    Decay is applied first as ``p *= 1 - lr * weight_decay``; the moment step
    then uses bias-corrected moments with ``eps`` added to ``sqrt(v_hat)``.
    """
    if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
        raise ValueError(f"betas must lie in [0, 1), got {beta1}, {beta2}")
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} params but {len(grads)} grads")
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.shape:
            raise ValueError(f"grad {i} shape {g.shape} != param shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {i} ({p.name or 'unnamed'})")
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for i, (p, g) in enumerate(zip(params, grads)):
        m = state.first_moment[i] = beta1 * state.first_moment[i] + (1.0 - beta1) * g
        v = state.second_moment[i] = beta2 * state.second_moment[i] + (1.0 - beta2) * g * g
        decayed = p.data * (1.0 - lr * weight_decay) if weight_decay else p.data
        p.data = decayed - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def clip_grad_norm(grads: Sequence[np.ndarray], max_norm: float) -> tuple[list[np.ndarray], float]:
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if max_norm is None or max_norm <= 0 or total <= max_norm:
        return list(grads), total
    factor = max_norm / (total + 1e-12)
    return [g * factor for g in grads], total


@dataclass
class AdamW:
    """Stateful wrapper: clip, then ``adamw_step``. Refuses updates once frozen."""

    params: list[Tensor]
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    max_grad_norm: float = 10.0
    state: OptState = field(init=False)
    frozen: bool = False

    def __post_init__(self):
        self.state = OptState.zeros_like(self.params)

    def step(self, grads: Sequence[np.ndarray]) -> float:
        if self.frozen:
            raise FrozenModelError("optimizer is frozen; parameters may not change")
        grads, norm = clip_grad_norm(grads, self.max_grad_norm)
        adamw_step(self.params, grads, self.state, self.lr, self.beta1, self.beta2, self.eps, self.weight_decay)
        return norm
