"""Adaptive-moment optimizer with decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidArgument


@dataclass(frozen=True)
class AdamHyper:
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0


@dataclass
class AdamState:
    first: np.ndarray
    second: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, size: int) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size), 0)

    def copy(self) -> "AdamState":
        return AdamState(self.first.copy(), self.second.copy(), self.step)


def optimizer_step(params: np.ndarray, grad: np.ndarray, state: AdamState, hyper: AdamHyper = AdamHyper()):
    """One descent step on ``grad``; returns ``(new_params, new_state)`` and leaves inputs untouched.

    A non-finite gradient raises before anything is updated.
    """
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.shape or state.first.shape != params.shape:
        raise InvalidArgument("params, grad and optimizer state must have equal shapes")
    if not np.all(np.isfinite(grad)):
        raise InvalidArgument("non-finite gradient; update skipped")
    step = state.step + 1
    first = hyper.beta1 * state.first + (1.0 - hyper.beta1) * grad
    second = hyper.beta2 * state.second + (1.0 - hyper.beta2) * grad * grad
    m_hat = first / (1.0 - hyper.beta1**step)
    v_hat = second / (1.0 - hyper.beta2**step)
    new = params - hyper.lr * (m_hat / (np.sqrt(v_hat) + hyper.eps) + hyper.weight_decay * params)
    return new, AdamState(first, second, step)
