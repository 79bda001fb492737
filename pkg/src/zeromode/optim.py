"""AdamW with decoupled weight decay, on flat parameter vectors.

Update rule, applied elementwise at step t:

    m_t = beta1 * m_{t-1} + (1 - beta1) * g
    v_t = beta2 * v_{t-1} + (1 - beta2) * g^2
    mhat = m_t / (1 - beta1^t),   vhat = v_t / (1 - beta2^t)
    theta <- theta - lr * mhat / (sqrt(vhat) + eps) - lr * weight_decay * theta

The decay term multiplies the raw parameters, not the gradient, so with a
zero gradient the parameters shrink by exactly (1 - lr * weight_decay).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .model import OperatorModel

__all__ = ["OptimState", "init_optimizer", "adamw_step"]


@dataclass(frozen=True)
class OptimState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4


def init_optimizer(model: OperatorModel, lr: float = 1e-3, weight_decay: float = 1e-4) -> OptimState:
    n = model.params.size
    return OptimState(m=np.zeros(n), v=np.zeros(n), lr=lr, weight_decay=weight_decay)


def adamw_step(model: OperatorModel, grads: np.ndarray, state: OptimState):
    """One update; returns a fresh (model, state) pair, inputs untouched."""
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != model.params.shape:
        raise ValueError(f"gradient shape {grads.shape} does not match parameters {model.params.shape}")
    if not np.all(np.isfinite(grads)):
        raise ValueError("non-finite gradient entries, refusing to step")

    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    v = state.beta2 * state.v + (1.0 - state.beta2) * grads**2
    mhat = m / (1.0 - state.beta1**t)
    vhat = v / (1.0 - state.beta2**t)
    params = model.params - state.lr * mhat / (np.sqrt(vhat) + state.eps) - state.lr * state.weight_decay * model.params
    return OperatorModel(model.config, params), replace(state, m=m, v=v, step=t)
