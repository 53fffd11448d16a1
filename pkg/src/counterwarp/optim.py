"""Optimizers operating on lists of parameter tensors."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import ContractError
from .tensor import Tensor

__all__ = ["AdamState", "adam_step", "sgd_step"]


class AdamState:
    """First/second moment buffers for one parameter list.

    Defaults follow the training setup used throughout the experiments:
    beta1=0.5, beta2=0.999, lr=1e-3, eps=1e-8.
    """

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3,
                 beta1: float = 0.5, beta2: float = 0.999, eps: float = 1e-8):
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.beta1 = beta1
        self.beta2 = beta2
        self.lr = lr
        self.eps = eps


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: AdamState) -> None:
    """One bias-corrected Adam update, mutating ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ContractError(
            f"adam_step length mismatch: {len(params)} params, {len(grads)} grads, "
            f"{len(state.m)} state slots")
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.data.shape:
            raise ContractError(f"gradient shape {g.shape} != parameter shape {p.data.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / bc1
        v_hat = v / bc2
        p.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def sgd_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], lr: float) -> None:
    """Plain gradient-descent update, mutating ``params`` in place."""
    if len(params) != len(grads):
        raise ContractError(f"sgd_step length mismatch: {len(params)} params, {len(grads)} grads")
    for p, g in zip(params, grads):
        if g.shape != p.data.shape:
            raise ContractError(f"gradient shape {g.shape} != parameter shape {p.data.shape}")
        p.data -= lr * g
