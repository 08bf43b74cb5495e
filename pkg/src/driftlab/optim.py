"""Adam optimizer over a flat parameter vector.

The update is the standard bias-corrected form (Kingma & Ba) with defaults
beta1=0.9, beta2=0.999, eps=1e-8; only the learning rate is a routinely
tuned knob here. Updates are out-of-place so parameter vectors stay
immutable snapshots, which the checkpoint/resume machinery relies on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class AdamState:
    """Step count plus first/second moment accumulators for one flat vector."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None


def adam_step(params: np.ndarray, grads: np.ndarray,
              state: AdamState) -> tuple[np.ndarray, AdamState]:
    """One Adam update. Returns the new parameter vector and advanced state.

    Deterministic given inputs; zero gradients leave the parameters
    unchanged on the first step and thereafter only through accumulated
    momentum.
    """
    if params.shape != grads.shape:
        raise ValueError(
            f"parameter/gradient shape mismatch: {params.shape} vs {grads.shape}")
    m_prev = state.m if state.m is not None else np.zeros_like(params)
    v_prev = state.v if state.v is not None else np.zeros_like(params)
    if m_prev.shape != params.shape:
        raise ValueError(
            f"optimizer state shape mismatch: {m_prev.shape} vs {params.shape}")

    t = state.t + 1
    m = state.beta1 * m_prev + (1.0 - state.beta1) * grads
    v = state.beta2 * v_prev + (1.0 - state.beta2) * (grads * grads)
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_params = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)

    new_state = AdamState(lr=state.lr, beta1=state.beta1, beta2=state.beta2,
                          eps=state.eps, t=t, m=m, v=v)
    return new_params, new_state
