"""Adam with bias-corrected moment estimates, over dicts of named arrays."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    first_moment: dict[str, np.ndarray]
    second_moment: dict[str, np.ndarray]
    step_count: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray], **hyper) -> "AdamState":
        return cls(
            {k: np.zeros_like(v) for k, v in params.items()},
            {k: np.zeros_like(v) for k, v in params.items()},
            **hyper,
        )


def adam_update(state: AdamState, params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
                learning_rate: float | None = None) -> tuple[AdamState, dict[str, np.ndarray]]:
    """Return the advanced optimizer state and updated copies of ``params``.

    ``learning_rate`` overrides the state's rate for this step only.
    """
    lr = state.learning_rate if learning_rate is None else learning_rate
    step = state.step_count + 1
    b1, b2, eps = state.beta1, state.beta2, state.epsilon
    corr1 = 1.0 - b1**step
    corr2 = 1.0 - b2**step
    m_new, v_new, p_new = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name!r} has shape {g.shape}, parameter has {p.shape}")
        m = b1 * state.first_moment[name] + (1.0 - b1) * g
        v = b2 * state.second_moment[name] + (1.0 - b2) * (g * g)
        m_hat = m / corr1
        v_hat = v / corr2
        p_new[name] = (p - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.dtype)
        m_new[name] = m.astype(p.dtype)
        v_new[name] = v.astype(p.dtype)
    new_state = AdamState(m_new, v_new, step, state.learning_rate, b1, b2, eps)
    return new_state, p_new
