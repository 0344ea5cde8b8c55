"""Adam optimizer with bias correction.

Only the learning rate is exposed by the assimilation algorithms; the
moment decay rates and epsilon use the method's canonical defaults
(beta1=0.9, beta2=0.999, epsilon=1e-8).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DimensionMismatch, NanEncountered


@dataclass(frozen=True)
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def initial(cls, n: int, learning_rate: float, beta1: float = 0.9,
                beta2: float = 0.999, epsilon: float = 1e-8) -> "AdamState":
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ValueError("decay rates must lie in [0, 1)")
        return cls(np.zeros(n), np.zeros(n), 0, float(learning_rate), beta1, beta2, epsilon)


def adam_step(params, grad, st: AdamState):
    """One bias-corrected Adam update.

    Pure: returns (new_params, new_state) and leaves the inputs untouched,
    so repeated calls from the same state give identical outputs.
    """
    params = np.asarray(params, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if params.shape != grad.shape or params.shape != st.first_moment.shape:
        raise DimensionMismatch(
            f"parameter/gradient/moment shapes differ: {params.shape}, "
            f"{grad.shape}, {st.first_moment.shape}"
        )
    if not np.all(np.isfinite(grad)):
        raise NanEncountered("gradient contains non-finite entries")
    t = st.step_count + 1
    m = st.beta1 * st.first_moment + (1.0 - st.beta1) * grad
    v = st.beta2 * st.second_moment + (1.0 - st.beta2) * grad * grad
    m_hat = m / (1.0 - st.beta1**t)
    v_hat = v / (1.0 - st.beta2**t)
    new_params = params - st.learning_rate * m_hat / (np.sqrt(v_hat) + st.epsilon)
    return new_params, replace(st, first_moment=m, second_moment=v, step_count=t)
