"""Lorenz 63 testbed: forward-Euler integration of the three-variable system.

    dX/dt = -sigma (X - Y)
    dY/dt = -X Z + r X - Y
    dZ/dt =  X Y - beta Z

The step function is written in tape primitives, so the same source serves
plain trajectory generation and differentiable forward models.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tape as T
from .errors import NanEncountered
from .operators import TapeOperator, physics_model


@dataclass(frozen=True)
class Lorenz63Config:
    sigma: float = 10.0
    r: float = 35.0
    beta: float = 8.0 / 3.0
    dt: float = 1e-3
    t_final: float = 25.0
    x0: tuple = (0.0, 1.0, 2.0)

    def __post_init__(self):
        if self.dt < 0:
            raise ValueError("dt must be non-negative")
        if self.t_final <= 0:
            raise ValueError("t_final must be positive")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))


def lorenz_step(state, cfg: Lorenz63Config):
    """One explicit-Euler update; accepts a 3-vector or a tape node."""
    x = T.take(state, slice(0, 1))
    y = T.take(state, slice(1, 2))
    z = T.take(state, slice(2, 3))
    dx = T.mul(T.sub(y, x), cfg.sigma)
    dy = T.sub(T.mul(x, T.sub(cfg.r, z)), y)
    dz = T.sub(T.mul(x, y), T.mul(z, cfg.beta))
    rhs = T.concat([dx, dy, dz])
    return T.add(state, T.mul(rhs, cfg.dt))


def lorenz_trajectory(cfg: Lorenz63Config) -> np.ndarray:
    """States after 0 .. n_steps-1 Euler steps, the initial state as row 0."""
    n = cfg.n_steps
    out = np.empty((n, 3))
    state = np.asarray(cfg.x0, dtype=float)
    out[0] = state
    for t in range(1, n):
        state = lorenz_step(state, cfg)
        if not np.all(np.isfinite(state)):
            raise NanEncountered(f"trajectory diverged at step {t}")
        out[t] = state
    return out


def lorenz_forward_model(cfg: Lorenz63Config, sequence_length: int) -> TapeOperator:
    """Differentiable forward model emitting the current instant plus
    ``sequence_length - 1`` Euler steps."""
    return physics_model(lambda s: lorenz_step(s, cfg), 3, sequence_length)


def equilibria(cfg: Lorenz63Config) -> np.ndarray:
    """Analytic fixed points: the origin and the two convection rolls."""
    s = np.sqrt(cfg.beta * (cfg.r - 1.0))
    return np.array([
        [0.0, 0.0, 0.0],
        [s, s, cfg.r - 1.0],
        [-s, -s, cfg.r - 1.0],
    ])
