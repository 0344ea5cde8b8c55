"""Twin-experiment observation generation.

Observations sample a truth trajectory at a fixed cadence and add
independent Gaussian noise. Index 0 is never observed: the background
holds the initial instant.
"""

from __future__ import annotations

import numpy as np

from .assimilation import ObservationSeries
from .errors import DimensionMismatch
from .rng import RngHandle


def make_observations(truth, every: int, noise_std, rng: RngHandle) -> ObservationSeries:
    """Sample rows ``every, 2*every, ...`` of a truth sequence with noise.

    ``noise_std`` is a scalar or per-component vector of standard
    deviations; zero gives observations equal to the sampled truth rows.
    The final trajectory row index is ``len(truth) - 1``; sampling stops
    there, so a run of N rows yields floor((N-1)/every) observations.
    """
    truth = np.asarray(truth, dtype=float)
    if truth.ndim != 2:
        raise DimensionMismatch(f"truth must be (steps, dim), got {truth.shape}")
    if every < 1:
        raise DimensionMismatch(f"sampling cadence must be >= 1, got {every}")
    n_obs = (truth.shape[0] - 1) // every
    if n_obs < 1:
        raise DimensionMismatch(
            f"trajectory of {truth.shape[0]} rows has no index at cadence {every}"
        )
    times = [every * (k + 1) for k in range(n_obs)]
    std = np.broadcast_to(np.asarray(noise_std, dtype=float), (truth.shape[1],))
    noise = rng.standard_normal((n_obs, truth.shape[1])) * std
    values = truth[times] + noise
    return ObservationSeries(times=times, values=values, gaps=[every] * (n_obs - 1))
