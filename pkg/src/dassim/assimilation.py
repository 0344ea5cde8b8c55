"""Kalman, ensemble Kalman and variational assimilation algorithms.

All four routines share one time bookkeeping: observations live on a step
grid with the background at index ``start_index`` (filters) or at the
first observation instant (4DVar). A forward-model block of length L
covers the current instant plus L-1 forward steps, so alignment requires
L == gap + 1 with the last row landing on the next observation instant.

The filters keep the forecast error covariance fixed over all cycles; the
variational routines descend their cost with Adam for a fixed iteration
budget, logging per-iteration diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tape as T
from .errors import (
    DimensionMismatch,
    NanEncountered,
    NotPositiveDefinite,
    SequenceLengthMismatch,
)
from .linalg import CovarianceMatrix, as_covariance, sample_gaussian, spd_solve
from .operators import DifferentiableOperator, LinearOperator
from .optim import AdamState, adam_step
from .rng import RngHandle


@dataclass
class ObservationSeries:
    """Observation instants with one observation vector per instant.

    ``times`` are strictly increasing step indices on the model grid
    (index 0 is held by the background and is never observed). ``gaps``
    are the forward-step counts between consecutive observations; when
    omitted they are derived from ``times``, and when given they must
    match the time differences.
    """

    times: list
    values: np.ndarray
    gaps: list = field(default=None)

    def __post_init__(self):
        self.times = [int(t) for t in self.times]
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise DimensionMismatch(
                f"observation values must be 2-D (n_obs, obs_dim), got {self.values.shape}"
            )
        if len(self.times) != self.values.shape[0]:
            raise DimensionMismatch(
                f"{len(self.times)} observation times vs {self.values.shape[0]} value rows"
            )
        if any(b <= a for a, b in zip(self.times[:-1], self.times[1:])):
            raise DimensionMismatch("observation times must be strictly increasing")
        derived = [b - a for a, b in zip(self.times[:-1], self.times[1:])]
        if self.gaps is None:
            self.gaps = derived
        else:
            self.gaps = [int(g) for g in self.gaps]
            if self.gaps != derived:
                raise DimensionMismatch(
                    f"gaps {self.gaps} disagree with observation time differences {derived}"
                )
        if any(g <= 0 for g in self.gaps):
            raise DimensionMismatch("gaps must be positive")

    def __len__(self):
        return len(self.times)

    @property
    def obs_dim(self):
        return self.values.shape[1]


@dataclass
class FilterOutput:
    """Full-window trajectory from a filter run.

    ``average_trajectory`` concatenates each cycle's forward block; the
    last row of every block is the analysis unless the caller asked for
    the literal forecast-only trajectory. For the EnKF,
    ``per_member_trajectories`` holds each member's blocks and the average
    is their row-wise mean.
    """

    average_trajectory: np.ndarray
    per_member_trajectories: np.ndarray | None = None


@dataclass
class VariationalOutput:
    """Optimized state plus the per-iteration log.

    3DVar logs J, J_grad_norm and (when recorded) background_states;
    4DVar adds Jb and Jo with J stored as their exact sum. Entry i is
    taken at iterate i before its update; the assimilated state is the
    iterate after the final update.
    """

    assimilated_state: np.ndarray
    iteration_log: dict


def _apply(op, x):
    """Apply an operator to a plain array or a tape node."""
    if isinstance(x, T.TapeNode):
        return T.apply_operator(op, x)
    return op.evaluate(x)


def _as_matrix_op(h):
    if isinstance(h, DifferentiableOperator):
        return h
    return LinearOperator(np.asarray(h, dtype=float))


def kalman_update(x_f, p, h, r, y) -> np.ndarray:
    """Analysis state x_f + P H^T (H P H^T + R)^{-1} (y - H x_f).

    The innovation covariance is applied through an SPD solve, never an
    explicit inverse.
    """
    x_f = np.asarray(x_f, dtype=float)
    h = np.asarray(h, dtype=float)
    y = np.asarray(y, dtype=float)
    p = as_covariance(p)
    r = as_covariance(r)
    if h.shape != (r.dim, p.dim):
        raise DimensionMismatch(
            f"H shape {h.shape} incompatible with state dim {p.dim} / obs dim {r.dim}"
        )
    if x_f.shape != (p.dim,) or y.shape != (r.dim,):
        raise DimensionMismatch(
            f"state {x_f.shape} / observation {y.shape} do not match P dim {p.dim}, R dim {r.dim}"
        )
    s = CovarianceMatrix(h @ p.base @ h.T + r.base)
    innovation = y - h @ x_f
    return x_f + p.base @ (h.T @ s.solve(innovation))


def _check_block(seq, span, dim, cycle):
    seq = np.asarray(seq, dtype=float)
    if seq.ndim != 2 or seq.shape[1] != dim:
        raise DimensionMismatch(
            f"forward model must return (sequence, {dim}) rows, got {seq.shape}"
        )
    if seq.shape[0] != span + 1:
        raise SequenceLengthMismatch(
            f"cycle {cycle}: forward block has {seq.shape[0]} rows but the next "
            f"observation is {span} steps ahead (need {span + 1} rows, the last "
            "landing on the observation instant)"
        )
    return seq


def kalman_filter(m, h, p, r, x_b, obs: ObservationSeries, *, start_index: int = 0,
                  replace_analysis: bool = True) -> FilterOutput:
    """Constant-P Kalman filter over an observation series.

    Each cycle forwards the previous analysis through ``m``, takes the
    block's last row as the forecast, applies ``kalman_update`` and
    appends the block with its last row replaced by the analysis (set
    ``replace_analysis=False`` for the literal forecast-only trajectory).
    The forecast covariance is never updated.
    """
    m = _as_matrix_op(m)
    h = np.asarray(h, dtype=float)
    p = as_covariance(p)
    r = as_covariance(r)
    x = np.asarray(x_b, dtype=float)
    blocks = []
    prev = int(start_index)
    for j, t in enumerate(obs.times):
        span = t - prev
        if span <= 0:
            raise SequenceLengthMismatch(
                f"observation {j} at index {t} is not ahead of instant {prev}"
            )
        seq = _check_block(m.evaluate(x), span, x.shape[0], j)
        x_f = seq[-1]
        x_a = kalman_update(x_f, p, h, r, obs.values[j])
        block = np.array(seq)
        if replace_analysis:
            block[-1] = x_a
        blocks.append(block)
        x = x_a
        prev = t
    return FilterOutput(average_trajectory=np.vstack(blocks))


def enkf(n_e: int, m, h, p, r, x_b, obs: ObservationSeries, rng: RngHandle, *,
         start_index: int = 0, replace_analysis: bool = True,
         jitter: float = 0.0) -> FilterOutput:
    """Stochastic ensemble Kalman filter with perturbed observations.

    The initial ensemble is drawn from N(x_b, P). Each cycle propagates
    every member through ``m``, estimates the forecast covariance from the
    ensemble, perturbs the observation with R once per member, and updates
    each member with the gain P_e H^T (H P_e H^T + R)^{-1}. For a
    nonlinear observation operator the gain is formed from the ensemble
    cross-covariances, which reduces to the same formula in the linear
    case. The averaged output is the row-wise member mean over full
    forward blocks, analysis rows included.

    ``jitter`` adds a diagonal ridge to R inside the innovation covariance
    only; the default 0 keeps a collapsed ensemble an error
    (NotPositiveDefinite) rather than silently regularizing it.
    """
    if n_e < 2:
        raise DimensionMismatch(f"ensemble size must be >= 2, got {n_e}")
    m_op = _as_matrix_op(m)
    h_op = _as_matrix_op(h)
    p = as_covariance(p)
    r = as_covariance(r)
    x_b = np.asarray(x_b, dtype=float)
    dim = x_b.shape[0]

    ensemble = sample_gaussian(x_b, p, n_e, rng)
    member_blocks = [[] for _ in range(n_e)]
    prev = int(start_index)
    for j, t in enumerate(obs.times):
        span = t - prev
        if span <= 0:
            raise SequenceLengthMismatch(
                f"observation {j} at index {t} is not ahead of instant {prev}"
            )
        blocks = [
            _check_block(m_op.evaluate(ensemble[i]), span, dim, j) for i in range(n_e)
        ]
        forecasts = np.stack([b[-1] for b in blocks], axis=0)
        obs_pred = np.stack([h_op.evaluate(f) for f in forecasts], axis=0)

        y_pert = sample_gaussian(obs.values[j], r, n_e, rng)

        x_mean = forecasts.mean(axis=0)
        anomalies = forecasts - x_mean
        r_eff = r.base if jitter == 0.0 else r.base + jitter * np.eye(r.dim)
        if isinstance(h_op, LinearOperator):
            hm = h_op.matrix
            p_e = anomalies.T @ anomalies / (n_e - 1)
            cross = p_e @ hm.T
            s = hm @ p_e @ hm.T + r_eff
        else:
            y_mean = obs_pred.mean(axis=0)
            y_anom = obs_pred - y_mean
            cross = anomalies.T @ y_anom / (n_e - 1)
            s = y_anom.T @ y_anom / (n_e - 1) + r_eff
        try:
            s = CovarianceMatrix(s)
        except NotPositiveDefinite as exc:
            raise NotPositiveDefinite(
                f"cycle {j}: innovation covariance lost definiteness "
                "(collapsed ensemble); consider a diagonal jitter on R"
            ) from exc
        innovations = y_pert - obs_pred  # (n_e, obs_dim)
        analyses = forecasts + (cross @ s.solve(innovations.T)).T

        for i in range(n_e):
            block = np.array(blocks[i])
            if replace_analysis:
                block[-1] = analyses[i]
            member_blocks[i].append(block)
        ensemble = analyses
        prev = t

    members = np.stack([np.vstack(bs) for bs in member_blocks], axis=0)
    return FilterOutput(
        average_trajectory=members.mean(axis=0),
        per_member_trajectories=members,
    )


def cost_3dvar(x, x_b, b, r, y, h):
    """Background-plus-observation misfit at one instant.

    J(x) = ||x - x_b||^2_{B^-1} + ||y - H(x)||^2_{R^-1}, both quadratic
    norms applied through SPD solves. ``x`` may be a tape node, in which
    case the gradient is available from its tape.
    """
    b = as_covariance(b)
    r = as_covariance(r)
    h = _as_matrix_op(h)
    jb = T.quad_form_solve(b, T.sub(x, x_b))
    jo = T.quad_form_solve(r, T.sub(y, _apply(h, x)))
    return T.add(jb, jo)


def cost_4dvar(x, x_b, b, r, m, h, obs: ObservationSeries):
    """Window misfit (Jb, Jo, J) of the 4DVar objective.

    The first observation is compared against H(x) directly; each later
    observation is compared after chaining the forward model and taking
    every block's last row. J is the exact sum Jb + Jo.
    """
    if len(obs) < 2:
        raise DimensionMismatch("the window cost needs at least 2 observations")
    b = as_covariance(b)
    r = as_covariance(r)
    m = _as_matrix_op(m)
    h = _as_matrix_op(h)
    dim = np.asarray(x_b, dtype=float).shape[0]
    jb = T.quad_form_solve(b, T.sub(x, x_b))
    jo = T.quad_form_solve(r, T.sub(obs.values[0], _apply(h, x)))
    cur = x
    for k in range(1, len(obs)):
        seq = _apply(m, cur)
        span = obs.gaps[k - 1]
        seq_len = seq.shape[0] if not isinstance(seq, T.TapeNode) else seq.value.shape[0]
        if seq_len != span + 1:
            raise SequenceLengthMismatch(
                f"window leg {k}: forward block has {seq_len} rows but the next "
                f"observation is {span} steps ahead (need {span + 1})"
            )
        cur = T.take(seq, -1) if isinstance(seq, T.TapeNode) else seq[-1]
        if not isinstance(cur, T.TapeNode) and cur.shape != (dim,):
            raise DimensionMismatch("forward block rows must match the state length")
        jo = T.add(jo, T.quad_form_solve(r, T.sub(obs.values[k], _apply(h, cur))))
    return jb, jo, T.add(jb, jo)


def _adam_descent(value_and_grad, x0, max_iterations, learning_rate, record_log,
                  log_keys):
    """Shared fixed-budget descent loop for the variational routines."""
    x = np.array(x0, dtype=float)
    state = AdamState.initial(x.size, learning_rate)
    log = {k: [] for k in log_keys}
    if record_log:
        log["background_states"] = []

    def partial():
        return VariationalOutput(x, {k: np.asarray(v) for k, v in log.items()})

    for _ in range(int(max_iterations)):
        scalars, grad = value_and_grad(x)
        if not all(np.isfinite(v) for v in scalars.values()):
            raise NanEncountered("variational cost diverged to non-finite values",
                                 partial=partial())
        for k in log_keys:
            if k == "J_grad_norm":
                continue
            log[k].append(scalars[k])
        log["J_grad_norm"].append(float(np.linalg.norm(grad)))
        if record_log:
            log["background_states"].append(np.array(x))
        try:
            x_flat, state = adam_step(x.ravel(), grad.ravel(), state)
        except NanEncountered as exc:
            raise NanEncountered(str(exc), partial=partial()) from exc
        x = x_flat.reshape(x.shape)
    return VariationalOutput(x, {k: np.asarray(v) for k, v in log.items()})


def var3d(h, b, r, x_b, y, max_iterations: int, learning_rate: float, *,
          record_log: bool = True) -> VariationalOutput:
    """Minimize the single-instant cost by Adam for a fixed budget.

    ``x_b`` and ``y`` may carry a leading batch axis (aligned rows); each
    row is optimized independently against the shared B, R and H, and the
    log series then gain a trailing batch axis.
    """
    h = _as_matrix_op(h)
    b = as_covariance(b)
    r = as_covariance(r)
    x_b = np.asarray(x_b, dtype=float)
    y = np.asarray(y, dtype=float)
    batched = x_b.ndim == 2
    xb_rows = x_b if batched else x_b[None, :]
    y_rows = y if batched else y[None, :]
    if xb_rows.shape[0] != y_rows.shape[0]:
        raise DimensionMismatch(
            f"{xb_rows.shape[0]} background rows vs {y_rows.shape[0]} observation rows"
        )

    outs = []
    for xb_row, y_row in zip(xb_rows, y_rows):

        def value_and_grad(x, xb_row=xb_row, y_row=y_row):
            tp = T.GradientTape()
            xn = tp.input(x)
            j = cost_3dvar(xn, xb_row, b, r, y_row, h)
            grad = T.gradient(j, [xn], warn_disconnected=False)[0]
            return {"J": float(j.value)}, grad

        outs.append(_adam_descent(value_and_grad, xb_row, max_iterations,
                                  learning_rate, record_log, ["J", "J_grad_norm"]))

    if not batched:
        return outs[0]
    state = np.stack([o.assimilated_state for o in outs], axis=0)
    log = {}
    for k in outs[0].iteration_log:
        stacked = [o.iteration_log[k] for o in outs]
        # scalar series -> (iterations, batch); states -> (iterations, batch, dim)
        log[k] = np.stack(stacked, axis=1)
    return VariationalOutput(state, log)


def var4d(m, h, b, r, x_b, obs: ObservationSeries, max_iterations: int,
          learning_rate: float, *, record_log: bool = True) -> VariationalOutput:
    """Minimize the window cost by Adam for a fixed budget.

    The background state lives at the first observation instant. The log
    records Jb, Jo, J (exact sum), the gradient norm and, when enabled,
    each iterate.
    """
    m = _as_matrix_op(m)
    h = _as_matrix_op(h)
    b = as_covariance(b)
    r = as_covariance(r)
    x_b = np.asarray(x_b, dtype=float)
    if x_b.ndim != 1:
        raise DimensionMismatch("4DVar optimizes a single background state (1-D)")

    def value_and_grad(x):
        tp = T.GradientTape()
        xn = tp.input(x)
        jb, jo, j = cost_4dvar(xn, x_b, b, r, m, h, obs)
        grad = T.gradient(j, [xn], warn_disconnected=False)[0]
        return {"Jb": float(jb.value), "Jo": float(jo.value), "J": float(j.value)}, grad

    return _adam_descent(value_and_grad, x_b, max_iterations, learning_rate,
                         record_log, ["Jb", "Jo", "J", "J_grad_norm"])
