"""Case configuration and execution: parameter record, builder, executor.

A case is described by 7 required and 10 optional parameters; the builder
offers three equivalent entry styles (a plain dict, a Parameters record,
and chained setters) that produce identical results. ``validate`` returns
every violated rule at once and ``execute`` dispatches to the ensemble or
variational routines, returning the documented string-keyed result map.

The plain Kalman filter is deliberately not dispatchable here; use
``dassim.assimilation.kalman_filter`` directly.
"""

from __future__ import annotations

import copy
import datetime
import enum
from dataclasses import dataclass, fields

import numpy as np

from .assimilation import ObservationSeries, enkf, var3d, var4d
from .errors import (
    DassimError,
    NotPositiveDefinite,
    NotSymmetric,
    TypeMismatch,
    UnknownParameter,
    ValidationFailed,
)
from .linalg import CovarianceMatrix
from .operators import CallableOperator, DifferentiableOperator, LinearOperator
from .rng import RngHandle


class Algorithms(enum.Enum):
    EnKF = "EnKF"
    Var3D = "Var3D"
    Var4D = "Var4D"


class Device(enum.Enum):
    CPU = "CPU"
    GPU = "GPU"


_REQUIRED = (
    "algorithm",
    "device",
    "observation_model",
    "background_covariance_matrix",
    "observation_covariance_matrix",
    "background_state",
    "observations",
)

_OPTIONAL = (
    "forward_model",
    "output_sequence_length",
    "observation_time_steps",
    "gaps",
    "num_ensembles",
    "start_time",
    "max_iterations",
    "learning_rate",
    "record_log",
    "args",
)


@dataclass
class Parameters:
    """Case parameter record; None marks an unset slot.

    ``seed`` is an extension beyond the documented inventory: one integer
    threaded to every stochastic component so reruns reproduce exactly.
    """

    algorithm: Algorithms | None = None
    device: Device | None = None
    observation_model: object = None
    background_covariance_matrix: object = None
    observation_covariance_matrix: object = None
    background_state: object = None
    observations: object = None
    forward_model: object = None
    output_sequence_length: int | None = None
    observation_time_steps: list | None = None
    gaps: list | None = None
    num_ensembles: int | None = None
    start_time: float | None = None
    max_iterations: int | None = None
    learning_rate: float | None = None
    record_log: bool = True
    args: tuple = ()
    seed: int = 0


_PARAM_NAMES = tuple(f.name for f in fields(Parameters))


def _coerce_enum(kind, value, name):
    if isinstance(value, kind):
        return value
    if isinstance(value, str):
        try:
            return kind[value]
        except KeyError:
            pass
    raise TypeMismatch(
        f"{name} must be a {kind.__name__} member or one of "
        f"{[m.name for m in kind]}, got {value!r}"
    )


def _check_int(value, name, minimum=None):
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise TypeMismatch(f"{name} must be an integer, got {type(value).__name__}")
    if minimum is not None and value < minimum:
        raise TypeMismatch(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def _check_parameter(name, value):
    """Type-check one parameter at set time; returns the normalized value."""
    if name == "algorithm":
        return _coerce_enum(Algorithms, value, name)
    if name == "device":
        return _coerce_enum(Device, value, name)
    if name in ("observation_model", "forward_model"):
        if isinstance(value, DifferentiableOperator) or callable(value):
            return value
        arr = np.asarray(value, dtype=float)
        if arr.ndim == 2:
            return arr
        raise TypeMismatch(
            f"{name} must be an operator, a callable or a 2-D matrix"
        )
    if name in ("background_covariance_matrix", "observation_covariance_matrix"):
        if isinstance(value, CovarianceMatrix):
            return value
        arr = np.asarray(value, dtype=float)
        if arr.ndim != 2:
            raise TypeMismatch(f"{name} must be a square 2-D matrix")
        return arr
    if name == "background_state":
        arr = np.asarray(value, dtype=float)
        if arr.ndim not in (1, 2):
            raise TypeMismatch(f"{name} must be 1-D or 2-D, got {arr.ndim}-D")
        return arr
    if name == "observations":
        if isinstance(value, ObservationSeries):
            return value
        arr = np.asarray(value, dtype=float)
        if arr.ndim != 2:
            raise TypeMismatch(f"{name} must be an ObservationSeries or a 2-D array")
        return arr
    if name in ("observation_time_steps", "gaps"):
        try:
            return [_check_int(v, f"{name} entry") for v in value]
        except TypeError as exc:
            raise TypeMismatch(f"{name} must be a sequence of integers") from exc
    if name in ("output_sequence_length", "num_ensembles", "max_iterations"):
        return _check_int(value, name, minimum=1)
    if name == "seed":
        return _check_int(value, name)
    if name in ("learning_rate", "start_time"):
        if not isinstance(value, (int, float, np.floating, np.integer)) or isinstance(value, bool):
            raise TypeMismatch(f"{name} must be a number")
        return float(value)
    if name == "record_log":
        if not isinstance(value, (bool, np.bool_)):
            raise TypeMismatch(f"{name} must be a boolean")
        return bool(value)
    if name == "args":
        if not isinstance(value, tuple):
            raise TypeMismatch(f"{name} must be a tuple")
        return value
    raise UnknownParameter(f"unknown parameter {name!r}")


class CaseBuilder:
    """Configure and run one assimilation case.

    Setters chain and type-check at set time, so typos and wrongly typed
    values surface immediately rather than at execution.
    """

    def __init__(self, case_name: str | None = None, parameters: Parameters | None = None):
        self.case_name = case_name or datetime.datetime.now().strftime("%Y%m%dT%H%M%S")
        self._params = Parameters()
        self._results = None
        if parameters is not None:
            self.set_parameters(parameters)

    # -- parameter entry ----------------------------------------------------

    def set_parameter(self, name: str, value) -> "CaseBuilder":
        if name not in _PARAM_NAMES:
            raise UnknownParameter(
                f"unknown parameter {name!r}; valid names: {', '.join(_PARAM_NAMES)}"
            )
        setattr(self._params, name, _check_parameter(name, value))
        return self

    def set_parameters(self, parameters) -> "CaseBuilder":
        """Batch entry; validates every item before mutating anything."""
        if isinstance(parameters, Parameters):
            items = {
                f.name: getattr(parameters, f.name)
                for f in fields(Parameters)
                if getattr(parameters, f.name) is not None
            }
        elif isinstance(parameters, dict):
            items = dict(parameters)
        else:
            raise TypeMismatch("set_parameters takes a Parameters record or a dict")
        staged = {}
        for name, value in items.items():
            if name not in _PARAM_NAMES:
                raise UnknownParameter(
                    f"unknown parameter {name!r}; valid names: {', '.join(_PARAM_NAMES)}"
                )
            staged[name] = _check_parameter(name, value)
        for name, value in staged.items():
            setattr(self._params, name, value)
        return self

    def set_algorithm(self, v):
        return self.set_parameter("algorithm", v)

    def set_device(self, v):
        return self.set_parameter("device", v)

    def set_observation_model(self, v):
        return self.set_parameter("observation_model", v)

    def set_background_covariance_matrix(self, v):
        return self.set_parameter("background_covariance_matrix", v)

    def set_observation_covariance_matrix(self, v):
        return self.set_parameter("observation_covariance_matrix", v)

    def set_background_state(self, v):
        return self.set_parameter("background_state", v)

    def set_observations(self, v):
        return self.set_parameter("observations", v)

    def set_forward_model(self, v):
        return self.set_parameter("forward_model", v)

    def set_output_sequence_length(self, v):
        return self.set_parameter("output_sequence_length", v)

    def set_observation_time_steps(self, v):
        return self.set_parameter("observation_time_steps", v)

    def set_gaps(self, v):
        return self.set_parameter("gaps", v)

    def set_num_ensembles(self, v):
        return self.set_parameter("num_ensembles", v)

    def set_start_time(self, v):
        return self.set_parameter("start_time", v)

    def set_max_iterations(self, v):
        return self.set_parameter("max_iterations", v)

    def set_learning_rate(self, v):
        return self.set_parameter("learning_rate", v)

    def set_record_log(self, v):
        return self.set_parameter("record_log", v)

    def set_args(self, v):
        return self.set_parameter("args", v)

    def set_seed(self, v):
        return self.set_parameter("seed", v)

    # -- validation ----------------------------------------------------------

    def validate(self) -> list:
        """Check the configured case; returns the full list of violations."""
        return validate(self._params)

    # -- execution -----------------------------------------------------------

    def execute(self) -> dict:
        errors = self.validate()
        if errors:
            raise ValidationFailed(errors)
        self._results = execute_case(self._params)
        return self.get_results_dict()

    def get_results_dict(self) -> dict:
        if self._results is None:
            raise DassimError("no results yet; call execute() first")
        return copy.deepcopy(self._results)

    def get_result(self, name: str):
        if self._results is None:
            raise DassimError("no results yet; call execute() first")
        if name not in self._results:
            raise UnknownParameter(
                f"no result {name!r}; available: {sorted(self._results)}"
            )
        return copy.deepcopy(self._results[name])

    def get_parameters_dict(self) -> dict:
        return {f.name: copy.deepcopy(getattr(self._params, f.name))
                for f in fields(Parameters)}


def _materialize_operator(value, args=()):
    if isinstance(value, DifferentiableOperator):
        return value
    if isinstance(value, np.ndarray):
        return LinearOperator(value)
    return CallableOperator(value, args=args)


def _materialize_covariance(value):
    if isinstance(value, CovarianceMatrix):
        return value
    return CovarianceMatrix(value)


def _materialize_observations(p: Parameters):
    if isinstance(p.observations, ObservationSeries):
        return p.observations
    if p.observation_time_steps is None:
        return None
    return ObservationSeries(
        times=p.observation_time_steps,
        values=p.observations,
        gaps=p.gaps,
    )


def _supports_vjp(op) -> bool:
    if isinstance(op, CallableOperator):
        return op.differentiable
    return True


def validate(p: Parameters) -> list:
    errors = []
    for name in _REQUIRED:
        if getattr(p, name) is None:
            errors.append(f"required parameter {name!r} is not set")
    if errors:
        return errors

    if p.device is not Device.CPU:
        errors.append(
            "device must be CPU; GPU execution backends are out of scope for this build"
        )

    state = np.asarray(p.background_state, dtype=float)
    if state.ndim == 2 and p.algorithm is not Algorithms.Var3D:
        errors.append("batched background states are available only for Var3D")
    state_dim = state.shape[-1]

    b = r = None
    try:
        b = _materialize_covariance(p.background_covariance_matrix)
        if p.algorithm is not Algorithms.EnKF and b.is_zero:
            errors.append("background_covariance_matrix must be positive definite")
    except (NotPositiveDefinite, NotSymmetric, DassimError) as exc:
        errors.append(f"background_covariance_matrix invalid: {exc}")
    try:
        r = _materialize_covariance(p.observation_covariance_matrix)
        if r.is_zero:
            errors.append("observation_covariance_matrix must be positive definite")
    except (NotPositiveDefinite, NotSymmetric, DassimError) as exc:
        errors.append(f"observation_covariance_matrix invalid: {exc}")

    if b is not None and b.dim != state_dim:
        errors.append(
            f"background_covariance_matrix dim {b.dim} != state length {state_dim}"
        )

    obs = None
    if isinstance(p.observations, ObservationSeries):
        obs = p.observations
    elif p.algorithm in (Algorithms.EnKF, Algorithms.Var4D):
        if p.observation_time_steps is None:
            errors.append(
                f"{p.algorithm.value} needs observation_time_steps (or an "
                "ObservationSeries) to place observations on the step grid"
            )
        else:
            try:
                obs = _materialize_observations(p)
            except DassimError as exc:
                errors.append(f"observations invalid: {exc}")

    obs_values = obs.values if obs is not None else np.asarray(p.observations, dtype=float)
    if r is not None and obs_values.ndim == 2 and r.dim != obs_values.shape[-1]:
        errors.append(
            f"observation_covariance_matrix dim {r.dim} != observation length "
            f"{obs_values.shape[-1]}"
        )

    if p.algorithm is Algorithms.EnKF:
        if p.forward_model is None:
            errors.append("EnKF requires a forward_model")
        if p.num_ensembles is None:
            errors.append("EnKF requires num_ensembles")
        elif p.num_ensembles < 2:
            errors.append(f"num_ensembles must be >= 2, got {p.num_ensembles}")
        if obs is not None and len(obs) < 1:
            errors.append("EnKF needs at least 1 observation")
    elif p.algorithm is Algorithms.Var3D:
        if p.learning_rate is None:
            errors.append("Var3D requires learning_rate (Adam is the optimizer)")
        if p.max_iterations is None:
            errors.append("Var3D requires max_iterations")
        if isinstance(p.observations, ObservationSeries):
            errors.append(
                "Var3D assimilates a single instant; pass observations as a "
                "([batch], obs_dim) array, not an ObservationSeries"
            )
        if isinstance(p.observations, np.ndarray):
            y_rows = p.observations.shape[0]
            x_rows = state.shape[0] if state.ndim == 2 else 1
            if y_rows != x_rows:
                errors.append(
                    f"Var3D batch mismatch: {x_rows} background rows vs "
                    f"{y_rows} observation rows"
                )
    elif p.algorithm is Algorithms.Var4D:
        if p.forward_model is None:
            errors.append("Var4D requires a forward_model")
        if p.learning_rate is None:
            errors.append("Var4D requires learning_rate (Adam is the optimizer)")
        if p.max_iterations is None:
            errors.append("Var4D requires max_iterations")
        if obs is not None and len(obs) < 2:
            errors.append("Var4D needs a minimum of 2 observations")
        if p.forward_model is not None and not _supports_vjp(
            _materialize_operator(p.forward_model, p.args)
        ):
            errors.append(
                "Var4D forward_model must expose a vector-Jacobian product; wrap "
                "it as a TapeOperator or provide vjp_fn to CallableOperator"
            )
        if p.observation_model is not None and not _supports_vjp(
            _materialize_operator(p.observation_model)
        ):
            errors.append(
                "Var4D observation_model must expose a vector-Jacobian product"
            )
    else:
        errors.append(
            f"algorithm {p.algorithm} is not dispatchable; note that the plain "
            "Kalman filter is available as dassim.assimilation.kalman_filter"
        )

    if p.output_sequence_length is not None and obs is not None and len(obs.gaps) > 0:
        expected = set(g + 1 for g in obs.gaps)
        if p.algorithm is Algorithms.EnKF:
            expected.add(int(obs.times[0]) + 1)
        if expected != {p.output_sequence_length}:
            errors.append(
                f"output_sequence_length {p.output_sequence_length} does not equal "
                f"gap + 1 for the configured observation spacing {sorted(expected)}"
            )
    return errors


def execute_case(p: Parameters) -> dict:
    """Run a validated case and pack the documented result dictionary."""
    h_op = _materialize_operator(p.observation_model)
    b = _materialize_covariance(p.background_covariance_matrix)
    r = _materialize_covariance(p.observation_covariance_matrix)

    if p.algorithm is Algorithms.EnKF:
        obs = _materialize_observations(p)
        m_op = _materialize_operator(p.forward_model, p.args)
        out = enkf(p.num_ensembles, m_op, h_op, b, r,
                   np.asarray(p.background_state, dtype=float), obs,
                   RngHandle(p.seed))
        return {
            "average_ensemble_all_states": out.average_trajectory,
            "each_ensemble_all_states": out.per_member_trajectories,
        }

    if p.algorithm is Algorithms.Var3D:
        out = var3d(h_op, b, r, p.background_state, p.observations,
                    p.max_iterations, p.learning_rate, record_log=p.record_log)
        return {
            "assimilated_state": out.assimilated_state,
            "intermediate_results": dict(out.iteration_log),
        }

    obs = _materialize_observations(p)
    m_op = _materialize_operator(p.forward_model, p.args)
    out = var4d(m_op, h_op, b, r, p.background_state, obs,
                p.max_iterations, p.learning_rate, record_log=p.record_log)
    return {
        "assimilated_state": out.assimilated_state,
        "intermediate_results": dict(out.iteration_log),
    }
