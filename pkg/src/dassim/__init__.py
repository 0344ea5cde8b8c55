"""Data assimilation with differentiable forward and observation operators.

The package provides Kalman, ensemble Kalman, 3DVar and 4DVar routines
over a shared operator contract (evaluation plus vector-Jacobian product),
neural operator building blocks trained with a built-in reverse-mode tape
and Adam, two twin-experiment testbeds (Lorenz 63 and shallow water), and
a config-driven command line for end-to-end experiments.
"""

from .assimilation import (
    FilterOutput,
    ObservationSeries,
    VariationalOutput,
    cost_3dvar,
    cost_4dvar,
    enkf,
    kalman_filter,
    kalman_update,
    var3d,
    var4d,
)
from .casebuilder import Algorithms, CaseBuilder, Device, Parameters, execute_case, validate
from .errors import (
    DassimError,
    DimensionMismatch,
    DisconnectedGraphWarning,
    MissingArtifact,
    NanEncountered,
    NotPositiveDefinite,
    NotSymmetric,
    SequenceLengthMismatch,
    TypeMismatch,
    UnknownParameter,
    ValidationFailed,
    ZeroReference,
)
from .linalg import CovarianceMatrix, cholesky_factor, sample_gaussian, spd_solve
from .lorenz import Lorenz63Config, equilibria, lorenz_forward_model, lorenz_step, lorenz_trajectory
from .metrics import mse, rrmse, ssim
from .model_io import load_model, save_model
from .observations import make_observations
from .operators import (
    Autoencoder,
    CallableOperator,
    DenseNetwork,
    DifferentiableOperator,
    LinearOperator,
    LstmStack,
    TapeOperator,
    compose,
    dense_forward,
    identity_operator,
    linear_operator,
    lstm_rollout,
    persistence_model,
    physics_model,
)
from .optim import AdamState, adam_step
from .rng import RngHandle
from .shallow_water import (
    FieldSnapshot,
    ShallowWaterConfig,
    SimulationRecord,
    initial_condition,
    shallow_water_step,
    simulate,
)
from .tape import GradientTape, finite_diff_gradient, gradient, tape_backward
from .training import TrainingConfig, TrainResult, train, validation_split_size

__version__ = "0.1.0"
