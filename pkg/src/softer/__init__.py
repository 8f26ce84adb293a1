"""Soft tensor regression: a Bayesian tensor-on-scalar regression whose
coefficient tensor is a softened PARAFAC decomposition."""

__version__ = "0.1.0"

from .calibration import (
    CalibrationTarget,
    Hyperparameters,
    additional_variance,
    calibrate,
    default_hyperparameters,
    prior_variance,
    solve_calibration,
)
from .model import (
    ChainSamples,
    Dataset,
    NumericError,
    ParameterState,
    SamplerSettings,
    SofterConfig,
    default_config,
    log_joint,
)
from .sampler import fit, run_chain
from .tensor import ShapeError

__all__ = [
    "__version__",
    "CalibrationTarget",
    "Hyperparameters",
    "additional_variance",
    "calibrate",
    "default_hyperparameters",
    "prior_variance",
    "solve_calibration",
    "ChainSamples",
    "Dataset",
    "NumericError",
    "ParameterState",
    "SamplerSettings",
    "SofterConfig",
    "default_config",
    "log_joint",
    "fit",
    "run_chain",
    "ShapeError",
]
