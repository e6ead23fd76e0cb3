"""Single-epoch GNSS positioning with learned per-satellite weights."""

__version__ = "0.1.0"

from .geodesy import (
    DegenerateGeometryError,
    EcefPosition,
    Epoch,
    NavState,
    SatelliteChannel,
    ecef_to_enu,
    jacobian_row,
    observation_function,
)
from .lstm import LstmModel, TrainConfig, init_model, load_model, lstm_forward, save_model, train
from .residual_matrix import (
    EpochRejectedError,
    ResidualMatrix,
    build_residual_matrix,
    normalize_matrix,
)
from .synth import Dataset, GenConfig, LabeledEpoch, MixtureParams, generate_epoch, split_dataset
from .wls import RankDeficiencyError, SolverConfig, SolverResult, WeightVector, objective, solve

__all__ = [
    "DegenerateGeometryError",
    "Dataset",
    "EcefPosition",
    "Epoch",
    "EpochRejectedError",
    "GenConfig",
    "LabeledEpoch",
    "LstmModel",
    "MixtureParams",
    "NavState",
    "RankDeficiencyError",
    "ResidualMatrix",
    "SatelliteChannel",
    "SolverConfig",
    "SolverResult",
    "TrainConfig",
    "WeightVector",
    "build_residual_matrix",
    "ecef_to_enu",
    "generate_epoch",
    "init_model",
    "jacobian_row",
    "load_model",
    "lstm_forward",
    "normalize_matrix",
    "objective",
    "observation_function",
    "save_model",
    "solve",
    "split_dataset",
    "train",
]
