"""Saddle-to-saddle dynamics of two-layer ReLU networks on orthogonal data.

The limit process predicts, from the activation pattern at initialization
alone, when each neuron activates, which data it fits and the norm of the
final interpolator. The trainer runs gradient descent from initializations
far below float range so the prediction can be checked against training.
"""
from .core import (DenseNetwork, InitDraw, MaskMatrix, OrthonormalDataset, generate_dataset,
                   mask_matrix, sample_init)
from .errors import Saddle2SaddleError
from .estimators import LimitProcessRegressor, SmallInitReLURegressor
from .limit import (LimitProcess, bias_bound, build, check_assumptions, limit_process,
                    opt_sq_norm, pred_sq_norm, theta_at)
from .trainer import ScaledState, TrainerConfig, Trajectory, train, train_dense

__version__ = "0.1.0"

__all__ = [
    "DenseNetwork", "InitDraw", "MaskMatrix", "OrthonormalDataset", "generate_dataset",
    "mask_matrix", "sample_init", "Saddle2SaddleError", "LimitProcessRegressor",
    "SmallInitReLURegressor", "LimitProcess", "bias_bound", "build", "check_assumptions",
    "limit_process", "opt_sq_norm", "pred_sq_norm", "theta_at", "ScaledState", "TrainerConfig",
    "Trajectory", "train", "train_dense",
]
