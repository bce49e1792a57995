"""Review-based rating prediction with personalized hierarchical attention."""

from .model import AblationSpec, Dims, ModelParams, forward, init_params
from .training import TrainConfig, train

__all__ = ["AblationSpec", "Dims", "ModelParams", "forward", "init_params",
           "TrainConfig", "train"]
