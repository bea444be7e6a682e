from .backprop import backward, forward_backward, nsg_objective
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import PRESETS, ConfigError, TrainConfig
from .embio import load_embeddings, save_embeddings
from .gradcheck import finite_diff_grad, run_gradcheck
from .trainer import Trainer, TrainingDivergedError, train

__all__ = [
    "backward", "forward_backward", "nsg_objective", "Checkpoint", "load_checkpoint",
    "save_checkpoint", "PRESETS", "ConfigError", "TrainConfig", "load_embeddings",
    "save_embeddings", "finite_diff_grad", "run_gradcheck", "Trainer", "TrainingDivergedError", "train",
]
