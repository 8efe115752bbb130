"""Subtask induction on modular-arithmetic transformers.

Train a base model, localize a subnetwork that computes a subtask, transplant
it into a fresh model and measure how much it helps on a related task.
"""

from .config import ExperimentConfig
from .model import ModelConfig, answer_accuracy, build_model, forward
from .sparsify import BinaryMask, SparsifyConfig, discover
from .tasks import TaskSpec, eval_task
from .training import TrainConfig, train
from .transfer import MODES, TransferPlan, run_transfer, transplant

__version__ = "0.1.0"

__all__ = [
    "ExperimentConfig", "ModelConfig", "answer_accuracy", "build_model", "forward",
    "BinaryMask", "SparsifyConfig", "discover", "TaskSpec", "eval_task", "TrainConfig",
    "train", "MODES", "TransferPlan", "run_transfer", "transplant",
]
