import numpy as np
import pytest
from hypothesis import settings

from subtask_induction.model import ModelConfig

settings.register_profile("default", deadline=None, print_blob=True)
settings.load_profile("default")


@pytest.fixture
def tiny_config():
    return ModelConfig(n_layers=1, n_heads=2, d_model=8, d_ff=16, vocab_size=11, init_std=0.3)


@pytest.fixture
def tiny_tokens():
    """All 100 rows of ab mod 7 over a 10-token vocabulary (sep id 10)."""
    return np.array([[a, b, 10, (a * b) % 7] for a in range(10) for b in range(10)])


TINY_RAW = {
    "model": {"n_layers": 1, "n_heads": 2, "d_model": 8, "d_ff": 16, "init_std": 0.3},
    "data": {"modulus": 7, "input_max": 20, "base_train_fraction": 0.5, "eval_size": 40,
             "test_size": 40, "discovery_size": 150, "coverage": True},
    "base_train": {"epochs": 2, "lr": 1e-2, "batch_size": 32},
    "sparsify": {"epochs": 2, "lr": 0.05, "lambda": [1e-6], "batch_size": 50},
    "transfer": {"epochs": 2, "lr": 1e-2, "batch_size": 16},
    "sweep": [0, 10],
    "modes": ["induction", "full-transfer", "random-subnet", "scratch"],
    "seeds": {"trials": [0, 1]},
}


@pytest.fixture
def tiny_experiment(tmp_path):
    import copy

    from subtask_induction.config import ExperimentConfig
    raw = copy.deepcopy(TINY_RAW)
    raw["output_dir"] = str(tmp_path / "run")
    return ExperimentConfig(raw)
