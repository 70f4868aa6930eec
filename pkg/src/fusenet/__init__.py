"""Late sensor-fusion CNN for human activity recognition, in plain numpy."""
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data import WindowedDataset, load_pamap2, load_ucl
from .metrics import confusion, report
from .model import PAMAP2_CONFIG, UCL_CONFIG, ModelConfig, PerceptionNet, init
from .train import TrainConfig, ensemble_predict, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "Checkpoint", "ModelConfig", "PAMAP2_CONFIG", "PerceptionNet", "TrainConfig", "UCL_CONFIG",
    "WindowedDataset", "confusion", "ensemble_predict", "evaluate", "init", "load_checkpoint",
    "load_pamap2", "load_ucl", "report", "save_checkpoint", "train",
]
