from lgareid.pipeline.ablation import ABLATIONS, apply_ablation
from lgareid.pipeline.augment import augment, hflip, random_erase
from lgareid.pipeline.checkpoint import (CheckpointError, CheckpointVersionError, load_checkpoint, save_checkpoint,
                                        state_checksum)
from lgareid.pipeline.model import ConfigError, Model, ModelConfig, Output
from lgareid.pipeline.schedule import SGD, TrainSchedule
from lgareid.pipeline.train import NumericalError, TrainResult, batch_losses, train

__all__ = [
    "ABLATIONS", "apply_ablation", "augment", "hflip", "random_erase", "CheckpointError", "CheckpointVersionError",
    "load_checkpoint", "save_checkpoint", "state_checksum", "ConfigError", "Model", "ModelConfig", "Output", "SGD",
    "TrainSchedule", "NumericalError", "TrainResult", "batch_losses", "train",
]
