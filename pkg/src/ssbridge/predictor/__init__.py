from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .oracles import DiracOracle, GaussianOracle, dirac_oracle, gaussian_oracle
from .train import TrainConfig, TrainingError, train
from .unet import TinyUNet, UNetConfig, UNetPredictor

__all__ = [
    "CheckpointError", "DiracOracle", "GaussianOracle", "TinyUNet", "TrainConfig",
    "TrainingError", "UNetConfig", "UNetPredictor", "dirac_oracle", "gaussian_oracle",
    "load_checkpoint", "save_checkpoint", "train",
]
