"""Latent-graph autoencoder for multi-view tabular data."""

from .estimator import LegatoEncoder
from .model import LegatoNetwork, build_variant
from .synthetic import SimSpec, simulate
from .training import TrainConfig, train

__all__ = ["LegatoEncoder", "LegatoNetwork", "SimSpec", "TrainConfig", "build_variant", "simulate", "train"]
__version__ = "0.1.0"
