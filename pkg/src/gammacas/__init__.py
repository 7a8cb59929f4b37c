"""Cascade-size prediction with a learned gamma-form reshare rate."""

from .growth import DomainError, GrowthParams, cascade_size_closed_form, cascade_size_quadrature
from .model import ModelConfig, forward, load_weights, save_weights
from .trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "DomainError", "GrowthParams", "ModelConfig", "TrainConfig", "cascade_size_closed_form",
    "cascade_size_quadrature", "forward", "load_weights", "save_weights", "train",
]
