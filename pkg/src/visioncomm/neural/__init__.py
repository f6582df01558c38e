"""Small numpy network engine plus the matching and allocation models."""

from .layers import GRU, AvgPool2, Conv2D, ConvStack, Dense, Embedding, GlobalContext, Module, ReLU, Sigmoid
from .losses import focal_loss, softmax_cross_entropy, vran_b_loss, vran_p_loss
from .models import McummConfig, McummModel, UmanConfig, UmanModel, VranConfig, VranModel
from .training import TrainConfig, TrainingDiverged, TrainResult, load_checkpoint, save_checkpoint, train

__all__ = [
    "GRU", "AvgPool2", "Conv2D", "ConvStack", "Dense", "Embedding", "GlobalContext", "Module", "ReLU", "Sigmoid",
    "focal_loss", "softmax_cross_entropy", "vran_b_loss", "vran_p_loss",
    "McummConfig", "McummModel", "UmanConfig", "UmanModel", "VranConfig", "VranModel",
    "TrainConfig", "TrainingDiverged", "TrainResult", "load_checkpoint", "save_checkpoint", "train",
]
