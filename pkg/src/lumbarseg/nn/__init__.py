"""Minimal dense/convolutional network kernel with exact backpropagation."""

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import grad_check
from .layers import LayerSpec, ShapeError, concat, conv2d, dense, maxpool2, relu, softmax, upconv2
from .losses import loss_mse, loss_softmax_ce
from .model import Model
from .optim import Adam, SGDMomentum

__all__ = [
    "Adam", "CheckpointError", "LayerSpec", "Model", "SGDMomentum", "ShapeError",
    "concat", "conv2d", "dense", "grad_check", "load_checkpoint", "loss_mse",
    "loss_softmax_ce", "maxpool2", "relu", "save_checkpoint", "softmax", "upconv2",
]
