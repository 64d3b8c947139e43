"""From-scratch U-Net regression engine (numpy)."""

from .checkpoint import Checkpoint, load_weights, save_weights
from .layers import (conv2d_backward, conv2d_forward, mae_metric, maxpool2x2_backward, maxpool2x2_forward,
                     mse_grad, mse_loss, upconv2x2_backward, upconv2x2_forward)
from .model import (UNetConfig, backward, count_parameters, forward, init_weights, parameter_shapes, predict,
                    receptive_field_radius, zero_weights)
from .optim import OptimizerState, rmsprop_step

__all__ = [
    "Checkpoint", "OptimizerState", "UNetConfig", "backward", "conv2d_backward", "conv2d_forward",
    "count_parameters", "forward", "init_weights", "load_weights", "mae_metric", "maxpool2x2_backward",
    "maxpool2x2_forward", "mse_grad", "mse_loss", "parameter_shapes", "predict", "receptive_field_radius",
    "rmsprop_step", "save_weights", "upconv2x2_backward", "upconv2x2_forward", "zero_weights",
]
