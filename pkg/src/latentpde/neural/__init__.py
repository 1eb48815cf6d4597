"""From-scratch neural network core: layers, tape autodiff, Adam, checkpoints."""

from .checkpoint import load_checkpoint, save_checkpoint
from .layers import (
    Activation,
    Conv,
    Dense,
    Flatten,
    Reshape,
    TransposedConv,
    conv_out_hw,
    spec_from_dict,
    spec_to_dict,
)
from .network import ModelParams, Tape, backward, build_model, forward, predict
from .optim import AdamState, adam_step, init_adam

__all__ = [
    "Activation",
    "AdamState",
    "Conv",
    "Dense",
    "Flatten",
    "ModelParams",
    "Reshape",
    "Tape",
    "TransposedConv",
    "adam_step",
    "backward",
    "build_model",
    "conv_out_hw",
    "forward",
    "init_adam",
    "load_checkpoint",
    "predict",
    "save_checkpoint",
    "spec_from_dict",
    "spec_to_dict",
]
