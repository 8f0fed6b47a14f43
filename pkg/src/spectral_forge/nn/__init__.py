from .tensor import Tensor, no_grad
from .layers import (
    BatchNorm1d, Conv1d, ConvTranspose1d, Dense, Dropout, Flatten, LeakyReLU, MaxPool1d, Module,
    Parameter, ReLU, Sequential, Softmax, Tanh, checksum,
)
from .losses import l1_penalty, mse_loss, nt_xent, weighted_cross_entropy
from .optim import Adam, PlateauTracker, TrainSchedule, adam_step, schedule_step

__all__ = [
    "Tensor", "no_grad", "BatchNorm1d", "Conv1d", "ConvTranspose1d", "Dense", "Dropout", "Flatten",
    "LeakyReLU", "MaxPool1d", "Module", "Parameter", "ReLU", "Sequential", "Softmax", "Tanh",
    "checksum", "l1_penalty", "mse_loss", "nt_xent", "weighted_cross_entropy", "Adam",
    "PlateauTracker", "TrainSchedule", "adam_step", "schedule_step",
]
