from .layers import (ACTIVATION_CODES, POOL_CODES, Activation, BatchNorm2d,
                     Conv2d, Dense, Dropout, Flatten, Layer, Param, Pool2d)
from .model import Model, nll_loss, nll_loss_grad, predict
from .optim import Adam
from .train import TrainReport, train
from .gradcheck import GradCheckReport, gradcheck_layer, gradcheck_model

__all__ = [
    "ACTIVATION_CODES", "POOL_CODES", "Activation", "BatchNorm2d", "Conv2d",
    "Dense", "Dropout", "Flatten", "Layer", "Param", "Pool2d", "Model",
    "nll_loss", "nll_loss_grad", "predict", "Adam", "TrainReport", "train",
    "GradCheckReport", "gradcheck_layer", "gradcheck_model",
]
