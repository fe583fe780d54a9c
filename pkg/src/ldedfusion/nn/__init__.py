from .functional import (
    conv2d_forward,
    cross_entropy_loss,
    dense_forward,
    maxpool2d_forward,
    softmax,
    softmax_cross_entropy,
)
from .layers import Conv2D, Dense, Flatten, MaxPool2D, Param, ReLU
from .model import Model, Stream
from .serialize import load_model, save_model
from .train import FeatureSet, History, NumericalError, TrainConfig, evaluate, predict, predict_batch, stack_samples, train
