from .base import Module, Param
from .basic import GELU, Conv3d, Dense, Dropout, PointwiseLinear, ReLU, Sequential, gelu, gelu_grad
from .conv import AvgPool2d, BatchNorm2d, Conv2d, MaxPool2d
from .spectral import FactorizedSpectralConv, FFNOLayer, SpectralConv3d

__all__ = [
    "Module", "Param", "GELU", "Conv3d", "Dense", "Dropout", "PointwiseLinear", "ReLU", "Sequential",
    "gelu", "gelu_grad", "AvgPool2d", "BatchNorm2d", "Conv2d", "MaxPool2d",
    "FactorizedSpectralConv", "FFNOLayer", "SpectralConv3d",
]
