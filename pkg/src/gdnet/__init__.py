"""Toy-scale guided depth super-resolution with low-rank feature reconstruction."""

from .model import GDNet, ModelConfig
from .tensor import Tensor, no_grad

__version__ = "0.1.0"
__all__ = ["GDNet", "ModelConfig", "Tensor", "no_grad", "__version__"]
