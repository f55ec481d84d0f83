"""paflab: parametric activation shapes, adversarial attacks, robustness reports."""

from .activations import ActivationSpec
from .attacks import AttackSpec
from .data import Dataset
from .nnet import Network, build_cnn, build_mlp
from .tensor import Tensor
from .training import TrainConfig

__all__ = ["ActivationSpec", "AttackSpec", "Dataset", "Network", "Tensor",
           "TrainConfig", "build_cnn", "build_mlp"]

__version__ = "0.1.0"
