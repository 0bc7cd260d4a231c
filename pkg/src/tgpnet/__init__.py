"""Task-prompted multi-degradation image restoration on a small numpy autodiff core."""
from .kernels import BACKEND
from .model import ModelConfig, TGPNet, build_model
from .tensor import Tensor, backward, default_dtype, no_grad
from .tgp import TASKS, Blend

__version__ = "0.1.0"

__all__ = ["BACKEND", "ModelConfig", "TGPNet", "build_model", "Tensor", "backward",
           "default_dtype", "no_grad", "TASKS", "Blend", "__version__"]
