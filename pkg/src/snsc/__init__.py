"""Self-normalization side-chain for blind image restoration, on a small numpy autodiff engine."""

from .tensor import Tensor, no_grad
from .sidechain import SideChain, SideChainConfig
from .models import ModelConfig, build_model
from .config import TrainConfig, load_config

__version__ = "0.1.0"
__all__ = ["Tensor", "no_grad", "SideChain", "SideChainConfig", "ModelConfig", "build_model",
           "TrainConfig", "load_config"]
