"""Multi-scale visual state-space segmentation with a self-contained
numpy-backed autodiff engine.

Layers: tensor engine (tensor), selective scan kernels (scan), network
blocks (blocks), encoder-decoder assembly (model), losses/metrics/optimizer
(losses, metrics, optim), synthetic data (data), training loops (train),
gradient-check suite (gradcheck), file formats (serial) and the CLI (cli).
"""

from .tensor import Tensor, Rng, Module, NonFiniteError, finite_diff_grad_check, no_grad
from .model import ModelConfig, VSSUNet, build_model, count_flops, count_params
from .train import TrainConfig, evaluate, train_loop
from .data import AugmentConfig, SegSample, gen_synthetic_dataset

__version__ = "0.1.0"

__all__ = [
    "Tensor", "Rng", "Module", "NonFiniteError", "finite_diff_grad_check", "no_grad",
    "ModelConfig", "VSSUNet", "build_model", "count_flops", "count_params",
    "TrainConfig", "evaluate", "train_loop",
    "AugmentConfig", "SegSample", "gen_synthetic_dataset",
    "__version__",
]
