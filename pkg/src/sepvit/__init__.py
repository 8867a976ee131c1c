"""Separable Vision Transformer on a small numpy autodiff engine."""

from .backbone import ModelConfig, SepViT, StageConfig, forward, preset
from .core import BlockParams, WindowLayout, WindowTokens, gsa_block, sepvit_block
from .tensor import Rng, Tape, Tensor, backward, finite_diff_grad

__all__ = [
    "BlockParams",
    "ModelConfig",
    "Rng",
    "SepViT",
    "StageConfig",
    "Tape",
    "Tensor",
    "WindowLayout",
    "WindowTokens",
    "backward",
    "finite_diff_grad",
    "forward",
    "gsa_block",
    "preset",
    "sepvit_block",
]
__version__ = "0.1.0"
