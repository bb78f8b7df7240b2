"""Differentiable 2D image registration on a minimal reverse-mode AD core."""

from . import (
    errors,
    image,
    optim,
    regularize,
    registration,
    similarity,
    tensor,
    transform,
    warp,
)

__version__ = "0.1.0"
