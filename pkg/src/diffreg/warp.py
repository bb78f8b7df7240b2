"""Backward warping with the out-of-domain validity mask.

The transformation lives on the fixed image domain; displacement vectors
point to sample locations in the moving image. A pixel is valid when both
components of grid + displacement stay inside [-1, 1] (the closed interval:
coordinates exactly at +-1 are in-domain). The mask is a hard gate computed
before sampling; gradients only flow through the sampled values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .image import Image, identity_grid
from .tensor import Tensor, component, grid_sample_bilinear, stack


@dataclass
class WarpResult:
    warped: Tensor        # (H, W) sampled moving image
    mask: np.ndarray      # (H, W) bool, True where the sample was in-domain


def _validity_mask(target: np.ndarray) -> np.ndarray:
    outside = np.zeros(target.shape[:2], dtype=bool)
    for dim in range(target.shape[-1]):
        outside |= (target[..., dim] > 1.0) | (target[..., dim] < -1.0)
    return ~outside


def warp_image(moving: Image, displacement: Tensor) -> WarpResult:
    """Sample the moving image at identity grid + displacement."""
    if displacement.ndim != 3 or displacement.shape[2] != 2:
        raise ShapeError(f"displacement must be (H, W, 2), got {displacement.shape}")
    H, W = displacement.shape[:2]
    grid = identity_grid((H, W))
    target = grid + displacement
    mask = _validity_mask(target.data)
    warped = grid_sample_bilinear(moving.tensor, target)
    return WarpResult(warped=warped, mask=mask)


def warp_field(field: Tensor, by: Tensor) -> Tensor:
    """Resample a vector field at grid + by: returns field o (id + by)."""
    if field.shape != by.shape:
        raise ShapeError(f"field {field.shape} and by {by.shape} must match")
    if field.ndim != 3 or field.shape[2] != 2:
        raise ShapeError(f"fields must be (H, W, 2), got {field.shape}")
    H, W = field.shape[:2]
    target = identity_grid((H, W)) + by
    parts = [grid_sample_bilinear(component(field, d), target) for d in range(2)]
    return stack(parts)
