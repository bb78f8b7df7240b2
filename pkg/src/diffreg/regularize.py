"""Regularization terms on displacement fields and raw parameters.

The gradient operator is the per-pixel difference between neighboring grid
points (central in the interior, one-sided at the borders), so a linear
ramp contributes its per-pixel increment at every point and the operator is
exactly equivariant under grid reflections and 90-degree rotations. Values
are normalized by the number of grid points |X| = H*W.

The Gaussian filter used by the alternating (Demons-style) scheme is the
one deliberately non-differentiated piece: it mutates the parameter buffer
in place and never touches the tape.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ParameterError, ShapeError
from .tensor import Tensor, abs_, central_diff, component, sqrt, sum_

_ISO_EPS = 1e-12


def _field_gradients(field: Tensor):
    if field.ndim != 3 or field.shape[2] != 2:
        raise ShapeError(f"field must be (H, W, 2), got {field.shape}")
    grads = []
    for d in range(2):
        comp = component(field, d)
        grads.append(central_diff(comp, axis=1))  # d/dx
        grads.append(central_diff(comp, axis=0))  # d/dy
    return grads


def diffusion(field: Tensor) -> Tensor:
    """Mean squared gradient magnitude; favors smooth fields."""
    H, W = field.shape[:2]
    total = None
    for g in _field_gradients(field):
        term = sum_(g * g)
        total = term if total is None else total + term
    return total * (1.0 / (H * W))


def tv_aniso(field: Tensor) -> Tensor:
    """Mean absolute gradient, axis-aligned; subgradient 0 at 0."""
    H, W = field.shape[:2]
    total = None
    for g in _field_gradients(field):
        term = sum_(abs_(g))
        total = term if total is None else total + term
    return total * (1.0 / (H * W))


def tv_iso(field: Tensor) -> Tensor:
    """Mean Euclidean norm over all gradient entries per point."""
    H, W = field.shape[:2]
    sq = None
    for g in _field_gradients(field):
        term = g * g
        sq = term if sq is None else sq + term
    return sum_(sqrt(sq + _ISO_EPS)) * (1.0 / (H * W))


def sparsity(field: Tensor) -> Tensor:
    """Mean l1 norm of the displacement vectors."""
    H, W = field.shape[:2]
    total = sum_(abs_(component(field, 0))) + sum_(abs_(component(field, 1)))
    return total * (1.0 / (H * W))


def param_regularizer(kind: str, group: Tensor, weight: float) -> Tensor:
    """Weighted l1/l2 penalty on one named parameter group."""
    if kind == "param_l1":
        return sum_(abs_(group)) * float(weight)
    if kind == "param_l2":
        return sum_(group * group) * float(weight)
    raise ConfigError(f"unknown parameter regularizer {kind!r}")


FIELD_REGULARIZERS = {
    "diffusion": diffusion,
    "tv_aniso": tv_aniso,
    "tv_iso": tv_iso,
    "sparsity": sparsity,
}


def gaussian_kernel_1d(sigma: float) -> np.ndarray:
    """Unit-sum Gaussian taps truncated at 4 sigma."""
    sigma = float(sigma)
    if sigma <= 0:
        raise ParameterError("sigma must be positive")
    radius = max(1, int(np.ceil(4.0 * sigma)))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _convolve_axis_replicate(data: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    radius = kernel.size // 2
    moved = np.moveaxis(data, axis, 0)
    padded = np.concatenate([
        np.repeat(moved[:1], radius, axis=0),
        moved,
        np.repeat(moved[-1:], radius, axis=0),
    ])
    windows = np.lib.stride_tricks.sliding_window_view(padded, kernel.size, axis=0)
    out = windows @ kernel
    return np.moveaxis(out, 0, axis)


def demons_gaussian_filter(field: Tensor, sigma: float) -> None:
    """Separable Gaussian smoothing of the field buffer, in place.

    Runs entirely outside the tape: no node is recorded and existing
    gradients are untouched. Border handling replicates edge values and the
    kernel sums to one, so constant fields pass through unchanged.
    """
    if field.ndim != 3 or field.shape[2] != 2:
        raise ShapeError(f"field must be (H, W, 2), got {field.shape}")
    kernel = gaussian_kernel_1d(sigma)
    data = field.data
    for d in range(data.shape[2]):
        comp = data[..., d]
        comp = _convolve_axis_replicate(comp, kernel, axis=0)
        comp = _convolve_axis_replicate(comp, kernel, axis=1)
        data[..., d] = comp
