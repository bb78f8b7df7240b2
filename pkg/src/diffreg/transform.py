"""Parameterized displacement-field generators.

All generators emit (H, W, 2) fields in normalized coordinates and are
differentiable w.r.t. their parameters:

* linear models (rigid / similarity / affine) act about the grid center;
* kernel models expand a coarse control grid through a separable basis
  (B-spline of arbitrary order, or a compactly supported Wendland radial
  function) using fractionally-strided scattering, center-cropped to the
  image extent;
* dense models expose one vector per pixel;
* the diffeomorphic wrapper turns any generated field into a stationary
  velocity and exponentiates it by scaling and squaring.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DegenerateInputError, ParameterError, SizeError
from .image import Image, center_of_mass_normalized, identity_grid
from .tensor import (
    Tensor,
    component,
    cos,
    crop2d,
    sin,
    stack,
    take,
    transposed_conv2d,
)
from .warp import warp_field

LINEAR_MODES = ("rigid", "similarity", "affine")
BSPLINE_MAX_ORDER = 5


# ---------------------------------------------------------------------------
# linear transforms
# ---------------------------------------------------------------------------

class LinearTransform:
    """Rigid, similarity or affine motion in homogeneous normalized coords.

    The matrix is composed as translation . rotation . scale . shear, with
    parameters beyond the mode's degrees of freedom frozen at identity.
    """

    def __init__(self, mode: str):
        if mode not in LINEAR_MODES:
            raise ParameterError(f"unknown linear mode {mode!r}")
        self.mode = mode
        self.rotation = Tensor([0.0], (1,), requires_grad=True)
        self.translation = Tensor([0.0, 0.0], (2,), requires_grad=True)
        n_scale = 2 if mode == "affine" else 1
        self.scale = Tensor(np.ones(n_scale), requires_grad=(mode != "rigid"))
        self.shear = Tensor([0.0, 0.0], (2,), requires_grad=(mode == "affine"))

    def parameters(self):
        named = [("rotation", self.rotation), ("translation", self.translation)]
        if self.mode != "rigid":
            named.append(("scale", self.scale))
        if self.mode == "affine":
            named.append(("shear", self.shear))
        return named

    def matrix_entries(self):
        """The six affine entries (a00 a01 a02 a10 a11 a12) as scalar tensors."""
        c = cos(self.rotation)
        s = sin(self.rotation)
        sx = take(self.scale, 0)
        sy = take(self.scale, 1) if self.mode == "affine" else sx
        hx = take(self.shear, 0)
        hy = take(self.shear, 1)
        # rotation @ scale @ shear
        a00 = c * sx - s * sy * hy
        a01 = c * sx * hx - s * sy
        a10 = s * sx + c * sy * hy
        a11 = s * sx * hx + c * sy
        a02 = take(self.translation, 0)
        a12 = take(self.translation, 1)
        return a00, a01, a02, a10, a11, a12

    def displacement(self, size) -> Tensor:
        """f(x) = A x~ - x on the normalized identity grid."""
        grid = identity_grid(size)
        gx = component(grid, 0)
        gy = component(grid, 1)
        a00, a01, a02, a10, a11, a12 = self.matrix_entries()
        fx = gx * a00 + gy * a01 + a02 - gx
        fy = gx * a10 + gy * a11 + a12 - gy
        return stack([fx, fy])

    def init_translation(self, fixed: Image, moving: Image):
        """Start from the offset between the two centers of mass.

        Backward warping samples the moving image at x + f(x), so the
        translation that aligns the mass centers is com(moving) - com(fixed).
        """
        try:
            com_f = center_of_mass_normalized(fixed)
            com_m = center_of_mass_normalized(moving)
        except DegenerateInputError:
            raise
        self.translation.data[0] = com_m[0] - com_f[0]
        self.translation.data[1] = com_m[1] - com_f[1]
        return self

    def values(self) -> dict:
        out = {
            "rotation": float(self.rotation.data[0]),
            "translation": [float(v) for v in self.translation.data],
        }
        if self.mode != "rigid":
            out["scale"] = [float(v) for v in self.scale.data]
        if self.mode == "affine":
            out["shear"] = [float(v) for v in self.shear.data]
        return out


# ---------------------------------------------------------------------------
# interpolation kernels
# ---------------------------------------------------------------------------

def _cardinal_bspline(order: int, t: float) -> float:
    """Centered cardinal B-spline of the given order at t (unit knots)."""
    if order == 0:
        a = abs(t)
        if a < 0.5:
            return 1.0
        if a == 0.5:
            return 0.5  # split the box edge so even strides tile exactly
        return 0.0
    half = (order + 1) / 2.0
    return ((t + half) * _cardinal_bspline(order - 1, t + 0.5)
            + (half - t) * _cardinal_bspline(order - 1, t - 0.5)) / order


def bspline_kernel_1d(order: int, stride: int) -> Tensor:
    """Discrete B-spline basis sampled on the pixel grid.

    The continuous basis is the (order+1)-fold self-convolution of the box
    of width ``stride``; sampling it at integer pixel offsets keeps the
    partition of unity exact: shifted copies at spacing ``stride`` sum to 1.
    Extent is (order+1)*stride, padded to the next odd length.
    """
    order = int(order)
    stride = int(stride)
    if order < 0 or order > BSPLINE_MAX_ORDER:
        raise ParameterError(f"B-spline order {order} outside supported 0..{BSPLINE_MAX_ORDER}")
    if stride < 1:
        raise ParameterError("stride must be >= 1")
    extent = (order + 1) * stride
    if extent % 2 == 0:
        extent += 1
    offsets = np.arange(extent) - extent // 2
    values = np.array([_cardinal_bspline(order, o / stride) for o in offsets])
    return Tensor(values)


def bspline_kernel_2d(order: int, stride) -> Tensor:
    sy, sx = (stride, stride) if np.isscalar(stride) else (stride[0], stride[1])
    ky = bspline_kernel_1d(order, sy).data
    kx = bspline_kernel_1d(order, sx).data
    return Tensor(np.outer(ky, kx))


def wendland_psi(r):
    """Compactly supported C^4 radial profile: zero for r >= 1."""
    r = np.asarray(r, dtype=np.float64)
    return np.where(r < 1.0, (1.0 - r) ** 6 * (3.0 + 18.0 * r + 35.0 * r * r) / 3.0, 0.0)


def wendland_kernel_2d(sigma, support_px: int | None = None) -> Tensor:
    """Radial Wendland kernel sampled on the pixel grid.

    sigma scales the support per axis (a scalar gives an isotropic kernel);
    samples with radius >= 1 are exactly zero.
    """
    sy, sx = (sigma, sigma) if np.isscalar(sigma) else (sigma[0], sigma[1])
    sy, sx = float(sy), float(sx)
    if sy <= 0 or sx <= 0:
        raise ParameterError("sigma must be positive")
    if support_px is None:
        support_px = int(math.ceil(max(sy, sx)))
    half = int(support_px)
    offs = np.arange(-half, half + 1, dtype=np.float64)
    ry = (offs / sy)[:, None]
    rx = (offs / sx)[None, :]
    return Tensor(wendland_psi(np.hypot(ry, rx)))


# ---------------------------------------------------------------------------
# kernel (interpolating) transform
# ---------------------------------------------------------------------------

def control_grid_size(target: int, stride: int, kernel_extent: int) -> tuple[int, int]:
    """Smallest control count n (and centered crop offset) so every target
    pixel keeps full basis coverage after center-cropping."""
    K, s = int(kernel_extent), int(stride)
    n = max(1, (target + s - 1) // s)
    while True:
        full = (n - 1) * s + K
        if full >= target:
            c0 = (full - target) // 2
            if c0 >= max(0, K - s) and c0 + target <= n * s:
                return n, c0
        n += 1


class KernelTransform:
    """Control-point displacement model expanded by a fixed basis kernel."""

    def __init__(self, target_size, stride, kind="bspline", order=3, sigma=None):
        self.kind = kind
        self.order = int(order)
        sy, sx = (stride, stride) if np.isscalar(stride) else (int(stride[0]), int(stride[1]))
        if sy < 1 or sx < 1:
            raise ParameterError("stride must be >= 1")
        self.stride = (sy, sx)
        if kind == "bspline":
            self.kernel = bspline_kernel_2d(self.order, self.stride)
        elif kind == "wendland":
            if sigma is None:
                sigma = (2.0 * sy, 2.0 * sx)
            self.kernel = wendland_kernel_2d(sigma)
            self.sigma = sigma
        else:
            raise ParameterError(f"unknown kernel kind {kind!r}")
        H, W = int(target_size[0]), int(target_size[1])
        Kh, Kw = self.kernel.shape
        nh, self._crop_y = control_grid_size(H, sy, Kh)
        nw, self._crop_x = control_grid_size(W, sx, Kw)
        self.target_size = (H, W)
        self.control = Tensor(np.zeros((nh, nw, 2)), requires_grad=True)

    def parameters(self):
        return [("control", self.control)]

    def displacement(self, size=None) -> Tensor:
        size = self.target_size if size is None else (int(size[0]), int(size[1]))
        H, W = size
        nh, nw = self.control.shape[:2]
        Kh, Kw = self.kernel.shape
        full_h = (nh - 1) * self.stride[0] + Kh
        full_w = (nw - 1) * self.stride[1] + Kw
        if full_h < H or full_w < W:
            raise SizeError(
                f"control grid {nh}x{nw} too small for target {H}x{W}"
            )
        cy = (full_h - H) // 2
        cx = (full_w - W) // 2
        parts = []
        for d in range(2):
            dense = transposed_conv2d(component(self.control, d), self.kernel, self.stride)
            parts.append(crop2d(dense, cy, cx, H, W))
        return stack(parts)

    def resize_control(self, new_target_size):
        """Re-seat the control grid for a new image extent, resampling the
        current coefficients bilinearly (values are in normalized units and
        therefore carry over between resolutions)."""
        fresh = KernelTransform(new_target_size, self.stride, self.kind,
                                self.order, getattr(self, "sigma", None))
        old = self.control.data
        nh, nw = fresh.control.shape[:2]
        if (nh, nw) == old.shape[:2]:
            fresh.control.data[:] = old
        else:
            fresh.control.data[:] = _resize_bilinear(old, (nh, nw))
        return fresh


def _resize_bilinear(field: np.ndarray, new_hw) -> np.ndarray:
    """Align-corners bilinear resize of an (H, W, C) array."""
    H, W = field.shape[:2]
    nh, nw = int(new_hw[0]), int(new_hw[1])
    py = np.linspace(0, H - 1, nh)
    px = np.linspace(0, W - 1, nw)
    PX, PY = np.meshgrid(px, py)
    x0 = np.minimum(np.floor(PX).astype(np.intp), max(W - 2, 0))
    y0 = np.minimum(np.floor(PY).astype(np.intp), max(H - 2, 0))
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    wx = (PX - x0)[..., None]
    wy = (PY - y0)[..., None]
    out = ((field[y0, x0] * (1 - wx) + field[y0, x1] * wx) * (1 - wy)
           + (field[y1, x0] * (1 - wx) + field[y1, x1] * wx) * wy)
    return out


# ---------------------------------------------------------------------------
# dense transform
# ---------------------------------------------------------------------------

class DenseTransform:
    """One displacement vector per pixel; the generator is the identity."""

    def __init__(self, size):
        H, W = int(size[0]), int(size[1])
        self.field = Tensor(np.zeros((H, W, 2)), requires_grad=True)

    def parameters(self):
        return [("field", self.field)]

    def displacement(self, size=None) -> Tensor:
        if size is not None and tuple(size) != self.field.shape[:2]:
            raise SizeError(
                f"dense field is {self.field.shape[:2]}, requested {tuple(size)}"
            )
        return self.field

    def resize(self, new_size):
        fresh = DenseTransform(new_size)
        fresh.field.data[:] = _resize_bilinear(self.field.data, new_size)
        return fresh


# ---------------------------------------------------------------------------
# diffeomorphic wrapper: stationary velocity exponential
# ---------------------------------------------------------------------------

def default_squaring_steps(velocity: np.ndarray, size) -> int:
    """Smallest step count that halves the flow below half a pixel."""
    H, W = int(size[0]), int(size[1])
    vx_px = np.abs(velocity[..., 0]) * (W - 1) / 2.0
    vy_px = np.abs(velocity[..., 1]) * (H - 1) / 2.0
    peak = max(float(vx_px.max(initial=0.0)), float(vy_px.max(initial=0.0)))
    steps = 1
    while peak / (2.0 ** steps) >= 0.5 and steps < 16:
        steps += 1
    return steps


def diffeo_exp(velocity: Tensor, steps: int | None = None) -> Tensor:
    """Exponentiate a stationary velocity field by scaling and squaring.

    u <- v / 2^steps, then u <- u + u o (id + u) repeated ``steps`` times.
    Fully differentiable through every composition.
    """
    if steps is None:
        steps = default_squaring_steps(velocity.data, velocity.shape[:2])
    steps = int(steps)
    if steps < 1:
        raise ParameterError("steps must be >= 1")
    u = velocity * (1.0 / (2.0 ** steps))
    for _ in range(steps):
        u = u + warp_field(u, u)
    return u


def inverse_displacement(velocity: Tensor, steps: int | None = None) -> Tensor:
    """exp(-v): the inverse of the flow exp(v)."""
    return diffeo_exp(-velocity, steps)


def compose_displacements(f: Tensor, g: Tensor) -> Tensor:
    """Displacement of (id + f) o (id + g): g + f o (id + g)."""
    return g + warp_field(f, g)


def jacobian_determinant(field: np.ndarray) -> np.ndarray:
    """Finite-difference Jacobian determinant of id + field (interior).

    Derivatives are taken w.r.t. normalized coordinates so the identity has
    determinant exactly 1.
    """
    H, W = field.shape[:2]
    hx = 2.0 / (W - 1)
    hy = 2.0 / (H - 1)
    fx = field[..., 0]
    fy = field[..., 1]
    dfx_dx = np.gradient(fx, hx, axis=1)
    dfx_dy = np.gradient(fx, hy, axis=0)
    dfy_dx = np.gradient(fy, hx, axis=1)
    dfy_dy = np.gradient(fy, hy, axis=0)
    return (1.0 + dfx_dx) * (1.0 + dfy_dy) - dfx_dy * dfy_dx
