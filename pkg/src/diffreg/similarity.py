"""Differentiable image similarity measures: MSE, NCC, LCC, SSIM, MI, NGF.

Every measure is a loss to minimize (correlation-like quantities are
complemented) and respects the warp validity mask: invalid pixels are
excluded from sums and from the averaging cardinality, and both images are
zeroed outside the mask before any windowed or derivative computation, so
out-of-mask values can never leak into the result.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateInputError, ParameterError
from .image import Image
from .tensor import (
    Tensor,
    central_diff,
    clamp_min,
    conv2d,
    exp,
    log,
    matmul,
    reshape,
    sqrt,
    stack,
    sum_,
    transpose2d,
)
from .warp import WarpResult

_LOG_GUARD = 1e-10
_LCC_KAPPA = 1e-10


def _masked_inputs(warped: WarpResult, fixed: Image):
    if warped.warped.shape != fixed.size:
        raise DegenerateInputError(
            f"warped {warped.warped.shape} and fixed {fixed.size} differ"
        )
    n_valid = int(warped.mask.sum())
    if n_valid == 0:
        raise DegenerateInputError("validity mask is empty")
    mask_t = Tensor(warped.mask.astype(np.float64))
    return mask_t, n_valid


def mse(warped: WarpResult, fixed: Image) -> Tensor:
    """Mean squared intensity difference over valid pixels."""
    mask_t, n = _masked_inputs(warped, fixed)
    diff = (warped.warped - fixed.tensor) * mask_t
    return sum_(diff * diff) * (1.0 / n)


def ncc(warped: WarpResult, fixed: Image) -> Tensor:
    """1 - Pearson correlation coefficient over valid pixels."""
    mask_t, n = _masked_inputs(warped, fixed)
    a = warped.warped * mask_t
    b = fixed.tensor * mask_t
    mu_a = sum_(a) * (1.0 / n)
    mu_b = sum_(b) * (1.0 / n)
    da = (a - mu_a) * mask_t
    db = (b - mu_b) * mask_t
    var_a = sum_(da * da)
    var_b = sum_(db * db)
    if var_a.item() < 1e-15 or var_b.item() < 1e-15:
        raise DegenerateInputError("constant image: correlation undefined")
    rho = sum_(da * db) / sqrt(var_a * var_b)
    return 1.0 - rho


def _box_kernel(window: int) -> Tensor:
    return Tensor(np.full((window, window), 1.0 / (window * window)))


def _window_stats(a: Tensor, b: Tensor, window: int):
    box = _box_kernel(window)
    mu_a = conv2d(a, box)
    mu_b = conv2d(b, box)
    var_a = conv2d(a * a, box) - mu_a * mu_a
    var_b = conv2d(b * b, box) - mu_b * mu_b
    cov = conv2d(a * b, box) - mu_a * mu_b
    return mu_a, mu_b, var_a, var_b, cov


def _center_mask(mask: np.ndarray, window: int):
    half = window // 2
    H, W = mask.shape
    core = mask[half:H - half, half:W - half]
    n = int(core.sum())
    if n == 0:
        raise DegenerateInputError("validity mask is empty in the window interior")
    return Tensor(core.astype(np.float64)), n


def lcc(warped: WarpResult, fixed: Image, window: int = 9) -> Tensor:
    """1 - mean squared local correlation from box-window statistics."""
    window = int(window)
    if window < 3 or window % 2 == 0:
        raise ParameterError(f"window must be odd and >= 3, got {window}")
    mask_t, _ = _masked_inputs(warped, fixed)
    a = warped.warped * mask_t
    b = fixed.tensor * mask_t
    _, _, var_a, var_b, cov = _window_stats(a, b, window)
    # variances are floored at kappa so flat windows stay finite; above the
    # floor the ratio is the exact Cauchy-Schwarz quotient, which makes
    # warped == fixed a true stationary maximum
    rho2 = (cov * cov) / (clamp_min(var_a, _LCC_KAPPA) * clamp_min(var_b, _LCC_KAPPA))
    core, n = _center_mask(warped.mask, window)
    return 1.0 - sum_(rho2 * core) * (1.0 / n)


def _pow_factor(x: Tensor, e: float) -> Tensor:
    # integer exponents stay exact; fractional ones need a positive base
    if e == 1.0:
        return x
    if e == 0.0:
        return Tensor(np.ones(x.shape))
    if float(e).is_integer():
        return x ** float(e)
    return exp(log(clamp_min(x, 1e-12)) * float(e))


def ssim(warped: WarpResult, fixed: Image, window: int = 11,
         alpha: float = 1.0, beta: float = 1.0, gamma: float = 1.0,
         c1: float = 0.01 ** 2, c2: float = 0.03 ** 2,
         c3: float | None = None) -> Tensor:
    """1 - mean luminance^alpha * contrast^beta * structure^gamma."""
    window = int(window)
    if window < 3 or window % 2 == 0:
        raise ParameterError(f"window must be odd and >= 3, got {window}")
    if c3 is None:
        c3 = c2 / 2.0
    if c1 <= 0 or c2 <= 0 or c3 <= 0:
        raise ParameterError("stabilizing constants must be positive")
    mask_t, _ = _masked_inputs(warped, fixed)
    a = warped.warped * mask_t
    b = fixed.tensor * mask_t
    mu_a, mu_b, var_a, var_b, cov = _window_stats(a, b, window)
    sd_a = sqrt(clamp_min(var_a, 0.0) + 1e-16)
    sd_b = sqrt(clamp_min(var_b, 0.0) + 1e-16)
    lum = (mu_a * mu_b * 2.0 + c1) / (mu_a * mu_a + mu_b * mu_b + c1)
    con = (sd_a * sd_b * 2.0 + c2) / (var_a + var_b + c2)
    struct = (cov + c3) / (sd_a * sd_b + c3)
    value = _pow_factor(lum, alpha) * _pow_factor(con, beta) * _pow_factor(struct, gamma)
    core, n = _center_mask(warped.mask, window)
    return 1.0 - sum_(value * core) * (1.0 / n)


def mi(warped: WarpResult, fixed: Image, bins: int = 32,
       sigma: float | None = None) -> Tensor:
    """Negated mutual information from a Parzen soft joint histogram.

    Each valid pixel spreads Gaussian weight over bin centers on [0, 1];
    the joint density is the normalized weight outer product and the
    marginals are its row/column sums, which keeps the measure symmetric.
    """
    bins = int(bins)
    if bins < 8:
        raise ParameterError(f"bins must be >= 8, got {bins}")
    if sigma is None:
        sigma = 1.5 / bins
    sigma = float(sigma)
    if sigma <= 0:
        raise ParameterError("sigma must be positive")
    mask_t, _ = _masked_inputs(warped, fixed)
    H, W = fixed.size
    centers = (np.arange(bins) + 0.5) / bins
    inv = -0.5 / (sigma * sigma)

    def weights(img: Tensor) -> Tensor:
        cols = []
        for c in centers:
            d = img - float(c)
            cols.append(exp(d * d * inv) * mask_t)
        return reshape(stack(cols), (H * W, bins))

    wf = weights(fixed.tensor)
    wm = weights(warped.warped)
    joint = matmul(transpose2d(wf), wm)
    total = sum_(joint)
    if total.item() <= 0:
        raise DegenerateInputError("empty Parzen histogram")
    p_joint = joint / total
    ones = Tensor(np.ones((bins, 1)))
    p_f = matmul(p_joint, ones)
    p_m = matmul(transpose2d(p_joint), ones)

    def entropy(p: Tensor) -> Tensor:
        return -sum_(p * log(p + _LOG_GUARD))

    value = entropy(p_f) + entropy(p_m) - entropy(p_joint)
    return -value


def ngf(warped: WarpResult, fixed: Image, eta: float = 0.01) -> Tensor:
    """Mean squared cross product of edge-normalized image gradients.

    The gradient scale estimate comes from the fixed image:
    eps = eta * mean |grad I_F| over the (mask-zeroed) domain.
    """
    eta = float(eta)
    if eta < 0:
        raise ParameterError("eta must be >= 0")
    mask_t, n = _masked_inputs(warped, fixed)
    a = warped.warped * mask_t
    b = fixed.tensor * mask_t

    b_data = b.data
    gx = np.gradient(b_data, axis=1)
    gy = np.gradient(b_data, axis=0)
    eps = eta * float(np.hypot(gx, gy).mean())
    guard = eps * eps + 1e-16

    def normalized(img: Tensor):
        dx = central_diff(img, axis=1)
        dy = central_diff(img, axis=0)
        norm = sqrt(dx * dx + dy * dy + guard)
        return dx / norm, dy / norm

    ax, ay = normalized(a)
    bx, by = normalized(b)
    cross = ax * by - ay * bx
    return sum_(cross * cross * mask_t) * (1.0 / n)


MEASURES = {
    "mse": mse,
    "ncc": ncc,
    "lcc": lcc,
    "ssim": ssim,
    "mi": mi,
    "ngf": ngf,
}
