"""Dense float64 tensors with a reverse-mode automatic-differentiation tape.

Every operation that participates in an objective has an exact hand-written
adjoint. Operations record a node on the active tape only when at least one
input requires a gradient; ``backward`` replays the tape in reverse recording
order (which is a valid topological order for eagerly built graphs) and
accumulates gradients additively into every reachable tensor that requires
them.

The tape is module-global and is meant to live for one objective evaluation:
optimization loops call :func:`reset_tape` once per iteration so the previous
graph can be garbage collected.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, EvaluationError, ShapeError, SizeError


class Tape:
    """Ordered record of operations; inputs of a node always precede it."""

    __slots__ = ("nodes",)

    def __init__(self):
        self.nodes = []


class Node:
    __slots__ = ("inputs", "vjp", "out")

    def __init__(self, inputs, vjp, out):
        self.inputs = inputs  # tuple of Tensor
        self.vjp = vjp        # grad_out ndarray -> tuple of ndarray/None per input
        self.out = out


_tape = Tape()


def tape() -> Tape:
    return _tape


def reset_tape() -> Tape:
    """Install a fresh tape (one per objective evaluation) and return it."""
    global _tape
    _tape = Tape()
    return _tape


def _check_shape(shape):
    shape = tuple(int(s) for s in shape)
    if len(shape) == 0 or any(s < 1 for s in shape):
        raise SizeError(f"invalid shape {shape}: every extent must be >= 1")
    return shape


class Tensor:
    """Row-major float64 array plus gradient slot and tape-node reference."""

    __slots__ = ("data", "requires_grad", "grad", "node")

    def __init__(self, data, shape=None, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        if shape is not None:
            shape = _check_shape(shape)
            if arr.size != int(np.prod(shape)):
                raise SizeError(
                    f"data length {arr.size} does not match shape {shape}"
                )
            arr = arr.reshape(shape)
        else:
            _check_shape(arr.shape if arr.ndim > 0 else (0,))
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self.node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        if self.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self):
        if self.grad is not None:
            self.grad.fill(0.0)
        elif self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # arithmetic operators (python scalars are wrapped as constants)
    def __add__(self, other):
        return add(self, as_tensor(other))

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, as_tensor(other))

    def __rmul__(self, other):
        return mul(as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, as_tensor(other))

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __pow__(self, other):
        return pow_(self, as_tensor(other))

    def __neg__(self):
        return neg(self)

    def sum(self):
        return sum_(self)

    def mean(self):
        return mean(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sqrt(self):
        return sqrt(self)

    def abs(self):
        return abs_(self)

    def square(self):
        return square(self)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if np.isscalar(x):
        return Tensor([float(x)], (1,))
    return Tensor(np.asarray(x, dtype=np.float64))


def constant(data, shape=None) -> Tensor:
    return Tensor(data, shape, requires_grad=False)


def zeros(shape, requires_grad=False) -> Tensor:
    return Tensor(np.zeros(_check_shape(shape)), requires_grad=requires_grad)


def full(shape, value, requires_grad=False) -> Tensor:
    return Tensor(np.full(_check_shape(shape), float(value)), requires_grad=requires_grad)


def _record(out: Tensor, inputs, vjp):
    if any(t.requires_grad for t in inputs):
        out.requires_grad = True
        node = Node(tuple(inputs), vjp, out)
        out.node = node
        _tape.nodes.append(node)
    return out


# ---------------------------------------------------------------------------
# elementwise binary operations (equal shapes, or one single-element operand)
# ---------------------------------------------------------------------------

def _binary_shapes(a: Tensor, b: Tensor):
    if a.shape == b.shape:
        return a.shape
    if a.size == 1 or b.size == 1:
        return b.shape if a.size == 1 else a.shape
    raise ShapeError(f"incompatible shapes {a.shape} and {b.shape}")


def _reduce_like(g: np.ndarray, t: Tensor) -> np.ndarray:
    # collapse the broadcast gradient back onto a single-element operand
    if g.shape == t.shape:
        return g
    return np.full(t.shape, g.sum())


def add(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b)
    out = Tensor(a.data + b.data)

    def vjp(g):
        return (_reduce_like(g, a) if a.requires_grad else None,
                _reduce_like(g, b) if b.requires_grad else None)

    return _record(out, (a, b), vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b)
    out = Tensor(a.data - b.data)

    def vjp(g):
        return (_reduce_like(g, a) if a.requires_grad else None,
                _reduce_like(-g, b) if b.requires_grad else None)

    return _record(out, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b)
    out = Tensor(a.data * b.data)
    ad, bd = a.data, b.data

    def vjp(g):
        return (_reduce_like(g * bd, a) if a.requires_grad else None,
                _reduce_like(g * ad, b) if b.requires_grad else None)

    return _record(out, (a, b), vjp)


def div(a: Tensor, b: Tensor) -> Tensor:
    # division by zero propagates non-finite values; callers guard
    _binary_shapes(a, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = Tensor(a.data / b.data)
    ad, bd = a.data, b.data

    def vjp(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            ga = _reduce_like(g / bd, a) if a.requires_grad else None
            gb = _reduce_like(-g * ad / (bd * bd), b) if b.requires_grad else None
        return (ga, gb)

    return _record(out, (a, b), vjp)


def pow_(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = Tensor(a.data ** b.data)
    ad, bd, od = a.data, b.data, out.data

    def vjp(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            ga = _reduce_like(g * bd * ad ** (bd - 1.0), a) if a.requires_grad else None
            # gradient w.r.t. the exponent needs a strictly positive base
            gb = _reduce_like(g * od * np.log(ad), b) if b.requires_grad else None
        return (ga, gb)

    return _record(out, (a, b), vjp)


# ---------------------------------------------------------------------------
# elementwise unary operations
# ---------------------------------------------------------------------------

def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data)
    return _record(out, (a,), lambda g: (-g,))


def exp(a: Tensor) -> Tensor:
    out = Tensor(np.exp(a.data))
    od = out.data
    return _record(out, (a,), lambda g: (g * od,))


def log(a: Tensor) -> Tensor:
    # strictly positive inputs are the caller's responsibility
    with np.errstate(divide="ignore", invalid="ignore"):
        out = Tensor(np.log(a.data))
    ad = a.data

    def vjp(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            return (g / ad,)

    return _record(out, (a,), vjp)


def sqrt(a: Tensor) -> Tensor:
    with np.errstate(invalid="ignore"):
        out = Tensor(np.sqrt(a.data))
    od = out.data

    def vjp(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            return (g * 0.5 / od,)

    return _record(out, (a,), vjp)


def abs_(a: Tensor) -> Tensor:
    # subgradient 0 at 0 (np.sign(0) == 0)
    out = Tensor(np.abs(a.data))
    ad = a.data
    return _record(out, (a,), lambda g: (g * np.sign(ad),))


def square(a: Tensor) -> Tensor:
    out = Tensor(a.data * a.data)
    ad = a.data
    return _record(out, (a,), lambda g: (g * 2.0 * ad,))


def sin(a: Tensor) -> Tensor:
    out = Tensor(np.sin(a.data))
    ad = a.data
    return _record(out, (a,), lambda g: (g * np.cos(ad),))


def cos(a: Tensor) -> Tensor:
    out = Tensor(np.cos(a.data))
    ad = a.data
    return _record(out, (a,), lambda g: (-g * np.sin(ad),))


def clamp_min(a: Tensor, floor: float) -> Tensor:
    """max(a, floor) with gradient passed through only where a > floor."""
    out = Tensor(np.maximum(a.data, float(floor)))
    gate = a.data > float(floor)
    return _record(out, (a,), lambda g: (g * gate,))


# ---------------------------------------------------------------------------
# reductions (scalar result, shape (1,))
# ---------------------------------------------------------------------------

def sum_(a: Tensor) -> Tensor:
    out = Tensor([a.data.sum()], (1,))
    shape = a.shape
    return _record(out, (a,), lambda g: (np.full(shape, g.reshape(-1)[0]),))


def mean(a: Tensor) -> Tensor:
    out = Tensor([a.data.mean()], (1,))
    shape, n = a.shape, a.size
    return _record(out, (a,), lambda g: (np.full(shape, g.reshape(-1)[0] / n),))


# ---------------------------------------------------------------------------
# structural operations
# ---------------------------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    shape = _check_shape(shape)
    if int(np.prod(shape)) != a.size:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}")
    out = Tensor(a.data.reshape(shape))
    old = a.shape
    return _record(out, (a,), lambda g: (g.reshape(old),))


def stack(tensors) -> Tensor:
    """Stack same-shaped tensors along a new last axis."""
    tensors = list(tensors)
    base = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != base:
            raise ShapeError("stack requires identical shapes")
    out = Tensor(np.stack([t.data for t in tensors], axis=-1))

    def vjp(g):
        return tuple(g[..., i] if t.requires_grad else None
                     for i, t in enumerate(tensors))

    return _record(out, tuple(tensors), vjp)


def component(a: Tensor, index: int) -> Tensor:
    """Select one slice of the last axis; inverse of stack."""
    if a.ndim < 2:
        raise ShapeError("component requires ndim >= 2")
    out = Tensor(np.ascontiguousarray(a.data[..., index]))
    shape, idx = a.shape, index

    def vjp(g):
        full_g = np.zeros(shape)
        full_g[..., idx] = g
        return (full_g,)

    return _record(out, (a,), vjp)


def take(a: Tensor, index: int) -> Tensor:
    """Single element by flat index, as a scalar-shaped tensor."""
    flat = a.data.reshape(-1)
    if not 0 <= index < flat.size:
        raise SizeError(f"index {index} out of range for size {flat.size}")
    out = Tensor([flat[index]], (1,))
    shape, idx = a.shape, index

    def vjp(g):
        full_g = np.zeros(shape)
        full_g.reshape(-1)[idx] = g.reshape(-1)[0]
        return (full_g,)

    return _record(out, (a,), vjp)


def crop2d(a: Tensor, top: int, left: int, height: int, width: int) -> Tensor:
    if a.ndim != 2:
        raise ShapeError("crop2d expects a 2-d tensor")
    H, W = a.shape
    if top < 0 or left < 0 or top + height > H or left + width > W:
        raise SizeError(f"crop [{top}:{top+height}, {left}:{left+width}] exceeds {a.shape}")
    out = Tensor(np.ascontiguousarray(a.data[top:top + height, left:left + width]))

    def vjp(g):
        full_g = np.zeros((H, W))
        full_g[top:top + height, left:left + width] = g
        return (full_g,)

    return _record(out, (a,), vjp)


def transpose2d(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError("transpose2d expects a 2-d tensor")
    out = Tensor(np.ascontiguousarray(a.data.T))
    return _record(out, (a,), lambda g: (np.ascontiguousarray(g.T),))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)
    ad, bd = a.data, b.data

    def vjp(g):
        return (g @ bd.T if a.requires_grad else None,
                ad.T @ g if b.requires_grad else None)

    return _record(out, (a, b), vjp)


# ---------------------------------------------------------------------------
# finite-difference stencils (linear operators with hand adjoints)
# ---------------------------------------------------------------------------

def forward_diff(a: Tensor, axis: int) -> Tensor:
    """Forward difference along axis; the last line reuses the backward one.

    Output has the same shape as the input, so d[k] = a[k+1] - a[k] for
    k < n-1 and d[n-1] = a[n-1] - a[n-2].
    """
    if a.ndim != 2:
        raise ShapeError("forward_diff expects a 2-d tensor")
    if axis not in (0, 1):
        raise ShapeError("axis must be 0 or 1")
    x = a.data if axis == 0 else a.data.T
    n = x.shape[0]
    if n < 2:
        raise SizeError("forward_diff needs extent >= 2")
    d = np.empty_like(x)
    d[:n - 1] = x[1:] - x[:n - 1]
    d[n - 1] = x[n - 1] - x[n - 2]
    out = Tensor(np.ascontiguousarray(d if axis == 0 else d.T))

    def vjp(g):
        gg = g if axis == 0 else g.T
        gx = np.zeros_like(gg)
        # interior rows: d[k] = x[k+1] - x[k]
        gx[1:n] += gg[:n - 1]
        gx[:n - 1] -= gg[:n - 1]
        # border row: d[n-1] = x[n-1] - x[n-2]
        gx[n - 1] += gg[n - 1]
        gx[n - 2] -= gg[n - 1]
        return (np.ascontiguousarray(gx if axis == 0 else gx.T),)

    return _record(out, (a,), vjp)


def central_diff(a: Tensor, axis: int) -> Tensor:
    """Central difference along axis, one-sided at the two borders."""
    if a.ndim != 2:
        raise ShapeError("central_diff expects a 2-d tensor")
    if axis not in (0, 1):
        raise ShapeError("axis must be 0 or 1")
    x = a.data if axis == 0 else a.data.T
    n = x.shape[0]
    if n < 2:
        raise SizeError("central_diff needs extent >= 2")
    d = np.empty_like(x)
    d[1:n - 1] = 0.5 * (x[2:] - x[:n - 2])
    d[0] = x[1] - x[0]
    d[n - 1] = x[n - 1] - x[n - 2]
    out = Tensor(np.ascontiguousarray(d if axis == 0 else d.T))

    def vjp(g):
        gg = g if axis == 0 else g.T
        gx = np.zeros_like(gg)
        gx[2:] += 0.5 * gg[1:n - 1]
        gx[:n - 2] -= 0.5 * gg[1:n - 1]
        gx[1] += gg[0]
        gx[0] -= gg[0]
        gx[n - 1] += gg[n - 1]
        gx[n - 2] -= gg[n - 1]
        return (np.ascontiguousarray(gx if axis == 0 else gx.T),)

    return _record(out, (a,), vjp)


# ---------------------------------------------------------------------------
# convolution (cross-correlation, no kernel flip)
# ---------------------------------------------------------------------------

def _pair(v):
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def _conv2d_forward(x: np.ndarray, k: np.ndarray, stride, padding):
    sy, sx = stride
    py, px = padding
    if py or px:
        x = np.pad(x, ((py, py), (px, px)))
    H, W = x.shape
    Kh, Kw = k.shape
    oh = (H - Kh) // sy + 1
    ow = (W - Kw) // sx + 1
    if Kh > H or Kw > W or oh < 1 or ow < 1:
        raise ShapeError(
            f"kernel {k.shape} larger than padded input {x.shape}"
        )
    win = np.lib.stride_tricks.sliding_window_view(x, (Kh, Kw))[::sy, ::sx]
    out = np.einsum("ijuv,uv->ij", win, k, optimize=True)
    return out, x  # padded input is reused by the adjoints


def conv2d(a: Tensor, kernel: Tensor, stride=1, padding=0) -> Tensor:
    """2-d cross-correlation with stride and zero padding.

    The adjoint w.r.t. the input is the matching fractionally-strided
    scatter; the adjoint w.r.t. the kernel correlates the saved input with
    the upstream gradient.
    """
    if a.ndim != 2 or kernel.ndim != 2:
        raise ShapeError("conv2d expects 2-d input and kernel")
    stride = _pair(stride)
    padding = _pair(padding)
    if stride[0] < 1 or stride[1] < 1:
        raise ShapeError("stride components must be >= 1")
    out_data, padded = _conv2d_forward(a.data, kernel.data, stride, padding)
    out = Tensor(out_data)
    kd = kernel.data
    sy, sx = stride
    py, px = padding
    H, W = a.shape
    Kh, Kw = kd.shape
    oh, ow = out_data.shape

    def vjp(g):
        ga = None
        if a.requires_grad:
            gx = np.zeros_like(padded)
            for u in range(Kh):
                for v in range(Kw):
                    gx[u:u + oh * sy:sy, v:v + ow * sx:sx] += g * kd[u, v]
            ga = gx[py:py + H, px:px + W] if (py or px) else gx
        gk = None
        if kernel.requires_grad:
            win = np.lib.stride_tricks.sliding_window_view(padded, (Kh, Kw))[::sy, ::sx]
            gk = np.einsum("ijuv,ij->uv", win, g, optimize=True)
        return (ga, gk)

    return _record(out, (a, kernel), vjp)


def transposed_conv2d(a: Tensor, kernel: Tensor, stride=1) -> Tensor:
    """Fractionally-strided upsampling: scatter kernel*value at stride offsets.

    Output extent is (h-1)*stride + K per axis; the exact adjoint is conv2d
    with the same kernel and stride.
    """
    if a.ndim != 2 or kernel.ndim != 2:
        raise ShapeError("transposed_conv2d expects 2-d input and kernel")
    sy, sx = _pair(stride)
    if sy < 1 or sx < 1:
        raise ShapeError("stride components must be >= 1")
    h, w = a.shape
    Kh, Kw = kernel.shape
    oh = (h - 1) * sy + Kh
    ow = (w - 1) * sx + Kw
    ad, kd = a.data, kernel.data
    out_data = np.zeros((oh, ow))
    # scatter over whichever index set is smaller
    if h * w <= Kh * Kw:
        for i in range(h):
            for j in range(w):
                out_data[i * sy:i * sy + Kh, j * sx:j * sx + Kw] += ad[i, j] * kd
    else:
        for u in range(Kh):
            for v in range(Kw):
                out_data[u:u + h * sy:sy, v:v + w * sx:sx] += ad * kd[u, v]
    out = Tensor(out_data)

    def vjp(g):
        ga = None
        if a.requires_grad:
            win = np.lib.stride_tricks.sliding_window_view(g, (Kh, Kw))[::sy, ::sx]
            ga = np.einsum("ijuv,uv->ij", win, kd, optimize=True)
        gk = None
        if kernel.requires_grad:
            win = np.lib.stride_tricks.sliding_window_view(g, (Kh, Kw))[::sy, ::sx]
            gk = np.einsum("ijuv,ij->uv", win, ad, optimize=True)
        return (ga, gk)

    return _record(out, (a, kernel), vjp)


# ---------------------------------------------------------------------------
# bilinear grid sampling (align-corners, border-clamped)
# ---------------------------------------------------------------------------

def grid_sample_bilinear(image: Tensor, grid: Tensor) -> Tensor:
    """Sample image at normalized grid positions with bilinear weights.

    grid is (H, W, 2) carrying (x, y) in [-1, 1]; corners map to image
    corners (align-corners convention). Out-of-range positions clamp to the
    border, which makes the fill smooth; masking such points is the caller's
    business. Differentiable w.r.t. both image and grid; the grid adjoint
    is zero on the clamp plateau.
    """
    if image.ndim != 2:
        raise ShapeError("grid_sample_bilinear expects a 2-d image")
    if grid.ndim != 3 or grid.shape[2] != 2:
        raise ShapeError("grid must be (H, W, 2)")
    H, W = image.shape
    if H < 2 or W < 2:
        raise ShapeError("image extents must be >= 2 for bilinear sampling")
    gh, gw, _ = grid.shape
    gx = grid.data[..., 0]
    gy = grid.data[..., 1]
    # normalized -> pixel coordinates; snap float noise so identity grids
    # reproduce the image bit-exactly at grid points
    px = (gx + 1.0) * 0.5 * (W - 1)
    py = (gy + 1.0) * 0.5 * (H - 1)
    rx = np.rint(px)
    ry = np.rint(py)
    px = np.where(np.abs(px - rx) < 1e-9, rx, px)
    py = np.where(np.abs(py - ry) < 1e-9, ry, py)
    px = np.clip(px, 0.0, W - 1.0)
    py = np.clip(py, 0.0, H - 1.0)
    x0 = np.floor(px).astype(np.intp)
    y0 = np.floor(py).astype(np.intp)
    x0 = np.minimum(x0, W - 2) if W > 1 else x0
    y0 = np.minimum(y0, H - 2) if H > 1 else y0
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    wx = px - x0
    wy = py - y0

    img = image.data
    v00 = img[y0, x0]
    v01 = img[y0, x1]
    v10 = img[y1, x0]
    v11 = img[y1, x1]
    top = v00 * (1.0 - wx) + v01 * wx
    bot = v10 * (1.0 - wx) + v11 * wx
    out = Tensor(top * (1.0 - wy) + bot * wy)

    # interior flags: gradient w.r.t. the grid vanishes on the clamp plateau
    in_x = (gx > -1.0) & (gx < 1.0)
    in_y = (gy > -1.0) & (gy < 1.0)

    def vjp(g):
        gi = None
        if image.requires_grad:
            w00 = g * (1.0 - wx) * (1.0 - wy)
            w01 = g * wx * (1.0 - wy)
            w10 = g * (1.0 - wx) * wy
            w11 = g * wx * wy
            flat = np.zeros(H * W)
            n = H * W
            flat += np.bincount((y0 * W + x0).ravel(), w00.ravel(), minlength=n)
            flat += np.bincount((y0 * W + x1).ravel(), w01.ravel(), minlength=n)
            flat += np.bincount((y1 * W + x0).ravel(), w10.ravel(), minlength=n)
            flat += np.bincount((y1 * W + x1).ravel(), w11.ravel(), minlength=n)
            gi = flat.reshape(H, W)
        gg = None
        if grid.requires_grad:
            dpx = (v01 - v00) * (1.0 - wy) + (v11 - v10) * wy
            dpy = (v10 - v00) * (1.0 - wx) + (v11 - v01) * wx
            gg = np.zeros((gh, gw, 2))
            gg[..., 0] = g * dpx * 0.5 * (W - 1) * in_x
            gg[..., 1] = g * dpy * 0.5 * (H - 1) * in_y
        return (gi, gg)

    return _record(out, (image, grid), vjp)


# ---------------------------------------------------------------------------
# reverse pass and the finite-difference harness
# ---------------------------------------------------------------------------

def backward(loss: Tensor):
    """Accumulate d loss / d tensor into .grad for every reachable tensor.

    Repeated calls on the same tape accumulate additively; zero grads
    between iterations.
    """
    if loss.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
    adjoint = {id(loss): [loss, np.ones_like(loss.data)]}
    for node in reversed(_tape.nodes):
        g = adjoint.get(id(node.out))
        if g is None:
            continue
        grads = node.vjp(g[1])
        for t, gt in zip(node.inputs, grads):
            if gt is None or not t.requires_grad:
                continue
            slot = adjoint.get(id(t))
            if slot is None:
                adjoint[id(t)] = [t, np.array(gt, dtype=np.float64, copy=True)]
            else:
                slot[1] += gt
    for t, g in adjoint.values():
        if t.requires_grad:
            if t.grad is None:
                t.grad = np.zeros_like(t.data)
            t.grad += g


def gradcheck(f, params, eps=1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    f maps the list of parameter tensors to a scalar tensor. Elements whose
    current value is exactly zero are skipped, so subgradient conventions
    (|x| at 0) do not produce false alarms. Relative error uses the guarded
    denominator max(1e-8, |g_ad| + |g_fd|).
    """
    global _tape
    params = list(params)
    saved = _tape  # evaluate on private tapes, restore afterwards
    try:
        ad_grads = []
        reset_tape()
        for p in params:
            p.zero_grad()
        value = f(params)
        if value.size != 1:
            raise ContractError("gradcheck target must return a scalar")
        if not np.isfinite(value.data).all():
            raise EvaluationError("gradcheck target evaluated to a non-finite value")
        backward(value)
        for p in params:
            ad_grads.append(p.grad.copy() if p.grad is not None else np.zeros_like(p.data))

        worst = 0.0
        for p, g_ad in zip(params, ad_grads):
            flat = p.data.reshape(-1)
            gf = np.zeros_like(flat)
            for i in range(flat.size):
                if flat[i] == 0.0:
                    gf[i] = g_ad.reshape(-1)[i]  # skipped
                    continue
                orig = flat[i]
                flat[i] = orig + eps
                reset_tape()
                hi = f(params).item()
                flat[i] = orig - eps
                reset_tape()
                lo = f(params).item()
                flat[i] = orig
                if not (np.isfinite(hi) and np.isfinite(lo)):
                    raise EvaluationError("non-finite value during finite differencing")
                gf[i] = (hi - lo) / (2.0 * eps)
            ga = g_ad.reshape(-1)
            denom = np.maximum(1e-8, np.abs(ga) + np.abs(gf))
            err = np.abs(ga - gf) / denom
            mask = flat != 0.0
            if mask.any():
                worst = max(worst, float(err[mask].max()))
        return worst
    finally:
        _tape = saved
