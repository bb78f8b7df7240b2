"""Images with physical metadata, coordinate grids, pyramids, IO and phantoms.

Intensities are float64 in [0, 1] after loading. Normalized coordinates use
the align-corners convention: pixel (0, 0) maps to (-1, -1) and the opposite
corner to (+1, +1). Physical coordinates relate to pixels through spacing and
origin: x_phys = origin_x + j * spacing_x.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateInputError, FormatError, ParameterError, SizeError
from .tensor import Tensor


@dataclass
class Image:
    """2-d intensity image plus pixel spacing and origin (y, x order)."""

    tensor: Tensor
    spacing: tuple = (1.0, 1.0)
    origin: tuple = (0.0, 0.0)

    def __post_init__(self):
        if self.tensor.ndim != 2:
            raise SizeError(f"image tensor must be 2-d, got {self.tensor.shape}")
        self.spacing = (float(self.spacing[0]), float(self.spacing[1]))
        self.origin = (float(self.origin[0]), float(self.origin[1]))
        if self.spacing[0] <= 0 or self.spacing[1] <= 0:
            raise SizeError(f"spacing must be positive, got {self.spacing}")

    @property
    def size(self):
        return self.tensor.shape

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    def with_data(self, data: np.ndarray) -> "Image":
        return Image(Tensor(np.asarray(data, dtype=np.float64)), self.spacing, self.origin)


@dataclass
class LandmarkSet:
    """Ordered (x, y) physical points; order defines correspondence."""

    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        if pts.size and not np.isfinite(pts).all():
            raise FormatError("landmark coordinates must be finite")
        self.points = pts

    def __len__(self):
        return self.points.shape[0]


def identity_grid(size) -> Tensor:
    """(H, W, 2) grid of normalized (x, y) coordinates, corners exactly +-1."""
    H, W = int(size[0]), int(size[1])
    if H < 2 or W < 2:
        raise SizeError(f"grid extents must be >= 2, got ({H}, {W})")
    gx, gy = np.meshgrid(np.linspace(-1.0, 1.0, W), np.linspace(-1.0, 1.0, H))
    return Tensor(np.stack([gx, gy], axis=-1))


def downsample(image: Image, factor: int) -> Image:
    """Box-filter average over factor x factor blocks; spacing scales up."""
    factor = int(factor)
    if factor < 1:
        raise SizeError("factor must be >= 1")
    if factor == 1:
        return Image(Tensor(image.data.copy()), image.spacing, image.origin)
    H, W = image.size
    if H < 2 * factor or W < 2 * factor:
        raise SizeError(f"image {image.size} too small for factor {factor}")
    h, w = H // factor, W // factor
    cropped = image.data[:h * factor, :w * factor]
    blocks = cropped.reshape(h, factor, w, factor).mean(axis=(1, 3))
    spacing = (image.spacing[0] * factor, image.spacing[1] * factor)
    return Image(Tensor(blocks), spacing, image.origin)


def _bilinear_sample_array(data: np.ndarray, px: np.ndarray, py: np.ndarray,
                           fill: float = 0.0) -> np.ndarray:
    """Plain numpy bilinear lookup in pixel coordinates, fill outside."""
    H, W = data.shape
    inside = (px >= 0) & (px <= W - 1) & (py >= 0) & (py <= H - 1)
    cx = np.clip(px, 0, W - 1)
    cy = np.clip(py, 0, H - 1)
    x0 = np.minimum(np.floor(cx).astype(np.intp), W - 2)
    y0 = np.minimum(np.floor(cy).astype(np.intp), H - 2)
    wx = cx - x0
    wy = cy - y0
    top = data[y0, x0] * (1 - wx) + data[y0, x0 + 1] * wx
    bot = data[y0 + 1, x0] * (1 - wx) + data[y0 + 1, x0 + 1] * wx
    out = top * (1 - wy) + bot * wy
    return np.where(inside, out, fill)


def resample_to_common_domain(fixed: Image, moving: Image):
    """Put both images on one grid: min spacing, min origin, union extent."""
    spacing = (min(fixed.spacing[0], moving.spacing[0]),
               min(fixed.spacing[1], moving.spacing[1]))
    origin = (min(fixed.origin[0], moving.origin[0]),
              min(fixed.origin[1], moving.origin[1]))

    def upper(img, axis):
        return img.origin[axis] + (img.size[axis] - 1) * img.spacing[axis]

    top = (max(upper(fixed, 0), upper(moving, 0)),
           max(upper(fixed, 1), upper(moving, 1)))
    H = int(np.ceil((top[0] - origin[0]) / spacing[0] - 1e-9)) + 1
    W = int(np.ceil((top[1] - origin[1]) / spacing[1] - 1e-9)) + 1

    ys = origin[0] + spacing[0] * np.arange(H)
    xs = origin[1] + spacing[1] * np.arange(W)
    Y, X = np.meshgrid(ys, xs, indexing="ij")

    def onto(img):
        py = (Y - img.origin[0]) / img.spacing[0]
        px = (X - img.origin[1]) / img.spacing[1]
        data = _bilinear_sample_array(img.data, px, py, fill=0.0)
        return Image(Tensor(data), spacing, origin)

    return onto(fixed), onto(moving)


# ---------------------------------------------------------------------------
# file formats: PGM (P2/P5, 8/16 bit) and raw float64 with a JSON sidecar
# ---------------------------------------------------------------------------

def _read_pgm(path: Path) -> Image:
    raw = path.read_bytes()
    # tokenize header, skipping '#' comments
    tokens = []
    i = 0
    while len(tokens) < 4 and i < len(raw):
        if raw[i:i + 1].isspace():
            i += 1
            continue
        if raw[i:i + 1] == b"#":
            while i < len(raw) and raw[i] not in (10, 13):
                i += 1
            continue
        j = i
        while j < len(raw) and not raw[j:j + 1].isspace():
            j += 1
        tokens.append(raw[i:j])
        i = j
    if len(tokens) < 4:
        raise FormatError(f"{path}: truncated PGM header")
    magic = tokens[0]
    if magic not in (b"P2", b"P5"):
        raise FormatError(f"{path}: unknown magic {magic!r}")
    try:
        W, H, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError as e:
        raise FormatError(f"{path}: bad PGM header: {e}") from None
    if W < 1 or H < 1 or maxval < 1 or maxval > 65535:
        raise FormatError(f"{path}: invalid PGM dimensions/maxval")
    if magic == b"P5":
        body = raw[i + 1:]  # single whitespace byte after maxval
        if maxval > 255:
            need = H * W * 2
            if len(body) < need:
                raise FormatError(f"{path}: truncated PGM data")
            arr = np.frombuffer(body[:need], dtype=">u2").astype(np.float64)
        else:
            need = H * W
            if len(body) < need:
                raise FormatError(f"{path}: truncated PGM data")
            arr = np.frombuffer(body[:need], dtype=np.uint8).astype(np.float64)
    else:
        try:
            values = [int(v) for v in raw[i:].split()]
        except ValueError as e:
            raise FormatError(f"{path}: bad PGM sample: {e}") from None
        if len(values) < H * W:
            raise FormatError(f"{path}: truncated PGM data")
        arr = np.asarray(values[:H * W], dtype=np.float64)
    return Image(Tensor((arr / maxval).reshape(H, W)))


def _write_pgm(image: Image, path: Path, maxval: int = 255):
    if maxval not in (255, 65535):
        raise ParameterError("maxval must be 255 or 65535")
    data = np.clip(image.data, 0.0, 1.0)
    q = np.rint(data * maxval)
    header = f"P5\n{image.size[1]} {image.size[0]}\n{maxval}\n".encode()
    if maxval > 255:
        body = q.astype(">u2").tobytes()
    else:
        body = q.astype(np.uint8).tobytes()
    path.write_bytes(header + body)


def _read_raw(path: Path) -> Image:
    sidecar = path.with_suffix(".json")
    if not sidecar.exists():
        raise FormatError(f"{sidecar}: missing sidecar for {path}")
    try:
        meta = json.loads(sidecar.read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"{sidecar}: {e}") from None
    for key in ("size", "spacing", "origin", "dtype"):
        if key not in meta:
            raise FormatError(f"{sidecar}: missing field {key!r}")
    if meta["dtype"] != "f64le":
        raise FormatError(f"{sidecar}: unsupported dtype {meta['dtype']!r}")
    shape = tuple(int(v) for v in meta["size"])
    spacing = tuple(float(v) for v in meta["spacing"])
    if spacing[0] <= 0 or spacing[1] <= 0:
        raise FormatError(f"{sidecar}: spacing must be positive")
    origin = tuple(float(v) for v in meta["origin"])
    body = path.read_bytes()
    count = int(np.prod(shape))
    if len(body) != count * 8:
        raise FormatError(f"{path}: expected {count * 8} bytes, found {len(body)}")
    arr = np.frombuffer(body, dtype="<f8").reshape(shape)
    if len(shape) == 2:
        return Image(Tensor(arr.copy()), spacing, origin)
    raise FormatError(f"{path}: image payload must be 2-d, got {shape}")


def _write_raw(data: np.ndarray, path: Path, spacing, origin):
    meta = {
        "size": [int(s) for s in data.shape],
        "spacing": [float(spacing[0]), float(spacing[1])],
        "origin": [float(origin[0]), float(origin[1])],
        "dtype": "f64le",
    }
    path.with_suffix(".json").write_text(json.dumps(meta, indent=1) + "\n")
    path.write_bytes(np.ascontiguousarray(data, dtype="<f8").tobytes())


def load_image(path) -> Image:
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        return _read_pgm(path)
    if path.suffix.lower() == ".raw":
        return _read_raw(path)
    raise FormatError(f"{path}: unsupported image format {path.suffix!r}")


def save_image(image: Image, path, maxval: int = 255):
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        _write_pgm(image, path, maxval)
    elif path.suffix.lower() == ".raw":
        _write_raw(image.data, path, image.spacing, image.origin)
    else:
        raise FormatError(f"{path}: unsupported image format {path.suffix!r}")


def save_field(field_data: np.ndarray, path, spacing=(1.0, 1.0), origin=(0.0, 0.0)):
    """Displacement fields use the raw format with size [H, W, 2]."""
    if field_data.ndim != 3 or field_data.shape[2] != 2:
        raise SizeError(f"field must be (H, W, 2), got {field_data.shape}")
    _write_raw(field_data, Path(path), spacing, origin)


def load_field(path) -> np.ndarray:
    path = Path(path)
    sidecar = path.with_suffix(".json")
    meta = json.loads(sidecar.read_text())
    shape = tuple(int(v) for v in meta["size"])
    if len(shape) != 3 or shape[2] != 2:
        raise FormatError(f"{path}: field payload must be (H, W, 2), got {shape}")
    body = path.read_bytes()
    return np.frombuffer(body, dtype="<f8").reshape(shape).copy()


def load_landmarks(path) -> LandmarkSet:
    """CSV with two columns x,y in physical units; '#' lines are comments."""
    path = Path(path)
    points = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 2:
            raise FormatError(f"{path}:{lineno}: expected 2 columns, got {len(parts)}")
        try:
            points.append((float(parts[0]), float(parts[1])))
        except ValueError:
            raise FormatError(f"{path}:{lineno}: non-numeric field") from None
    return LandmarkSet(np.asarray(points, dtype=np.float64).reshape(-1, 2))


def save_landmarks(landmarks: LandmarkSet, path):
    lines = [f"{x:.10g},{y:.10g}" for x, y in landmarks.points]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


# ---------------------------------------------------------------------------
# synthetic phantoms
# ---------------------------------------------------------------------------

def _ramp(x):
    # linear 0..1 ramp of one-pixel width centred on the zero level set
    return np.clip(x + 0.5, 0.0, 1.0)


def make_phantom(kind: str, size: int, **params) -> Image:
    """Deterministic analytic test images with 1-px soft boundaries.

    Kinds: 'circle', 'c_shape', 'shaded_circle', 'checker'. Coordinates of
    centers/radii are in pixels; defaults scale with the image size.
    """
    size = int(size)
    if size < 16:
        raise SizeError("phantom size must be >= 16")
    yy, xx = np.meshgrid(np.arange(size, dtype=np.float64),
                         np.arange(size, dtype=np.float64), indexing="ij")
    cx = float(params.pop("cx", (size - 1) / 2.0))
    cy = float(params.pop("cy", (size - 1) / 2.0))

    if kind == "circle":
        radius = float(params.pop("radius", 0.25 * size))
        _reject_extra(kind, params)
        dist = np.hypot(xx - cx, yy - cy)
        data = _ramp(radius - dist)
    elif kind == "shaded_circle":
        radius = float(params.pop("radius", 0.25 * size))
        shade = float(params.pop("shade", 0.7))
        _reject_extra(kind, params)
        dist = np.hypot(xx - cx, yy - cy)
        inside = _ramp(radius - dist)
        data = inside * (1.0 - shade * np.clip(dist / radius, 0.0, 1.0))
    elif kind == "c_shape":
        radius = float(params.pop("radius", 0.32 * size))
        core = float(params.pop("core", 0.16 * size))
        half_angle = float(params.pop("half_angle", np.pi / 5.0))
        _reject_extra(kind, params)
        dist = np.hypot(xx - cx, yy - cy)
        ring = np.minimum(_ramp(radius - dist), _ramp(dist - core))
        # wedge opening toward +x: distance of the angle to the opening edge,
        # converted to pixels so the boundary ramp stays ~1 px wide
        ang = np.abs(np.arctan2(yy - cy, xx - cx))
        wedge = _ramp((ang - half_angle) * np.maximum(dist, 1.0))
        data = ring * wedge
    elif kind == "checker":
        tiles = int(params.pop("tiles", 8))
        _reject_extra(kind, params)
        if tiles < 2 or tiles > size // 2:
            raise ParameterError(f"checker tiles {tiles} out of range")
        tile = size / tiles
        ux, uy = xx / tile, yy / tile
        parity = ((np.floor(ux) + np.floor(uy)) % 2) * 2.0 - 1.0
        dx = tile * np.minimum(ux - np.floor(ux), np.ceil(ux) - ux)
        dy = tile * np.minimum(uy - np.floor(uy), np.ceil(uy) - uy)
        edge = np.clip(np.minimum(dx, dy), 0.0, 1.0)
        data = 0.5 + 0.5 * parity * edge
    else:
        raise ParameterError(f"unknown phantom kind {kind!r}")
    return Image(Tensor(data))


def _reject_extra(kind, params):
    if params:
        raise ParameterError(f"unknown parameters for {kind!r}: {sorted(params)}")


def checkerboard_compose(a: Image, b: Image, tiles: int = 8) -> Image:
    """Interleave two same-size images in a checkerboard for inspection."""
    if a.size != b.size:
        raise SizeError("images must share a size")
    H, W = a.size
    yy, xx = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    parity = ((yy * tiles // H) + (xx * tiles // W)) % 2
    return Image(Tensor(np.where(parity == 0, a.data, b.data)), a.spacing, a.origin)


def center_of_mass_normalized(image: Image):
    """Intensity-weighted centroid in normalized (x, y) coordinates."""
    total = image.data.sum()
    if total <= 0:
        raise DegenerateInputError("image has no positive intensity mass")
    H, W = image.size
    yy, xx = np.meshgrid(np.arange(H, dtype=np.float64),
                         np.arange(W, dtype=np.float64), indexing="ij")
    mx = float((image.data * xx).sum() / total)
    my = float((image.data * yy).sum() / total)
    return (2.0 * mx / (W - 1) - 1.0, 2.0 * my / (H - 1) - 1.0)


def physical_to_normalized(points: np.ndarray, image: Image) -> np.ndarray:
    """(x, y) physical -> normalized, align-corners."""
    H, W = image.size
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    nx = 2.0 * (pts[:, 0] - image.origin[1]) / ((W - 1) * image.spacing[1]) - 1.0
    ny = 2.0 * (pts[:, 1] - image.origin[0]) / ((H - 1) * image.spacing[0]) - 1.0
    return np.stack([nx, ny], axis=1)


def normalized_to_physical(points: np.ndarray, image: Image) -> np.ndarray:
    H, W = image.size
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    x = (pts[:, 0] + 1.0) * 0.5 * (W - 1) * image.spacing[1] + image.origin[1]
    y = (pts[:, 1] + 1.0) * 0.5 * (H - 1) * image.spacing[0] + image.origin[0]
    return np.stack([x, y], axis=1)
