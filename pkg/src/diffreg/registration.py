"""Registration driving: objective assembly, pyramid loops, evaluation.

Composes a transform model, backward warping, weighted similarity terms and
regularizers into a scalar objective, and minimizes it per pyramid level
(coarse to fine) with a fresh first-order optimizer per level. Linear
parameters carry over between levels verbatim; control grids and dense or
velocity fields are bilinearly resampled, which is exact for the constant
and low-frequency content that matters because all values live in
normalized coordinates.

The alternating scheme for dense fields runs a similarity-only objective
and smooths the parameter buffer with the non-differentiated Gaussian
filter after every step.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import optim, regularize, similarity, tensor
from .errors import ConfigError, DegenerateInputError, DivergenceError
from .image import (
    Image,
    LandmarkSet,
    downsample,
    normalized_to_physical,
    physical_to_normalized,
    resample_to_common_domain,
)
from .tensor import Tensor
from .transform import (
    DenseTransform,
    KernelTransform,
    LinearTransform,
    diffeo_exp,
    inverse_displacement,
    jacobian_determinant,
)
from .warp import WarpResult, warp_image

TRANSFORM_KINDS = ("rigid", "similarity", "affine", "bspline", "wendland", "dense")
PARAM_REG_KINDS = ("param_l1", "param_l2")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class LossSpec:
    kind: str
    weight: float = 1.0
    params: dict = field(default_factory=dict)


@dataclass
class RegularizerSpec:
    kind: str
    lam: float = 0.0
    target: str = "displacement"
    params: dict = field(default_factory=dict)


@dataclass
class TransformSpec:
    kind: str = "dense"
    order: int = 3
    stride: int = 16
    sigma: float | None = None
    diffeo: bool = False
    steps: int | None = None


@dataclass
class OptimizerSpec:
    kind: str = "adam"
    lr: float = 0.01
    iterations: tuple = (100,)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class InputSpec:
    fixed: str | None = None
    moving: str | None = None
    landmarks_fixed: str | None = None
    landmarks_moving: str | None = None


@dataclass
class RegistrationConfig:
    input: InputSpec = field(default_factory=InputSpec)
    transform: TransformSpec = field(default_factory=TransformSpec)
    losses: list = field(default_factory=lambda: [LossSpec("mse")])
    regularizers: list = field(default_factory=list)
    optimizer: OptimizerSpec = field(default_factory=OptimizerSpec)
    pyramid: tuple = (1,)
    output_dir: str | None = None
    seed: int = 0

    def validate(self):
        if len(self.pyramid) != len(self.optimizer.iterations):
            raise ConfigError(
                f"pyramid has {len(self.pyramid)} levels but iterations lists "
                f"{len(self.optimizer.iterations)}"
            )
        if any(f < 1 for f in self.pyramid):
            raise ConfigError("pyramid factors must be >= 1")
        if any(n < 0 for n in self.optimizer.iterations):
            raise ConfigError("iteration counts must be >= 0")
        if self.transform.kind not in TRANSFORM_KINDS:
            raise ConfigError(f"unknown transform kind {self.transform.kind!r}")
        for loss in self.losses:
            if loss.kind not in similarity.MEASURES:
                raise ConfigError(f"unknown similarity kind {loss.kind!r}")
            if not np.isfinite(loss.weight) or loss.weight < 0:
                raise ConfigError(f"loss {loss.kind!r}: weight must be finite and >= 0")
        for reg in self.regularizers:
            known = set(regularize.FIELD_REGULARIZERS) | set(PARAM_REG_KINDS) | {"demons_gaussian"}
            if reg.kind not in known:
                raise ConfigError(f"unknown regularizer kind {reg.kind!r}")
            if not np.isfinite(reg.lam) or reg.lam < 0:
                raise ConfigError(f"regularizer {reg.kind!r}: lambda must be finite and >= 0")
        return self


def _take_fields(section: dict, where: str, known: dict) -> dict:
    unknown = set(section) - set(known)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    out = {}
    for key, convert in known.items():
        if key in section:
            out[key] = convert(section[key]) if convert else section[key]
    return out


def parse_config(raw: dict) -> RegistrationConfig:
    """Build a validated config from plain JSON data; unknown keys error."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be an object")
    top = _take_fields(raw, "config", {
        "input": None, "transform": None, "losses": None, "regularizers": None,
        "optimizer": None, "pyramid": None, "output_dir": str, "seed": int,
    })

    cfg = RegistrationConfig()
    if "input" in top:
        cfg.input = InputSpec(**_take_fields(top["input"], "input", {
            "fixed": str, "moving": str, "landmarks_fixed": str, "landmarks_moving": str,
        }))
    if "transform" in top:
        fields_ = _take_fields(top["transform"], "transform", {
            "kind": str, "order": int, "stride": int, "sigma": float,
            "diffeo": bool, "steps": int,
        })
        cfg.transform = TransformSpec(**fields_)
    if "losses" in top:
        cfg.losses = []
        for i, entry in enumerate(top["losses"]):
            entry = dict(entry)
            kind = entry.pop("kind", None)
            if kind is None:
                raise ConfigError(f"losses[{i}]: missing 'kind'")
            weight = float(entry.pop("weight", 1.0))
            cfg.losses.append(LossSpec(kind=str(kind), weight=weight, params=entry))
    if "regularizers" in top:
        cfg.regularizers = []
        for i, entry in enumerate(top["regularizers"]):
            entry = dict(entry)
            kind = entry.pop("kind", None)
            if kind is None:
                raise ConfigError(f"regularizers[{i}]: missing 'kind'")
            lam = float(entry.pop("lambda", 0.0))
            target = str(entry.pop("target", "displacement"))
            cfg.regularizers.append(RegularizerSpec(kind=str(kind), lam=lam,
                                                    target=target, params=entry))
    if "optimizer" in top:
        fields_ = _take_fields(top["optimizer"], "optimizer", {
            "kind": str, "lr": float, "iterations": None,
            "beta1": float, "beta2": float, "eps": float,
        })
        if "iterations" in fields_:
            fields_["iterations"] = tuple(int(n) for n in fields_["iterations"])
        cfg.optimizer = OptimizerSpec(**fields_)
    if "pyramid" in top:
        cfg.pyramid = tuple(int(f) for f in top["pyramid"])
    if "output_dir" in top:
        cfg.output_dir = top["output_dir"]
    if "seed" in top:
        cfg.seed = top["seed"]
    return cfg.validate()


# ---------------------------------------------------------------------------
# transform lifecycle across pyramid levels
# ---------------------------------------------------------------------------

def build_transform(spec: TransformSpec, size):
    if spec.kind in ("rigid", "similarity", "affine"):
        return LinearTransform(spec.kind)
    if spec.kind in ("bspline", "wendland"):
        return KernelTransform(size, stride=spec.stride, kind=spec.kind,
                               order=spec.order, sigma=spec.sigma)
    if spec.kind == "dense":
        return DenseTransform(size)
    raise ConfigError(f"unknown transform kind {spec.kind!r}")


def _level_stride(spec: TransformSpec, factor: int):
    return max(1, int(round(spec.stride / factor)))


def _transform_for_level(spec: TransformSpec, prev, size, factor: int):
    """Create/carry the transform for a pyramid level."""
    if spec.kind in ("rigid", "similarity", "affine"):
        return prev if prev is not None else LinearTransform(spec.kind)
    if spec.kind == "dense":
        if prev is None:
            return DenseTransform(size)
        return prev.resize(size) if prev.field.shape[:2] != tuple(size) else prev
    # kernel transforms: stride follows the level so control spacing stays
    # constant in physical units
    stride = _level_stride(spec, factor)
    fresh = KernelTransform(size, stride=stride, kind=spec.kind,
                            order=spec.order, sigma=spec.sigma)
    if prev is not None:
        from .transform import _resize_bilinear
        if prev.control.shape == fresh.control.shape:
            fresh.control.data[:] = prev.control.data
        else:
            fresh.control.data[:] = _resize_bilinear(prev.control.data,
                                                     fresh.control.shape[:2])
    return fresh


# ---------------------------------------------------------------------------
# the objective of one iteration
# ---------------------------------------------------------------------------

def _loss_fn(spec: LossSpec):
    fn = similarity.MEASURES[spec.kind]
    return lambda res, fixed_img: fn(res, fixed_img, **spec.params)


def displacement_of(transform, spec: TransformSpec, size):
    """Raw generator field and the warp field (exponentiated when diffeo)."""
    raw = transform.displacement(size)
    if spec.diffeo:
        return raw, diffeo_exp(raw, spec.steps)
    return raw, raw


def objective(transform, spec: TransformSpec, losses, regularizers,
              fixed_img: Image, moving_img: Image):
    """Total loss tensor plus per-term float values and the warp result."""
    raw, disp = displacement_of(transform, spec, fixed_img.size)
    res = warp_image(moving_img, disp)
    named = dict(transform.parameters())
    total = None
    terms = {}
    for i, spec_l in enumerate(losses):
        value = _loss_fn(spec_l)(res, fixed_img)
        key = spec_l.kind if spec_l.kind not in terms else f"{spec_l.kind}#{i}"
        terms[key] = value.item()
        weighted = value * spec_l.weight
        total = weighted if total is None else total + weighted
    if total is None:
        raise ConfigError("at least one similarity term is required")
    for spec_r in regularizers:
        if spec_r.kind == "demons_gaussian":
            continue  # applied out-of-band, never part of the objective
        if spec_r.kind in PARAM_REG_KINDS:
            if spec_r.target not in named:
                raise ConfigError(
                    f"regularizer target {spec_r.target!r} is not a parameter "
                    f"group (have {sorted(named)})"
                )
            value = regularize.param_regularizer(spec_r.kind, named[spec_r.target], 1.0)
        else:
            value = regularize.FIELD_REGULARIZERS[spec_r.kind](raw)
        key = f"{spec_r.kind}:{spec_r.target}"
        terms[key] = value.item()
        total = total + value * spec_r.lam
    return total, terms, res


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

@dataclass
class RegistrationReport:
    objective_trace: list
    term_traces: dict
    level_sizes: list
    displacement: np.ndarray
    velocity: np.ndarray | None
    warped: np.ndarray
    mask: np.ndarray
    initial_mse: float
    final_mse: float
    msd_before: float | None
    msd_after: float | None
    seconds: float
    transform_values: dict | None

    def summary(self) -> dict:
        out = {
            "iterations": len(self.objective_trace),
            "initial_objective": self.objective_trace[0] if self.objective_trace else None,
            "final_objective": self.objective_trace[-1] if self.objective_trace else None,
            "initial_mse": self.initial_mse,
            "final_mse": self.final_mse,
            "runtime_seconds": self.seconds,
        }
        if self.msd_before is not None:
            out["landmark_msd_before"] = self.msd_before
            out["landmark_msd_after"] = self.msd_after
        if self.transform_values is not None:
            out["transform"] = self.transform_values
        return out


def masked_mse_value(warped: np.ndarray, fixed: np.ndarray, mask: np.ndarray) -> float:
    n = int(mask.sum())
    if n == 0:
        raise DegenerateInputError("validity mask is empty")
    d = (warped - fixed)[mask]
    return float((d * d).mean())


# ---------------------------------------------------------------------------
# landmark evaluation
# ---------------------------------------------------------------------------

def _sample_field_at(field: np.ndarray, pts_norm: np.ndarray) -> np.ndarray:
    """Bilinear field lookup at normalized (x, y) points, border-clamped."""
    H, W = field.shape[:2]
    px = np.clip((pts_norm[:, 0] + 1.0) * 0.5 * (W - 1), 0, W - 1)
    py = np.clip((pts_norm[:, 1] + 1.0) * 0.5 * (H - 1), 0, H - 1)
    x0 = np.minimum(np.floor(px).astype(np.intp), W - 2)
    y0 = np.minimum(np.floor(py).astype(np.intp), H - 2)
    wx = (px - x0)[:, None]
    wy = (py - y0)[:, None]
    return ((field[y0, x0] * (1 - wx) + field[y0, x0 + 1] * wx) * (1 - wy)
            + (field[y0 + 1, x0] * (1 - wx) + field[y0 + 1, x0 + 1] * wx) * wy)


def evaluate_landmarks(fixed_lms: LandmarkSet, moving_lms: LandmarkSet,
                       displacement: np.ndarray, fixed_meta: Image) -> float:
    """Mean squared distance between mapped fixed and moving landmarks.

    Fixed landmarks go to normalized coordinates, pick up the bilinearly
    sampled displacement there, and come back to physical units.
    """
    if len(fixed_lms) != len(moving_lms):
        raise DegenerateInputError(
            f"landmark counts differ: {len(fixed_lms)} vs {len(moving_lms)}"
        )
    if len(fixed_lms) == 0:
        raise DegenerateInputError("landmark sets are empty")
    pts = physical_to_normalized(fixed_lms.points, fixed_meta)
    mapped = pts + _sample_field_at(displacement, pts)
    phys = normalized_to_physical(mapped, fixed_meta)
    delta = phys - moving_lms.points
    return float((delta * delta).sum(axis=1).mean())


# ---------------------------------------------------------------------------
# registration drivers
# ---------------------------------------------------------------------------

def _maybe_resample(fixed: Image, moving: Image):
    same = (fixed.size == moving.size and fixed.spacing == moving.spacing
            and fixed.origin == moving.origin)
    return (fixed, moving) if same else resample_to_common_domain(fixed, moving)


def _zero_warp(moving: Image) -> WarpResult:
    H, W = moving.size
    return warp_image(moving, Tensor(np.zeros((H, W, 2))))


def _finish_report(transform, spec, fixed, moving, trace, term_traces,
                   level_sizes, t0, fixed_lms, moving_lms):
    tensor.reset_tape()
    raw, disp = displacement_of(transform, spec, fixed.size)
    res = warp_image(moving, disp)
    disp_data = disp.data.copy()
    warped_data = res.warped.data.copy()
    mask = res.mask.copy()

    initial = _zero_warp(moving)
    initial_mse = masked_mse_value(initial.warped.data, fixed.data, initial.mask)
    final_mse = masked_mse_value(warped_data, fixed.data, mask)

    msd_before = msd_after = None
    if fixed_lms is not None and moving_lms is not None:
        zero = np.zeros_like(disp_data)
        msd_before = evaluate_landmarks(fixed_lms, moving_lms, zero, fixed)
        msd_after = evaluate_landmarks(fixed_lms, moving_lms, disp_data, fixed)

    values = transform.values() if isinstance(transform, LinearTransform) else None
    velocity = raw.data.copy() if spec.diffeo else None
    tensor.reset_tape()
    return RegistrationReport(
        objective_trace=trace,
        term_traces=term_traces,
        level_sizes=level_sizes,
        displacement=disp_data,
        velocity=velocity,
        warped=warped_data,
        mask=mask,
        initial_mse=initial_mse,
        final_mse=final_mse,
        msd_before=msd_before,
        msd_after=msd_after,
        seconds=time.perf_counter() - t0,
        transform_values=values,
    )


def _append_terms(term_traces: dict, terms: dict):
    for key, value in terms.items():
        term_traces.setdefault(key, []).append(value)


def run_gradient_registration(config: RegistrationConfig, fixed: Image, moving: Image,
                              fixed_lms: LandmarkSet | None = None,
                              moving_lms: LandmarkSet | None = None,
                              initial_transform=None) -> RegistrationReport:
    """Pyramid-driven gradient minimization of the composed objective."""
    config.validate()
    for reg in config.regularizers:
        if reg.kind == "demons_gaussian":
            raise ConfigError("demons_gaussian runs under the alternating scheme; "
                              "use the demons driver")
    t0 = time.perf_counter()
    fixed, moving = _maybe_resample(fixed, moving)
    spec = config.transform
    transform = initial_transform
    trace = []
    term_traces = {}
    level_sizes = []

    for factor, iters in zip(config.pyramid, config.optimizer.iterations):
        f_img = downsample(fixed, factor)
        m_img = downsample(moving, factor)
        transform = _transform_for_level(spec, transform, f_img.size, factor)
        groups = [optim.ParamGroup(name, t, config.optimizer.lr)
                  for name, t in transform.parameters()]
        opt = _build_opt(config.optimizer, groups)
        level_sizes.append(tuple(f_img.size))
        for it in range(iters):
            tensor.reset_tape()
            optim.zero_grads(groups)
            loss, terms, _res = objective(transform, spec, config.losses,
                                          config.regularizers, f_img, m_img)
            value = loss.item()
            if not np.isfinite(value):
                raise DivergenceError(
                    f"objective became non-finite at iteration {len(trace)}",
                    iteration=len(trace),
                )
            trace.append(value)
            _append_terms(term_traces, terms)
            tensor.backward(loss)
            opt.step()

    if transform is None:
        transform = build_transform(spec, fixed.size)
    elif spec.kind != "dense" or transform.field.shape[:2] != fixed.size:
        transform = _transform_for_level(spec, transform, fixed.size, 1)
    return _finish_report(transform, spec, fixed, moving, trace, term_traces,
                          level_sizes, t0, fixed_lms, moving_lms)


def run_demons_registration(config: RegistrationConfig, fixed: Image, moving: Image,
                            fixed_lms: LandmarkSet | None = None,
                            moving_lms: LandmarkSet | None = None) -> RegistrationReport:
    """Alternating scheme: similarity gradient step, then Gaussian filtering.

    The filter runs outside the tape on the dense parameter buffer (the
    velocity when the diffeomorphic option is on); the objective carries no
    differentiable regularizer.
    """
    config.validate()
    if config.transform.kind != "dense":
        raise ConfigError("the alternating scheme needs the dense transform")
    demons = [r for r in config.regularizers if r.kind == "demons_gaussian"]
    others = [r for r in config.regularizers if r.kind != "demons_gaussian"]
    if not demons:
        raise ConfigError("demons driver needs a demons_gaussian regularizer")
    if others:
        raise ConfigError("the alternating scheme accepts no differentiable "
                          f"regularizers, got {[r.kind for r in others]}")
    sigma = float(demons[0].params.get("sigma", 2.0))

    t0 = time.perf_counter()
    fixed, moving = _maybe_resample(fixed, moving)
    spec = config.transform
    transform = None
    trace = []
    term_traces = {}
    level_sizes = []

    for factor, iters in zip(config.pyramid, config.optimizer.iterations):
        f_img = downsample(fixed, factor)
        m_img = downsample(moving, factor)
        transform = _transform_for_level(spec, transform, f_img.size, factor)
        groups = [optim.ParamGroup(name, t, config.optimizer.lr)
                  for name, t in transform.parameters()]
        opt = _build_opt(config.optimizer, groups)
        level_sizes.append(tuple(f_img.size))
        for it in range(iters):
            tensor.reset_tape()
            optim.zero_grads(groups)
            loss, terms, _res = objective(transform, spec, config.losses, [],
                                          f_img, m_img)
            value = loss.item()
            if not np.isfinite(value):
                raise DivergenceError(
                    f"objective became non-finite at iteration {len(trace)}",
                    iteration=len(trace),
                )
            trace.append(value)
            _append_terms(term_traces, terms)
            tensor.backward(loss)
            opt.step()
            regularize.demons_gaussian_filter(transform.field, sigma)

    if transform is None:
        transform = build_transform(spec, fixed.size)
    elif transform.field.shape[:2] != fixed.size:
        transform = _transform_for_level(spec, transform, fixed.size, 1)
    return _finish_report(transform, spec, fixed, moving, trace, term_traces,
                          level_sizes, t0, fixed_lms, moving_lms)


def _build_opt(spec: OptimizerSpec, groups):
    if spec.kind == "adam":
        return optim.Adam(groups, beta1=spec.beta1, beta2=spec.beta2, eps=spec.eps)
    if spec.kind == "gd":
        return optim.GradientDescent(groups)
    raise ConfigError(f"unknown optimizer {spec.kind!r}")


# ---------------------------------------------------------------------------
# gradient fidelity suite
# ---------------------------------------------------------------------------

def _smooth_noise(shape, seed, amp=1.0):
    from .transform import _resize_bilinear

    rng = np.random.default_rng(seed)
    channels = shape[2] if len(shape) > 2 else 1
    coarse = rng.uniform(-amp, amp, (4, 4, channels))
    out = _resize_bilinear(coarse, shape[:2])
    return out if len(shape) > 2 else out[..., 0]


def gradient_fidelity_suite(size: int = 12, eps: float = 1e-5) -> dict:
    """Finite-difference checks for every differentiable building block.

    Returns component name -> max relative gradient error on random smooth
    inputs of the given extent.
    """
    from . import warp as warp_mod
    from .image import identity_grid
    from .tensor import gradcheck, grid_sample_bilinear, mean, square
    from .transform import DenseTransform, KernelTransform, LinearTransform, diffeo_exp

    rng = np.random.default_rng(123)
    H = W = int(size)
    results = {}

    def textured(seed):
        base = _smooth_noise((H, W), seed)
        return Image(Tensor(base * 0.4 + 0.5 + rng.uniform(0, 0.05, (H, W))))

    moving = textured(1)
    fixed = textured(2)
    disp0 = _smooth_noise((H, W, 2), 3, amp=0.06)

    for name, fn in similarity.MEASURES.items():
        params = {"window": 5} if name in ("lcc", "ssim") else {}

        def f(ps, fn=fn, params=params):
            res = warp_image(moving, ps[0])
            return fn(res, fixed, **params)

        p = Tensor(disp0.copy(), requires_grad=True)
        results[f"similarity/{name}"] = gradcheck(f, [p], eps)

    # small amplitudes keep |.| kinks away from the probe and finite-
    # difference round-off below the guarded denominator
    grid = identity_grid((H, W)).data
    ramp = np.empty_like(grid)
    ramp[..., 0] = 0.003 * (grid[..., 0] + grid[..., 1])
    ramp[..., 1] = 0.003 * (grid[..., 0] - grid[..., 1])
    reg_field = _smooth_noise((H, W, 2), 4, amp=0.0002) + ramp
    for name, fn in regularize.FIELD_REGULARIZERS.items():
        p = Tensor(reg_field.copy(), requires_grad=True)
        results[f"regularizer/{name}"] = gradcheck(lambda ps, fn=fn: fn(ps[0]), [p], eps)

    target = Tensor(_smooth_noise((H, W, 2), 5, amp=0.05))

    def field_loss(t):
        return mean(square(t.displacement((H, W)) - target))

    for mode in ("rigid", "similarity", "affine"):
        t = LinearTransform(mode)
        t.rotation.data[0] = 0.05
        t.translation.data[:] = [0.02, -0.03]
        if mode != "rigid":
            t.scale.data[:] = 1.04
        if mode == "affine":
            t.shear.data[:] = [0.02, 0.01]
        params = [p for _, p in t.parameters()]
        results[f"transform/{mode}"] = gradcheck(
            lambda ps, t=t: field_loss(t), params, eps)

    for kind, kwargs in (("bspline", {"order": 3}), ("wendland", {"sigma": 4.0})):
        t = KernelTransform((H, W), stride=4, kind=kind, **kwargs)
        t.control.data[:] = rng.uniform(-0.05, 0.05, t.control.data.shape)
        results[f"transform/{kind}"] = gradcheck(
            lambda ps, t=t: field_loss(t), [t.control], eps)

    dense = DenseTransform((H, W))
    dense.field.data[:] = _smooth_noise((H, W, 2), 6, amp=0.05)
    results["transform/dense"] = gradcheck(
        lambda ps: field_loss(dense), [dense.field], eps)

    vel = Tensor(_smooth_noise((H, W, 2), 7, amp=0.04), requires_grad=True)
    results["transform/diffeo_exp"] = gradcheck(
        lambda ps: mean(square(diffeo_exp(ps[0], steps=3) - target)), [vel], eps)

    img = Tensor(rng.uniform(0, 1, (H, W)))
    grid_t = Tensor(identity_grid((H, W)).data + _smooth_noise((H, W, 2), 8, amp=0.05),
                    requires_grad=True)
    results["tensor/grid_sample"] = gradcheck(
        lambda ps: mean(square(grid_sample_bilinear(img, ps[0]))), [grid_t], eps)

    return results


def reconstruct_moving(report: RegistrationReport, spec: TransformSpec,
                       moving: Image) -> np.ndarray:
    """Warp the warped image back through exp(-v); needs a diffeo run."""
    if report.velocity is None:
        raise ConfigError("reconstruction needs a diffeomorphic run")
    tensor.reset_tape()
    inv = inverse_displacement(Tensor(report.velocity), spec.steps)
    back = warp_image(Image(Tensor(report.warped), moving.spacing, moving.origin), inv)
    out = back.warped.data.copy()
    tensor.reset_tape()
    return out


def interior_jacobian(report: RegistrationReport) -> np.ndarray:
    return jacobian_determinant(report.displacement)[2:-2, 2:-2]
