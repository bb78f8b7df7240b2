import numpy as np
import pytest

from diffreg import regularize as R
from diffreg import tensor as T
from diffreg.errors import ConfigError, ParameterError
from diffreg.image import identity_grid
from diffreg.transform import _resize_bilinear


def const_field(H, W, fx, fy):
    f = np.zeros((H, W, 2))
    f[..., 0] = fx
    f[..., 1] = fy
    return T.Tensor(f)


def smooth_field(H, W, amp, seed):
    rng = np.random.default_rng(seed)
    return T.Tensor(_resize_bilinear(rng.uniform(-amp, amp, (4, 4, 2)), (H, W)))


# ---------------------------------------------------------------------------
# diffusion
# ---------------------------------------------------------------------------

def test_diffusion_constant_zero():
    T.reset_tape()
    assert R.diffusion(const_field(6, 6, 0.3, -0.2)).item() == 0.0


def test_diffusion_ramp_closed_form():
    T.reset_tape()
    H = W = 9
    grid = identity_grid((H, W)).data
    f = np.zeros((H, W, 2))
    f[..., 0] = grid[..., 0]  # unit slope in normalized x
    step = 2.0 / (W - 1)
    # every x-difference equals the grid step, y-differences vanish
    assert R.diffusion(T.Tensor(f)).item() == pytest.approx(step ** 2, abs=1e-14)


def test_diffusion_quadratic_homogeneity():
    T.reset_tape()
    f = smooth_field(7, 7, 0.3, 0)
    v1 = R.diffusion(f).item()
    v2 = R.diffusion(f * 2.0).item()
    assert v2 == pytest.approx(4.0 * v1, rel=1e-12)


# ---------------------------------------------------------------------------
# anisotropic TV
# ---------------------------------------------------------------------------

def test_tv_aniso_constant_zero():
    T.reset_tape()
    assert R.tv_aniso(const_field(5, 5, 1.0, -1.0)).item() == 0.0


def test_tv_aniso_step_edge():
    T.reset_tape()
    H = W = 8
    f = np.zeros((H, W, 2))
    h = 0.4
    f[:, W // 2:, 0] = h  # vertical step edge in the x-component
    # oracle: direct summation of |forward differences|
    val = R.tv_aniso(T.Tensor(f)).item()
    assert val == pytest.approx(h * H / (H * W), abs=1e-14)


def test_tv_aniso_positive_homogeneity():
    T.reset_tape()
    f = smooth_field(6, 6, 0.5, 1)
    v1 = R.tv_aniso(f).item()
    v3 = R.tv_aniso(f * 3.0).item()
    assert v3 == pytest.approx(3.0 * v1, rel=1e-12)


# ---------------------------------------------------------------------------
# isotropic TV
# ---------------------------------------------------------------------------

def test_tv_iso_constant_near_zero():
    T.reset_tape()
    assert R.tv_iso(const_field(6, 6, 0.2, 0.1)).item() < 1e-5


def test_tv_iso_rotation_invariance_on_square():
    T.reset_tape()
    rng = np.random.default_rng(2)
    f = _resize_bilinear(rng.uniform(-0.5, 0.5, (4, 4, 2)), (8, 8))
    v0 = R.tv_iso(T.Tensor(f)).item()
    # rotate the grid by 90 degrees and the vector components with it
    rot = np.empty_like(f)
    rot[..., 0] = -np.rot90(f[..., 1])
    rot[..., 1] = np.rot90(f[..., 0])
    v1 = R.tv_iso(T.Tensor(rot)).item()
    assert v1 == pytest.approx(v0, rel=1e-6)


def test_tv_iso_below_tv_aniso():
    for seed in range(3):
        T.reset_tape()
        f = smooth_field(7, 7, 0.6, seed)
        assert R.tv_iso(f).item() <= R.tv_aniso(f).item() + 1e-9


# ---------------------------------------------------------------------------
# sparsity
# ---------------------------------------------------------------------------

def test_sparsity_zero_field():
    T.reset_tape()
    assert R.sparsity(const_field(5, 5, 0.0, 0.0)).item() == 0.0


def test_sparsity_single_pixel():
    T.reset_tape()
    f = np.zeros((5, 5, 2))
    f[2, 3] = [0.3, -0.4]
    assert R.sparsity(T.Tensor(f)).item() == pytest.approx(0.7 / 25.0, abs=1e-15)


def test_sparsity_triangle_inequality():
    T.reset_tape()
    a = smooth_field(6, 6, 0.4, 3)
    b = smooth_field(6, 6, 0.4, 4)
    s_ab = R.sparsity(a + b).item()
    assert s_ab <= R.sparsity(a).item() + R.sparsity(b).item() + 1e-12


# ---------------------------------------------------------------------------
# parameter regularizers
# ---------------------------------------------------------------------------

def test_param_l1_weighted():
    T.reset_tape()
    g = T.Tensor([1.0, -2.0], (2,))
    assert R.param_regularizer("param_l1", g, 0.5).item() == pytest.approx(1.5)


def test_param_l2_and_zero_params():
    T.reset_tape()
    zero = T.Tensor([0.0, 0.0], (2,))
    assert R.param_regularizer("param_l2", zero, 2.0).item() == 0.0
    g = T.Tensor([3.0, 4.0], (2,))
    assert R.param_regularizer("param_l2", g, 1.0).item() == pytest.approx(25.0)


def test_param_groups_additive():
    T.reset_tape()
    a = T.Tensor([1.0], (1,))
    b = T.Tensor([-2.0, 2.0], (2,))
    total = (R.param_regularizer("param_l1", a, 1.0)
             + R.param_regularizer("param_l1", b, 0.25))
    assert total.item() == pytest.approx(1.0 + 1.0)


def test_param_unknown_kind():
    with pytest.raises(ConfigError):
        R.param_regularizer("param_linf", T.Tensor([1.0], (1,)), 1.0)


# ---------------------------------------------------------------------------
# demons gaussian filter
# ---------------------------------------------------------------------------

def test_demons_filter_constant_unchanged():
    f = const_field(8, 8, 0.25, -0.1)
    R.demons_gaussian_filter(f, sigma=1.5)
    assert np.max(np.abs(f.data[..., 0] - 0.25)) < 1e-12
    assert np.max(np.abs(f.data[..., 1] + 0.1)) < 1e-12


def test_demons_filter_impulse_matches_gaussian():
    H = W = 33
    f = np.zeros((H, W, 2))
    f[H // 2, W // 2, 0] = 1.0
    t = T.Tensor(f)
    sigma = 2.0
    R.demons_gaussian_filter(t, sigma)
    k = R.gaussian_kernel_1d(sigma)
    expect = np.outer(k, k)
    r = k.size // 2
    got = t.data[H // 2 - r:H // 2 + r + 1, W // 2 - r:W // 2 + r + 1, 0]
    assert np.max(np.abs(got - expect)) < 1e-10


def test_demons_filter_preserves_interior_sum():
    rng = np.random.default_rng(5)
    H = W = 40
    f = np.zeros((H, W, 2))
    f[15:25, 15:25] = rng.uniform(-1, 1, (10, 10, 2))
    t = T.Tensor(f)
    before = t.data.sum()
    R.demons_gaussian_filter(t, sigma=1.0)
    assert t.data.sum() == pytest.approx(before, abs=1e-10)


def test_demons_filter_records_no_tape_nodes():
    T.reset_tape()
    field = T.Tensor(np.random.default_rng(6).uniform(-1, 1, (6, 6, 2)),
                     requires_grad=True)
    loss = T.sum_(T.square(field))
    T.backward(loss)
    grads_before = field.grad.copy()
    nodes_before = len(T.tape().nodes)
    R.demons_gaussian_filter(field, sigma=1.0)
    assert len(T.tape().nodes) == nodes_before
    assert np.array_equal(field.grad, grads_before)


def test_demons_filter_sigma_validation():
    with pytest.raises(ParameterError):
        R.demons_gaussian_filter(const_field(4, 4, 0, 0), sigma=0.0)


# ---------------------------------------------------------------------------
# shared properties
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("name", ["diffusion", "tv_aniso", "tv_iso", "sparsity"])
def test_regularizer_gradcheck(name):
    fn = R.FIELD_REGULARIZERS[name]
    # ramp bias keeps every finite difference away from the |.| kink so the
    # central-difference probe stays on one side of the subgradient point;
    # the small overall amplitude keeps finite-difference round-off noise
    # below the guarded denominator at elements whose true gradient is zero
    grid = identity_grid((6, 6)).data
    ramp = np.empty_like(grid)
    ramp[..., 0] = 0.003 * (grid[..., 0] + grid[..., 1])
    ramp[..., 1] = 0.003 * (grid[..., 0] - grid[..., 1])
    f0 = smooth_field(6, 6, 0.0002, 7).data + ramp + 0.001

    def f(ps):
        return fn(ps[0])

    p = T.Tensor(f0.copy(), requires_grad=True)
    assert T.gradcheck(f, [p]) < 1e-4, name


def test_lambda_scaling_affine():
    T.reset_tape()
    f = smooth_field(6, 6, 0.3, 8)
    base = R.diffusion(f).item()
    for lam in (0.0, 0.5, 2.0):
        T.reset_tape()
        val = (R.diffusion(f) * lam).item()
        assert val == pytest.approx(lam * base, rel=1e-12, abs=1e-15)
