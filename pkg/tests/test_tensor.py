import numpy as np
import pytest

from diffreg import tensor as T
from diffreg.errors import ContractError, ShapeError, SizeError


def fresh():
    T.reset_tape()


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------

def conv2d_loops(x, k, stride=(1, 1), padding=(0, 0)):
    """Quadruple-loop cross-correlation, the independent reference."""
    sy, sx = stride
    py, px = padding
    if py or px:
        x = np.pad(x, ((py, py), (px, px)))
    H, W = x.shape
    Kh, Kw = k.shape
    oh = (H - Kh) // sy + 1
    ow = (W - Kw) // sx + 1
    out = np.zeros((oh, ow))
    for i in range(oh):
        for j in range(ow):
            for u in range(Kh):
                for v in range(Kw):
                    out[i, j] += x[i * sy + u, j * sx + v] * k[u, v]
    return out


def tconv2d_loops(x, k, stride=(1, 1)):
    sy, sx = stride
    h, w = x.shape
    Kh, Kw = k.shape
    out = np.zeros(((h - 1) * sy + Kh, (w - 1) * sx + Kw))
    for i in range(h):
        for j in range(w):
            for u in range(Kh):
                for v in range(Kw):
                    out[i * sy + u, j * sx + v] += x[i, j] * k[u, v]
    return out


def bilinear_at(img, x_norm, y_norm):
    """Closed-form bilinear evaluation at one normalized point."""
    H, W = img.shape
    px = min(max((x_norm + 1.0) * 0.5 * (W - 1), 0.0), W - 1.0)
    py = min(max((y_norm + 1.0) * 0.5 * (H - 1), 0.0), H - 1.0)
    x0 = min(int(np.floor(px)), W - 2)
    y0 = min(int(np.floor(py)), H - 2)
    wx = px - x0
    wy = py - y0
    return ((img[y0, x0] * (1 - wx) + img[y0, x0 + 1] * wx) * (1 - wy)
            + (img[y0 + 1, x0] * (1 - wx) + img[y0 + 1, x0 + 1] * wx) * wy)


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------

def test_create_basic():
    t = T.Tensor([1, 2, 3, 4], (2, 2))
    assert t.shape == (2, 2)
    assert t.grad is None
    assert not t.requires_grad


def test_create_scalar_with_grad_slot():
    t = T.Tensor([0.0], (1,), requires_grad=True)
    assert t.grad is not None and t.grad.shape == (1,)


def test_create_rejects_zero_extent():
    with pytest.raises(SizeError):
        T.Tensor([], (0,))


def test_create_rejects_length_mismatch():
    with pytest.raises(SizeError):
        T.Tensor([1, 2, 3], (2, 2))


# ---------------------------------------------------------------------------
# binary / unary / reduce examples
# ---------------------------------------------------------------------------

def test_add_values():
    fresh()
    out = T.Tensor([1, 2], (2,)) + T.Tensor([3, 4], (2,))
    assert np.array_equal(out.data, [4, 6])


def test_mul_product_rule():
    fresh()
    x = T.Tensor([2.0], (1,), requires_grad=True)
    y = T.Tensor([5.0], (1,), requires_grad=True)
    T.backward(x * y)
    assert x.grad[0] == 5.0
    assert y.grad[0] == 2.0


def test_pow_gradient():
    fresh()
    x = T.Tensor([3.0], (1,), requires_grad=True)
    T.backward(x ** 2.0)
    assert x.grad[0] == pytest.approx(6.0)


def test_incompatible_shapes_raise():
    with pytest.raises(ShapeError):
        T.add(T.zeros((2, 3)), T.zeros((3, 2)))


def test_scalar_broadcast_both_sides():
    fresh()
    a = T.Tensor([[1.0, 2.0], [3.0, 4.0]], requires_grad=True)
    s = T.Tensor([2.0], (1,), requires_grad=True)
    T.backward(T.sum_(a * s))
    assert np.array_equal(a.grad, np.full((2, 2), 2.0))
    assert s.grad[0] == pytest.approx(10.0)


def test_exp_unit():
    fresh()
    x = T.Tensor([0.0], (1,), requires_grad=True)
    out = T.exp(x)
    assert out.data[0] == 1.0
    T.backward(out)
    assert x.grad[0] == 1.0


def test_abs_subgradient_zero_at_zero():
    fresh()
    x = T.Tensor([-2.0, 0.0, 3.0], (3,), requires_grad=True)
    out = T.abs_(x)
    assert np.array_equal(out.data, [2, 0, 3])
    T.backward(T.sum_(out))
    assert np.array_equal(x.grad, [-1.0, 0.0, 1.0])


def test_sqrt_gradient():
    fresh()
    x = T.Tensor([4.0], (1,), requires_grad=True)
    out = T.sqrt(x)
    assert out.data[0] == 2.0
    T.backward(out)
    assert x.grad[0] == pytest.approx(0.25)


def test_sum_and_mean():
    fresh()
    x = T.Tensor([1.0, 2.0, 3.0], (3,), requires_grad=True)
    assert T.sum_(x).item() == 6.0
    m = T.mean(x)
    assert m.item() == pytest.approx(2.0)
    T.backward(m)
    assert np.allclose(x.grad, 1.0 / 3.0)


def test_mean_of_ones():
    fresh()
    assert T.mean(T.Tensor(np.ones((4, 4)))).item() == 1.0


def test_div_by_zero_propagates_nonfinite():
    fresh()
    out = T.Tensor([1.0], (1,)) / T.Tensor([0.0], (1,))
    assert not np.isfinite(out.data[0])


# ---------------------------------------------------------------------------
# conv2d / transposed_conv2d
# ---------------------------------------------------------------------------

def test_conv2d_mean_kernel():
    fresh()
    out = T.conv2d(T.Tensor(np.ones((3, 3))), T.Tensor(np.full((3, 3), 1.0 / 9.0)))
    assert out.shape == (1, 1)
    assert out.data[0, 0] == pytest.approx(1.0)


def test_conv2d_matches_loop_oracle():
    fresh()
    rng = np.random.default_rng(0)
    x = np.arange(16.0).reshape(4, 4)
    k = rng.uniform(-1, 1, (3, 3))
    got = T.conv2d(T.Tensor(x), T.Tensor(k)).data
    assert np.max(np.abs(got - conv2d_loops(x, k))) < 1e-12


def test_conv2d_all_small_shapes_match_oracle():
    fresh()
    rng = np.random.default_rng(7)
    for H in range(1, 9):
        for Kh in range(1, min(H, 5) + 1):
            x = rng.uniform(-1, 1, (H, H))
            k = rng.uniform(-1, 1, (Kh, Kh))
            for stride in (1, 2):
                for pad in (0, 1):
                    Hp = H + 2 * pad
                    if Kh > Hp or (Hp - Kh) // stride + 1 < 1:
                        continue
                    got = T.conv2d(T.Tensor(x), T.Tensor(k), stride, pad).data
                    ref = conv2d_loops(x, k, (stride, stride), (pad, pad))
                    assert np.max(np.abs(got - ref)) < 1e-12


def test_conv2d_oversized_kernel_raises():
    with pytest.raises(ShapeError):
        T.conv2d(T.zeros((2, 2)), T.zeros((4, 4)))


def test_conv2d_input_gradient_matches_fd():
    fresh()
    rng = np.random.default_rng(1)
    k = T.Tensor(rng.uniform(-1, 1, (3, 3)))

    def f(params):
        return T.sum_(T.conv2d(params[0], k, stride=1, padding=1))

    x = T.Tensor(rng.uniform(-1, 1, (5, 5)), requires_grad=True)
    assert T.gradcheck(f, [x]) < 1e-6


def test_conv2d_kernel_gradient_matches_fd():
    fresh()
    rng = np.random.default_rng(2)
    x = T.Tensor(rng.uniform(-1, 1, (6, 6)))

    def f(params):
        return T.sum_(T.square(T.conv2d(x, params[0], stride=2)))

    k = T.Tensor(rng.uniform(-1, 1, (3, 3)), requires_grad=True)
    assert T.gradcheck(f, [k]) < 1e-6


def test_tconv_single_point_scatter():
    fresh()
    out = T.transposed_conv2d(T.Tensor([[1.0]]), T.Tensor([[1.0, 2.0], [3.0, 4.0]]))
    assert np.array_equal(out.data, [[1, 2], [3, 4]])


def test_tconv_matches_loop_oracle():
    fresh()
    rng = np.random.default_rng(3)
    for shape, ksz, s in [((3, 3), 3, 2), ((4, 2), 4, 3), ((2, 5), 2, 1)]:
        x = rng.uniform(-1, 1, shape)
        k = rng.uniform(-1, 1, (ksz, ksz))
        got = T.transposed_conv2d(T.Tensor(x), T.Tensor(k), s).data
        assert np.max(np.abs(got - tconv2d_loops(x, k, (s, s)))) < 1e-12


def test_conv_tconv_adjoint_dot_product():
    # <conv(a, k), b> == <a, tconv(b, k)> for matching geometry
    rng = np.random.default_rng(4)
    for s in (1, 2, 3):
        k = rng.uniform(-1, 1, (3, 3))
        a_shape = (3 - 1) * s + 3  # so conv output is 3x3
        a = rng.uniform(-1, 1, (a_shape, a_shape))
        b = rng.uniform(-1, 1, (3, 3))
        fresh()
        conv_a = T.conv2d(T.Tensor(a), T.Tensor(k), s).data
        tconv_b = T.transposed_conv2d(T.Tensor(b), T.Tensor(k), s).data
        lhs = float(np.sum(conv_a * b))
        rhs = float(np.sum(a * tconv_b))
        assert abs(lhs - rhs) < 1e-10


def test_tconv_gradient_matches_fd():
    fresh()
    rng = np.random.default_rng(5)
    k = T.Tensor(rng.uniform(-1, 1, (3, 3)))

    def f(params):
        return T.sum_(T.square(T.transposed_conv2d(params[0], k, 2)))

    x = T.Tensor(rng.uniform(-1, 1, (3, 3)), requires_grad=True)
    assert T.gradcheck(f, [x]) < 1e-6


# ---------------------------------------------------------------------------
# grid sampling
# ---------------------------------------------------------------------------

def identity_grid_array(H, W):
    gx, gy = np.meshgrid(np.linspace(-1, 1, W), np.linspace(-1, 1, H))
    return np.stack([gx, gy], axis=-1)


def test_grid_sample_identity_is_exact():
    fresh()
    rng = np.random.default_rng(6)
    img = rng.uniform(0, 1, (5, 7))
    out = T.grid_sample_bilinear(T.Tensor(img), T.Tensor(identity_grid_array(5, 7)))
    assert np.array_equal(out.data, img)


def test_grid_sample_one_pixel_shift_on_ramp():
    fresh()
    W = 6
    img = np.tile(np.arange(float(W)), (W, 1))
    grid = identity_grid_array(W, W)
    grid[..., 0] += 2.0 / (W - 1)  # one pixel in +x
    out = T.grid_sample_bilinear(T.Tensor(img), T.Tensor(grid)).data
    assert np.allclose(out[:, :-1], img[:, 1:], atol=1e-12)


def test_grid_sample_matches_pointwise_oracle():
    fresh()
    rng = np.random.default_rng(8)
    img = rng.uniform(0, 1, (6, 6))
    grid = identity_grid_array(6, 6) + rng.uniform(-0.3, 0.3, (6, 6, 2))
    out = T.grid_sample_bilinear(T.Tensor(img), T.Tensor(grid)).data
    for i in range(6):
        for j in range(6):
            assert out[i, j] == pytest.approx(
                bilinear_at(img, grid[i, j, 0], grid[i, j, 1]), abs=1e-12)


def test_grid_sample_grid_gradient_matches_fd():
    fresh()
    rng = np.random.default_rng(9)
    img = T.Tensor(rng.uniform(0, 1, (6, 6)))
    base = identity_grid_array(6, 6) + rng.uniform(-0.05, 0.05, (6, 6, 2))

    def f(params):
        return T.sum_(T.square(T.grid_sample_bilinear(img, params[0])))

    grid = T.Tensor(base, requires_grad=True)
    assert T.gradcheck(f, [grid]) < 1e-5


def test_grid_sample_image_gradient_matches_fd():
    fresh()
    rng = np.random.default_rng(10)
    grid = T.Tensor(identity_grid_array(5, 5) + rng.uniform(-0.1, 0.1, (5, 5, 2)))

    def f(params):
        return T.sum_(T.square(T.grid_sample_bilinear(params[0], grid)))

    img = T.Tensor(rng.uniform(0, 1, (5, 5)), requires_grad=True)
    assert T.gradcheck(f, [img]) < 1e-6


# ---------------------------------------------------------------------------
# backward contract
# ---------------------------------------------------------------------------

def test_backward_zero_at_mse_minimum():
    fresh()
    x = T.Tensor(np.ones((3, 3)), requires_grad=True)
    y = T.Tensor(np.ones((3, 3)))
    T.backward(T.mean(T.square(x - y)))
    assert np.all(x.grad == 0.0)


def test_backward_constant_scale():
    fresh()
    x = T.Tensor(np.arange(4.0), (4,), requires_grad=True)
    T.backward(T.sum_(x * 2.0))
    assert np.array_equal(x.grad, np.full(4, 2.0))


def test_backward_composed_loss_matches_fd():
    fresh()
    rng = np.random.default_rng(11)
    y = T.Tensor(rng.uniform(-1, 1, (8, 8)))

    def f(params):
        x = params[0]
        return T.mean(T.square(T.exp(x * 0.3) - y)) + T.sum_(T.abs_(x)) * 0.1

    x = T.Tensor(rng.uniform(0.1, 1, (8, 8)), requires_grad=True)
    assert T.gradcheck(f, [x]) < 1e-5


def test_backward_rejects_nonscalar():
    fresh()
    x = T.Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ContractError):
        T.backward(x + x)


def test_backward_twice_doubles_gradients():
    fresh()
    x = T.Tensor([3.0], (1,), requires_grad=True)
    loss = T.sum_(T.square(x))
    T.backward(loss)
    once = x.grad.copy()
    T.backward(loss)
    assert np.array_equal(x.grad, 2.0 * once)


def test_gradient_accumulates_across_consumers():
    fresh()
    x = T.Tensor([2.0], (1,), requires_grad=True)
    y = x * 3.0
    T.backward(T.sum_(y + y))
    assert x.grad[0] == pytest.approx(6.0)


# ---------------------------------------------------------------------------
# structural ops
# ---------------------------------------------------------------------------

def test_stack_component_roundtrip_gradients():
    fresh()
    a = T.Tensor(np.ones((3, 3)), requires_grad=True)
    b = T.Tensor(np.zeros((3, 3)), requires_grad=True)
    s = T.stack([a, b])
    assert s.shape == (3, 3, 2)
    T.backward(T.sum_(T.component(s, 0) * 2.0 + T.component(s, 1) * 5.0))
    assert np.all(a.grad == 2.0)
    assert np.all(b.grad == 5.0)


def test_take_and_crop_gradients():
    fresh()
    x = T.Tensor(np.arange(16.0).reshape(4, 4), requires_grad=True)
    c = T.crop2d(x, 1, 1, 2, 2)
    assert np.array_equal(c.data, [[5, 6], [9, 10]])
    T.backward(T.sum_(c) + T.take(x, 0) * 10.0)
    expect = np.zeros((4, 4))
    expect[1:3, 1:3] = 1.0
    expect[0, 0] = 10.0
    assert np.array_equal(x.grad, expect)


def test_matmul_values_and_gradcheck():
    fresh()
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    b = np.array([[5.0, 6.0], [7.0, 8.0]])
    assert np.array_equal(T.matmul(T.Tensor(a), T.Tensor(b)).data, a @ b)

    rng = np.random.default_rng(12)
    bb = T.Tensor(rng.uniform(-1, 1, (4, 3)))

    def f(params):
        return T.sum_(T.square(T.matmul(params[0], bb)))

    aa = T.Tensor(rng.uniform(-1, 1, (3, 4)), requires_grad=True)
    assert T.gradcheck(f, [aa]) < 1e-6


def test_diff_stencils_gradcheck_and_values():
    fresh()
    ramp = np.tile(np.arange(5.0), (5, 1))
    fd = T.forward_diff(T.Tensor(ramp), axis=1)
    assert np.allclose(fd.data, 1.0)
    cd = T.central_diff(T.Tensor(ramp), axis=1)
    assert np.allclose(cd.data, 1.0)

    rng = np.random.default_rng(13)

    def f_fd(params):
        return T.sum_(T.square(T.forward_diff(params[0], 0)))

    def f_cd(params):
        return T.sum_(T.square(T.central_diff(params[0], 1)))

    x = T.Tensor(rng.uniform(-1, 1, (5, 6)), requires_grad=True)
    assert T.gradcheck(f_fd, [x]) < 1e-6
    x2 = T.Tensor(rng.uniform(-1, 1, (5, 6)), requires_grad=True)
    assert T.gradcheck(f_cd, [x2]) < 1e-6


# ---------------------------------------------------------------------------
# gradcheck harness contract
# ---------------------------------------------------------------------------

def test_gradcheck_simple_quadratic():
    rng = np.random.default_rng(14)
    x = T.Tensor(rng.uniform(-1, 1, (4, 4)), requires_grad=True)
    assert T.gradcheck(lambda ps: T.mean(T.square(ps[0])), [x]) < 1e-6


def test_gradcheck_constant_function_is_zero():
    x = T.Tensor([1.0, 2.0], (2,), requires_grad=True)
    c = T.Tensor([5.0], (1,))
    assert T.gradcheck(lambda ps: c * 1.0, [x]) == 0.0


def test_gradcheck_skips_exact_zero_elements():
    x = T.Tensor([1.0, 0.0, -2.0], (3,), requires_grad=True)
    err = T.gradcheck(lambda ps: T.sum_(T.abs_(ps[0])), [x])
    assert err < 1e-6


# ---------------------------------------------------------------------------
# randomized property sweep over every recorded op
# ---------------------------------------------------------------------------

def test_every_op_gradcheck_sweep():
    rng = np.random.default_rng(15)
    x0 = rng.uniform(-1, 1, (4, 4))
    xpos = rng.uniform(0.2, 1.2, (4, 4))
    k = T.Tensor(rng.uniform(-1, 1, (3, 3)))
    other = T.Tensor(rng.uniform(0.5, 1.5, (4, 4)))
    grid = T.Tensor(identity_grid_array(4, 4) + rng.uniform(-0.1, 0.1, (4, 4, 2)))

    cases = [
        (x0, lambda t: t + other),
        (x0, lambda t: t - other),
        (x0, lambda t: t * other),
        (x0, lambda t: t / other),
        (xpos, lambda t: t ** 1.7),
        (x0, lambda t: T.neg(t)),
        (x0, lambda t: T.exp(t)),
        (xpos, lambda t: T.log(t)),
        (xpos, lambda t: T.sqrt(t)),
        (x0, lambda t: T.square(t)),
        (x0, lambda t: T.sin(t)),
        (x0, lambda t: T.cos(t)),
        (xpos, lambda t: T.clamp_min(t, 0.5)),
        (x0, lambda t: T.conv2d(t, k, 1, 1)),
        (x0, lambda t: T.transposed_conv2d(t, k, 2)),
        (x0, lambda t: T.grid_sample_bilinear(t, grid)),
        (x0, lambda t: T.reshape(t, (2, 8))),
        (x0, lambda t: T.transpose2d(t)),
        (x0, lambda t: T.forward_diff(t, 0)),
        (x0, lambda t: T.central_diff(t, 1)),
    ]
    for data, op in cases:
        p = T.Tensor(data.copy(), requires_grad=True)
        err = T.gradcheck(lambda ps, op=op: T.mean(T.square(op(ps[0]))), [p])
        assert err < 1e-5, f"{op} gradcheck error {err}"
