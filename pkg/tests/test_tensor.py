import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradutil import check_grads
from spikeflow import tensor as F
from spikeflow.tensor import ShapeError, SurrogateSpec, Tensor, no_grad


def rand(rng, *shape):
    return rng.uniform(-1, 1, shape)


def naive_conv2d(x, w, b, stride, pad):
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - k) // stride + 1
    ow = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, o, oh, ow))
    for i in range(oh):
        for j in range(ow):
            patch = xp[:, :, i * stride:i * stride + k, j * stride:j * stride + k]
            out[:, :, i, j] = np.einsum("nckl,ockl->no", patch, w)
    return out + b[None, :, None, None]


# -- forward values ----------------------------------------------------------

def test_matmul_identity():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(F.matmul(a, Tensor(np.eye(2))).data, [[1, 2], [3, 4]])


def test_sum_last_axis_of_ones():
    np.testing.assert_array_equal(F.sum_axis(Tensor(np.ones((2, 3))), -1).data, [3, 3])


def test_default_dtype_is_float32():
    assert Tensor([1, 2, 3]).dtype == np.float32
    assert Tensor(np.zeros(2, np.float64)).dtype == np.float64


@pytest.mark.parametrize("stride,pad,k", [(1, 0, 3), (1, 1, 3), (2, 1, 3), (2, 0, 2), (1, 0, 1)])
def test_conv2d_matches_loops(stride, pad, k):
    rng = np.random.default_rng(stride * 10 + pad + k)
    x = rand(rng, 2, 3, 7, 6)
    w = rand(rng, 4, 3, k, k)
    b = rand(rng, 4)
    got = F.conv2d(Tensor(x), Tensor(w), Tensor(b), stride, pad).data
    np.testing.assert_allclose(got, naive_conv2d(x, w, b, stride, pad), atol=1e-12)


@pytest.mark.parametrize("stride,pad,k,op", [(2, 1, 3, 1), (2, 1, 4, 0), (1, 0, 3, 0), (2, 0, 2, 0)])
def test_conv_transpose_is_adjoint_of_conv(stride, pad, k, op):
    rng = np.random.default_rng(k + op)
    x = rand(rng, 2, 3, 5, 4)
    w = rand(rng, 3, 2, k, k)  # (C_in, C_out, k, k) for the transpose
    y = F.conv_transpose2d(Tensor(x), Tensor(w), None, stride, pad, op).data
    z = rand(rng, *y.shape)
    # <convT(x), z> == <x, conv(z)> with the same weights viewed as (C_out->C_in)
    cz = F.conv2d(Tensor(z), Tensor(w), None, stride, pad).data
    assert cz.shape == x.shape
    assert np.sum(y * z) == pytest.approx(np.sum(x * cz), rel=1e-10)


def test_conv_transpose_output_size():
    x = Tensor(np.zeros((1, 2, 4, 5)))
    w = Tensor(np.zeros((2, 3, 3, 3)))
    assert F.conv_transpose2d(x, w, None, 2, 1, 1).shape == (1, 3, 8, 10)
    w4 = Tensor(np.zeros((2, 3, 4, 4)))
    assert F.conv_transpose2d(x, w4, None, 2, 1, 0).shape == (1, 3, 8, 10)


def test_batch_norm_normalises_each_channel():
    rng = np.random.default_rng(3)
    x = rng.normal(3.0, 2.0, (8, 4, 5, 5))
    out = F.batch_norm(Tensor(x), Tensor(np.ones(4)), Tensor(np.zeros(4)), axis=1).data
    np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0, atol=1e-10)
    np.testing.assert_allclose(out.var(axis=(0, 2, 3)), 1, atol=1e-3)


def test_batch_norm_empty_batch_rejected():
    with pytest.raises(ShapeError):
        F.batch_norm(Tensor(np.zeros((0, 3))), Tensor(np.ones(3)), Tensor(np.zeros(3)), axis=1)


def test_upsample_constant_and_ramp():
    const = F.upsample_bilinear(Tensor(np.full((1, 1, 3, 4), 2.5)), (6, 8)).data
    np.testing.assert_allclose(const, 2.5)
    ramp = np.arange(4.0)[None, None, None, :].repeat(4, axis=2)
    up = F.upsample_bilinear(Tensor(ramp), (8, 8)).data[0, 0, 0]
    # half-pixel centres: output column j samples input coordinate (j + 0.5) / 2 - 0.5
    expect = np.clip((np.arange(8) + 0.5) / 2 - 0.5, 0, 3)
    np.testing.assert_allclose(up, expect, atol=1e-12)


def test_shape_errors_are_descriptive():
    with pytest.raises(ShapeError, match="3"):
        F.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))
    with pytest.raises(ShapeError):
        F.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4,))))


# -- gradients ---------------------------------------------------------------

SEEDS = range(4)


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_elementwise(seed):
    rng = np.random.default_rng(seed)
    a, b = rand(rng, 3, 4), rand(rng, 4)
    assert check_grads(lambda x, y: F.add(x, y), [a, b]) < 1e-3
    assert check_grads(lambda x, y: F.mul(x, y), [a, b]) < 1e-3
    assert check_grads(lambda x, y: F.div(x, y + 3.0), [a, b]) < 1e-3
    assert check_grads(lambda x: F.sqrt(x * x + 1.0), [a]) < 1e-3


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_matmul_and_linear(seed):
    rng = np.random.default_rng(seed)
    assert check_grads(F.matmul, [rand(rng, 2, 3, 4), rand(rng, 4, 5)]) < 1e-3
    assert check_grads(F.linear, [rand(rng, 2, 3, 4), rand(rng, 5, 4), rand(rng, 5)]) < 1e-3


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_conv2d(seed):
    rng = np.random.default_rng(seed)
    stride, pad = [(1, 1), (2, 1), (2, 0), (1, 0)][seed]
    fn = lambda x, w, b: F.conv2d(x, w, b, stride, pad)  # noqa: E731
    assert check_grads(fn, [rand(rng, 1, 2, 5, 5), rand(rng, 3, 2, 3, 3), rand(rng, 3)]) < 1e-3


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_conv_transpose2d(seed):
    rng = np.random.default_rng(seed)
    k, op = (3, 1) if seed % 2 == 0 else (4, 0)
    fn = lambda x, w, b: F.conv_transpose2d(x, w, b, 2, 1, op)  # noqa: E731
    assert check_grads(fn, [rand(rng, 1, 2, 3, 3), rand(rng, 2, 2, k, k), rand(rng, 2)]) < 1e-3


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_batch_norm(seed):
    rng = np.random.default_rng(seed)
    axis = 1 if seed % 2 == 0 else -1
    shape = (3, 2, 2, 2) if axis == 1 else (2, 3, 4, 3)
    c = shape[axis]
    fn = lambda x, g, b: F.batch_norm(x, g, b, axis=axis)  # noqa: E731
    assert check_grads(fn, [rand(rng, *shape), rand(rng, c) + 1.5, rand(rng, c)]) < 1e-3


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_shape_ops(seed):
    rng = np.random.default_rng(seed)
    x = rand(rng, 2, 3, 4)
    assert check_grads(lambda t: F.transpose(F.reshape(t, (3, 2, 4)), (2, 0, 1)), [x]) < 1e-3
    assert check_grads(lambda t: F.roll(F.pad(t, [(0, 1), (0, 0), (1, 2)]), (1, -2), (0, 2)), [x]) < 1e-3
    assert check_grads(lambda t: F.crop(t, (1, 2, 3)), [x]) < 1e-3
    assert check_grads(lambda t: t[:, ::2, 1:], [x]) < 1e-3
    assert check_grads(lambda t: t[np.array([0, 1, 1]), np.array([2, 0, 2])], [x]) < 1e-3
    assert check_grads(lambda a, b: F.concat([a, b], axis=1), [x, rand(rng, 2, 1, 4)]) < 1e-3
    assert check_grads(lambda t: F.mean(t, axis=(0, 2)), [x]) < 1e-3


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_upsample(seed):
    rng = np.random.default_rng(seed)
    assert check_grads(lambda t: F.upsample_bilinear(t, (6, 10)), [rand(rng, 1, 2, 3, 4)]) < 1e-3


def test_two_layer_linear_chain():
    rng = np.random.default_rng(7)
    fn = lambda x, w1, w2: F.linear(F.linear(x, w1), w2)  # noqa: E731
    assert check_grads(fn, [rand(rng, 4, 3), rand(rng, 5, 3), rand(rng, 2, 5)]) < 1e-3


# -- heaviside -----------------------------------------------------------------

def test_heaviside_threshold_inclusive():
    assert F.heaviside(Tensor([0.15]), 0.1).data[0] == 1.0
    assert F.heaviside(Tensor([0.1]), 0.1).data[0] == 1.0
    assert F.heaviside(Tensor([0.0999]), 0.1).data[0] == 0.0


def test_heaviside_backward_at_threshold_is_one():
    x = Tensor([0.1], requires_grad=True)
    F.sum_axis(F.heaviside(x, 0.1)).backward()
    assert abs(x.grad[0] - 1.0) < 1e-6


@given(st.lists(st.floats(-2, 2, allow_nan=False), min_size=1, max_size=30), st.floats(0.5, 4.0))
@settings(max_examples=50, deadline=None)
def test_heaviside_backward_matches_closed_form(xs, alpha):
    x = Tensor(np.array(xs, np.float64), requires_grad=True)
    out = F.heaviside(x, 0.1, SurrogateSpec("atan", alpha))
    assert set(np.unique(out.data)) <= {0.0, 1.0}
    F.sum_axis(out).backward()
    v = np.array(xs) - 0.1
    expect = alpha / (2 * (1 + (math.pi * alpha * v / 2) ** 2))
    np.testing.assert_allclose(x.grad, expect, atol=1e-6)


def test_heaviside_threshold_tensor_gets_negative_grad():
    x = Tensor(np.array([[0.0, 0.2], [0.1, -0.3]]), requires_grad=True)
    thr = Tensor(np.array([0.1, 0.1]), requires_grad=True)
    F.sum_axis(F.heaviside(x, thr)).backward()
    np.testing.assert_allclose(thr.grad, -x.grad.sum(axis=0))


def test_surrogate_validation():
    with pytest.raises(ValueError):
        SurrogateSpec("atan", 0.0)
    with pytest.raises(ValueError):
        SurrogateSpec("sigmoid", 2.0)


# -- backward engine ------------------------------------------------------------

def test_sum_grad_is_ones():
    x = Tensor(np.zeros(3), requires_grad=True)
    F.sum_axis(x).backward()
    np.testing.assert_array_equal(x.grad, [1, 1, 1])


def test_non_scalar_root_rejected():
    x = Tensor(np.zeros(3), requires_grad=True)
    with pytest.raises(ShapeError):
        (x * 2.0).backward()


def test_repeated_backward_accumulates():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    y = F.sum_axis(x * x)
    y.backward()
    y.backward()
    np.testing.assert_allclose(x.grad, 4 * x.data)


def test_shared_node_accumulates_over_branches():
    x = Tensor(np.array([0.5, -1.0]), requires_grad=True)
    h = x * 3.0
    y = F.sum_axis(h * h + h)
    y.backward()
    np.testing.assert_allclose(x.grad, 3 * (2 * 3 * x.data + 1))


def test_sibling_order_does_not_change_grads():
    rng = np.random.default_rng(0)
    xd = rng.standard_normal(5).astype(np.float32)
    grads = []
    for order in (0, 1):
        x = Tensor(xd, requires_grad=True)
        a, b = F.sqrt(x * x + 1.0), x * 2.0
        y = (a + b) if order == 0 else (b + a)
        F.sum_axis(y).backward()
        grads.append(x.grad)
    assert np.max(np.abs(grads[0] - grads[1])) <= 1e-6


def test_no_grad_builds_no_graph():
    x = Tensor(np.ones(2), requires_grad=True)
    with no_grad():
        y = x * 2.0
    assert not y.requires_grad


def test_float32_drift_against_float64():
    # same chain in both precisions; float32 accumulation stays within a loose bound
    rng = np.random.default_rng(1)
    x = rng.uniform(-1, 1, (2, 3, 8, 8))
    w = rng.uniform(-1, 1, (4, 3, 3, 3))
    grads = {}
    for dt in (np.float32, np.float64):
        xt = Tensor(x.astype(dt), requires_grad=True)
        wt = Tensor(w.astype(dt), requires_grad=True)
        y = F.conv2d(xt, wt, None, 1, 1)
        F.sum_axis(y * y).backward()
        grads[dt] = wt.grad
        assert wt.grad.dtype == dt
    rel = np.abs(grads[np.float32] - grads[np.float64]).max() / np.abs(grads[np.float64]).max()
    assert rel < 1e-5
