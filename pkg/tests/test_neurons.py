import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import lif_reference
from spikeflow import tensor as F
from spikeflow.neurons import (
    LifParams,
    LIFNode,
    PSNNode,
    lif_init_state,
    lif_sequence,
    lif_step,
    make_neuron,
    psn_forward,
    psn_init_from_lif,
    psn_weight_from_lif,
)
from spikeflow.tensor import ShapeError, Tensor


@pytest.mark.parametrize(
    "x,h,s,v",
    [(0.3, 0.15, 1.0, 0.0), (0.0, 0.0, 0.0, 0.0), (0.1, 0.05, 0.0, 0.05)],
)
def test_lif_step_examples(x, h, s, v):
    p = LifParams(2.0, 0.1, 0.0)
    spikes, state = lif_step(Tensor([x]), lif_init_state((1,), p), p)
    assert spikes.data[0] == s
    assert state.v.data[0] == pytest.approx(v, abs=1e-7)


def test_lif_sequence_examples():
    p = LifParams()
    np.testing.assert_array_equal(lif_sequence(Tensor(np.full((3, 1), 0.3)), p).data[:, 0], [1, 1, 1])
    np.testing.assert_array_equal(lif_sequence(Tensor(np.full((3, 1), 0.1)), p).data[:, 0], [0, 0, 0])
    h, _ = lif_reference(np.full((3, 1), 0.1))
    np.testing.assert_allclose(h[:, 0], [0.05, 0.075, 0.0875])
    assert not lif_sequence(Tensor(np.zeros((4, 2, 3))), p).data.any()


def test_lif_sequence_rejects_empty_time():
    with pytest.raises(ShapeError):
        lif_sequence(Tensor(np.zeros((0, 3))))


def test_lif_params_validation():
    with pytest.raises(ValueError):
        LifParams(tau=1.0)
    with pytest.raises(ValueError):
        LifParams(v_threshold=0.0, v_reset=0.0)


def test_lif_step_shape_mismatch():
    with pytest.raises(ShapeError):
        lif_step(Tensor(np.zeros(3)), lif_init_state((4,)))


@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 5)), elements=st.floats(-1, 1)))
@settings(max_examples=60, deadline=None)
def test_fused_lif_matches_loop_reference(x):
    s = lif_sequence(Tensor(x)).data
    _, ref = lif_reference(x)
    np.testing.assert_array_equal(s, ref)


@pytest.mark.parametrize("detach", [False, True])
def test_fused_lif_grad_matches_composed_graph(detach):
    rng = np.random.default_rng(4)
    x = rng.uniform(-0.2, 0.5, (6, 10))
    p = LifParams()
    xa = Tensor(x, requires_grad=True)
    out_a = lif_sequence(xa, p, detach_reset=detach)
    w = rng.standard_normal(x.shape)
    F.sum_axis(out_a * Tensor(w)).backward()

    xb = Tensor(x, requires_grad=True)
    state = lif_init_state((10,), p, dtype=np.float64)
    outs = []
    for t in range(6):
        s, state = lif_step(xb[t], state, p, detach_reset=detach)
        outs.append(F.reshape(s, (1, 10)))
    out_b = F.concat(outs, axis=0)
    F.sum_axis(out_b * Tensor(w)).backward()

    np.testing.assert_array_equal(out_a.data, out_b.data)
    np.testing.assert_allclose(xa.grad, xb.grad, atol=1e-12)


def test_detaching_reset_changes_gradients():
    x = np.array([[0.3], [0.3], [0.3]])
    grads = []
    for detach in (False, True):
        xt = Tensor(x, requires_grad=True)
        F.sum_axis(lif_sequence(xt, detach_reset=detach)).backward()
        grads.append(xt.grad.copy())
    assert not np.allclose(grads[0], grads[1])


def test_hard_reset_membrane_after_spike():
    p = LifParams(2.0, 0.1, 0.0)
    state = lif_init_state((4,), p)
    x = Tensor(np.array([0.5, 0.25, 0.05, 1.0]))
    s, state = lif_step(x, state, p)
    fired = s.data == 1
    assert np.all(state.v.data[fired] == p.v_reset)


def test_lif_batching_invariance():
    rng = np.random.default_rng(2)
    x = rng.uniform(-0.5, 0.5, (5, 2, 3, 4))
    joint = lif_sequence(Tensor(x)).data
    for b in range(2):
        np.testing.assert_array_equal(joint[:, b], lif_sequence(Tensor(x[:, b])).data)


# -- PSN ----------------------------------------------------------------------

def test_psn_weight_examples():
    np.testing.assert_allclose(psn_weight_from_lif(2.0, 2), [[0.5, 0.0], [0.25, 0.5]])
    w = psn_weight_from_lif(3.0, 5)
    assert np.all(np.triu(w, 1) == 0)
    np.testing.assert_allclose(np.diag(w), 1 / 3.0)


def test_psn_init_threshold():
    p = psn_init_from_lif(2.0, 4, 0.1)
    np.testing.assert_allclose(p.threshold.data, 0.1)
    with pytest.raises(ValueError):
        psn_init_from_lif(0.5, 4, 0.1)


def test_psn_constant_drive_example():
    p = psn_init_from_lif(2.0, 3, 0.1)
    x = Tensor(np.full((3, 1), 0.3))
    h = F.matmul(p.weight, F.reshape(x, (3, 1))).data[:, 0]
    np.testing.assert_allclose(h, [0.15, 0.225, 0.2625], atol=1e-7)
    np.testing.assert_array_equal(psn_forward(x, p).data[:, 0], [1, 1, 1])


def test_psn_zero_input_silent():
    p = psn_init_from_lif(2.0, 4, 0.1)
    assert not psn_forward(Tensor(np.zeros((4, 7))), p).data.any()


@given(st.integers(1, 8), st.integers(0, 2**31 - 1))
@settings(max_examples=40, deadline=None)
def test_psn_equals_reset_free_lif(steps, seed):
    x = np.random.default_rng(seed).uniform(-1, 1, (steps, 16))
    p = psn_init_from_lif(2.0, steps, 0.1)
    p.weight.data = p.weight.data.astype(np.float64)
    p.threshold.data = p.threshold.data.astype(np.float64)
    h = F.matmul(p.weight, Tensor(x)).data
    h_ref, s_ref = lif_reference(x, reset=False)
    assert np.max(np.abs(h - h_ref)) < 1e-6
    # threshold decisions agree wherever H is not within rounding of V_th
    s = psn_forward(Tensor(x), p).data
    clear = np.abs(h_ref - 0.1) > 1e-9
    np.testing.assert_array_equal(s[clear], s_ref[clear])


def test_psn_time_mismatch():
    p = psn_init_from_lif(2.0, 4, 0.1)
    with pytest.raises(ShapeError):
        psn_forward(Tensor(np.zeros((3, 2))), p)


def test_psn_gradients_reach_weight_threshold_and_input():
    node = PSNNode(3)
    x = Tensor(np.random.default_rng(0).uniform(0, 0.4, (3, 2, 4)).astype(np.float32), requires_grad=True)
    F.sum_axis(node(x)).backward()
    assert node.weight.grad.shape == (3, 3)
    assert node.threshold.grad.shape == (3,)
    assert x.grad.shape == x.shape
    assert np.all(node.threshold.grad <= 0)


def test_neuron_factory():
    assert isinstance(make_neuron("lif", 5), LIFNode)
    assert isinstance(make_neuron("psn", 5), PSNNode)
    assert make_neuron("lif", 5).num_parameters() == 0
    assert make_neuron("psn", 5).num_parameters() == 30
    with pytest.raises(ValueError):
        make_neuron("glif", 5)


@pytest.mark.parametrize("kind", ["lif", "psn"])
def test_spikes_are_binary(kind):
    x = Tensor(np.random.default_rng(1).standard_normal((4, 3, 5)).astype(np.float32))
    out = make_neuron(kind, 4)(x).data
    assert set(np.unique(out)) <= {0.0, 1.0}
