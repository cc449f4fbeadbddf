import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spikeflow import _pykernels as py
from spikeflow.kernels import BACKEND, compiled_available, get_backend

pytestmark = pytest.mark.skipif(not compiled_available(), reason="compiled extension not built")


@pytest.fixture(scope="module")
def cy():
    return get_backend("cython")


def test_backend_prefers_compiled():
    assert BACKEND == "cython"


def test_unknown_backend():
    with pytest.raises(ValueError):
        get_backend("fortran")


@given(st.integers(1, 3), st.integers(1, 3), st.integers(3, 8), st.integers(1, 3), st.integers(1, 2),
       st.integers(0, 1), st.sampled_from([np.float32, np.float64]))
@settings(max_examples=40, deadline=None)
def test_im2col_col2im_parity(n, c, size, k, stride, pad, dtype):
    rng = np.random.default_rng(size * k)
    x = rng.standard_normal((n, c, size, size)).astype(dtype)
    oh = (size + 2 * pad - k) // stride + 1
    a = py.im2col(x, k, k, stride, pad, oh, oh)
    cyk = get_backend("cython")
    b = cyk.im2col(x, k, k, stride, pad, oh, oh)
    np.testing.assert_array_equal(a, b)
    cols = rng.standard_normal(a.shape).astype(dtype)
    np.testing.assert_allclose(py.col2im(cols, size, size, stride, pad), cyk.col2im(cols, size, size, stride, pad),
                               rtol=1e-6, atol=1e-6)


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
@pytest.mark.parametrize("detach", [False, True])
def test_lif_parity(cy, dtype, detach):
    rng = np.random.default_rng(0)
    x = rng.uniform(-0.3, 0.6, (6, 50)).astype(dtype)
    h1, s1 = py.lif_forward(x, 2.0, 0.1, 0.0)
    h2, s2 = cy.lif_forward(x, 2.0, 0.1, 0.0)
    np.testing.assert_array_equal(s1, s2)
    np.testing.assert_allclose(h1, h2, rtol=1e-6)
    g = rng.standard_normal(x.shape).astype(dtype)
    np.testing.assert_allclose(
        py.lif_backward(g, h1, s1, 2.0, 0.1, 0.0, 2.0, detach),
        cy.lif_backward(g, h2, s2, 2.0, 0.1, 0.0, 2.0, detach),
        rtol=1e-5, atol=1e-6,
    )


def test_deposit_parity(cy):
    rng = np.random.default_rng(1)
    n = 5000
    args = (rng.uniform(0, 15, n), rng.uniform(0, 11, n), rng.uniform(0, 9, n), rng.choice([-1.0, 1.0], n))
    a = np.zeros((10, 12, 16), np.float32)
    b = np.zeros((10, 12, 16), np.float32)
    py.deposit_events(a, *args)
    cy.deposit_events(b, *args)
    np.testing.assert_allclose(a, b, atol=1e-4)
    assert abs(a.sum() - args[3].sum()) < 1e-2


def test_pure_python_switch(tmp_path):
    import subprocess
    import sys

    out = subprocess.run(
        [sys.executable, "-c", "import spikeflow.kernels as k; print(k.BACKEND)"],
        capture_output=True, text=True, env={"SPIKEFLOW_PURE_PYTHON": "1", "PATH": ""}, check=True,
    )
    assert out.stdout.strip() == "python"
