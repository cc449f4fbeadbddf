"""Central finite-difference gradient checking for the autodiff tests."""

import numpy as np

from spikeflow.tensor import Tensor

EPS = 1e-3


def rel_error(a, b):
    a = np.asarray(a, np.float64).ravel()
    b = np.asarray(b, np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def check_grads(fn, arrays, seed=0, eps=EPS):
    """Compare autodiff and central differences for ``sum(fn(*tensors) * R)``.

    ``arrays`` are float64 inputs; ``R`` is a fixed random projection so every
    output element contributes. Returns the worst relative error over inputs.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = fn(*tensors)
    proj = np.random.default_rng(seed).standard_normal(out.shape)
    loss = (out * Tensor(proj)).sum()
    loss.backward()

    def scalar(vals):
        return float(np.sum(fn(*[Tensor(v) for v in vals]).data * proj))

    worst = 0.0
    for idx, a in enumerate(arrays):
        num = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            mi = it.multi_index
            plus = [x.copy() for x in arrays]
            minus = [x.copy() for x in arrays]
            plus[idx][mi] += eps
            minus[idx][mi] -= eps
            num[mi] = (scalar(plus) - scalar(minus)) / (2 * eps)
        worst = max(worst, rel_error(tensors[idx].grad, num))
    return worst
