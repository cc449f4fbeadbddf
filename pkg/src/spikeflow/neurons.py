"""LIF and PSN spiking activations.

Both layers take a tensor whose leading axis is time and return binary spikes
of the same shape, so either can be dropped in wherever a spiking
nonlinearity is needed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as F
from .nn import Module, Parameter
from .tensor import ShapeError, SurrogateSpec, Tensor


@dataclass(frozen=True)
class LifParams:
    tau: float = 2.0
    v_threshold: float = 0.1
    v_reset: float = 0.0
    surrogate: SurrogateSpec = field(default_factory=SurrogateSpec)

    def __post_init__(self):
        if not self.tau > 1:
            raise ValueError("LIF time constant must exceed 1")
        if not self.v_threshold > self.v_reset:
            raise ValueError("v_threshold must exceed v_reset")


@dataclass
class LifState:
    v: Tensor


def lif_init_state(shape, p=LifParams(), dtype=np.float32):
    return LifState(Tensor(np.full(shape, p.v_reset, dtype=dtype)))


def lif_step(x, state, p=LifParams(), detach_reset=False):
    """One step of charge, fire and hard reset, built from differentiable ops.

    Returns ``(spikes, new_state)``.
    """
    x = F.as_tensor(x)
    v = state.v
    if x.shape != v.shape:
        raise ShapeError(f"lif_step: input {x.shape} vs state {v.shape}")
    h = v + (x - (v - p.v_reset)) * (1.0 / p.tau)
    s = F.heaviside(h, p.v_threshold, p.surrogate)
    gate = s.detach() if detach_reset else s
    v_next = h * (1.0 - gate) + gate * p.v_reset
    return s, LifState(v_next)


def lif_sequence(x, p=LifParams(), detach_reset=False):
    """Iterate LIF over the leading time axis starting from ``V = V_reset``."""
    return F.lif_sequence(x, p.tau, p.v_threshold, p.v_reset, p.surrogate, detach_reset)


class LIFNode(Module):
    def __init__(self, params=LifParams(), detach_reset=False):
        self.params = params
        self.detach_reset = detach_reset

    def forward(self, x):
        return lif_sequence(x, self.params, self.detach_reset)


@dataclass
class PsnParams:
    weight: Tensor
    threshold: Tensor
    surrogate: SurrogateSpec = field(default_factory=SurrogateSpec)

    def __post_init__(self):
        w, b = self.weight.shape, self.threshold.shape
        if len(w) != 2 or w[0] != w[1] or b != (w[0],):
            raise ShapeError(f"PSN weight must be TxT and threshold length T, got {w} and {b}")


def psn_weight_from_lif(tau, steps):
    t = np.arange(steps)
    lag = t[:, None] - t[None, :]
    w = (1.0 / tau) * (1.0 - 1.0 / tau) ** np.maximum(lag, 0)
    return np.where(lag >= 0, w, 0.0)


def psn_init_from_lif(tau, steps, v_threshold, surrogate=SurrogateSpec()):
    """PSN parameters that reproduce reset-free LIF dynamics."""
    if not tau > 1:
        raise ValueError("tau must exceed 1")
    weight = Parameter(psn_weight_from_lif(tau, steps).astype(np.float32))
    threshold = Parameter(np.full(steps, v_threshold, np.float32))
    return PsnParams(weight, threshold, surrogate)


def psn_forward(x, p):
    """``S = Heaviside(W X - B)`` with all non-time axes flattened into columns."""
    x = F.as_tensor(x)
    steps = p.weight.shape[0]
    if x.shape[0] != steps:
        raise ShapeError(f"psn_forward: input has {x.shape[0]} time steps, weight is {steps}x{steps}")
    flat = F.reshape(x, (steps, -1))
    h = F.matmul(p.weight, flat)
    thr = F.reshape(p.threshold, (steps, 1))
    s = F.heaviside(h, thr, p.surrogate)
    return F.reshape(s, x.shape)


class PSNNode(Module):
    def __init__(self, steps, tau=2.0, v_threshold=0.1, surrogate=SurrogateSpec()):
        p = psn_init_from_lif(tau, steps, v_threshold, surrogate)
        self.steps = steps
        self.surrogate = surrogate
        self.weight = p.weight
        self.threshold = p.threshold

    @property
    def params(self):
        return PsnParams(self.weight, self.threshold, self.surrogate)

    def forward(self, x):
        return psn_forward(x, self.params)


def make_neuron(kind, steps, tau=2.0, v_threshold=0.1, surrogate=SurrogateSpec()):
    if kind == "lif":
        return LIFNode(LifParams(tau, v_threshold, 0.0, surrogate))
    if kind == "psn":
        return PSNNode(steps, tau, v_threshold, surrogate)
    raise ValueError(f"unknown neuron kind {kind!r}")
