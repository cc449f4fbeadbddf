"""Synaptic operation counting and the theoretical energy model.

Synaptic layers call :func:`record` on every forward pass. Outside a
:class:`Profiler` context this is a no-op. Inside one, the layer's dense
multiply-accumulate count and the firing statistics of its input are
accumulated, and :func:`estimate_energy` turns them into joules:

* ``ann`` mode charges every operation as a MAC: ``flops * E_MAC``.
* ``snn`` mode charges spike-driven layers as accumulates gated by the input
  firing rate: ``flops * R_s * T * E_AC``. Layers whose input is real-valued
  (the first convolution, flow heads, ...) are charged ``flops * E_MAC``.

FLOPs are per sample and per time step.
"""

from __future__ import annotations

import contextlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

E_MAC = 4.6e-12
E_AC = 0.9e-12

_active = None


def count_flops(spec):
    """Dense MAC count for one layer described by a dict ``spec``.

    Supported kinds: ``conv``, ``conv_transpose``, ``linear``, ``bn`` (always
    zero), ``attn_qk`` and ``attn_av`` (dot-product attention products),
    ``token_sum`` and ``token_mask`` (QK linear attention).
    """
    kind = spec.get("kind")
    if kind == "conv":
        return spec["k"] * spec["k"] * spec["c_in"] * spec["c_out"] * spec["h_out"] * spec["w_out"]
    if kind == "conv_transpose":
        return spec["k"] * spec["k"] * spec["c_in"] * spec["c_out"] * spec["h_in"] * spec["w_in"]
    if kind == "linear":
        return spec["n_in"] * spec["n_out"] * spec.get("tokens", 1)
    if kind == "bn":
        return 0
    if kind in ("attn_qk", "attn_av"):
        return spec["windows"] * spec["heads"] * spec["tokens"] ** 2 * spec["head_dim"]
    if kind in ("token_sum", "token_mask"):
        return spec["windows"] * spec["tokens"] * spec["dim"]
    raise ValueError(f"unknown layer kind {kind!r}")


@dataclass
class LayerStats:
    kind: str
    flops: int
    timesteps: int
    ones: float = 0.0
    total: int = 0
    binary: bool = True
    calls: int = 0


class Profiler:
    def __init__(self):
        self.layers = {}

    def add(self, name, kind, flops, data, timesteps):
        d = np.asarray(data)
        binary = bool(np.all((d == 0) | (d == 1)))
        st = self.layers.get(name)
        if st is None:
            st = self.layers[name] = LayerStats(kind=kind, flops=int(flops), timesteps=int(timesteps))
        st.flops = int(flops)
        st.ones += float(d.sum()) if binary else float(np.count_nonzero(d))
        st.total += d.size
        st.binary = st.binary and binary
        st.calls += 1


@contextlib.contextmanager
def profiling():
    global _active
    prev = _active
    _active = Profiler()
    try:
        yield _active
    finally:
        _active = prev


def _name_of(module):
    return getattr(module, "_profile_name", None) or f"{type(module).__name__}@{id(module):x}"


def record(module, x, flops, timesteps=None):
    """Hook called by synaptic layers; ``x`` is the layer input."""
    if _active is None:
        return
    data = x.data if hasattr(x, "data") else x
    if timesteps is None:
        timesteps = data.shape[0] if data.ndim == 5 else 1
    _active.add(_name_of(module), type(module).__name__, flops, data, timesteps)


def record_op(name, kind, flops, data, timesteps):
    """Hook for non-module synaptic work such as attention products."""
    if _active is None:
        return
    _active.add(name, kind, flops, data, timesteps)


@dataclass
class LayerEnergy:
    name: str
    kind: str
    flops: int
    spike_rate: float
    timesteps: int
    energy_j: float
    charged: str  # "ac" or "mac"


@dataclass
class EnergyReport:
    layers: list
    total_j: float
    mode: str
    params_m: float = 0.0
    e_mac: float = E_MAC
    e_ac: float = E_AC
    notes: list = field(default_factory=list)

    @property
    def total_flops(self):
        return sum(l.flops for l in self.layers)

    @property
    def avg_spike_rate(self):
        rates = [l.spike_rate for l in self.layers if l.charged == "ac"]
        return float(np.mean(rates)) if rates else 0.0

    def summary(self):
        return {
            "param_m": round(self.params_m, 4),
            "flops_g": self.total_flops / 1e9,
            "avg_spiking_rate": self.avg_spike_rate if self.mode == "snn" else None,
            "power_mj": self.total_j * 1e3,
            "mode": self.mode,
        }

    def to_lines(self):
        """One JSON record per layer followed by the summary record."""
        lines = [json.dumps({"record": "layer", **asdict(l)}) for l in self.layers]
        lines.append(json.dumps({"record": "summary", **self.summary(), "notes": self.notes}))
        return lines

    def summary_table(self):
        s = self.summary()
        rate = "-" if s["avg_spiking_rate"] is None else f"{s['avg_spiking_rate']:.3f}"
        return (
            f"{'Param(M)':>10} {'FLOPS(G)':>10} {'Avg spiking rate':>17} {'Power(mJ)':>10}\n"
            f"{s['param_m']:>10.4f} {s['flops_g']:>10.6f} {rate:>17} {s['power_mj']:>10.6f}"
        )


def layer_energy(flops, mode, spike_rate=1.0, timesteps=1, binary=True):
    if mode == "ann" or not binary:
        return flops * E_MAC
    if mode == "snn":
        return flops * spike_rate * timesteps * E_AC
    raise ValueError(f"unknown energy mode {mode!r}")


def report_from_profile(prof, mode, params_m=0.0):
    if mode not in ("ann", "snn"):
        raise ValueError(f"unknown energy mode {mode!r}")
    layers = []
    for name, st in prof.layers.items():
        rate = st.ones / st.total if st.total else 0.0
        charged = "ac" if (mode == "snn" and st.binary) else "mac"
        e = layer_energy(st.flops, mode, rate, st.timesteps, st.binary)
        layers.append(LayerEnergy(name, st.kind, st.flops, rate, st.timesteps, e, charged))
    notes = []
    if mode == "snn":
        mac = [l.name for l in layers if l.charged == "mac"]
        if mac:
            notes.append("real-valued input, charged at MAC cost: " + ", ".join(mac))
    total = float(sum(l.energy_j for l in layers))
    return EnergyReport(layers=layers, total_j=total, mode=mode, params_m=params_m, notes=notes)


def estimate_energy(model, probe_inputs, mode="snn"):
    """Run ``model`` on every probe batch and build an :class:`EnergyReport`."""
    from .tensor import no_grad

    probes = list(probe_inputs)
    if not probes:
        raise ValueError("estimate_energy needs at least one probe input")
    for name, mod in model.named_modules():
        mod._profile_name = name or type(mod).__name__
    with profiling() as prof, no_grad():
        for x in probes:
            model(x)
    return report_from_profile(prof, mode, model.num_parameters() / 1e6)
