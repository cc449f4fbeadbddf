"""3-D (time, height, width) window attention on spike tensors.

Token tensors are laid out ``(T, B, H, W, D)``. Windows cover
``t_w x h_w x w_w`` tokens; odd-numbered blocks roll the volume by the shift
before partitioning, and the mask keeps tokens that were rolled across the
volume boundary from attending to each other.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import energy
from . import tensor as F
from .nn import BatchNorm1d, Linear, Module, Parameter
from .neurons import make_neuron
from .tensor import ShapeError


@dataclass(frozen=True)
class WindowConfig:
    t_w: int = 2
    h_w: int = 9
    w_w: int = 9
    shift: tuple = (0, 0, 0)
    heads: int = 1

    def __post_init__(self):
        for s, e in zip(self.shift, self.size):
            if e <= 0 or not 0 <= s < e:
                raise ValueError(f"window {self.size} incompatible with shift {self.shift}")

    @property
    def size(self):
        return (self.t_w, self.h_w, self.w_w)

    @property
    def tokens(self):
        return self.t_w * self.h_w * self.w_w

    def half_shift(self):
        return WindowConfig(self.t_w, self.h_w, self.w_w, tuple(e // 2 for e in self.size), self.heads)

    def effective(self, dims):
        """Clip the window to the feature extent; no shift along axes that fit in one window."""
        size = tuple(min(e, d) for e, d in zip(self.size, dims))
        shift = tuple(0 if d <= e else s for s, e, d in zip(self.shift, self.size, dims))
        return WindowConfig(*size, shift=shift, heads=self.heads)


def padded_dims(dims, window):
    return tuple(-(-d // e) * e for d, e in zip(dims, window))


def _spatial_axes(x):
    return (0, 2, 3) if x.ndim == 5 else (0, 1, 2)


def pad_to_windows(x, window):
    """Zero-pad the (T, H, W) axes of ``x`` up to multiples of ``window``."""
    axes = _spatial_axes(x)
    dims = tuple(x.shape[a] for a in axes)
    pdims = padded_dims(dims, window)
    widths = [(0, 0)] * x.ndim
    for a, d, p in zip(axes, dims, pdims):
        widths[a] = (0, p - d)
    return F.pad(x, widths), pdims


def window_partition(x, window):
    """Split ``x`` (T, H, W, D) or (T, B, H, W, D) into windows.

    Returns ``(windows, padded_dims)``; ``windows`` is (B*N_w, N_t, D) with
    windows in row-major (t, h, w) order per batch element and tokens
    row-major inside each window.
    """
    x = F.as_tensor(x)
    batched = x.ndim == 5
    if not batched:
        x = F.reshape(x, (x.shape[0], 1) + x.shape[1:])
    x, pdims = pad_to_windows(x, window)
    tp, b, hp, wp, d = x.shape
    tw, hw, ww = window
    x = F.reshape(x, (tp // tw, tw, b, hp // hw, hw, wp // ww, ww, d))
    x = F.transpose(x, (2, 0, 3, 5, 1, 4, 6, 7))
    return F.reshape(x, (-1, tw * hw * ww, d)), pdims


def window_reverse(windows, window, pdims, dims=None, batched=True):
    """Inverse of :func:`window_partition`, cropping padding back to ``dims``."""
    tw, hw, ww = window
    tp, hp, wp = pdims
    d = windows.shape[-1]
    nw = (tp // tw) * (hp // hw) * (wp // ww)
    b = windows.shape[0] // nw
    x = F.reshape(windows, (b, tp // tw, hp // hw, wp // ww, tw, hw, ww, d))
    x = F.transpose(x, (1, 4, 0, 2, 5, 3, 6, 7))
    x = F.reshape(x, (tp, b, hp, wp, d))
    if dims is not None and tuple(dims) != tuple(pdims):
        x = F.crop(x, (dims[0], b, dims[1], dims[2], d))
    if not batched:
        x = F.reshape(x, (x.shape[0],) + x.shape[2:])
    return x


def cyclic_shift(x, shift):
    """Roll the (T, H, W) axes by ``-shift``."""
    return F.roll(x, tuple(-s for s in shift), _spatial_axes(x))


def cyclic_unshift(x, shift):
    return F.roll(x, tuple(shift), _spatial_axes(x))


def region_ids(pdims, window, shift):
    """Per-token region labels on the rolled, padded volume (T, H, W)."""
    ids = np.zeros(pdims, np.int64)
    mult = 1
    for axis, (p, e, s) in enumerate(zip(pdims, window, shift)):
        lab = np.zeros(p, np.int64)
        if s > 0:
            lab[p - e:p - s] = 1
            lab[p - s:] = 2
        shape = [1, 1, 1]
        shape[axis] = p
        ids = ids + mult * lab.reshape(shape)
        mult *= 3
    return ids


def attention_mask(dims, window, shift=(0, 0, 0)):
    """Allowed token pairs per window, shape (N_w, N_t, N_t), boolean.

    A pair is allowed when both tokens come from the same region of the rolled
    volume and neither is padding.
    """
    pdims = padded_dims(dims, window)
    ids = region_ids(pdims, window, shift)
    padflag = np.zeros(pdims, bool)
    padflag[dims[0]:, :, :] = True
    padflag[:, dims[1]:, :] = True
    padflag[:, :, dims[2]:] = True
    padflag = np.roll(padflag, tuple(-s for s in shift), (0, 1, 2))

    def part(a):
        tw, hw, ww = window
        tp, hp, wp = pdims
        a = a.reshape(tp // tw, tw, hp // hw, hw, wp // ww, ww)
        return a.transpose(0, 2, 4, 1, 3, 5).reshape(-1, tw * hw * ww)

    idw = part(ids)
    pw = part(padflag)
    allowed = idw[:, :, None] == idw[:, None, :]
    allowed &= ~pw[:, :, None] & ~pw[:, None, :]
    return allowed


def relative_position_index(window):
    """Index into a ((2t-1)(2h-1)(2w-1))-row bias table for every token pair."""
    tw, hw, ww = window
    coords = np.stack(np.meshgrid(np.arange(tw), np.arange(hw), np.arange(ww), indexing="ij")).reshape(3, -1)
    rel = coords[:, :, None] - coords[:, None, :]
    rel[0] += tw - 1
    rel[1] += hw - 1
    rel[2] += ww - 1
    return rel[0] * (2 * hw - 1) * (2 * ww - 1) + rel[1] * (2 * ww - 1) + rel[2]


def _check_binary(name, t):
    d = t.data
    if not np.all((d == 0) | (d == 1)):
        raise ValueError(f"{name} must be a binary spike tensor")


def sdsa_dot(q, k, v, bias=None, scale=1.0, mask=None, check_binary=False):
    """Softmax-free spike attention ``((Q K^T + bias) * mask) V * scale``.

    ``q``, ``k``, ``v`` are (..., N_t, D_h) spike tensors. ``bias`` broadcasts
    against the (..., N_t, N_t) attention map and ``mask`` (0/1) zeroes
    forbidden pairs, bias included.
    """
    if check_binary:
        for name, t in (("Q", q), ("K", k), ("V", v)):
            _check_binary(name, t)
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"sdsa_dot: incompatible Q {q.shape}, K {k.shape}, V {v.shape}")
    attn = F.matmul(q, F.transpose(k, tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2)))
    if bias is not None:
        attn = attn + bias
    if mask is not None:
        attn = attn * F.Tensor(np.asarray(mask, dtype=attn.dtype))
    out = F.matmul(attn, v)
    if scale != 1.0:
        out = out * scale
    return out


def qk_token_attention(q, k, token_neuron, heads=1, token_mask=None):
    """Token-mask attention: ``A_t = SN(sum_D Q)`` per head, output ``A_t * K``.

    ``q`` and ``k`` share shape (..., D). ``token_neuron`` maps the
    (..., heads) sums to binary spikes. Returns ``(z, a_t)``.
    """
    if q.shape != k.shape:
        raise ShapeError(f"qk_token_attention: Q {q.shape} vs K {k.shape}")
    d = q.shape[-1]
    if d % heads:
        raise ShapeError(f"hidden dim {d} not divisible by {heads} heads")
    lead = q.shape[:-1]
    qh = F.reshape(q, lead + (heads, d // heads))
    a = token_neuron(F.sum_axis(qh, -1))
    if token_mask is not None:
        a = a * F.Tensor(np.asarray(token_mask, dtype=a.dtype)[..., None])
    kh = F.reshape(k, lead + (heads, d // heads))
    z = kh * F.reshape(a, lead + (heads, 1))
    return F.reshape(z, lead + (d,)), a


class _AttentionBase(Module):
    def __init__(self, dim, heads, window, neuron, steps, shortcut, rng):
        if dim % heads:
            raise ShapeError(f"dim {dim} not divisible by {heads} heads")
        self.dim, self.heads = dim, heads
        self.window = window
        self.shortcut = shortcut
        self.in_sn = make_neuron(neuron, steps) if shortcut == "ms" else None
        self.proj = Linear(dim, dim, rng=rng)
        self.proj_bn = BatchNorm1d(dim)
        self.out_sn = make_neuron(neuron, steps) if shortcut == "sew" else None

    def _branch_in(self, x):
        return self.in_sn(x) if self.in_sn is not None else x

    def _branch_out(self, z):
        z = self.proj_bn(self.proj(z))
        return self.out_sn(z) if self.out_sn is not None else z


class DotWindowAttention(_AttentionBase):
    """Windowed dot-product spike attention with a relative-position bias table."""

    def __init__(self, dim, heads, window, neuron="lif", steps=5, shortcut="ms", rng=None):
        super().__init__(dim, heads, window, neuron, steps, shortcut, rng)
        self.neuron = neuron
        for name in ("q", "k", "v"):
            setattr(self, f"{name}_lin", Linear(dim, dim, rng=rng))
            setattr(self, f"{name}_bn", BatchNorm1d(dim))
            setattr(self, f"{name}_sn", make_neuron(neuron, steps))
        rows = (2 * window.t_w - 1) * (2 * window.h_w - 1) * (2 * window.w_w - 1)
        gen = rng if rng is not None else np.random.default_rng(0)
        self.rel_bias = Parameter((0.02 * gen.standard_normal((rows, heads))).astype(np.float32))

    def forward(self, x):
        t, b, h, w, d = x.shape
        cfg = self.window.effective((t, h, w))
        win = cfg.size
        s = self._branch_in(x)
        q = self.q_sn(self.q_bn(self.q_lin(s)))
        k = self.k_sn(self.k_bn(self.k_lin(s)))
        v = self.v_sn(self.v_bn(self.v_lin(s)))

        def to_heads(z):
            z, pd = window_partition(cyclic_shift(pad_to_windows(z, win)[0], cfg.shift), win)
            n, nt, _ = z.shape
            return F.transpose(F.reshape(z, (n, nt, self.heads, d // self.heads)), (0, 2, 1, 3)), pd

        qh, pdims = to_heads(q)
        kh, _ = to_heads(k)
        vh, _ = to_heads(v)
        nt = cfg.tokens
        idx = relative_position_index(win)
        if win != self.window.size:
            idx = _remap_index(idx, win, self.window.size)
        bias = F.transpose(F.reshape(self.rel_bias[idx.reshape(-1)], (nt, nt, self.heads)), (2, 0, 1))
        mask = attention_mask((t, h, w), win, cfg.shift)  # (N_w, N_t, N_t)
        n_w = mask.shape[0]
        mask = np.tile(mask[:, None], (b, 1, 1, 1))
        scale = 1.0 / (d // self.heads) if self.neuron == "lif" else 1.0

        nt_per_step = pdims[0]
        spec = {"windows": n_w, "heads": self.heads, "tokens": nt, "head_dim": d // self.heads}
        name = energy._name_of(self)
        energy.record_op(name + ".qk", "attn_qk", energy.count_flops({"kind": "attn_qk", **spec}) // nt_per_step, qh.data, nt_per_step)
        out = sdsa_dot(qh, kh, vh, bias=bias, scale=scale, mask=mask)
        if energy._active is not None:
            attn_map = (qh.data @ np.swapaxes(kh.data, -1, -2) + bias.data) * mask
            energy.record_op(name + ".av", "attn_av", energy.count_flops({"kind": "attn_av", **spec}) // nt_per_step, attn_map, nt_per_step)

        out = F.reshape(F.transpose(out, (0, 2, 1, 3)), (-1, nt, d))
        out = window_reverse(out, win, pdims)
        out = cyclic_unshift(out, cfg.shift)
        out = F.crop(out, (t, b, h, w, d))
        return self._branch_out(out)


def _remap_index(idx, small, full):
    """Map relative offsets of a clipped window into the full-size bias table."""
    ts, hs, ws = small
    tf, hf, wf = full
    r_w = idx % (2 * ws - 1) - (ws - 1)
    r_h = (idx // (2 * ws - 1)) % (2 * hs - 1) - (hs - 1)
    r_t = idx // ((2 * ws - 1) * (2 * hs - 1)) - (ts - 1)
    return (r_t + tf - 1) * (2 * hf - 1) * (2 * wf - 1) + (r_h + hf - 1) * (2 * wf - 1) + (r_w + wf - 1)


class QKTokenAttention(_AttentionBase):
    """Linear-cost token attention: binary per-token gates mask the key spikes."""

    def __init__(self, dim, heads, window, neuron="psn", steps=5, shortcut="ms", rng=None):
        super().__init__(dim, heads, window, neuron, steps, shortcut, rng)
        self.q_lin = Linear(dim, dim, rng=rng)
        self.q_bn = BatchNorm1d(dim)
        self.q_sn = make_neuron(neuron, steps)
        self.k_lin = Linear(dim, dim, rng=rng)
        self.k_bn = BatchNorm1d(dim)
        self.k_sn = make_neuron(neuron, steps)
        gen = rng if rng is not None else np.random.default_rng(0)
        self.pe = Parameter((0.02 * gen.standard_normal(window.size + (dim,))).astype(np.float32))
        self.a_sn = make_neuron(neuron, steps)
        self.z_sn = make_neuron(neuron, steps)

    def positional_encoding(self, dims):
        """Tile the per-window PE over a (T, H, W) volume, honouring the shift."""
        cfg = self.window.effective(dims)
        idx = [
            (np.arange(n) - s) % e
            for n, s, e in zip(dims, cfg.shift, cfg.size)
        ]
        return self.pe[np.ix_(*idx)]

    def forward(self, x):
        t, b, h, w, d = x.shape
        s = self._branch_in(x)
        q = self.q_sn(self.q_bn(self.q_lin(s)))
        pe = F.reshape(self.positional_encoding((t, h, w)), (t, 1, h, w, d))
        k = self.k_sn(self.k_bn(self.k_lin(s)) + pe)
        z, a = qk_token_attention(q, k, self.a_sn, self.heads)
        name = energy._name_of(self)
        per_step = {"windows": 1, "tokens": h * w, "dim": d}
        energy.record_op(name + ".token_sum", "token_sum", energy.count_flops({"kind": "token_sum", **per_step}), q.data, t)
        energy.record_op(name + ".token_mask", "token_mask", energy.count_flops({"kind": "token_mask", **per_step}), a.data, t)
        return self._branch_out(self.z_sn(z))
