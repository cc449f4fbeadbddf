"""Pure-numpy implementations of the hot kernels.

Every function here has a twin with the same signature in ``_ckernels.pyx``.
The selection between the two happens in :mod:`spikeflow.kernels`.
"""

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(x, kh, kw, stride, pad, out_h, out_w):
    """Gather sliding patches of ``x`` (N, C, H, W).

    Returns an array of shape (N, out_h, out_w, C, kh, kw). Positions that fall
    outside the zero-padded input read as zero.
    """
    n, c, h, w = x.shape
    need_h = (out_h - 1) * stride + kh
    need_w = (out_w - 1) * stride + kw
    xp = np.zeros((n, c, max(need_h, h + 2 * pad), max(need_w, w + 2 * pad)), dtype=x.dtype)
    xp[:, :, pad:pad + h, pad:pad + w] = x
    xp = xp[:, :, :need_h, :need_w]
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5))


def col2im(cols, out_h, out_w, stride, pad):
    """Scatter-add patches back onto an (N, C, out_h, out_w) image.

    ``cols`` has shape (N, IH, IW, C, kh, kw); patch (ih, iw) tap (i, j) lands
    on output row ``ih*stride - pad + i``. Taps outside the output are dropped.
    """
    n, ih, iw, c, kh, kw = cols.shape
    ph = max((ih - 1) * stride + kh, out_h + pad)
    pw = max((iw - 1) * stride + kw, out_w + pad)
    buf = np.zeros((n, c, ph, pw), dtype=cols.dtype)
    src = cols.transpose(0, 3, 1, 2, 4, 5)
    for i in range(kh):
        for j in range(kw):
            buf[:, :, i:i + stride * ih:stride, j:j + stride * iw:stride] += src[..., i, j]
    return np.ascontiguousarray(buf[:, :, pad:pad + out_h, pad:pad + out_w])


def lif_forward(x, tau, v_th, v_reset):
    """Run hard-reset LIF dynamics over the leading time axis of ``x`` (T, N).

    Returns the pre-spike membrane ``h`` and the binary spikes ``s``.
    """
    t_steps = x.shape[0]
    h = np.empty_like(x)
    s = np.empty_like(x)
    v = np.full(x.shape[1:], v_reset, dtype=x.dtype)
    decay = x.dtype.type(1.0 - 1.0 / tau)
    inv_tau = x.dtype.type(1.0 / tau)
    vr = x.dtype.type(v_reset)
    for t in range(t_steps):
        ht = decay * v + inv_tau * x[t] + inv_tau * vr
        st = (ht >= v_th).astype(x.dtype)
        h[t] = ht
        s[t] = st
        v = ht * (1 - st) + vr * st
    return h, s


def _atan_grad(v, alpha):
    return alpha / (2.0 * (1.0 + (math.pi * alpha * v / 2.0) ** 2))


def lif_backward(grad_s, h, s, tau, v_th, v_reset, alpha, detach_reset):
    """Backpropagate through time for :func:`lif_forward`.

    ``grad_s`` is dL/dS for every step. Returns dL/dX.
    """
    t_steps = h.shape[0]
    grad_x = np.empty_like(h)
    grad_v = np.zeros(h.shape[1:], dtype=h.dtype)
    decay = 1.0 - 1.0 / tau
    for t in range(t_steps - 1, -1, -1):
        sg = _atan_grad(h[t] - v_th, alpha).astype(h.dtype)
        dv_dh = 1.0 - s[t]
        if not detach_reset:
            dv_dh = dv_dh + (v_reset - h[t]) * sg
        grad_h = grad_s[t] * sg + grad_v * dv_dh
        grad_x[t] = grad_h / tau
        grad_v = grad_h * decay
    return grad_x


def deposit_events(grid, xs, ys, ts, ps):
    """Trilinearly splat signed events into ``grid`` (B, H, W) in place.

    ``ts`` are already normalised to bin units. Corners falling outside the
    grid are skipped.
    """
    nb, hh, ww = grid.shape
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    t0 = np.floor(ts).astype(np.int64)
    fx = xs - x0
    fy = ys - y0
    ft = ts - t0
    for dt in (0, 1):
        wt = (1.0 - ft) if dt == 0 else ft
        for dy in (0, 1):
            wy = (1.0 - fy) if dy == 0 else fy
            for dx in (0, 1):
                wx = (1.0 - fx) if dx == 0 else fx
                wgt = ps * wt * wy * wx
                xi, yi, ti = x0 + dx, y0 + dy, t0 + dt
                keep = (
                    (wgt != 0)
                    & (xi >= 0) & (xi < ww)
                    & (yi >= 0) & (yi < hh)
                    & (ti >= 0) & (ti < nb)
                )
                np.add.at(grid, (ti[keep], yi[keep], xi[keep]), wgt[keep].astype(grid.dtype))
    return grid
