# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the kernels in ``_pykernels``.

Signatures and results match the numpy versions; see that module for the
semantics of each function.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor, M_PI

cnp.import_array()

ctypedef fused real:
    float
    double


def im2col(real[:, :, :, ::1] x, int kh, int kw, int stride, int pad, int out_h, int out_w):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((n, out_h, out_w, c, kh, kw), dtype=dtype)
    cdef real[:, :, :, :, :, ::1] o = out
    cdef Py_ssize_t b, oy, ox, ch, i, j, iy, ix
    with nogil:
        for b in range(n):
            for oy in range(out_h):
                for ox in range(out_w):
                    for ch in range(c):
                        for i in range(kh):
                            iy = oy * stride - pad + i
                            if iy < 0 or iy >= h:
                                continue
                            for j in range(kw):
                                ix = ox * stride - pad + j
                                if ix < 0 or ix >= w:
                                    continue
                                o[b, oy, ox, ch, i, j] = x[b, ch, iy, ix]
    return out


def col2im(real[:, :, :, :, :, ::1] cols, int out_h, int out_w, int stride, int pad):
    cdef Py_ssize_t n = cols.shape[0], ih = cols.shape[1], iw = cols.shape[2]
    cdef Py_ssize_t c = cols.shape[3], kh = cols.shape[4], kw = cols.shape[5]
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((n, c, out_h, out_w), dtype=dtype)
    cdef real[:, :, :, ::1] o = out
    cdef Py_ssize_t b, py, px, ch, i, j, oy, ox
    with nogil:
        for b in range(n):
            for py in range(ih):
                for px in range(iw):
                    for ch in range(c):
                        for i in range(kh):
                            oy = py * stride - pad + i
                            if oy < 0 or oy >= out_h:
                                continue
                            for j in range(kw):
                                ox = px * stride - pad + j
                                if ox < 0 or ox >= out_w:
                                    continue
                                o[b, ch, oy, ox] += cols[b, py, px, ch, i, j]
    return out


def lif_forward(real[:, ::1] x, double tau, double v_th, double v_reset):
    cdef Py_ssize_t t_steps = x.shape[0], n = x.shape[1]
    dtype = np.float32 if real is float else np.float64
    h_arr = np.empty((t_steps, n), dtype=dtype)
    s_arr = np.empty((t_steps, n), dtype=dtype)
    cdef real[:, ::1] h = h_arr
    cdef real[:, ::1] s = s_arr
    cdef real decay = <real>(1.0 - 1.0 / tau)
    cdef real inv_tau = <real>(1.0 / tau)
    cdef real vr = <real>v_reset
    cdef real th = <real>v_th
    cdef real ht, st
    cdef Py_ssize_t t, k
    # time-outer keeps every inner pass contiguous; v carries the state
    v_arr = np.full(n, vr, dtype=dtype)
    cdef real[::1] v = v_arr
    with nogil:
        for t in range(t_steps):
            for k in range(n):
                ht = decay * v[k] + inv_tau * x[t, k] + inv_tau * vr
                h[t, k] = ht
                st = 1 if ht >= th else 0
                s[t, k] = st
                v[k] = ht + (vr - ht) * st
    return h_arr, s_arr


def lif_backward(real[:, ::1] grad_s, real[:, ::1] h, real[:, ::1] s,
                 double tau, double v_th, double v_reset, double alpha, bint detach_reset):
    cdef Py_ssize_t t_steps = h.shape[0], n = h.shape[1]
    dtype = np.float32 if real is float else np.float64
    gx_arr = np.empty((t_steps, n), dtype=dtype)
    cdef real[:, ::1] gx = gx_arr
    cdef real decay = <real>(1.0 - 1.0 / tau)
    cdef real inv_tau = <real>(1.0 / tau)
    cdef real a = <real>alpha
    cdef real half_pi_a = <real>(M_PI * alpha / 2.0)
    cdef real vr = <real>v_reset
    cdef real th = <real>v_th
    cdef real gh, sg, z, dv_dh
    cdef Py_ssize_t t, k
    gv_arr = np.zeros(n, dtype=dtype)
    cdef real[::1] gv = gv_arr
    with nogil:
        for t in range(t_steps - 1, -1, -1):
            for k in range(n):
                z = half_pi_a * (h[t, k] - th)
                sg = a / (2 * (1 + z * z))
                dv_dh = 1 - s[t, k]
                if not detach_reset:
                    dv_dh = dv_dh + (vr - h[t, k]) * sg
                gh = grad_s[t, k] * sg + gv[k] * dv_dh
                gx[t, k] = gh * inv_tau
                gv[k] = gh * decay
    return gx_arr


def deposit_events(real[:, :, ::1] grid, double[::1] xs, double[::1] ys,
                   double[::1] ts, double[::1] ps):
    cdef Py_ssize_t nb = grid.shape[0], hh = grid.shape[1], ww = grid.shape[2]
    cdef Py_ssize_t m = xs.shape[0], e
    cdef long x0, y0, t0, xi, yi, ti
    cdef int dx, dy, dt
    cdef double fx, fy, ft, wx, wy, wt, wgt
    with nogil:
        for e in range(m):
            x0 = <long>floor(xs[e])
            y0 = <long>floor(ys[e])
            t0 = <long>floor(ts[e])
            fx = xs[e] - x0
            fy = ys[e] - y0
            ft = ts[e] - t0
            for dt in range(2):
                wt = ft if dt else 1.0 - ft
                ti = t0 + dt
                if wt == 0 or ti < 0 or ti >= nb:
                    continue
                for dy in range(2):
                    wy = fy if dy else 1.0 - fy
                    yi = y0 + dy
                    if wy == 0 or yi < 0 or yi >= hh:
                        continue
                    for dx in range(2):
                        wx = fx if dx else 1.0 - fx
                        xi = x0 + dx
                        if wx == 0 or xi < 0 or xi >= ww:
                            continue
                        wgt = ps[e] * wt * wy * wx
                        grid[ti, yi, xi] += <real>wgt
    return np.asarray(grid)
