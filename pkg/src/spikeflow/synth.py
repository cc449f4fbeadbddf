"""Synthetic translating scenes with exact ground-truth flow.

A periodic texture (Gaussian dots or oriented bars) translates by a constant
``(u, v)`` pixels over one window. Events are emitted wherever the per-pixel
log intensity drifts by more than a contrast threshold from its last
reference level, with timestamps interpolated between render sub-steps.
"""

from __future__ import annotations

import numpy as np

from .events import EventStream

DURATION_US = 100_000


def _periodic_offset(coord, centre, size):
    d = coord - centre
    return d - size * np.round(d / size)


def render(size, centres, amps, sigma, shift, pattern="dots", angles=None):
    """Intensity image of the texture translated by ``shift = (dx, dy)``."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    img = np.full((size, size), 0.2)
    for k in range(len(centres)):
        cx = centres[k, 0] + shift[0]
        cy = centres[k, 1] + shift[1]
        dx = _periodic_offset(xx, cx, size)
        dy = _periodic_offset(yy, cy, size)
        if pattern == "dots":
            d2 = dx * dx + dy * dy
        else:
            c, s = np.cos(angles[k]), np.sin(angles[k])
            across = -s * dx + c * dy
            along = c * dx + s * dy
            d2 = across * across + (along / 4.0) ** 2
        img += amps[k] * np.exp(-d2 / (2 * sigma * sigma))
    return img


def make_scene(size, flow, rng, pattern="dots", n_items=None, sigma=1.2, substeps=40,
               contrast=0.15, duration_us=DURATION_US):
    """Simulate one window of events for a texture moving at ``flow`` px/window."""
    if pattern not in ("dots", "bars"):
        raise ValueError(f"unknown pattern {pattern!r}")
    n_items = n_items if n_items is not None else max(4, size * size // 50)
    centres = rng.uniform(0, size, size=(n_items, 2))
    amps = rng.uniform(0.5, 1.0, size=n_items)
    angles = rng.uniform(0, np.pi, size=n_items)
    u, v = flow

    ref = np.log(render(size, centres, amps, sigma, (0.0, 0.0), pattern, angles))
    prev = ref.copy()
    xs, ys, ts, ps = [], [], [], []
    for j in range(1, substeps + 1):
        tau = j / substeps
        cur = np.log(render(size, centres, amps, sigma, (u * tau, v * tau), pattern, angles))
        t_prev = (j - 1) / substeps * duration_us
        t_cur = tau * duration_us
        while True:
            diff = cur - ref
            fire = np.abs(diff) >= contrast
            if not fire.any():
                break
            yy, xx = np.nonzero(fire)
            sign = np.sign(diff[fire])
            level = ref[fire] + sign * contrast
            # linear interpolation of the crossing time within the sub-step
            denom = cur[fire] - prev[fire]
            frac = np.where(np.abs(denom) > 1e-12, (level - prev[fire]) / np.where(denom == 0, 1, denom), 1.0)
            frac = np.clip(frac, 0.0, 1.0)
            xs.append(xx)
            ys.append(yy)
            ts.append(t_prev + frac * (t_cur - t_prev))
            ps.append(sign.astype(np.int64))
            ref[fire] = level
        prev = cur
    if xs:
        x = np.concatenate(xs)
        y = np.concatenate(ys)
        t = np.round(np.concatenate(ts)).astype(np.int64)
        p = np.concatenate(ps)
    else:
        x = y = t = p = np.zeros(0, np.int64)
    return EventStream.from_arrays(x, y, t, p, size, size)


def random_flow(rng, magnitude=(1.0, 3.0)):
    mag = rng.uniform(*magnitude)
    ang = rng.uniform(0, 2 * np.pi)
    return float(mag * np.cos(ang)), float(mag * np.sin(ang))


def constant_flow_field(size, flow):
    """(2, H, W) array filled with ``flow``."""
    out = np.empty((2, size, size), np.float32)
    out[0] = flow[0]
    out[1] = flow[1]
    return out
