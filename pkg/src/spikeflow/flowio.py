"""Middlebury ``.flo`` files and colour-wheel rendering of flow fields."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

FLO_MAGIC = 202021.25


class FlowFormatError(ValueError):
    pass


def write_flo(path, flow):
    """Write a (2, H, W) or (H, W, 2) array as interleaved little-endian f32."""
    flow = np.asarray(flow, dtype=np.float32)
    if flow.ndim != 3:
        raise FlowFormatError(f"flow must be 3-D, got shape {flow.shape}")
    if flow.shape[0] == 2 and flow.shape[-1] != 2:
        flow = np.moveaxis(flow, 0, -1)
    h, w, _ = flow.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<fii", FLO_MAGIC, w, h))
        fh.write(np.ascontiguousarray(flow, dtype="<f4").tobytes())


def read_flo(path):
    """Return a (2, H, W) float32 array."""
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise FlowFormatError(f"{path}: too short for a .flo header")
    magic, w, h = struct.unpack_from("<fii", raw)
    if magic != np.float32(FLO_MAGIC):
        raise FlowFormatError(f"{path}: bad magic {magic}")
    if w <= 0 or h <= 0 or len(raw) - 12 != 8 * w * h:
        raise FlowFormatError(f"{path}: size {w}x{h} does not match {len(raw) - 12} payload bytes")
    data = np.frombuffer(raw, dtype="<f4", offset=12).reshape(h, w, 2)
    return np.ascontiguousarray(np.moveaxis(data, -1, 0), dtype=np.float32)


def flow_to_rgb(flow, valid=None, percentile=99.0):
    """Hue encodes direction, saturation encodes magnitude.

    Magnitude is normalised by the given percentile of the valid pixels so a
    few outliers do not wash out the image. Invalid pixels are black.
    """
    from PIL import Image

    flow = np.asarray(flow, dtype=np.float64)
    u, v = flow[0], flow[1]
    mag = np.hypot(u, v)
    valid = np.ones(mag.shape, bool) if valid is None else np.asarray(valid, bool)
    ref = np.percentile(mag[valid], percentile) if valid.any() else 0.0
    sat = np.clip(mag / ref, 0.0, 1.0) if ref > 0 else np.zeros_like(mag)
    hue = (np.arctan2(-v, -u) / np.pi + 1.0) / 2.0  # [0, 1]
    hsv = np.stack([hue * 255.0, sat * 255.0, np.full_like(mag, 255.0)], axis=-1)
    hsv[~valid] = 0.0
    img = Image.fromarray(np.round(hsv).astype(np.uint8), mode="HSV").convert("RGB")
    return np.asarray(img)


def save_flow_image(path, flow, valid=None):
    from PIL import Image

    Image.fromarray(flow_to_rgb(flow, valid)).save(path)
