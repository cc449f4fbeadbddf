"""Single-file model checkpoints.

Layout (little-endian)::

    b"SDFF"  u32 version
    u32 len  config text (UTF-8 key=value lines)
    u32 count
    count x { u32 len, name, u8 dtype tag, u32 ndim, ndim x u32 dims, raw data }

Only float32 blobs (tag 1) are written.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .model import ModelConfig, SpikeFlowNet

MAGIC = b"SDFF"
VERSION = 1
_TAGS = {1: np.dtype("<f4")}


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, model):
    cfg_text = model.cfg.to_text().encode("utf-8")
    state = model.state_dict()
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(cfg_text)) + cfg_text)
        fh.write(struct.pack("<I", len(state)))
        for name, arr in state.items():
            raw = name.encode("utf-8")
            arr = np.ascontiguousarray(arr, dtype="<f4")
            fh.write(struct.pack("<I", len(raw)) + raw)
            fh.write(struct.pack("<BI", 1, arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


class _Reader:
    def __init__(self, raw, path):
        self.raw, self.pos, self.path = raw, 0, path

    def take(self, n):
        if self.pos + n > len(self.raw):
            raise CheckpointError(f"{self.path}: truncated at byte {self.pos}")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))


def read_checkpoint(path):
    """Return ``(ModelConfig, {name: array})``."""
    r = _Reader(Path(path).read_bytes(), path)
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    (n,) = r.unpack("<I")
    cfg = ModelConfig.from_text(r.take(n).decode("utf-8"))
    (count,) = r.unpack("<I")
    state = {}
    for _ in range(count):
        (n,) = r.unpack("<I")
        name = r.take(n).decode("utf-8")
        tag, ndim = r.unpack("<BI")
        if tag not in _TAGS:
            raise CheckpointError(f"{path}: unknown dtype tag {tag} for {name}")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        dt = _TAGS[tag]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        state[name] = np.frombuffer(r.take(nbytes), dtype=dt).reshape(shape).astype(np.float32)
    if r.pos != len(r.raw):
        raise CheckpointError(f"{path}: {len(r.raw) - r.pos} trailing bytes")
    return cfg, state


def load_checkpoint(path, expect=None):
    """Rebuild the model. If ``expect`` is given its digest must match the stored config."""
    cfg, state = read_checkpoint(path)
    if expect is not None and expect.digest() != cfg.digest():
        raise CheckpointError(
            f"{path}: checkpoint config {cfg.digest()} does not match requested config {expect.digest()}"
        )
    model = SpikeFlowNet(cfg)
    model.load_state_dict(state)
    return model
