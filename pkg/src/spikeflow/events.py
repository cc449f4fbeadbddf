"""Event streams, the discretised event volume, and the spike-input layout.

File formats
------------
CSV: one event per line, ``x,y,t_us,p`` with ``p`` in {0, 1}.

bin_v1 (little-endian): magic ``b"EVT1"``, ``u32 width``, ``u32 height``,
``u64 count``, then ``count`` packed records ``(u16 x, u16 y, u64 t, i8 p)``.
Polarity is written as {0, 1}; on read both {0, 1} and {-1, +1} are accepted.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels

BIN_MAGIC = b"EVT1"
_HEADER = struct.Struct("<4sIIQ")
_RECORD = np.dtype([("x", "<u2"), ("y", "<u2"), ("t", "<u8"), ("p", "i1")])


class EventFormatError(ValueError):
    """Malformed or inconsistent event data."""


@dataclass
class EventStream:
    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    p: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.int64)
        self.y = np.asarray(self.y, dtype=np.int64)
        self.t = np.asarray(self.t, dtype=np.int64)
        self.p = np.asarray(self.p, dtype=np.int64)
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise EventFormatError("event field arrays differ in length")
        if n and np.any(np.diff(self.t) < 0):
            raise EventFormatError("event timestamps must be non-decreasing")
        if n and (self.x.min() < 0 or self.x.max() >= self.width or self.y.min() < 0 or self.y.max() >= self.height):
            raise EventFormatError(f"event coordinates outside {self.width}x{self.height} sensor")
        if n and not np.all(np.abs(self.p) == 1):
            raise EventFormatError("polarity must be -1 or +1")

    def __len__(self):
        return len(self.t)

    @classmethod
    def from_arrays(cls, x, y, t, p, width, height, sort=True):
        t = np.asarray(t)
        if sort:
            order = np.argsort(t, kind="stable")
            x, y, t, p = (np.asarray(a)[order] for a in (x, y, t, p))
        return cls(x, y, t, p, width, height)


def _map_polarity(p, lineno=None, allow_signed=False):
    if p == 1:
        return 1
    if p == 0 or (allow_signed and p == -1):
        return -1
    where = f" on line {lineno}" if lineno is not None else ""
    raise EventFormatError(f"bad polarity {p!r}{where}")


def parse_events(path, fmt=None, width=None, height=None):
    """Read an event file. ``fmt`` is "csv" or "bin_v1" (guessed from the suffix if omitted).

    CSV files carry no sensor size; unless given, it is taken from the
    largest coordinates present.
    """
    path = Path(path)
    if fmt is None:
        fmt = "csv" if path.suffix.lower() in (".csv", ".txt") else "bin_v1"
    if fmt == "csv":
        return _parse_csv(path, width, height)
    if fmt == "bin_v1":
        return _parse_bin(path)
    raise ValueError(f"unknown event format {fmt!r}")


def _parse_csv(path, width, height):
    xs, ys, ts, ps = [], [], [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise EventFormatError(f"line {lineno}: expected 4 fields, got {len(parts)}")
            try:
                x, y, t, p = (int(v) for v in parts)
            except ValueError:
                raise EventFormatError(f"line {lineno}: non-integer field in {line!r}") from None
            if ts and t < ts[-1]:
                raise EventFormatError(f"line {lineno}: timestamp {t} precedes {ts[-1]}")
            if x < 0 or y < 0:
                raise EventFormatError(f"line {lineno}: negative coordinate")
            xs.append(x)
            ys.append(y)
            ts.append(t)
            ps.append(_map_polarity(p, lineno))
    if not ts:
        raise EventFormatError(f"{path}: no events")
    width = width if width is not None else max(xs) + 1
    height = height if height is not None else max(ys) + 1
    return EventStream(xs, ys, ts, ps, width, height)


def _parse_bin(path):
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise EventFormatError(f"{path}: file too short for bin_v1 header")
    magic, width, height, count = _HEADER.unpack_from(raw)
    if magic != BIN_MAGIC:
        raise EventFormatError(f"{path}: bad magic {magic!r}")
    body = raw[_HEADER.size:]
    if len(body) != count * _RECORD.itemsize:
        raise EventFormatError(f"{path}: header says {count} events, body holds {len(body) / _RECORD.itemsize:g}")
    if count == 0:
        raise EventFormatError(f"{path}: no events")
    rec = np.frombuffer(body, dtype=_RECORD)
    p = rec["p"].astype(np.int64)
    if not np.all((p == 0) | (p == 1) | (p == -1)):
        bad = int(np.flatnonzero(~((p == 0) | (p == 1) | (p == -1)))[0])
        raise EventFormatError(f"{path}: bad polarity {p[bad]} in record {bad}")
    p = np.where(p == 1, 1, -1)
    t = rec["t"].astype(np.int64)
    if np.any(np.diff(t) < 0):
        bad = int(np.flatnonzero(np.diff(t) < 0)[0]) + 1
        raise EventFormatError(f"{path}: timestamp out of order at record {bad}")
    return EventStream(rec["x"], rec["y"], t, p, int(width), int(height))


def write_events(path, stream, fmt="bin_v1"):
    path = Path(path)
    pol = np.where(stream.p > 0, 1, 0)
    if fmt == "csv":
        with open(path, "w", encoding="utf-8") as fh:
            for x, y, t, p in zip(stream.x, stream.y, stream.t, pol):
                fh.write(f"{x},{y},{t},{p}\n")
        return
    if fmt != "bin_v1":
        raise ValueError(f"unknown event format {fmt!r}")
    rec = np.empty(len(stream), dtype=_RECORD)
    rec["x"], rec["y"], rec["t"], rec["p"] = stream.x, stream.y, stream.t, pol
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(BIN_MAGIC, stream.width, stream.height, len(stream)))
        fh.write(rec.tobytes())


@dataclass
class VoxelGrid:
    data: np.ndarray  # (bins, H, W)

    @property
    def bins(self):
        return self.data.shape[0]


def normalize_timestamps(t, bins):
    """Map timestamps linearly so the first lands on bin 0 and the last on ``bins - 1``."""
    t = np.asarray(t, dtype=np.float64)
    if len(t) == 0:
        return t
    span = t[-1] - t[0]
    if span <= 0:
        return np.zeros_like(t)
    return (bins - 1) * (t - t[0]) / span


def voxelize(stream, bins, window=None, xs=None, ys=None):
    """Discretised event volume with a bilinear kernel in x, y and t.

    ``window`` is a closed interval ``(t_start, t_end)`` in microseconds;
    events outside it are ignored. ``xs``/``ys`` optionally replace the integer
    pixel coordinates (e.g. rectified, sub-pixel positions).
    """
    if bins < 2:
        raise ValueError("voxelize needs at least 2 bins")
    if window is None:
        window = (int(stream.t[0]), int(stream.t[-1])) if len(stream) else (0, 0)
    t0, t1 = window
    if t1 < t0:
        raise ValueError(f"empty window {window}")
    if t1 == t0 and len(np.unique(stream.t)) > 1:
        raise ValueError("zero-duration window over a stream with several timestamps")
    keep = (stream.t >= t0) & (stream.t <= t1)
    grid = np.zeros((bins, stream.height, stream.width), dtype=np.float32)
    if not np.any(keep):
        return VoxelGrid(grid)
    ex = (np.asarray(xs, np.float64) if xs is not None else stream.x.astype(np.float64))[keep]
    ey = (np.asarray(ys, np.float64) if ys is not None else stream.y.astype(np.float64))[keep]
    et = normalize_timestamps(stream.t[keep], bins)
    ep = stream.p[keep].astype(np.float64)
    kernels.deposit_events(
        grid,
        np.ascontiguousarray(ex),
        np.ascontiguousarray(ey),
        np.ascontiguousarray(et),
        np.ascontiguousarray(ep),
    )
    return VoxelGrid(grid)


@dataclass
class SpikeInput:
    data: np.ndarray  # (T, 2n, H, W)
    bins: int
    blocks: int

    @property
    def steps(self):
        return self.data.shape[0]

    @property
    def channels(self):
        return self.data.shape[1]


def chunk_to_spike_input(voxel, blocks):
    """Split ``bins`` into time steps of ``blocks`` consecutive bins each.

    Channel order within a step is (bin0+, bin0-, bin1+, bin1-, ...), where
    ``+`` holds max(V, 0) and ``-`` holds max(-V, 0).
    """
    v = voxel.data if isinstance(voxel, VoxelGrid) else np.asarray(voxel)
    bins = v.shape[0]
    if blocks <= 0 or bins % blocks:
        raise ValueError(f"{bins} bins cannot be split into blocks of {blocks}")
    steps = bins // blocks
    pos = np.maximum(v, 0)
    neg = np.maximum(-v, 0)
    split = np.stack([pos, neg], axis=1)  # (bins, 2, H, W)
    out = split.reshape(steps, 2 * blocks, *v.shape[1:])
    return SpikeInput(np.ascontiguousarray(out, dtype=np.float32), bins, blocks)


def spike_input_to_voxel(si):
    """Inverse of :func:`chunk_to_spike_input` (pos minus neg planes)."""
    d = si.data
    split = d.reshape(si.bins, 2, *d.shape[2:])
    return split[:, 0] - split[:, 1]


def events_to_spike_input(stream, bins=10, blocks=2, window=None):
    return chunk_to_spike_input(voxelize(stream, bins, window), blocks)
