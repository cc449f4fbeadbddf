"""The spiking swin U-Net for event-based optical flow.

Pipeline: spiking feature generator (half resolution) -> shortcut patch
embedding -> swin spike encoder stages with patch merging -> residual
bottleneck -> transposed-convolution spike decoders with a flow head at each
scale. Conv-layout features are ``(T, B, C, H, W)``; token-layout features are
``(T, B, H, W, D)``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields

import numpy as np

from . import tensor as F
from .attention import DotWindowAttention, QKTokenAttention, WindowConfig
from .nn import BatchNorm1d, BatchNorm2d, Conv2d, ConvTranspose2d, Linear, Module
from .neurons import make_neuron
from .tensor import ShapeError


@dataclass
class ModelConfig:
    stage_depths: tuple = (2, 2, 6, 2)
    stage_heads: tuple = (3, 6, 12, 24)
    base_dim: int = 96
    sfg_dim: int = 0  # 0 means "same as base_dim"
    patch: int = 2
    window: tuple = (2, 9, 9)
    neuron: str = "lif"
    attention: str = "dot"
    shortcut: str = "ms"
    use_spe_shortcut: bool = True
    encoders: int = 4
    time_steps: int = 5
    in_channels: int = 4
    mlp_ratio: int = 4
    decoder_kernel: int = 3

    def __post_init__(self):
        self.stage_depths = tuple(int(v) for v in self.stage_depths)
        self.stage_heads = tuple(int(v) for v in self.stage_heads)
        self.window = tuple(int(v) for v in self.window)
        self.validate()

    def validate(self):
        if not (len(self.stage_depths) == len(self.stage_heads) == self.encoders):
            raise ValueError("stage_depths, stage_heads and encoders disagree")
        for i, (depth, heads) in enumerate(zip(self.stage_depths, self.stage_heads)):
            if depth % 2:
                raise ValueError(f"stage {i} depth {depth} must be even")
            if self.stage_dim(i) % heads:
                raise ValueError(f"stage {i} dim {self.stage_dim(i)} not divisible by {heads} heads")
        if self.neuron not in ("lif", "psn"):
            raise ValueError(f"neuron must be lif or psn, got {self.neuron!r}")
        if self.attention not in ("dot", "qk"):
            raise ValueError(f"attention must be dot or qk, got {self.attention!r}")
        if self.shortcut not in ("ms", "sew"):
            raise ValueError(f"shortcut must be ms or sew, got {self.shortcut!r}")
        if self.decoder_kernel not in (3, 4):
            raise ValueError("decoder_kernel must be 3 or 4")
        if len(self.window) != 3:
            raise ValueError("window needs three extents (t, h, w)")

    @property
    def feature_dim(self):
        return self.sfg_dim or self.base_dim

    def stage_dim(self, i):
        return self.base_dim * 2 ** i

    @property
    def divisor(self):
        """Input H and W must be multiples of this."""
        return 2 * self.patch * 2 ** (self.encoders - 1)

    # -- text form ----------------------------------------------------------
    def to_text(self):
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name}={v}")
        return "\n".join(lines)

    @classmethod
    def from_text(cls, text):
        return cls.from_dict(dict(line.split("=", 1) for line in text.splitlines() if line.strip()))

    @classmethod
    def from_dict(cls, raw):
        kinds = {f.name: f.default for f in fields(cls)}
        kw = {}
        for key, val in raw.items():
            if key not in kinds:
                raise KeyError(f"unknown model key {key!r}")
            kw[key] = _coerce(val, kinds[key])
        return cls(**kw)

    def digest(self):
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]


def _coerce(val, default):
    if not isinstance(val, str):
        return val
    if isinstance(default, bool):
        low = val.strip().lower()
        if low not in ("true", "false", "1", "0"):
            raise ValueError(f"not a boolean: {val!r}")
        return low in ("true", "1")
    if isinstance(default, int):
        return int(val)
    if isinstance(default, tuple):
        return tuple(int(v) for v in val.split(",") if v.strip())
    return val.strip()


def tiny_config(**overrides):
    """Desk-scale configuration used by the acceptance training run."""
    base = dict(
        stage_depths=(2, 2), stage_heads=(1, 2), base_dim=8, patch=2, window=(2, 4, 4),
        neuron="psn", attention="qk", shortcut="ms", use_spe_shortcut=True,
        encoders=2, time_steps=5, in_channels=4,
    )
    base.update(overrides)
    return ModelConfig(**base)


def to_tokens(x):
    return F.transpose(x, (0, 1, 3, 4, 2))


def to_maps(x):
    return F.transpose(x, (0, 1, 4, 2, 3))


class ConvResBlock(Module):
    """Two 3x3 conv/BN layers with a membrane (ms) or spike (sew) shortcut."""

    def __init__(self, ch, cfg, rng):
        self.sew = cfg.shortcut == "sew"
        steps = cfg.time_steps
        self.sn1 = make_neuron(cfg.neuron, steps)
        self.conv1 = Conv2d(ch, ch, 3, 1, 1, rng=rng)
        self.bn1 = BatchNorm2d(ch)
        self.sn2 = make_neuron(cfg.neuron, steps)
        self.conv2 = Conv2d(ch, ch, 3, 1, 1, rng=rng)
        self.bn2 = BatchNorm2d(ch)

    def forward(self, x):
        y = x if self.sew else self.sn1(x)
        y = self.bn1(self.conv1(y))
        y = self.bn2(self.conv2(self.sn2(y)))
        if self.sew:
            y = self.sn1(y)
        return x + y


class SpikingMLP(Module):
    def __init__(self, dim, hidden, cfg, rng):
        self.sew = cfg.shortcut == "sew"
        steps = cfg.time_steps
        self.sn1 = make_neuron(cfg.neuron, steps)
        self.fc1 = Linear(dim, hidden, rng=rng)
        self.bn1 = BatchNorm1d(hidden)
        self.sn2 = make_neuron(cfg.neuron, steps)
        self.fc2 = Linear(hidden, dim, rng=rng)
        self.bn2 = BatchNorm1d(dim)

    def forward(self, x):
        y = x if self.sew else self.sn1(x)
        y = self.bn1(self.fc1(y))
        y = self.bn2(self.fc2(self.sn2(y)))
        return self.sn1(y) if self.sew else y


class STSFBlock(Module):
    def __init__(self, dim, heads, cfg, shifted, rng):
        window = WindowConfig(*cfg.window, heads=heads)
        if shifted:
            window = window.half_shift()
        self.shifted = shifted
        attn_cls = DotWindowAttention if cfg.attention == "dot" else QKTokenAttention
        self.attn = attn_cls(dim, heads, window, cfg.neuron, cfg.time_steps, cfg.shortcut, rng=rng)
        self.mlp = SpikingMLP(dim, dim * cfg.mlp_ratio, cfg, rng)

    def forward(self, x):
        x = x + self.attn(x)
        return x + self.mlp(x)


class STSFStage(Module):
    def __init__(self, dim, depth, heads, cfg, rng):
        if depth % 2:
            raise ValueError(f"stage depth must be even, got {depth}")
        self.blocks = [STSFBlock(dim, heads, cfg, shifted=bool(i % 2), rng=rng) for i in range(depth)]
        self.entry_sn = make_neuron(cfg.neuron, cfg.time_steps) if cfg.shortcut == "sew" else None

    def forward(self, x):
        if self.entry_sn is not None:
            x = self.entry_sn(x)
        for blk in self.blocks:
            x = blk(x)
        return x


class PatchMerge(Module):
    """Concatenate 2x2 token neighbourhoods and project 4D -> 2D channels."""

    def __init__(self, dim, cfg, rng):
        self.sn = make_neuron(cfg.neuron, cfg.time_steps)
        self.lin = Linear(4 * dim, 2 * dim, rng=rng)
        self.bn = BatchNorm1d(2 * dim)

    def forward(self, x):
        t, b, h, w, d = x.shape
        if h % 2 or w % 2:
            raise ShapeError(f"patch merge needs even spatial dims, got {h}x{w}")
        s = self.sn(x)
        s = F.reshape(s, (t, b, h // 2, 2, w // 2, 2, d))
        s = F.transpose(s, (0, 1, 2, 4, 5, 3, 6))  # neighbour order (0,0),(1,0),(0,1),(1,1)
        s = F.reshape(s, (t, b, h // 2, w // 2, 4 * d))
        return self.bn(self.lin(s))


class FeatureGenerator(Module):
    """Head conv, spike, stride-2 conv, then two residual conv blocks."""

    def __init__(self, cfg, rng):
        c = cfg.feature_dim
        self.conv_head = Conv2d(cfg.in_channels, c, 3, 1, 1, rng=rng)
        self.sn = make_neuron(cfg.neuron, cfg.time_steps)
        self.conv = Conv2d(c, c, 3, 2, 1, rng=rng)
        self.bn = BatchNorm2d(c)
        self.entry_sn = make_neuron(cfg.neuron, cfg.time_steps) if cfg.shortcut == "sew" else None
        self.res = [ConvResBlock(c, cfg, rng), ConvResBlock(c, cfg, rng)]

    def forward(self, x):
        t, b, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ShapeError(f"feature generator needs even H and W, got {h}x{w}")
        z = self.bn(self.conv(self.sn(self.conv_head(x))))
        if self.entry_sn is not None:
            z = self.entry_sn(z)
        for blk in self.res:
            z = blk(z)
        return z


class PatchEmbed(Module):
    """P x P patchifying conv on spikes plus an optional 1x1 strided conv shortcut."""

    def __init__(self, cfg, rng):
        p = cfg.patch
        self.patch = p
        self.sn = make_neuron(cfg.neuron, cfg.time_steps)
        self.conv = Conv2d(cfg.feature_dim, cfg.base_dim, p, p, 0, rng=rng)
        self.bn = BatchNorm2d(cfg.base_dim)
        self.shortcut = Conv2d(cfg.feature_dim, cfg.base_dim, 1, p, 0, rng=rng) if cfg.use_spe_shortcut else None

    def forward(self, x):
        h, w = x.shape[-2:]
        if h % self.patch or w % self.patch:
            raise ShapeError(f"patch {self.patch} does not divide {h}x{w}")
        z = self.bn(self.conv(self.sn(x)))
        if self.shortcut is not None:
            z = z + self.shortcut(x)
        return z


class Decoder(Module):
    """``BN(ConvTrans(SN(x ++ skip ++ flow)))`` followed by a plain conv flow head."""

    def __init__(self, in_ch, out_ch, cfg, rng):
        k = cfg.decoder_kernel
        self.sn = make_neuron(cfg.neuron, cfg.time_steps)
        self.up = ConvTranspose2d(in_ch, out_ch, k, 2, 1, output_padding=1 if k == 3 else 0, rng=rng)
        self.bn = BatchNorm2d(out_ch)
        self.head = Conv2d(out_ch, 2, 1, 1, 0, rng=rng)

    def forward(self, x, skip, flow):
        t = x.shape[0]
        flow_t = F.add(F.Tensor(np.zeros((t,) + flow.shape, dtype=flow.dtype)), F.reshape(flow, (1,) + flow.shape))
        z = self.bn(self.up(self.sn(F.concat([x, skip, flow_t], axis=2))))
        pred = self.head(F.mean(z, axis=0))
        return z, pred


class SpikeFlowNet(Module):
    def __init__(self, cfg=None, rng=None, seed=0):
        cfg = cfg if cfg is not None else ModelConfig()
        cfg.validate()
        rng = rng if rng is not None else np.random.default_rng(seed)
        self.cfg = cfg
        self.sfg = FeatureGenerator(cfg, rng)
        self.spe = PatchEmbed(cfg, rng)
        self.stages = []
        self.merges = []
        for i in range(cfg.encoders):
            dim = cfg.stage_dim(i)
            self.stages.append(STSFStage(dim, cfg.stage_depths[i], cfg.stage_heads[i], cfg, rng))
            if i < cfg.encoders - 1:
                self.merges.append(PatchMerge(dim, cfg, rng))
        deep = cfg.stage_dim(cfg.encoders - 1)
        self.bottleneck_entry = make_neuron(cfg.neuron, cfg.time_steps) if cfg.shortcut == "sew" else None
        self.bottleneck = [ConvResBlock(deep, cfg, rng), ConvResBlock(deep, cfg, rng)]
        self.decoders = []
        for i in range(cfg.encoders):
            skip_ch = cfg.stage_dim(cfg.encoders - 1 - i)
            self.decoders.append(Decoder(2 * skip_ch + 2, skip_ch // 2, cfg, rng))

    def encode(self, x):
        """Return the per-stage encoder outputs in conv layout, shallowest first."""
        z = self.spe(self.sfg(x))
        tokens = to_tokens(z)
        outs = []
        for i, stage in enumerate(self.stages):
            tokens = stage(tokens)
            outs.append(to_maps(tokens))
            if i < len(self.merges):
                tokens = self.merges[i](tokens)
        return outs

    def forward(self, x):
        """Predict flow for a (T, B, C, H, W) spike input.

        Returns a dict with ``flows`` (per-scale (B, 2, h, w) predictions,
        coarsest first) and ``flow`` (the finest one resized to H x W).
        """
        x = F.as_tensor(x)
        if x.ndim == 4:
            x = F.reshape(x, (x.shape[0], 1) + x.shape[1:])
        t, b, c, h, w = x.shape
        cfg = self.cfg
        if c != cfg.in_channels:
            raise ShapeError(f"expected {cfg.in_channels} input channels, got {c}")
        if h % cfg.divisor or w % cfg.divisor:
            raise ShapeError(f"input {h}x{w} not divisible by {cfg.divisor}")
        skips = self.encode(x)
        z = skips[-1]
        if self.bottleneck_entry is not None:
            z = self.bottleneck_entry(z)
        for blk in self.bottleneck:
            z = blk(z)
        flow = F.Tensor(np.zeros((b, 2) + z.shape[-2:], dtype=z.dtype))
        flows = []
        for i, dec in enumerate(self.decoders):
            skip = skips[len(skips) - 1 - i]
            if skip.shape[-2:] != z.shape[-2:]:
                raise ShapeError(f"decoder {i}: skip {skip.shape} vs input {z.shape}")
            z, flow = dec(z, skip, flow)
            flows.append(flow)
        full = F.upsample_bilinear(flow, (h, w)) if flow.shape[-2:] != (h, w) else flow
        return {"flows": flows, "flow": full}
