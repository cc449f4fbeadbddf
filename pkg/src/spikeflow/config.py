"""Flat ``key=value`` run configuration with ``model.``, ``train.`` and ``data.`` sections.

Example::

    # comment
    model.attention = qk
    model.stage_depths = 2,2
    train.lr = 1e-3
    data.size = 32

Unknown keys are rejected. Later sources (command-line flags) override
earlier ones (the file).
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from .model import ModelConfig, tiny_config
from .train import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    train_dir: str = ""
    val_dir: str = ""
    size: int = 32
    count: int = 64
    bins: int = 10
    blocks: int = 2
    pattern: str = "dots"
    min_flow: float = 1.0
    max_flow: float = 3.0
    flow: str = ""  # fixed "u,v" for every scene; empty means random


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=tiny_config)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)


def _section_types(obj):
    return {f.name: getattr(obj, f.name) for f in fields(obj)}


def _parse_scalar(raw, default, key):
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(v) for v in raw.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None
    return raw


def parse_pairs(lines, source="<config>"):
    pairs = {}
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        pairs[key] = val
    return pairs


def build(pairs, base=None):
    """Apply ``section.key -> text`` pairs on top of ``base`` (defaults if omitted)."""
    base = base if base is not None else RunConfig()
    sections = {
        "model": _section_types(base.model),
        "train": _section_types(base.train),
        "data": _section_types(base.data),
    }
    for key, raw in pairs.items():
        sec, _, name = key.partition(".")
        if sec not in sections or name not in sections[sec]:
            raise ConfigError(f"unknown config key {key!r}")
        sections[sec][name] = _parse_scalar(raw, sections[sec][name], key)
    try:
        return RunConfig(
            model=ModelConfig(**sections["model"]),
            train=TrainConfig(**sections["train"]),
            data=DataConfig(**sections["data"]),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load(path=None, overrides=None):
    pairs = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {path} not found")
        pairs.update(parse_pairs(p.read_text(encoding="utf-8").splitlines(), str(p)))
    pairs.update(overrides or {})
    return build(pairs)


def to_text(cfg):
    out = []
    for sec in ("model", "train", "data"):
        obj = getattr(cfg, sec)
        for f in fields(obj):
            v = getattr(obj, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = str(v).lower()
            out.append(f"{sec}.{f.name} = {v}")
    return "\n".join(out) + "\n"
