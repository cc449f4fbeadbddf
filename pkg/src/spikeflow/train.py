"""Supervised training with BPTT through the spiking network, and flow metrics."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import energy
from . import tensor as F
from .events import events_to_spike_input
from .synth import constant_flow_field, make_scene, random_flow


class NumericError(RuntimeError):
    """Raised when the loss or gradients stop being finite."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 1e-2
    lr_step: int = 10  # epochs between halvings
    lr_gamma: float = 0.5
    epochs: int = 1
    batch: int = 4
    seed: int = 0
    multiscale: bool = False
    max_steps: int = 0  # 0 means no cap

    def __post_init__(self):
        if not self.lr >= 0:
            raise ValueError(f"lr must be non-negative, got {self.lr}")
        if self.batch <= 0 or self.epochs < 0 or self.lr_step <= 0:
            raise ValueError("batch and lr_step must be positive, epochs non-negative")


def lr_at_epoch(cfg, epoch):
    return cfg.lr * cfg.lr_gamma ** (epoch // cfg.lr_step)


class AdamW:
    """Adam with decoupled weight decay."""

    def __init__(self, params, lr=1e-3, weight_decay=1e-2, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad.astype(p.data.dtype, copy=False)
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            if self.lr == 0:
                continue
            p.data *= 1.0 - self.lr * self.weight_decay
            p.data -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


# -- loss and metrics ---------------------------------------------------------

def _valid_mask(gt, valid):
    if valid is None:
        return np.ones(gt.shape[:1] + gt.shape[2:], bool)
    return np.asarray(valid, bool)


def l1_flow_loss(pred, gt, valid=None):
    """Mean over valid pixels of ``|du| + |dv|``.

    ``pred`` is a (B, 2, H, W) tensor, ``gt`` a matching array and ``valid`` a
    (B, H, W) boolean mask (all pixels when omitted).
    """
    gt = np.asarray(gt, dtype=pred.dtype)
    if pred.shape != gt.shape:
        raise F.ShapeError(f"prediction {pred.shape} vs ground truth {gt.shape}")
    mask = _valid_mask(gt, valid)
    n = int(mask.sum())
    if n == 0:
        raise ValueError("l1_flow_loss: no valid pixels")
    w = F.Tensor(mask[:, None].astype(pred.dtype))
    err = F.abs_(pred - F.Tensor(gt)) * w
    return F.sum_axis(err) / float(n)


@dataclass
class Metrics:
    aee: float
    outlier_pct: float
    aae: float
    pixels: int = 0


def flow_errors(pred, gt, valid=None):
    """Per-pixel endpoint error and angular error (degrees) on valid pixels."""
    pred = np.asarray(pred, np.float64)
    gt = np.asarray(gt, np.float64)
    mask = _valid_mask(gt, valid)
    pu, pv = pred[:, 0][mask], pred[:, 1][mask]
    gu, gv = gt[:, 0][mask], gt[:, 1][mask]
    epe = np.hypot(pu - gu, pv - gv)
    cos = (pu * gu + pv * gv + 1.0) / np.sqrt((pu * pu + pv * pv + 1.0) * (gu * gu + gv * gv + 1.0))
    ang = np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))
    return epe, ang


def metrics_from_errors(epe, ang):
    if len(epe) == 0:
        raise ValueError("no valid pixels to evaluate")
    return Metrics(
        aee=float(np.mean(epe)),
        outlier_pct=float(100.0 * np.mean(epe > 3.0)),
        aae=float(np.mean(ang)),
        pixels=int(len(epe)),
    )


def flow_metrics(pred, gt, valid=None):
    return metrics_from_errors(*flow_errors(pred, gt, valid))


# -- data ------------------------------------------------------------------

class FlowDataset:
    """In-memory samples: spike inputs (N, T, C, H, W), flow (N, 2, H, W), valid (N, H, W)."""

    def __init__(self, inputs, flows, valid=None):
        self.inputs = np.asarray(inputs, np.float32)
        self.flows = np.asarray(flows, np.float32)
        self.valid = np.ones((len(self.flows),) + self.flows.shape[2:], bool) if valid is None else np.asarray(valid, bool)
        if not (len(self.inputs) == len(self.flows) == len(self.valid)):
            raise ValueError("inputs, flows and valid masks differ in length")

    def __len__(self):
        return len(self.inputs)

    def subset(self, idx):
        return FlowDataset(self.inputs[idx], self.flows[idx], self.valid[idx])

    def batches(self, batch, rng=None):
        """Yield ``(x (T, B, C, H, W), flow, valid)``; shuffled when ``rng`` is given."""
        order = rng.permutation(len(self)) if rng is not None else np.arange(len(self))
        for i in range(0, len(order), batch):
            idx = np.sort(order[i:i + batch]) if rng is None else order[i:i + batch]
            x = np.ascontiguousarray(np.moveaxis(self.inputs[idx], 1, 0))
            yield x, self.flows[idx], self.valid[idx]


def synthetic_sample(size, flow, rng, bins=10, blocks=2, pattern="dots"):
    stream = make_scene(size, flow, rng, pattern=pattern)
    if len(stream) == 0:
        si = np.zeros((bins // blocks, 2 * blocks, size, size), np.float32)
    else:
        si = events_to_spike_input(stream, bins, blocks).data
    return si, constant_flow_field(size, flow)


def make_synthetic_dataset(n, size=32, seed=0, magnitude=(1.0, 3.0), bins=10, blocks=2, pattern="dots"):
    """``n`` translating scenes, each with its own child seed so order and threading do not matter."""
    children = np.random.SeedSequence(seed).spawn(n)
    xs, fs = [], []
    for child in children:
        rng = np.random.default_rng(child)
        flow = random_flow(rng, magnitude)
        x, f = synthetic_sample(size, flow, rng, bins, blocks, pattern)
        xs.append(x)
        fs.append(f)
    return FlowDataset(np.stack(xs), np.stack(fs))


# -- training --------------------------------------------------------------

def compute_loss(out, gt, valid, multiscale=False):
    if not multiscale:
        return l1_flow_loss(out["flow"], gt, valid)
    size = gt.shape[-2:]
    total = None
    for f in out["flows"]:
        f = F.upsample_bilinear(f, size) if f.shape[-2:] != size else f
        term = l1_flow_loss(f, gt, valid)
        total = term if total is None else total + term
    return total


def grad_norms(model):
    return {name: float(np.linalg.norm(p.grad)) if p.grad is not None else 0.0 for name, p in model.named_parameters()}


def _diagnose(model, x):
    for name, mod in model.named_modules():
        mod._profile_name = name or type(mod).__name__
    with energy.profiling() as prof, F.no_grad():
        model(x)
    rates = {name: st.ones / st.total for name, st in prof.layers.items() if st.binary and st.total}
    norms = grad_norms(model)
    bad = sorted(n for n, v in norms.items() if not math.isfinite(v))
    return {"spike_rates": rates, "grad_norms": norms, "nonfinite_grads": bad}


def train_step(model, opt, x, gt, valid, multiscale=False):
    opt.zero_grad()
    out = model(x)
    loss = compute_loss(out, gt, valid, multiscale)
    value = float(loss.data)
    if not math.isfinite(value):
        raise NumericError(f"loss became {value}", _diagnose(model, x))
    loss.backward()
    for name, p in model.named_parameters():
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise NumericError(f"non-finite gradient in {name}", _diagnose(model, x))
    opt.step()
    return value


class MetricLog:
    """Append JSON-lines records to a file (or just keep them in memory)."""

    def __init__(self, path=None):
        self.path = path
        self.records = []

    def write(self, **rec):
        self.records.append(rec)
        if self.path is not None:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(rec) + "\n")


def train_epoch(model, dataset, cfg, opt, epoch=0, rng=None, step_budget=None):
    """One pass over ``dataset``. Returns ``{"loss": mean, "steps": n, "losses": [...]}``."""
    opt.lr = lr_at_epoch(cfg, epoch)
    rng = rng if rng is not None else np.random.default_rng(cfg.seed + epoch)
    losses = []
    for x, gt, valid in dataset.batches(cfg.batch, rng):
        if step_budget is not None and len(losses) >= step_budget:
            break
        losses.append(train_step(model, opt, x, gt, valid, cfg.multiscale))
    return {"loss": float(np.mean(losses)) if losses else float("nan"), "steps": len(losses), "losses": losses}


def evaluate(model, dataset, batch=8):
    if len(dataset) == 0:
        raise ValueError("evaluate: empty dataset")
    epes, angs = [], []
    with F.no_grad():
        for x, gt, valid in dataset.batches(batch):
            pred = model(x)["flow"].data
            e, a = flow_errors(pred, gt, valid)
            epes.append(e)
            angs.append(a)
    return metrics_from_errors(np.concatenate(epes), np.concatenate(angs))


def zero_flow_metrics(dataset):
    return flow_metrics(np.zeros_like(dataset.flows), dataset.flows, dataset.valid)


def fit(model, train_set, cfg, val_set=None, log=None, on_epoch=None):
    """Train for ``cfg.epochs`` epochs (or until ``cfg.max_steps``). Returns the metric log."""
    log = log if log is not None else MetricLog()
    opt = AdamW(model.parameters(), cfg.lr, cfg.weight_decay)
    steps = 0
    for epoch in range(cfg.epochs):
        budget = cfg.max_steps - steps if cfg.max_steps else None
        if budget is not None and budget <= 0:
            break
        stats = train_epoch(model, train_set, cfg, opt, epoch, np.random.default_rng([cfg.seed, epoch]), budget)
        steps += stats["steps"]
        log.write(epoch=epoch, split="train", loss=stats["loss"], aee=None, outlier_pct=None, aae=None,
                  lr=opt.lr, steps=steps)
        if val_set is not None:
            m = evaluate(model, val_set)
            log.write(epoch=epoch, split="val", loss=None, aee=m.aee, outlier_pct=m.outlier_pct, aae=m.aae)
        if on_epoch is not None:
            on_epoch(epoch, stats)
    return log
