"""``spikeflow`` command-line tool: synth, train, eval, energy, viz.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .checkpoint import CheckpointError, load_checkpoint, read_checkpoint, save_checkpoint
from .energy import estimate_energy
from .events import EventFormatError, events_to_spike_input, parse_events, write_events
from .flowio import FlowFormatError, read_flo, save_flow_image, write_flo
from .model import SpikeFlowNet
from .synth import constant_flow_field, make_scene, random_flow
from .train import FlowDataset, MetricLog, NumericError, evaluate, fit

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def worker_threads():
    raw = os.environ.get("SDFF_THREADS", "")
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"SDFF_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise UsageError("SDFF_THREADS must be at least 1")
    return n


def _flow_arg(text):
    try:
        u, v = (float(s) for s in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected u,v, got {text!r}") from None
    return u, v


def _run_config(args, extra=None):
    overrides = dict(extra or {})
    if getattr(args, "seed", None) is not None:
        overrides["train.seed"] = str(args.seed)
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    try:
        return cfgmod.load(args.config, overrides)
    except cfgmod.ConfigError as exc:
        raise UsageError(str(exc)) from None


def _require_dir(path, what):
    if path is None or not Path(path).is_dir():
        raise DataError(f"{what} directory {path!r} does not exist")
    return Path(path)


def _require_file(path, what):
    if path is None or not Path(path).is_file():
        raise DataError(f"{what} {path!r} does not exist")
    return Path(path)


# -- datasets on disk ---------------------------------------------------------

def _synth_one(args):
    seq, size, fixed, magnitude, pattern = args
    rng = np.random.default_rng(seq)
    flow = fixed if fixed is not None else random_flow(rng, magnitude)
    return flow, make_scene(size, flow, rng, pattern=pattern)


def synthesize(out, count, size, seed, flow=None, magnitude=(1.0, 3.0), pattern="dots", threads=1):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(s, size, flow, magnitude, pattern) for s in np.random.SeedSequence(seed).spawn(count)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        results = list(pool.map(_synth_one, jobs))
    entries = []
    for i, (fl, stream) in enumerate(results):
        ev, fo = f"{i:05d}.bin", f"{i:05d}.flo"
        write_events(out / ev, stream, "bin_v1")
        write_flo(out / fo, constant_flow_field(size, fl))
        entries.append({"events": ev, "flow": fo, "u": fl[0], "v": fl[1], "num_events": len(stream)})
    manifest = {"size": size, "seed": seed, "pattern": pattern, "samples": entries}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
    return manifest


def load_dataset(directory, bins, blocks):
    directory = _require_dir(directory, "data")
    man_path = directory / "manifest.json"
    if not man_path.is_file():
        raise DataError(f"{directory} has no manifest.json")
    manifest = json.loads(man_path.read_text(encoding="utf-8"))
    xs, fs = [], []
    steps = bins // blocks
    for entry in manifest["samples"]:
        flow = read_flo(directory / entry["flow"])
        h, w = flow.shape[1:]
        if entry.get("num_events", 1) == 0:
            x = np.zeros((steps, 2 * blocks, h, w), np.float32)
        else:
            stream = parse_events(directory / entry["events"], "bin_v1")
            if (stream.height, stream.width) != (h, w):
                raise DataError(f"{entry['events']}: sensor {stream.width}x{stream.height} vs flow {w}x{h}")
            x = events_to_spike_input(stream, bins, blocks).data
        xs.append(x)
        fs.append(flow)
    if not xs:
        raise DataError(f"{directory}: manifest lists no samples")
    return FlowDataset(np.stack(xs), np.stack(fs))


# -- commands ---------------------------------------------------------------

def cmd_synth(args):
    run = _run_config(args)
    d = run.data
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise UsageError(f"{out} exists and is not empty (use --force)")
    count = args.count if args.count is not None else d.count
    size = args.size if args.size is not None else d.size
    flow = args.flow
    if flow is None and d.flow:
        flow = _flow_arg(d.flow)
    pattern = args.pattern or d.pattern
    m = synthesize(out, count, size, run.train.seed, flow, (d.min_flow, d.max_flow), pattern, worker_threads())
    print(json.dumps({"out": str(out), "samples": len(m["samples"]), "events": sum(e["num_events"] for e in m["samples"])}))
    return EXIT_OK


def cmd_train(args):
    run = _run_config(args)
    d = run.data
    train_dir = _require_dir(args.data or d.train_dir, "training data")
    val_dir = args.val or d.val_dir
    if val_dir:
        _require_dir(val_dir, "validation data")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tcfg = run.train
    if args.epochs is not None:
        tcfg = replace(tcfg, epochs=args.epochs)
    if args.max_steps is not None:
        tcfg = replace(tcfg, max_steps=args.max_steps)
    train_set = load_dataset(train_dir, d.bins, d.blocks)
    val_set = load_dataset(val_dir, d.bins, d.blocks) if val_dir else None
    model = SpikeFlowNet(run.model, seed=tcfg.seed)
    log_path = out / "metrics.jsonl"
    log_path.write_text("", encoding="utf-8")
    (out / "config.txt").write_text(cfgmod.to_text(replace(run, train=tcfg)), encoding="utf-8")
    try:
        fit(model, train_set, tcfg, val_set, MetricLog(log_path),
            on_epoch=lambda e, s: save_checkpoint(out / "model.sdff", model))
    except NumericError as exc:
        (out / "nan_diagnostics.json").write_text(json.dumps(exc.diagnostics, indent=1), encoding="utf-8")
        raise
    save_checkpoint(out / "model.sdff", model)
    print(json.dumps({"checkpoint": str(out / "model.sdff"), "metrics": str(log_path)}))
    return EXIT_OK


def _load_model(args, run=None):
    path = _require_file(args.checkpoint, "checkpoint")
    expect = run.model if (run is not None and args.config is not None) else None
    try:
        return load_checkpoint(path, expect)
    except CheckpointError as exc:
        raise DataError(str(exc)) from None


def cmd_eval(args):
    run = _run_config(args)
    data_dir = _require_dir(args.data or run.data.val_dir, "evaluation data")
    model = _load_model(args, run)
    ds = load_dataset(data_dir, run.data.bins, run.data.blocks)
    m = evaluate(model, ds)
    rec = {"split": "eval", **asdict(m)}
    print(json.dumps(rec))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        from .tensor import no_grad

        with no_grad():
            for i, (x, _, _) in enumerate(ds.batches(1)):
                write_flo(out / f"{i:05d}_pred.flo", model(x)["flow"].data[0])
    return EXIT_OK


def cmd_energy(args):
    run = _run_config(args)
    data_dir = _require_dir(args.data or run.data.val_dir, "probe data")
    model = _load_model(args, run)
    ds = load_dataset(data_dir, run.data.bins, run.data.blocks)
    probes = [x for x, _, _ in ds.batches(args.batch)]
    report = estimate_energy(model, probes, args.mode)
    lines = report.to_lines()
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"energy_{args.mode}.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(report.summary_table())
    print(lines[-1])
    return EXIT_OK


def cmd_viz(args):
    run = _run_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if args.flo:
        for p in args.flo:
            _require_file(p, "flow file")
        for p in args.flo:
            dst = out / (Path(p).stem + ".png")
            save_flow_image(dst, read_flo(p))
            written.append(str(dst))
    elif args.checkpoint:
        data_dir = _require_dir(args.data or run.data.val_dir, "data")
        model = _load_model(args, run)
        ds = load_dataset(data_dir, run.data.bins, run.data.blocks)
        from .tensor import no_grad

        with no_grad():
            for i, (x, _, _) in enumerate(ds.batches(1)):
                dst = out / f"{i:05d}_pred.png"
                save_flow_image(dst, model(x)["flow"].data[0])
                written.append(str(dst))
    else:
        raise UsageError("viz needs --flo FILE... or --checkpoint with --data")
    print(json.dumps({"images": written}))
    return EXIT_OK


def build_parser():
    parser = _Parser(prog="spikeflow", description="Spiking optical-flow toolkit")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def common(p):
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")

    p = sub.add_parser("synth", help="generate translating-pattern scenes")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--flow", type=_flow_arg, help="fixed u,v for every scene")
    p.add_argument("--pattern", choices=("dots", "bars"))
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model")
    common(p)
    p.add_argument("--data")
    p.add_argument("--val")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--max-steps", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.add_argument("--out", help="also write predicted .flo files here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("energy", help="theoretical energy report")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.add_argument("--mode", choices=("ann", "snn"), default="snn")
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--out")
    p.set_defaults(func=cmd_energy)

    p = sub.add_parser("viz", help="render flow as colour images")
    common(p)
    p.add_argument("--flo", nargs="+")
    p.add_argument("--checkpoint")
    p.add_argument("--data")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_viz)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"spikeflow: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, EventFormatError, FlowFormatError, CheckpointError, OSError) as exc:
        print(f"spikeflow: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"spikeflow: numeric failure: {exc}", file=sys.stderr)
        print(json.dumps({k: v for k, v in exc.diagnostics.items() if k != "grad_norms"}), file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
