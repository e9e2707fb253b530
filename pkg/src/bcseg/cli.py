"""Command-line entry point: ``bcseg <subcommand> ...``.

Exit codes: 0 success, 1 invalid usage or configuration, 2 runtime failure.
The output root defaults to ``$BCSEG_OUT`` (else ``./runs``) when ``--out`` is
omitted.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, _flatten, parse_override, validate_config
from .data import (
    DatasetSplit,
    PhantomConfig,
    Sample,
    generate_dataset,
    load_dataset,
    make_splits,
    save_dataset,
)
from .evaluation import aggregate, evaluate_subjects, plot_trimap_curves
from .models.graph import Arch, ArchitectureConfig, Topology, build_graph, count_params, infer_shapes
from .training import LAMBDA_GRID, TrainData, lambda_search, multi_run, predict, train
from .volume import LabelVolume, load_volume, save_volume


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _out_dir(args) -> Path:
    out = Path(args.out) if args.out else Path(os.environ.get("BCSEG_OUT", "runs")) / args.command
    out.mkdir(parents=True, exist_ok=True)
    return out


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class RunManifest:
    """Provenance record written next to every command's outputs."""

    def __init__(self, command: str, argv: Sequence[str]):
        self.data = {
            "command": command,
            "argv": list(argv),
            "tool_version": __version__,
            "started": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
            "config": None,
            "inputs": {},
            "artifacts": [],
        }

    def add_input(self, path: Path) -> None:
        files = sorted(p for p in path.rglob("*") if p.is_file()) if path.is_dir() else [path]
        for f in files:
            self.data["inputs"][str(f)] = _sha256(f)

    def add_artifact(self, path: Path) -> Path:
        self.data["artifacts"].append(str(path))
        return path

    def write(self, out: Path) -> None:
        self.data["finished"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
        (out / "run_manifest.json").write_text(json.dumps(self.data, indent=1) + "\n")


def _emit(args, payload: dict, text: str | None = None) -> None:
    if args.json or text is None:
        print(json.dumps(payload, indent=1, allow_nan=False, default=str))
    else:
        print(text)


# -- subcommands -----------------------------------------------------------------


def cmd_synth(args, man: RunManifest) -> None:
    cfg = PhantomConfig(
        shape=tuple(args.shape),
        organ_count=args.organs,
        radius_range=(args.radius[0], args.radius[1]),
        noise_sigma=args.noise,
        blur_sigma=args.blur,
        seed=args.seed,
    )
    samples = generate_dataset(args.n, cfg)
    out = _out_dir(args)
    manifest = save_dataset(out, samples)
    counts = tuple(args.counts) if args.counts else _default_counts(args.n)
    split = make_splits([s.id for s in samples], counts, args.seed)
    (out / "split.json").write_text(json.dumps(split.to_dict(), indent=1) + "\n")
    man.add_artifact(manifest)
    man.add_artifact(out / "split.json")
    man.data["config"] = {"phantom": {**cfg.__dict__, "n": args.n}}
    man.write(out)
    _emit(args, {"manifest": str(manifest), "samples": len(samples), "split": split.to_dict()}, f"wrote {len(samples)} phantoms to {out}")


def _default_counts(n: int) -> tuple[int, int, int]:
    val = max(1, n // 5) if n >= 3 else 0
    test = max(1, n // 5) if n >= 3 else 0
    return (n - val - test, val, test)


def cmd_prepare(args, man: RunManifest) -> None:
    samples = load_dataset(args.manifest, target=tuple(args.shape) if args.shape else None)
    out = _out_dir(args)
    man.add_input(Path(args.manifest))
    manifest = save_dataset(out, samples)
    man.add_artifact(manifest)
    man.write(out)
    _emit(args, {"manifest": str(manifest), "samples": len(samples)}, f"prepared {len(samples)} samples into {out}")


def _load_split(data_dir: Path, samples: list[Sample], split_path: str | None, seed: int) -> DatasetSplit:
    path = Path(split_path) if split_path else data_dir / "split.json"
    if path.exists():
        return DatasetSplit.from_dict(json.loads(path.read_text()))
    return make_splits([s.id for s in samples], _default_counts(len(samples)), seed)


def _training_inputs(args, man: RunManifest) -> tuple[RunConfig, list[Sample], DatasetSplit]:
    rc = validate_config(args.config, args.set or ())
    data_dir = Path(args.data)
    samples = load_dataset(data_dir / "manifest.json", target=rc.shape)
    if samples:
        n_classes = samples[0].labels.n_classes
        if "model.n_classes" not in _given_keys(rc, args):
            rc = replace(rc, train=replace(rc.train, n_classes=n_classes))
        infer_shapes(rc.train.graph(), samples[0].shape)
    split = _load_split(data_dir, samples, args.split, rc.train.seed)
    man.add_input(data_dir)
    man.data["config"] = rc.snapshot()
    return rc, samples, split


def _given_keys(rc: RunConfig, args) -> set[str]:
    keys = set(_flatten(rc.raw))
    keys |= {parse_override(o)[0] for o in (args.set or ())}
    return keys


def _save_predictions(out: Path, preds: list[LabelVolume], samples: list[Sample], man: RunManifest) -> Path:
    pred_dir = out / "pred"
    for p, s in zip(preds, samples):
        man.add_artifact(save_volume(pred_dir / s.id, p))
    return pred_dir


def cmd_train(args, man: RunManifest) -> None:
    rc, samples, split = _training_inputs(args, man)
    out = _out_dir(args)
    cfg = replace(rc.train, checkpoint_dir=str(out / "checkpoint"))
    data = TrainData.from_split(samples, split)
    record, net = train(cfg, data, log_path=out / "log.jsonl")
    man.add_artifact(out / "log.jsonl")
    man.add_artifact(Path(record.checkpoint))
    (out / "record.json").write_text(json.dumps(record.to_dict(), indent=1) + "\n")
    man.add_artifact(out / "record.json")
    by_id = {s.id: s for s in samples}
    test = [by_id[i] for i in split.test] or data.val
    preds = predict(net, test, cfg.batch_size)
    _save_predictions(out, preds, test, man)
    man.write(out)
    if record.diverged:
        raise RuntimeError(f"training diverged; kept checkpoint from epoch {record.best_epoch}")
    _emit(
        args,
        {"best_epoch": record.best_epoch, "best_val_dice": record.best_val_dice, "checkpoint": record.checkpoint},
        f"best validation dice {record.best_val_dice:.4f} at epoch {record.best_epoch}",
    )


def cmd_lambda_search(args, man: RunManifest) -> None:
    rc, samples, split = _training_inputs(args, man)
    out = _out_dir(args)
    grid = _floats(args.grid) if args.grid else list(LAMBDA_GRID)
    res = lambda_search(rc.train, TrainData.from_split(samples, split), grid)
    payload = res.to_dict()
    path = out / "lambda_search.json"
    path.write_text(json.dumps(payload, indent=1) + "\n")
    man.add_artifact(path)
    man.write(out)
    table = "\n".join(f"lambda={k:g}\tval_dice={v:.4f}" for k, v in res.table.items())
    _emit(args, payload, f"{table}\nbest lambda {res.best_lambda:g} (std {res.std:.4f})")


def cmd_multi_run(args, man: RunManifest) -> None:
    rc, samples, split = _training_inputs(args, man)
    out = _out_dir(args)
    cfg = replace(rc.train, checkpoint_dir=str(out / "checkpoints"))
    by_id = {s.id: s for s in samples}
    data = TrainData.from_split(samples, split)
    test = [by_id[i] for i in split.test] or data.val
    widths = _floats(args.trimap) if args.trimap else []
    res = multi_run(cfg, data, args.runs, test, widths)
    metrics = out / "metrics.json"
    metrics.write_text(res.report.to_json(indent=1) + "\n")
    (out / "metrics.csv").write_text(res.report.to_csv())
    (out / "summary.json").write_text(json.dumps(res.summary(), indent=1) + "\n")
    for p in (metrics, out / "metrics.csv", out / "summary.json"):
        man.add_artifact(p)
    man.write(out)
    s = res.summary()
    _emit(args, s, f"{s['runs']} runs: validation dice {s['val_dice_mean']:.4f} +/- {s['val_dice_std']:.4f}")


def _label_dir(path: Path) -> dict[str, LabelVolume]:
    vols = {}
    for sidecar in sorted(path.glob("*.json")):
        meta = json.loads(sidecar.read_text())
        if not isinstance(meta, dict) or "class_table" not in meta:
            continue
        stem = sidecar.stem
        key = stem[: -len("_labels")] if stem.endswith("_labels") else stem
        vols[key] = load_volume(sidecar)
    return vols


def _pairs(pred_dir: Path, gt_dir: Path) -> tuple[dict, tuple[str, ...]]:
    preds, gts = _label_dir(pred_dir), _label_dir(gt_dir)
    common = sorted(set(preds) & set(gts))
    if not common:
        raise ValueError(f"no matching label volumes between {pred_dir} and {gt_dir}")
    table = gts[common[0]].class_table
    return {k: (preds[k], gts[k]) for k in common}, table


def cmd_evaluate(args, man: RunManifest) -> None:
    pairs, table = _pairs(Path(args.pred), Path(args.gt))
    widths = _floats(args.trimap) if args.trimap else []
    spacing = tuple(args.spacing) if args.spacing else None
    metrics, tri = evaluate_subjects(pairs, table, widths, spacing, args.band_overlap_dice)
    report = aggregate([metrics], table, [tri] if widths else None)
    out = _out_dir(args)
    man.add_input(Path(args.pred))
    man.add_input(Path(args.gt))
    path = out / "report.json"
    path.write_text(report.to_json(indent=1) + "\n")
    (out / "report.csv").write_text(report.to_csv())
    man.add_artifact(path)
    man.add_artifact(out / "report.csv")
    man.write(out)
    if args.json:
        print(report.to_json(indent=1))
    else:
        print(report.to_csv(), end="")


def cmd_trimap_report(args, man: RunManifest) -> None:
    widths = _floats(args.widths)
    curves = {}
    for spec in args.pred:
        name, _, path = spec.rpartition("=")
        name = name or Path(path).name
        pairs, table = _pairs(Path(path), Path(args.gt))
        _, tri = evaluate_subjects(pairs, table, widths, band_overlap=args.band_overlap_dice)
        curves[name] = _curve(tri)
        man.add_input(Path(path))
    out = _out_dir(args)
    path = out / "trimap.json"
    path.write_text(json.dumps(curves, indent=1) + "\n")
    man.add_artifact(path)
    if args.plot:
        plot_trimap_curves(curves, out / args.plot)
        man.add_artifact(out / args.plot)
    man.write(out)
    lines = [f"{name}\t" + "\t".join(f"w{w}={c['mean']:.4f}" for w, c in curve.items()) for name, curve in curves.items()]
    _emit(args, curves, "\n".join(lines))


def _curve(tri: dict[str, dict[float, float]]) -> dict[str, dict[str, float]]:
    widths = sorted({w for subj in tri.values() for w in subj})
    curve = {}
    for w in widths:
        vals = [subj[w] for subj in tri.values() if not np.isnan(subj[w])]
        key = str(int(w)) if float(w).is_integer() else str(w)
        curve[key] = {"mean": float(np.mean(vals)) if vals else None, "std": float(np.std(vals)) if vals else None}
    return curve


def cmd_param_count(args, man: RunManifest) -> None:
    cfg = ArchitectureConfig(
        base_features=args.base_features, depth=args.depth, region_classes=args.classes, max_features=args.max_features
    )
    base = count_params(build_graph(args.arch, Topology.BASELINE, cfg))
    variant = count_params(build_graph(args.arch, args.topo, cfg))
    payload = {"arch": args.arch, "topology": args.topo, "baseline": base, "variant": variant, "delta": variant - base}
    text = (
        f"{'model':<24}{'parameters':>14}{'delta':>12}\n"
        f"{args.arch:<24}{base / 1e6:>13.2f}M{'-':>12}\n"
        f"{args.arch + '-' + args.topo:<24}{variant / 1e6:>13.2f}M{variant - base:>12}\n"
        f"baseline={base} variant={variant} delta={variant - base}"
    )
    _emit(args, payload, text)


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bcseg", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, out=True):
        sp.add_argument("--json", action="store_true", help="machine-readable output")
        if out:
            sp.add_argument("--out", help="output directory")
        return sp

    s = common(sub.add_parser("synth", help="generate a phantom dataset"))
    s.add_argument("--n", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--shape", type=int, nargs=3, default=[48, 48, 48])
    s.add_argument("--organs", type=int, default=8)
    s.add_argument("--radius", type=float, nargs=2, default=[3.0, 8.0])
    s.add_argument("--noise", type=float, default=0.1)
    s.add_argument("--blur", type=float, default=0.0)
    s.add_argument("--counts", type=_ints, help="train,val,test sizes")

    s = common(sub.add_parser("prepare", help="crop, resample and derive boundaries"))
    s.add_argument("--manifest", required=True)
    s.add_argument("--shape", type=int, nargs=3)

    for name, help_ in (
        ("train", "train one model"),
        ("lambda-search", "grid search over the boundary-loss weight"),
        ("multi-run", "repeat training and aggregate test metrics"),
    ):
        s = common(sub.add_parser(name, help=help_))
        s.add_argument("--config", help="JSON or TOML config file")
        s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        s.add_argument("--data", required=True, help="dataset directory with manifest.json")
        s.add_argument("--split", help="split JSON (default: <data>/split.json)")
        if name == "lambda-search":
            s.add_argument("--grid", help="comma-separated lambdas (default 0,0.5,1,1.5,2)")
        if name == "multi-run":
            s.add_argument("--runs", type=int, default=5)
            s.add_argument("--trimap", help="comma-separated trimap widths")

    s = common(sub.add_parser("evaluate", help="score predicted label volumes"))
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--trimap", help="comma-separated trimap widths")
    s.add_argument("--spacing", type=float, nargs=3, help="report distances in mm")
    s.add_argument("--band-overlap-dice", action="store_true", help="compare trimap bands as masks")

    s = common(sub.add_parser("trimap-report", help="trimap dice curves for one or more models"))
    s.add_argument("--pred", required=True, action="append", metavar="[NAME=]DIR")
    s.add_argument("--gt", required=True)
    s.add_argument("--widths", default="1,3,5,7,9,11")
    s.add_argument("--plot", help="write a plot with this file name (png/svg)")
    s.add_argument("--band-overlap-dice", action="store_true")

    s = common(sub.add_parser("param-count", help="parameter counts"), out=False)
    s.add_argument("--arch", choices=[a.value for a in Arch], default="unet")
    s.add_argument("--topo", choices=[t.value for t in Topology], default="tsol")
    s.add_argument("--base-features", type=int, default=16)
    s.add_argument("--depth", type=int, default=5)
    s.add_argument("--max-features", type=int, default=256)
    s.add_argument("--classes", type=int, default=9)
    return p


COMMANDS = {
    "synth": cmd_synth,
    "prepare": cmd_prepare,
    "train": cmd_train,
    "lambda-search": cmd_lambda_search,
    "multi-run": cmd_multi_run,
    "evaluate": cmd_evaluate,
    "trimap-report": cmd_trimap_report,
    "param-count": cmd_param_count,
}


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    man = RunManifest(args.command, argv)
    try:
        COMMANDS[args.command](args, man)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return 1
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failures
        print(f"failed: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
