"""Command line: ``cfrobust {synth,augment,train,sweep,report}``.

Every ExperimentConfig field has a ``--field-name`` flag, every LossConfig
field a ``--loss.field-name`` flag and every SynthSpec field a
``--synth.field-name`` flag. Flags override values from ``--config``.
Values are parsed as JSON where possible, so ``--seeds [0,1]``,
``--cf-enabled true`` and ``--lambda-sal 1e-3`` all work; a bare
comma-separated list such as ``--seeds 0,1,2`` is accepted as well.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from ..imageio import write_dataset
from ..objectives import LossConfig
from ..synthbench import SynthSpec, generate_benchmark
from .config import ExperimentConfig, load_config
from .runner import run_experiment
from .tools import SWEEP_AXES, augment_offline, report, sweep

_SKIP = {"loss", "synth"}


def parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    if "," in text:
        return [parse_value(t) for t in text.split(",") if t]
    if text.lower() in ("none", "null"):
        return None
    return text


def _flag(name: str) -> str:
    return name.replace("_", "-")


def add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON experiment config")
    group = parser.add_argument_group("config overrides")
    for f in fields(ExperimentConfig):
        if f.name not in _SKIP:
            group.add_argument(f"--{_flag(f.name)}", dest=f"cfg:{f.name}", type=parse_value, metavar="V")
    for f in fields(LossConfig):
        group.add_argument(f"--loss.{_flag(f.name)}", dest=f"cfg:loss.{f.name}", type=parse_value, metavar="V")
    for f in fields(SynthSpec):
        group.add_argument(f"--synth.{_flag(f.name)}", dest=f"cfg:synth.{f.name}", type=parse_value, metavar="V")


def config_from_args(args) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    changes = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg:") and v is not None}
    return config.override(**changes) if changes else config


def cmd_synth(args) -> int:
    config = config_from_args(args)
    data = generate_benchmark(config.synth_spec(), config.val_per_class, config.test_per_class)
    examples = [ex for split in ("train", "val", "test") for ex in data[split]]
    root = write_dataset(args.out, examples)
    print(f"wrote {len(examples)} examples to {root}")
    return 0


def cmd_augment(args) -> int:
    manifest = augment_offline(args.dataset, args.recipe, args.out, seed=args.seed, external_dir=args.external_dir)
    print(f"wrote {len(manifest.rows)} images; manifest {manifest.path}")
    for sid, msg in manifest.errors:
        print(f"error {sid}: {msg}", file=sys.stderr)
    return 1 if manifest.errors else 0


def cmd_train(args) -> int:
    config = config_from_args(args)
    records = run_experiment(config)
    for rec in records:
        print(f"{rec.name} seed={rec.seed} status={rec.status} best_epoch={rec.best_epoch} "
              f"val={rec.best_val_accuracy:.4f}")
        for row in rec.reports:
            print(f"  {row['split']:<10} acc={row['accuracy']:.4f} aupr={row['saliency_aupr']:.4f}")
    print(f"outputs in {Path(config.out_dir) / config.name}")
    return 0 if all(r.status == "ok" for r in records) else 1


def cmd_sweep(args) -> int:
    config = config_from_args(args)
    result = sweep(config, args.axis, [parse_value(v) for v in args.values])
    for split, r2 in result.r_squared.items():
        print(f"{split:<10} r_squared(accuracy ~ saliency_aupr) = {r2:.4f}")
    print(f"outputs in {Path(config.out_dir) / f'sweep_{args.axis}'}")
    return 0


def cmd_report(args) -> int:
    summary = report(args.run_dir, baseline=args.baseline, out_dir=args.out)
    out = Path(args.out or args.run_dir)
    print((out / "summary.md").read_text(encoding="utf-8"))
    return 0 if summary else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cfrobust", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic dataset directory")
    p.add_argument("--out", required=True)
    add_config_flags(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("augment", help="offline counterfactual/factual generation")
    p.add_argument("--dataset", required=True)
    p.add_argument("--recipe", required=True, nargs="+", help='e.g. "CF(Grey)" "f:shuffle"')
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--external-dir")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("train", help="train and evaluate every seed")
    add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="grid over one axis")
    p.add_argument("--axis", required=True, choices=sorted(SWEEP_AXES))
    p.add_argument("--values", required=True, nargs="+")
    add_config_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="mean (std) tables over seeds")
    p.add_argument("run_dir")
    p.add_argument("--baseline", default="baseline")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
