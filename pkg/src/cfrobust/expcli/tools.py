"""Offline augmentation, parameter sweeps and run summaries."""
from __future__ import annotations

import csv
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import augment, evalkit
from ..imageio import read_image, read_labels, read_mask, write_image
from .config import ExperimentConfig
from .runner import prepare_data, run_experiment

log = logging.getLogger(__name__)

MANIFEST_COLUMNS = ["source_id", "method", "output_path", "label_action"]
SWEEP_AXES = {
    # axis -> (config key, switches that make the axis meaningful)
    "lambda_sal": ("loss.lambda_sal", {"loss.sal_enabled": True}),
    "fgsm_eps": ("loss.fgsm_eps", {"loss.f_enabled": True, "loss.f_infill": "fgsm"}),
    "data_ratio": ("data_ratio", {}),
    "cf_method": ("loss.cf_infill", {"loss.cf_enabled": True}),
    "f_method": ("loss.f_infill", {"loss.f_enabled": True}),
}
METRICS = ["accuracy", "macro_auc", "saliency_aupr", "next_class_shift"]


# ----------------------------------------------------------------- recipes
def parse_recipe(recipe) -> list[tuple[str, str]]:
    """Accept ``"cf:grey"``, ``"CF(Grey)"``, ``"CF(Grey)+F(Shuffle)"`` or a list of those.

    Returns ``[(kind, method), ...]`` with kind in {"cf", "f"}.
    """
    items = [recipe] if isinstance(recipe, str) else list(recipe)
    steps = []
    for item in items:
        for token in re.split(r"[+,\s]+", item.strip()):
            if not token:
                continue
            m = re.fullmatch(r"(?i)(cf|f)\s*[:(]\s*([a-z-]+)\s*\)?", token)
            if m is None:
                raise ValueError(f"cannot parse recipe step {token!r}")
            kind, method = m.group(1).lower(), m.group(2).lower()
            allowed = augment.CF_METHODS if kind == "cf" else augment.F_METHODS
            if method not in allowed:
                raise ValueError(f"unknown {kind} method {method!r}")
            if kind == "f" and method == "fgsm":
                raise ValueError("F(FGSM) needs a model and only exists inside training")
            steps.append((kind, method))
    if not steps:
        raise ValueError("empty recipe")
    return steps


@dataclass
class Manifest:
    path: Path
    rows: list = field(default_factory=list)
    errors: list = field(default_factory=list)  # (source_id, message)


def augment_offline(dataset_dir, recipe, out_dir, seed: int = 0, external_dir=None) -> Manifest:
    """Write one augmented PNG per (image, recipe step) and a manifest CSV.

    Source files are only read. Per-file problems are logged and recorded in
    ``Manifest.errors``; the remaining files are still processed.
    """
    dataset_dir, out_dir = Path(dataset_dir), Path(out_dir)
    steps = parse_recipe(recipe)
    rows = read_labels(dataset_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    manifest = Manifest(out_dir / "manifest.csv")

    loaded = {}
    for row in rows:
        sid = row["id"]
        try:
            image = read_image(dataset_dir / "images" / f"{sid}.png")
            region = read_mask(dataset_dir / "masks" / f"{sid}.png")
            if region.shape != image.shape[:2]:
                raise ValueError(f"mask {region.shape} does not match image {image.shape[:2]}")
            loaded[sid] = (image, region, int(row["label"]))
        except (OSError, ValueError) as exc:
            log.warning("%s: %s", sid, exc)
            manifest.errors.append((sid, str(exc)))

    ids = list(loaded)
    for sid in ids:
        image, region, label = loaded[sid]
        for kind, method in steps:
            out_path = out_dir / "images" / f"{sid}__{kind}-{method}.png"
            try:
                if kind == "cf":
                    ext = None if external_dir is None else Path(external_dir) / f"{sid}.png"
                    result = augment.counterfactual(image, region, method, rng, external_path=ext)
                    action = "counterfactual"
                else:
                    donor = None
                    if method == "mixed-rand":
                        others = [o for o in ids if loaded[o][2] != label and loaded[o][0].shape == image.shape]
                        if not others:
                            raise ValueError("no donor with a different label")
                        d_img, d_reg, _ = loaded[others[int(rng.integers(len(others)))]]
                        donor = (d_img, d_reg)
                    result = augment.factual(image, region, method, rng, donor=donor)
                    action = "keep"
            except (OSError, ValueError) as exc:
                log.warning("%s %s:%s: %s", sid, kind, method, exc)
                manifest.errors.append((sid, f"{kind}:{method}: {exc}"))
                continue
            write_image(out_path, result)
            manifest.rows.append({"source_id": sid, "method": f"{kind}:{method}",
                                  "output_path": str(out_path.relative_to(out_dir)), "label_action": action})

    with open(manifest.path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=MANIFEST_COLUMNS)
        writer.writeheader()
        writer.writerows(manifest.rows)
    if manifest.errors:
        with open(out_dir / "errors.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["source_id", "error"])
            writer.writerows(manifest.errors)
    return manifest


# ------------------------------------------------------------------- sweep
@dataclass
class SweepResult:
    rows: list           # long format: axis, value, model, seed, split, metrics...
    scatter: list        # (value, seed, split, saliency_aupr, accuracy)
    r_squared: dict      # split -> R^2 of accuracy on saliency_aupr
    records: dict        # value -> [RunRecord]


def sweep_configs(config: ExperimentConfig, axis: str, values) -> list[tuple[object, ExperimentConfig]]:
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; choose from {sorted(SWEEP_AXES)}")
    values = list(values)
    if not values:
        raise ValueError("sweep needs at least one value")
    key, switches = SWEEP_AXES[axis]
    out = []
    for value in values:
        changes = {**switches, key: value}
        cfg = config.override(**changes)
        if len(values) > 1:
            cfg = cfg.override(name=f"{config.name}-{axis}={value}")
        out.append((value, cfg))
    return out


def sweep(config: ExperimentConfig, axis: str, values, persist: bool = True) -> SweepResult:
    """Run every seed for every value; the term the axis controls is switched on.

    Data are generated once and shared unless the axis changes the data.
    """
    configs = sweep_configs(config, axis, values)
    shared = None if axis == "data_ratio" else prepare_data(configs[0][1])
    rows, scatter, records = [], [], {}
    for value, cfg in configs:
        recs = run_experiment(cfg, data=shared, persist=persist)
        records[value] = recs
        for rec in recs:
            for rep in rec.reports:
                rows.append({"axis": axis, "value": value, **rep})
                scatter.append({"value": value, "seed": rec.seed, "split": rep["split"],
                                "saliency_aupr": rep["saliency_aupr"], "accuracy": rep["accuracy"]})
    r2 = {}
    for split in dict.fromkeys(p["split"] for p in scatter):
        pts = [(p["saliency_aupr"], p["accuracy"]) for p in scatter if p["split"] == split]
        xs, ys = zip(*pts)
        try:
            r2[split] = evalkit.r_squared(xs, ys)
        except ValueError:  # fewer than two points or constant saliency
            r2[split] = float("nan")
    result = SweepResult(rows, scatter, r2, records)
    if persist:
        write_sweep(Path(config.out_dir) / f"sweep_{axis}", result)
    return result


def _fmt(v):
    return repr(v) if isinstance(v, float) else v


def write_sweep(out_dir, result: SweepResult) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, rows in (("sweep.csv", result.rows), ("scatter.csv", result.scatter),
                       ("r_squared.csv", [{"split": s, "r_squared": v} for s, v in result.r_squared.items()])):
        if not rows:
            continue
        with open(out_dir / name, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows({k: _fmt(v) for k, v in r.items()} for r in rows)


# ------------------------------------------------------------------ report
def _read_metric_rows(run_dir: Path) -> list[dict]:
    rows = []
    for path in sorted(run_dir.rglob("metrics.csv")):
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                for m in METRICS:
                    row[m] = float(row[m]) if row.get(m) not in (None, "") else float("nan")
                rows.append(row)
    return rows


def summarize(rows, baseline: str = "baseline") -> list[dict]:
    """Mean and population std over seeds per (model, split) plus relative
    accuracy improvement over ``baseline`` on the same split."""
    groups: dict[tuple[str, str], list[dict]] = {}
    for row in rows:
        groups.setdefault((row["model"], row["split"]), []).append(row)
    out = []
    for (model, split), members in groups.items():
        entry = {"model": model, "split": split, "n_seeds": len(members)}
        for m in METRICS:
            vals = np.array([r[m] for r in members], dtype=np.float64)
            entry[f"{m}_mean"] = float(np.mean(vals))
            entry[f"{m}_std"] = float(np.std(vals))
        out.append(entry)
    base = {e["split"]: e["accuracy_mean"] for e in out if e["model"] == baseline}
    for e in out:
        b = base.get(e["split"])
        e["relative_improvement"] = (e["accuracy_mean"] - b) / b if b else float("nan")
    return out


def _markdown(summary: list[dict], baseline: str) -> str:
    lines = [f"# Summary (relative improvement vs `{baseline}`)", ""]
    for split in dict.fromkeys(e["split"] for e in summary):
        lines += [f"## {split}", "",
                  "| model | seeds | accuracy (%) | macro AUC (%) | saliency AUPR (%) | next-class shift | rel. improvement |",
                  "|---|---|---|---|---|---|---|"]
        for e in (e for e in summary if e["split"] == split):
            cells = [f"{100 * e[f'{m}_mean']:.2f} ({100 * e[f'{m}_std']:.2f})"
                     for m in ("accuracy", "macro_auc", "saliency_aupr")]
            shift = f"{e['next_class_shift_mean']:.4f} ({e['next_class_shift_std']:.4f})"
            rel = e["relative_improvement"]
            rel_s = "n/a" if np.isnan(rel) else f"{100 * rel:+.2f}%"
            lines.append(f"| {e['model']} | {e['n_seeds']} | " + " | ".join(cells) + f" | {shift} | {rel_s} |")
        lines.append("")
    return "\n".join(lines)


def report(run_dir, baseline: str = "baseline", out_dir=None) -> list[dict]:
    """Summarize every ``metrics.csv`` below ``run_dir`` into summary.csv and summary.md."""
    run_dir = Path(run_dir)
    rows = _read_metric_rows(run_dir) if run_dir.is_dir() else []
    if not rows:
        raise FileNotFoundError(f"{run_dir}: no run records found")
    summary = summarize(rows, baseline)
    out_dir = Path(out_dir) if out_dir is not None else run_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(summary[0]))
        writer.writeheader()
        writer.writerows({k: _fmt(v) for k, v in e.items()} for e in summary)
    (out_dir / "summary.md").write_text(_markdown(summary, baseline), encoding="utf-8")
    return summary


def load_records(run_dir) -> list[dict]:
    return [json.loads(p.read_text(encoding="utf-8")) for p in sorted(Path(run_dir).rglob("record.json"))]
