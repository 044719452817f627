"""Training loop, early stopping, evaluation and run persistence."""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .. import augment, evalkit
from ..imageio import read_image, read_labels, read_mask
from ..nnet import SGD, Network, NonFiniteGradient, save_checkpoint
from ..objectives import Batch, total_loss
from ..synthbench import LabeledExample, SplitMode, build_flip_split, build_mixed_split, generate_benchmark
from .config import ExperimentConfig, save_config

log = logging.getLogger(__name__)

EVAL_SPLITS = ("Original", "Flip", "MixedSame", "MixedRand", "MixedNext")


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class RunRecord:
    name: str
    config_hash: str
    seed: int
    epochs: list = field(default_factory=list)  # per-epoch dicts
    best_epoch: int = -1
    best_val_accuracy: float = math.nan
    reports: list = field(default_factory=list)  # MetricReport rows
    wall_time: float = 0.0
    status: str = "ok"

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("wall_time")
        return d

    def report(self, split: str) -> dict:
        for r in self.reports:
            if r["split"] == split:
                return r
        raise KeyError(split)


# ------------------------------------------------------------------- data
def load_dataset_dir(root) -> dict[str, list[LabeledExample]]:
    """Read a dataset directory into ``{split: [LabeledExample]}``."""
    root = Path(root)
    out: dict[str, list[LabeledExample]] = {}
    for row in read_labels(root):
        image = read_image(root / "images" / f"{row['id']}.png")
        region = read_mask(root / "masks" / f"{row['id']}.png")
        if region.shape != image.shape[:2]:
            raise ValueError(f"{row['id']}: mask {region.shape} does not match image {image.shape[:2]}")
        bg = row.get("background_class", "")
        ex = LabeledExample(row["id"], image, region, int(row["label"]), int(bg) if bg != "" else -1, row["split"])
        out.setdefault(row["split"], []).append(ex)
    return out


def subsample_balanced(examples, ratio: float, rng: np.random.Generator):
    """Exactly floor(N * ratio) examples, spread over classes as evenly as possible."""
    examples = list(examples)
    target = int(math.floor(len(examples) * ratio))
    by_class: dict[int, list[int]] = {}
    for i, ex in enumerate(examples):
        by_class.setdefault(ex.label, []).append(i)
    classes = sorted(by_class)
    shuffled = {c: list(rng.permutation(by_class[c])) for c in classes}
    chosen: list[int] = []
    while len(chosen) < target:
        for c in classes:
            if shuffled[c] and len(chosen) < target:
                chosen.append(int(shuffled[c].pop()))
    return [examples[i] for i in sorted(chosen)]


def prepare_data(config: ExperimentConfig) -> dict[str, list[LabeledExample]]:
    """Train/val and the five evaluation splits. Depends only on the data seed."""
    if config.dataset_dir is not None:
        data = load_dataset_dir(config.dataset_dir)
        spec = None
    else:
        spec = config.synth_spec()
        if config.data_ratio > 1:
            spec = replace(spec, samples_per_class=int(math.floor(spec.samples_per_class * config.data_ratio)))
        data = generate_benchmark(spec, config.val_per_class, config.test_per_class)
    data_seed = spec.seed if spec is not None else 0
    rng = np.random.default_rng([data_seed, 7])
    if config.data_ratio < 1:
        data["train"] = subsample_balanced(data["train"], config.data_ratio, rng)
    if "test" not in data or "val" not in data:
        raise ValueError("dataset needs train, val and test splits")
    if any(e.background_class < 0 for e in data["test"]):
        # no background annotation: only the unshifted split can be built
        data["Original"] = data["test"]
        return data
    k = 1 + max(e.label for e in data["train"])
    original, flip = build_flip_split(data["test"], rng, k)
    data["Original"] = original
    data["Flip"] = flip
    for mode in (SplitMode.MIXED_SAME, SplitMode.MIXED_RAND, SplitMode.MIXED_NEXT):
        data[mode.value] = build_mixed_split(original, mode, rng, donors=data["test"], num_classes=k)
    return data


def _arrays(examples):
    return (np.stack([e.image for e in examples]), np.stack([e.region for e in examples]),
            np.array([e.label for e in examples]))


def _cf_cache(config: ExperimentConfig, examples):
    """Deterministic counterfactuals are computed once per image."""
    loss = config.loss
    if not loss.cf_enabled or loss.cf_infill not in ("grey", "tile", "external"):
        return None
    out = []
    for ex in examples:
        path = None
        if loss.cf_infill == "external":
            if config.external_dir is None:
                raise ValueError("cf_infill 'external' requires external_dir")
            path = Path(config.external_dir) / f"{ex.id}.png"
        out.append(augment.counterfactual(ex.image, ex.region, loss.cf_infill, region_mode=loss.cf_region,
                                          external_path=path))
    return np.stack(out)


# ------------------------------------------------------------------ training
def lr_at(config: ExperimentConfig, epoch: int) -> float:
    return config.lr * config.gamma ** sum(epoch >= m for m in config.milestones)


def train_one(config: ExperimentConfig, data, seed: int) -> tuple[Network, RunRecord]:
    started = time.perf_counter()
    train = data["train"]
    images, regions, labels = _arrays(train)
    cf_all = _cf_cache(config, train)
    val_images, _, val_labels = _arrays(data["val"])
    k = int(max(labels.max(), val_labels.max()) + 1)
    net = Network(k, images.shape[1], images.shape[-1], tuple(config.channels), seed=seed,
                  pooling=config.pooling)
    opt = SGD(net.parameters(), config.lr, config.momentum, config.weight_decay)
    rng = np.random.default_rng([seed, 1])
    record = RunRecord(config.name, config.config_hash(), seed)
    best_state, best_acc, since_best = net.state_dict(), -1.0, 0
    for epoch in range(config.epochs):
        opt.lr = lr_at(config, epoch)
        order = rng.permutation(len(labels))
        sums: dict[str, float] = {}
        batches = 0
        for start in range(0, len(order), config.batch_size):
            idx = np.sort(order[start:start + config.batch_size])
            batch = Batch(images[idx], regions[idx], labels[idx],
                          cf_images=None if cf_all is None else cf_all[idx])
            loss, parts = total_loss(net, batch, config.loss, rng)
            if not np.isfinite(parts["total"]):
                record.status = f"diverged at epoch {epoch}: " + \
                    ", ".join(f"{k_}={v}" for k_, v in parts.items() if k_ != "n")
                record.wall_time = time.perf_counter() - started
                raise TrainingDiverged(record)
            net.zero_grad()
            loss.backward()
            try:
                opt.step()
            except NonFiniteGradient as exc:
                record.status = f"diverged at epoch {epoch}: {exc}"
                record.wall_time = time.perf_counter() - started
                raise TrainingDiverged(record) from exc
            for key, v in parts.items():
                if key != "n":
                    sums[key] = sums.get(key, 0.0) + v
            batches += 1
        val_acc = evalkit.accuracy(evalkit.predict_proba(net, val_images), val_labels)
        entry = {"epoch": epoch, "lr": opt.lr, "val_accuracy": val_acc,
                 **{f"train_{k_}": v / batches for k_, v in sums.items()}}
        record.epochs.append(entry)
        log.info("%s seed=%d epoch=%d %s", config.name, seed, epoch,
                 " ".join(f"{k_}={v:.4f}" for k_, v in entry.items() if isinstance(v, float)))
        if val_acc > best_acc:
            best_acc, best_state, since_best = val_acc, net.state_dict(), 0
            record.best_epoch = epoch
        else:
            since_best += 1
            if config.patience is not None and since_best > config.patience:
                break
    net.load_state_dict(best_state)
    record.best_val_accuracy = best_acc
    record.wall_time = time.perf_counter() - started
    return net, record


def evaluate(net, config: ExperimentConfig, data, record: RunRecord) -> None:
    for split in EVAL_SPLITS:
        if split not in data:
            continue
        mixed_next = data.get("MixedNext") if split == "Original" else None
        rep = evalkit.evaluate_split(net, data[split], split, config.saliency_limit, mixed_next=mixed_next)
        record.reports.append(rep.row(config.name, record.seed))


def run_experiment(config: ExperimentConfig, data=None, persist: bool = True) -> list[RunRecord]:
    """Train and evaluate once per seed; optionally write records under ``out_dir/name``."""
    data = prepare_data(config) if data is None else data
    records = []
    run_dir = Path(config.out_dir) / config.name
    for seed in config.seeds:
        try:
            net, record = train_one(config, data, seed)
        except TrainingDiverged as exc:
            record = exc.args[0]
            log.error("%s seed=%d %s", config.name, seed, record.status)
            records.append(record)
            if persist:
                _persist(run_dir, config, record, None)
            continue
        evaluate(net, config, data, record)
        records.append(record)
        if persist:
            _persist(run_dir, config, record, net)
    return records


def _persist(run_dir: Path, config: ExperimentConfig, record: RunRecord, net) -> None:
    seed_dir = run_dir / f"seed_{record.seed}"
    seed_dir.mkdir(parents=True, exist_ok=True)
    save_config(config, run_dir / "config.json")
    (seed_dir / "record.json").write_text(json.dumps(record.to_dict(), indent=2, sort_keys=True) + "\n",
                                          encoding="utf-8")
    evalkit.write_reports(seed_dir / "metrics.csv", record.reports)
    if net is not None:
        save_checkpoint(net, seed_dir / "checkpoint.bin")
    with open(run_dir / "timing.log", "a", encoding="utf-8") as fh:
        fh.write(f"{time.strftime('%Y-%m-%dT%H:%M:%S')} seed={record.seed} wall_time={record.wall_time:.2f}s\n")
