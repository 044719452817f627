"""Experiment configuration: a flat JSON document.

Schema (all keys optional except where noted; defaults shown by
``ExperimentConfig().to_dict()``)::

    name            str     run name, used for the output subdirectory
    dataset_dir     str     dataset directory (images/, masks/, labels.csv);
                            when null, data come from ``synth``
    synth           object  SynthSpec fields (num_classes, image_size,
                            samples_per_class, correlation, seed, ...)
    val_per_class   int     synthetic validation size per class
    test_per_class  int     synthetic test-pool size per class
    loss            object  LossConfig fields (cf_enabled, cf_infill, ...)
    lr, momentum, weight_decay, epochs, batch_size
    milestones      list    epochs after which lr is multiplied by ``gamma``
    gamma           float
    patience        int     early-stopping patience on validation accuracy;
                            null disables stopping (best epoch still restored)
    seeds           list    training seeds; one run per seed
    data_ratio      float   fraction (<= 1) or multiple (> 1, synthetic only)
                            of the training set
    channels        list    conv widths of the network
    pooling         str     "max" (global max) or "maxmean" (global max and mean)
    saliency_limit  int     test images per split used for saliency AUPR
    external_dir    str     directory of <id>.png inpaintings for the
                            "external" counterfactual infill
    out_dir         str
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from ..objectives import LossConfig
from ..synthbench import SynthSpec


@dataclass
class ExperimentConfig:
    name: str = "baseline"
    dataset_dir: str | None = None
    synth: dict = field(default_factory=dict)
    val_per_class: int = 200
    test_per_class: int = 500
    loss: LossConfig = field(default_factory=LossConfig)
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-4
    epochs: int = 30
    batch_size: int = 64
    milestones: list = field(default_factory=lambda: [15, 25])
    gamma: float = 0.1
    patience: int | None = None
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    data_ratio: float = 1.0
    channels: list = field(default_factory=lambda: [16, 32])
    pooling: str = "maxmean"
    saliency_limit: int | None = 200
    external_dir: str | None = None
    out_dir: str = "runs"

    def __post_init__(self):
        if isinstance(self.loss, dict):
            self.loss = LossConfig(**self.loss)
        for name in ("seeds", "milestones", "channels"):
            value = getattr(self, name)
            setattr(self, name, list(value) if isinstance(value, (list, tuple)) else [value])
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.data_ratio <= 0:
            raise ValueError("data_ratio must be positive")
        if self.data_ratio > 1 and self.dataset_dir is not None:
            raise ValueError("data_ratio > 1 is only available for synthetic data")
        self.synth_spec()  # validates

    def synth_spec(self) -> SynthSpec:
        spec = dict(self.synth)
        if "glyph_scale" in spec:
            spec["glyph_scale"] = tuple(spec["glyph_scale"])
        return SynthSpec(**spec)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["loss"] = self.loss.to_dict()
        return d

    def config_hash(self) -> str:
        d = self.to_dict()
        d.pop("out_dir")
        blob = json.dumps(d, sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]

    def override(self, **changes) -> ExperimentConfig:
        """Copy with top-level keys replaced; ``loss.<field>`` keys patch the loss config."""
        d = self.to_dict()
        for key, value in changes.items():
            if value is None:
                continue
            if key.startswith("loss."):
                d["loss"][key[5:]] = value
            elif key.startswith("synth."):
                d["synth"][key[6:]] = value
            elif key in {f.name for f in fields(self)}:
                d[key] = value
            else:
                raise KeyError(f"unknown config key {key!r}")
        return ExperimentConfig(**d)


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"{path}: unknown keys {sorted(unknown)}")
    return ExperimentConfig(**data)


def save_config(config: ExperimentConfig, path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
