import csv
import json
import math

import numpy as np
import pytest

from cfrobust.expcli import (
    ExperimentConfig,
    augment_offline,
    load_config,
    parse_recipe,
    prepare_data,
    report,
    run_experiment,
    save_config,
    subsample_balanced,
    summarize,
    sweep,
)
from cfrobust.expcli.cli import main, parse_value
from cfrobust.imageio import read_image, write_dataset
from cfrobust.synthbench import SynthSpec, generate_dataset


def tiny(tmp_path, **kw):
    base = dict(synth={"samples_per_class": 6, "image_size": 16}, val_per_class=3, test_per_class=4,
                epochs=2, milestones=[1], batch_size=8, seeds=[0], channels=[4, 8], saliency_limit=5,
                out_dir=str(tmp_path / "runs"))
    base.update(kw)
    return ExperimentConfig(**base)


# -------------------------------------------------------------------- config
def test_config_roundtrip_and_hash(tmp_path):
    cfg = tiny(tmp_path, loss={"cf_enabled": True, "lambda_sal": 0.3})
    save_config(cfg, tmp_path / "c.json")
    back = load_config(tmp_path / "c.json")
    assert back.to_dict() == cfg.to_dict()
    assert back.config_hash() == cfg.config_hash()
    assert cfg.override(out_dir="elsewhere").config_hash() == cfg.config_hash()
    assert cfg.override(lr=0.01).config_hash() != cfg.config_hash()
    assert cfg.override(**{"loss.cf_variant": 2}).loss.cf_variant == 2


def test_config_validation(tmp_path):
    for bad in (dict(epochs=0), dict(batch_size=0), dict(seeds=[]), dict(data_ratio=0)):
        with pytest.raises(ValueError):
            tiny(tmp_path, **bad)
    (tmp_path / "bad.json").write_text(json.dumps({"epochz": 3}))
    with pytest.raises(ValueError):
        load_config(tmp_path / "bad.json")
    with pytest.raises(KeyError):
        tiny(tmp_path).override(bogus=1)


def test_scalar_list_fields_are_coerced(tmp_path):
    assert tiny(tmp_path, seeds=3).seeds == [3]


def test_parse_value():
    assert parse_value("0.5") == 0.5
    assert parse_value("true") is True
    assert parse_value("0,1,2") == [0, 1, 2]
    assert parse_value("[16, 32]") == [16, 32]
    assert parse_value("grey") == "grey"


# ---------------------------------------------------------------------- data
def test_subsample_balanced():
    data = generate_dataset(SynthSpec(samples_per_class=7, image_size=16))
    half = subsample_balanced(data, 0.5, np.random.default_rng(0))
    assert len(half) == math.floor(35 / 2)
    counts = np.bincount([e.label for e in half], minlength=5)
    assert counts.max() - counts.min() <= 1


def test_prepare_data_splits(tmp_path):
    data = prepare_data(tiny(tmp_path))
    assert len(data["Original"]) == len(data["Flip"]) == len(data["MixedNext"])
    assert all(e.meta["source"] == o.id for e, o in zip(data["MixedNext"], data["Original"]))


def test_prepare_data_ratio(tmp_path):
    assert len(prepare_data(tiny(tmp_path, data_ratio=0.5))["train"]) == 15
    assert len(prepare_data(tiny(tmp_path, data_ratio=2.0))["train"]) == 60


# ---------------------------------------------------------------- training
def test_run_is_deterministic_and_persisted(tmp_path):
    cfg = tiny(tmp_path)
    a = run_experiment(cfg)
    b = run_experiment(cfg, persist=False)
    assert [r.to_dict() for r in a] == [r.to_dict() for r in b]
    seed_dir = tmp_path / "runs" / "baseline" / "seed_0"
    for name in ("record.json", "metrics.csv", "checkpoint.bin"):
        assert (seed_dir / name).exists()
    assert (tmp_path / "runs" / "baseline" / "timing.log").exists()
    rec = json.loads((seed_dir / "record.json").read_text())
    assert "wall_time" not in rec and rec["config_hash"] == cfg.config_hash()


def test_best_epoch_is_restored(tmp_path):
    rec = run_experiment(tiny(tmp_path, epochs=3), persist=False)[0]
    vals = [e["val_accuracy"] for e in rec.epochs]
    assert len(vals) <= 3 and rec.best_epoch <= len(vals) - 1
    assert rec.best_val_accuracy == max(vals)


def test_cf_run_logs_more_loss_terms(tmp_path):
    base = run_experiment(tiny(tmp_path), persist=False)[0]
    cf = run_experiment(tiny(tmp_path, loss={"cf_enabled": True}), persist=False)[0]
    terms = lambda r: {k for k in r.epochs[0] if k.startswith("train_")}
    assert terms(base) < terms(cf)
    assert "train_cf" in terms(cf)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_diverged_run_records_diagnostic(tmp_path):
    rec = run_experiment(tiny(tmp_path, lr=1e30), persist=False)[0]
    assert rec.status.startswith("diverged") and rec.reports == []


# -------------------------------------------------------------------- sweep
def test_single_value_sweep_equals_run(tmp_path):
    cfg = tiny(tmp_path, loss={"sal_enabled": True, "lambda_sal": 0.5})
    result = sweep(cfg, "lambda_sal", [0.5], persist=False)
    direct = run_experiment(cfg, persist=False)
    assert [r.to_dict() for r in result.records[0.5]] == [r.to_dict() for r in direct]


def test_sweep_outputs(tmp_path):
    cfg = tiny(tmp_path, seeds=[0, 1])
    result = sweep(cfg, "data_ratio", [0.5, 1.0])
    assert {r["value"] for r in result.rows} == {0.5, 1.0}
    assert len(result.scatter) == 2 * 2 * 5
    assert set(result.r_squared) == {"Original", "Flip", "MixedSame", "MixedRand", "MixedNext"}
    out = tmp_path / "runs" / "sweep_data_ratio"
    assert (out / "sweep.csv").exists() and (out / "scatter.csv").exists() and (out / "r_squared.csv").exists()
    with pytest.raises(ValueError):
        sweep(cfg, "momentum", [0.5])
    with pytest.raises(ValueError):
        sweep(cfg, "lambda_sal", [])


def test_lambda_grid_accepted(tmp_path):
    from cfrobust.expcli.tools import sweep_configs
    grid = [1e-4, 1e-3, 1e-2, 1e-1, 1, 10, 100, 1000]
    cfgs = sweep_configs(tiny(tmp_path), "lambda_sal", grid)
    assert [c.loss.lambda_sal for _, c in cfgs] == grid
    assert all(c.loss.sal_enabled for _, c in cfgs)


# ------------------------------------------------------------------- report
def _write_metrics(path, model, seed, acc):
    path.mkdir(parents=True, exist_ok=True)
    with open(path / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "seed", "split", "accuracy", "macro_auc", "saliency_aupr", "next_class_shift"])
        w.writerow([model, seed, "Flip", acc, 0.5, 0.2, ""])


def test_report_mean_std_and_improvement(tmp_path):
    for seed, acc in enumerate([0.5, 0.6, 0.7]):
        _write_metrics(tmp_path / "baseline" / f"seed_{seed}", "baseline", seed, acc)
    for seed, acc in enumerate([0.6, 0.9]):
        _write_metrics(tmp_path / "cf" / f"seed_{seed}", "cf", seed, acc)
    summary = {e["model"]: e for e in report(tmp_path)}
    base, cf = summary["baseline"], summary["cf"]
    assert base["accuracy_mean"] == pytest.approx(0.6)
    assert base["accuracy_std"] == pytest.approx(np.sqrt(((0.1) ** 2 + 0 + (0.1) ** 2) / 3))
    assert base["relative_improvement"] == 0.0
    assert cf["relative_improvement"] == pytest.approx((0.75 - 0.6) / 0.6)
    assert (tmp_path / "summary.md").read_text().count("| cf |") == 1
    assert (tmp_path / "summary.csv").exists()


def test_report_single_seed_std_zero():
    rows = [{"model": "baseline", "split": "Flip", "accuracy": 0.4, "macro_auc": 0.5,
             "saliency_aupr": 0.3, "next_class_shift": 0.1}]
    assert summarize(rows)[0]["accuracy_std"] == 0.0


def test_report_empty_dir(tmp_path):
    with pytest.raises(FileNotFoundError):
        report(tmp_path)


# ---------------------------------------------------------- offline augment
def _dataset(tmp_path, n_per_class=2):
    data = generate_dataset(SynthSpec(samples_per_class=n_per_class, image_size=16))
    return write_dataset(tmp_path / "ds", data), data


def test_parse_recipe():
    assert parse_recipe("CF(Grey)+F(Shuffle)") == [("cf", "grey"), ("f", "shuffle")]
    assert parse_recipe(["cf:tile", "f:mixed-rand"]) == [("cf", "tile"), ("f", "mixed-rand")]
    for bad in ("CF(cagan)", "F(fgsm)", "", "grey"):
        with pytest.raises(ValueError):
            parse_recipe(bad)


def test_augment_offline_manifest(tmp_path):
    root, data = _dataset(tmp_path)
    before = {p.name: p.read_bytes() for p in (root / "images").iterdir()}
    manifest = augment_offline(root, "CF(Grey)+F(Shuffle)+F(Mixed-Rand)", tmp_path / "out")
    assert len(manifest.rows) == len(data) * 3 and not manifest.errors
    assert {p.name: p.read_bytes() for p in (root / "images").iterdir()} == before
    with open(manifest.path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["source_id", "method", "output_path", "label_action"]
    actions = {r["method"]: r["label_action"] for r in rows}
    assert actions == {"cf:grey": "counterfactual", "f:shuffle": "keep", "f:mixed-rand": "keep"}
    from cfrobust.imageio import read_mask
    for r in rows:
        if r["method"] == "f:shuffle":
            src = read_image(root / "images" / f"{r['source_id']}.png")
            region = read_mask(root / "masks" / f"{r['source_id']}.png")
            out = read_image(tmp_path / "out" / r["output_path"])
            assert np.array_equal(out[region], src[region])


def test_augment_offline_reports_bad_files_and_continues(tmp_path):
    root, data = _dataset(tmp_path)
    (root / "images" / f"{data[0].id}.png").write_bytes(b"broken")
    from cfrobust.imageio import write_mask
    write_mask(root / "masks" / f"{data[1].id}.png", np.ones((8, 8), bool))
    manifest = augment_offline(root, "cf:grey", tmp_path / "out")
    assert len(manifest.errors) == 2
    assert len(manifest.rows) == len(data) - 2
    assert (tmp_path / "out" / "errors.csv").exists()


# ---------------------------------------------------------------------- CLI
def test_cli_end_to_end(tmp_path, capsys):
    flags = ["--synth.samples-per-class", "4", "--synth.image-size", "16", "--val-per-class", "2",
             "--test-per-class", "3", "--epochs", "1", "--channels", "4,8", "--seeds", "0",
             "--saliency-limit", "3", "--batch-size", "8"]
    assert main(["synth", "--out", str(tmp_path / "ds"), *flags]) == 0
    assert (tmp_path / "ds" / "labels.csv").exists()
    assert main(["augment", "--dataset", str(tmp_path / "ds"), "--recipe", "cf:grey", "--out",
                 str(tmp_path / "aug")]) == 0
    runs = str(tmp_path / "runs")
    assert main(["train", *flags, "--out-dir", runs]) == 0
    assert main(["train", *flags, "--out-dir", runs, "--name", "cf", "--loss.cf-enabled", "true"]) == 0
    cfg = json.loads((tmp_path / "runs" / "cf" / "config.json").read_text())
    assert cfg["loss"]["cf_enabled"] is True and cfg["channels"] == [4, 8]
    assert main(["report", runs]) == 0
    assert "| cf |" in capsys.readouterr().out
    assert main(["report", str(tmp_path / "nothing")]) == 2
