from __future__ import annotations

import csv
import json

import pytest

from chainrestore.cli import main
from chainrestore.config import RunConfig
from chainrestore.discriminator import ClassifierModel
from chainrestore.synthesis import UIRD12


def _write(path, data):
    path.write_text(json.dumps(data))
    return str(path)


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def small_config(tmp_path):
    return _write(tmp_path / "cfg.json", {
        "seed": 7,
        "dataset": {"root": str(tmp_path / "data"), "per_category": 2, "size": [64, 64]},
        "discriminator": {"train_images": 3, "heldout_images": 2, "epochs": 40, "patch_size": 64},
    })


def test_run_config_strict_and_roundtrip(tmp_path):
    cfg = RunConfig()
    assert RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))).to_dict() == cfg.to_dict()
    for bad in ({"bogus": 1}, {"dataset": {"rooot": "x"}}, {"registry": {"bases": ["haze"], "x": 1}},
                {"cor": {"margins": {}}}, {"seed": -1}, {"seed": 2**64}, {"margins": {"eps": 1}}):
        with pytest.raises(ValueError):
            RunConfig.from_dict(bad)
    assert RunConfig.from_dict({"seed": 2**64 - 1}).seed == 2**64 - 1
    path = cfg.save(tmp_path / "c.json")
    assert RunConfig.load(path).to_dict() == cfg.to_dict()


def test_default_margins_follow_registry():
    cfg = RunConfig.from_dict({"registry": {"mode": "oracle", "bases": ["low", "haze", "low+haze"]}})
    m = cfg.margin_config()
    assert m.epsilon_o == 0.03 and m.offset("low+haze") == -0.05 and m.offset("haze") == 0


def test_synth_default_categories(tmp_path, small_config):
    assert main(["synth", "--config", small_config]) == 0
    root = tmp_path / "data"
    dirs = {p.name for p in root.iterdir() if p.is_dir()}
    assert len(dirs) == len(UIRD12) + 1
    assert (root / "manifest.json").exists() and (root / "run_config.json").exists()


def test_synth_filter_and_determinism(tmp_path, small_config):
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["synth", "--config", small_config, "--categories", "h+n1,r", "--out", str(out)]) == 0
    dirs = sorted(p.name for p in (tmp_path / "a").iterdir() if p.is_dir())
    assert dirs == ["clean", "haze+noise15", "rain"]
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    for rel in files:
        if rel.name == "run_config.json":
            continue  # records the output root
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_train_dd_outputs(tmp_path, small_config, capsys):
    cfg = json.loads(open(small_config).read())
    cfg["discriminator"]["batch"] = 0
    path = _write(tmp_path / "full.json", cfg)
    out = tmp_path / "dd"
    assert main(["train-dd", "--config", path, "--out", str(out)]) == 0
    model = ClassifierModel.load(out / "dd_model.json")
    assert model.n_classes == 5 + 1
    losses = [float(r["loss"]) for r in _rows(out / "dd_train_log.csv")]
    assert len(losses) == 40 and all(b <= a for a, b in zip(losses, losses[1:]))
    assert "held-out accuracy" in capsys.readouterr().out


def test_run_oracle_needs_manifest(tmp_path, small_config, capsys):
    main(["synth", "--config", small_config, "--categories", "h+r+n1"])
    img = next((tmp_path / "data" / "haze+rain+noise15").glob("*.png"))
    code = main(["run", "--config", small_config, "--mode", "oracle", "--dd", "oracle", str(img),
                 "--out", str(tmp_path / "o")])
    assert code == 2 and "--manifest" in capsys.readouterr().err


def test_run_oracle_single_and_directory(tmp_path, small_config):
    main(["synth", "--config", small_config, "--categories", "h+r+n1"])
    cat = tmp_path / "data" / "haze+rain+noise15"
    manifest = str(tmp_path / "data" / "manifest.json")
    base = ["run", "--config", small_config, "--mode", "oracle", "--dd", "oracle", "--manifest", manifest]
    img = sorted(cat.glob("*.png"))[0]
    out = tmp_path / "one"
    assert main(base + ["--dump-steps", "--out", str(out), str(img)]) == 0
    trace = json.loads((out / f"{img.stem}.trace.json").read_text())
    assert trace["termination"] == "CleanDetected" and trace["n_restorations"] == 3
    assert (out / f"{img.stem}.png").exists()
    steps = sorted(p.name for p in (out / f"{img.stem}_steps").iterdir())
    assert steps == ["step_00.png", "step_01.png", "step_02.png", "step_03.png"]
    out = tmp_path / "many"
    assert main(base + ["--out", str(out), str(cat)]) == 0
    assert len(list(out.glob("*.trace.json"))) == 2


def test_eval_oracle_columns_and_steps(tmp_path, small_config):
    main(["synth", "--config", small_config, "--categories", "h+r+n1,clean"])
    cfg = json.loads(open(small_config).read())
    cfg["registry"] = {"mode": "oracle", "bases": ["low", "haze", "rain", "snow", "noise15", "noise25", "noise50"]}
    cfg["cor"] = {"discriminator_source": "oracle"}
    path = _write(tmp_path / "oracle.json", cfg)
    out = tmp_path / "ev"
    assert main(["eval", "--config", path, "--out", str(out), "--categories", "h+r+n1,clean"]) == 0
    rows = _rows(out / "eval.csv")
    assert list(rows[0]) == ["category", "n", "psnr_input", "ssim_input", "psnr_single_pass", "psnr_cor",
                             "ssim_cor", "mean_steps"]
    by_cat = {r["category"]: r for r in rows}
    assert set(by_cat) == {"haze+rain+noise15", "clean", "mean"}
    comp = by_cat["haze+rain+noise15"]
    assert float(comp["mean_steps"]) == 3.0
    assert float(comp["psnr_input"]) < float(comp["psnr_cor"])
    assert float(by_cat["clean"]["mean_steps"]) == 0.0


def test_eval_reproducible(tmp_path, small_config):
    main(["synth", "--config", small_config, "--categories", "n2"])
    outs = []
    for name in ("e1", "e2"):
        out = tmp_path / name
        assert main(["eval", "--config", small_config, "--categories", "n2", "--out", str(out)]) == 0
        outs.append((out / "eval.csv").read_bytes())
    assert outs[0] == outs[1]


def test_trained_dd_needs_model_for_run(tmp_path, small_config, capsys):
    main(["synth", "--config", small_config, "--categories", "n2"])
    img = next((tmp_path / "data" / "noise25").glob("*.png"))
    assert main(["run", "--config", small_config, str(img), "--out", str(tmp_path / "r")]) == 2
    assert "train-dd" in capsys.readouterr().err


def test_complexity_command(tmp_path):
    out = tmp_path / "cx"
    assert main(["complexity", "--n", "6", "--out", str(out)]) == 0
    rows = _rows(out / "complexity_n6.csv")
    assert len(rows) == 6 and float(rows[-1]["ir_float"]) == 1.0


def test_unknown_config_key_is_usage_error(tmp_path, capsys):
    path = _write(tmp_path / "bad.json", {"sed": 1})
    assert main(["complexity", "--config", path, "--out", str(tmp_path)]) == 2
    assert "sed" in capsys.readouterr().err
