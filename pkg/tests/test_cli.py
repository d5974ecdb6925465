import csv
import json

import pytest

from dos_transformer.cli import main


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipe")
    assert run("synth", "--n", 30, "--seed", 2, "--m", 21, "--out", root / "raw.jsonl") == 0
    assert run("prepare", "--data", root / "raw.jsonl", "--out", root / "prep.jsonl", "--window", 5) == 0
    assert run("split", "--data", root / "prep.jsonl", "--out", root / "split") == 0
    return root


def train_args(root, out, *extra):
    return ("train", "--data", root / "split", "--out", out, "--model", "gn", "--energy", "on",
            "--d", 6, "--mp-layers", 1, "--max-steps", 12, "--batch-size", 8, "--seed", 4, *extra)


def test_pipeline_manifests(pipeline):
    prep = json.loads((pipeline / "prep.jsonl.manifest.json").read_text())
    assert (prep["window"], prep["polyorder"], prep["grid"]["m"]) == (5, 1, 21)
    assert prep["degenerate_ids"] == []
    man = json.loads((pipeline / "split" / "manifest.json").read_text())
    assert man["counts"] == {"train": 24, "valid": 3, "test": 3, "excluded": 0}
    assert len(man["config_hash"]) == 16


def test_train_evaluate_predict(pipeline, tmp_path):
    assert run(*train_args(pipeline, tmp_path / "run")) == 0
    hist = (tmp_path / "run" / "history.csv").read_text().splitlines()
    assert hist[0].startswith("# config_hash: ")
    assert hist[1] == "epoch,train_loss,valid_loss"
    ck = json.loads((tmp_path / "run" / "checkpoint.json").read_text())
    assert ck["extra"]["config_hash"] == hist[0].split()[-1]

    assert run("evaluate", "--ckpt", tmp_path / "run", "--data", pipeline / "split", "--out", tmp_path / "ev",
               "--probe-hidden", 8, "--probe-epochs", 5) == 0
    rep = json.loads((tmp_path / "ev" / "report.json").read_text())
    assert {"rmse", "mae", "per_family", "fermi_rmse", "n_crystals", "config_hash"} <= set(rep)
    assert rep["n_crystals"] == 3 and rep["fermi_rmse"] is not None
    curves = sorted((tmp_path / "ev" / "curves").iterdir())
    assert len(curves) == 3
    rows = list(csv.reader(line for line in curves[0].read_text().splitlines() if not line.startswith("#")))
    assert rows[0] == ["energy_eV", "dos_pred", "dos_true"] and len(rows) == 22
    assert float(rows[1][0]) == -5.0

    assert run("predict", "--ckpt", tmp_path / "run" / "checkpoint.json",
               "--data", pipeline / "split" / "test.jsonl", "--out", tmp_path / "pr") == 0
    assert len(list((tmp_path / "pr").iterdir())) == 3


def test_config_precedence(pipeline, tmp_path):
    conf = tmp_path / "train.json"
    conf.write_text(json.dumps({"lr": 0.02, "patience": 3, "d": 5}))
    assert run(*train_args(pipeline, tmp_path / "a", "--config", conf, "--lr", 0.001)) == 0
    resolved = json.loads((tmp_path / "a" / "run.json").read_text())
    assert resolved["train"]["lr"] == 0.001   # flag beats file
    assert resolved["train"]["patience"] == 3  # file beats preset
    assert resolved["model"]["d"] == 6
    assert resolved["train"]["weight_decay"] == 0.01


def test_seed_env_default(pipeline, tmp_path, monkeypatch):
    monkeypatch.setenv("DOS_SEED", "9")
    args = [a for a in train_args(pipeline, tmp_path / "s") if a not in ("--seed", 4)]
    assert run(*args) == 0
    assert json.loads((tmp_path / "s" / "run.json").read_text())["train"]["seed"] == 9


def test_train_is_reproducible(pipeline, tmp_path):
    for out in ("r1", "r2"):
        assert run(*train_args(pipeline, tmp_path / out)) == 0
    for name in ("checkpoint.json", "history.csv"):
        assert (tmp_path / "r1" / name).read_bytes() == (tmp_path / "r2" / name).read_bytes()


def test_exit_codes(pipeline, tmp_path, capsys):
    assert run("synth", "--n", 0, "--out", tmp_path / "x.jsonl") == 1
    assert run("train", "--data", pipeline / "split", "--out", tmp_path / "t",
               "--model", "dostransformer", "--energy", "off") == 1
    assert run("nonsense") == 1
    assert run("train", "--data", tmp_path / "missing", "--out", tmp_path / "t") == 2
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"id": "a", "atom_species": [0], "edges": []}\n{oops\n')
    assert run("prepare", "--data", bad, "--out", tmp_path / "p.jsonl") == 2
    err = capsys.readouterr().err.strip().splitlines()
    assert err[-1].startswith("error code=2 kind=data reason=")
    assert run("train", *train_args(pipeline, tmp_path / "nan")[1:], "--lr", 1e300) == 3
