import csv
import json

import numpy as np
import pytest

from cecnet import cli, harness
from cecnet.errors import TrainingError

SMALL = {"widths": [4, 6, 8, 8], "items_per_class": 40, "n_query": 2, "train_episodes": 3,
         "eval_episodes": 2}


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "base.json"
    path.write_text(json.dumps(SMALL))
    return path


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_train_writes_artifacts(tmp_path, config_path, capsys):
    out = tmp_path / "run"
    assert run("train", "--config", config_path, "--out", out) == 0
    for name in ("ckpt.cec1", "metrics.csv", "loss_curve.png", "config.json"):
        assert (out / name).exists(), name
    rows = list(csv.reader((out / "metrics.csv").open()))
    assert rows[0] == ["step", "loss_total", "loss_M", "loss_G", "loss_R", "alpha_G", "alpha_R"]
    assert len(rows) == 4
    assert "trained steps=3" in capsys.readouterr().out


def test_zero_episodes_checkpoints_initialization(tmp_path, config_path):
    out = tmp_path / "init"
    assert run("train", "--config", config_path, "--out", out, "--episodes", "0") == 0
    from cecnet import checkpoint
    state = checkpoint.load(out / "ckpt.cec1")
    assert state.step == 0


def test_train_is_byte_reproducible(tmp_path, config_path):
    for name in ("a", "b"):
        assert run("train", "--config", config_path, "--out", tmp_path / name, "--seed", 5) == 0
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()
    from cecnet.checkpoint import read_container
    (meta_a, ta), (meta_b, tb) = (read_container(tmp_path / n / "ckpt.cec1") for n in "ab")
    assert meta_a["rng"] == meta_b["rng"]
    assert all(np.array_equal(ta[k], tb[k]) for k in ta)


def test_eval_report_format(tmp_path, config_path, capsys):
    out = tmp_path / "run"
    run("train", "--config", config_path, "--out", out)
    capsys.readouterr()
    assert run("eval", "--checkpoint", out / "ckpt.cec1", "--episodes", 3) == 0
    first = capsys.readouterr().out
    assert first.startswith("acc=") and first.strip().endswith("episodes=3")
    assert run("eval", "--checkpoint", out / "ckpt.cec1", "--episodes", 3) == 0
    assert capsys.readouterr().out == first
    assert run("eval", "--checkpoint", out / "ckpt.cec1", "--episodes", 2, "--finetune") == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].startswith("metric acc=") and lines[1].startswith("combined acc=")


def test_export_relation(tmp_path, config_path):
    out = tmp_path / "run"
    run("train", "--config", config_path, "--out", out)
    rel = tmp_path / "rel"
    assert run("export-relation", "--checkpoint", out / "ckpt.cec1", "--out", rel, "--seed", 3) == 0
    data = (rel / "relation.pgm").read_bytes()
    assert data.startswith(b"P5 30 30 255\n") and len(data) == len(b"P5 30 30 255\n") + 900
    values = np.loadtxt(rel / "relation.csv", delimiter=",")
    assert values.size == 25 and np.all(np.abs(values) <= 1)
    for name in ("query.png", "mask.png", "relation.png"):
        assert (rel / name).stat().st_size > 0


def test_ablate_grid(tmp_path, config_path):
    cfg = dict(SMALL, train_episodes=1, eval_episodes=1)
    config_path.write_text(json.dumps(cfg))
    out = tmp_path / "abl"
    assert run("ablate", "--config", config_path, "--out", out) == 0
    rows = list(csv.reader((out / "ablation.csv").open()))
    assert rows[0] == ["attn", "metric", "acc", "ci95", "params"]
    assert len(rows) == 1 + 6 * 5
    assert {(r[0], r[1]) for r in rows[1:]} == {(a, m) for a in ("none", "cam", "M", "C", "G", "T")
                                                for m in ("cosine", "M", "C", "G", "T")}
    loss_rows = list(csv.reader((out / "loss_weights.csv").open()))
    assert len(loss_rows) == 1 + 8
    assert (out / "ablation.png").exists()


def test_exit_codes(tmp_path, config_path, monkeypatch, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"n_way": 1}))
    assert run("train", "--config", bad, "--out", tmp_path / "x") == 2
    bad.write_text(json.dumps({"unknown_key": 1}))
    assert run("train", "--config", bad) == 2
    assert run("train", "--config", tmp_path / "missing.json") == 2
    assert run("eval", "--checkpoint", tmp_path / "missing.cec1") == 2
    assert run("train", "--config", config_path, "--episodes", -1) == 2

    def diverge(state, episode):
        raise TrainingError("non-finite loss at step 0", state)

    monkeypatch.setattr(harness, "base_train_step", diverge)
    out = tmp_path / "div"
    assert run("train", "--config", config_path, "--out", out) == 3
    assert (out / "diverged.cec1").exists()
    assert "diverged" in capsys.readouterr().err
