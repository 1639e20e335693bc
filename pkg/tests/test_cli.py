import csv
import json

import pytest

from egnet.harness.cli import main

SMALL = ["--n-nodes", "3", "--attr-dim", "2", "--hidden", "8", "--samples", "8", "--eval-samples", "4"]


def run(*argv):
    return main([str(a) for a in argv])


def read_csv(path):
    with path.open(encoding="utf-8") as f:
        return list(csv.reader(f))


def newline_terminated(path):
    return path.read_bytes().endswith(b"\n")


def test_init_then_audit(tmp_path):
    assert run("init", "--out", tmp_path, *SMALL) == 0
    ckpt = tmp_path / "model.json"
    assert newline_terminated(ckpt)
    assert run("audit", "--ckpt", ckpt, "--seed", 7, "--audit-samples", 5, "--out", tmp_path) == 0
    report = json.loads((tmp_path / "audit.json").read_text())
    assert all(c["pass"] for c in report.values())
    assert newline_terminated(tmp_path / "audit.json")


def test_audit_fresh_default_model(tmp_path):
    assert run("audit", "--seed", 7, "--audit-samples", 3, "--out", tmp_path) == 0


def test_gen_is_bitwise_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert run("gen", "--task", "invariant_energy", "--seed", 3, "--out", d, *SMALL) == 0
    assert (a / "dataset.json").read_bytes() == (b / "dataset.json").read_bytes()
    assert newline_terminated(a / "dataset.json")


def test_train_writes_files(tmp_path, capsys):
    assert run("train", "--epochs", 2, "--out", tmp_path, *SMALL) == 0
    metrics = read_csv(tmp_path / "metrics.csv")
    assert metrics[0] == ["epoch", "train_loss", "eval_loss"]
    assert [r[0] for r in metrics[1:]] == ["0", "1", "2"]
    curve = read_csv(tmp_path / "loss_curve.csv")
    assert curve[0] == ["step", "batch_loss"] and len(curve) == 1 + 2 * 1
    for name in ("metrics.csv", "loss_curve.csv", "model.json"):
        assert newline_terminated(tmp_path / name)
    summary = json.loads(capsys.readouterr().out)
    assert summary["epochs"] == 2 and "final_eval_loss" in summary


def test_train_is_repeatable(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert run("train", "--epochs", 2, "--seed", 11, "--out", d, *SMALL) == 0
    assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()
    assert (a / "model.json").read_bytes() == (b / "model.json").read_bytes()


def test_train_on_saved_data_then_eval(tmp_path, capsys):
    assert run("gen", "--task", "invariant_energy", "--dim", 2, "--out", tmp_path, *SMALL) == 0
    data = tmp_path / "dataset.json"
    # task and dims come from the file, not from the (default) flags
    assert run("train", "--data", data, "--epochs", 1, "--hidden", 8, "--eval-samples", 0, "--out", tmp_path) == 0
    capsys.readouterr()
    assert run("eval", "--ckpt", tmp_path / "model.json", "--data", data, "--out", tmp_path, "--format", "csv") == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "eval_loss,samples" and lines[1].endswith(",8")
    assert json.loads((tmp_path / "eval.json").read_text())["samples"] == 8


def test_baseline_model_trains(tmp_path):
    assert run("train", "--model", "gn", "--epochs", 1, "--out", tmp_path, *SMALL) == 0


def test_audit_rejects_baseline(tmp_path):
    assert run("init", "--model", "gn", "--out", tmp_path, *SMALL) == 0
    assert run("audit", "--ckpt", tmp_path / "model.json", "--out", tmp_path) == 1


def test_compare(tmp_path):
    assert run("compare", "--sizes", "2,4", "--epochs", 1, "--out", tmp_path, *SMALL) == 0
    rows = read_csv(tmp_path / "compare.csv")
    assert rows[0] == ["model", "train_size", "eval_loss"]
    assert [(r[0], r[1]) for r in rows[1:]] == [("egn", "2"), ("egn", "4"), ("gn", "2"), ("gn", "4")]


@pytest.mark.parametrize(
    "argv",
    [
        ["train", "--epochs", "0"],
        ["train", "--lr", "-1"],
        ["gen", "--samples", "0"],
        ["gen", "--n-nodes", "1"],
        ["eval"],
        ["audit", "--audit-samples", "0"],
        ["compare", "--sizes", "0"],
        ["train", "--bogus"],
        ["gen", "--task", "nbody"],
        ["frobnicate"],
        [],
    ],
)
def test_invalid_input_exits_1(tmp_path, argv):
    assert run(*argv, *(["--out", tmp_path] if len(argv) > 0 and argv[0] != "frobnicate" else [])) == 1


def test_missing_checkpoint(tmp_path):
    assert run("eval", "--ckpt", tmp_path / "nope.json", "--out", tmp_path) == 1


def test_eval_dimension_mismatch(tmp_path):
    assert run("init", "--dim", 2, "--out", tmp_path, *SMALL) == 0
    assert run("eval", "--ckpt", tmp_path / "model.json", "--dim", 3, "--out", tmp_path, *SMALL) == 1


def test_audit_failure_exits_2(tmp_path):
    from egnet.harness import build_model, save_model, with_coordinate_leak
    from egnet.harness.model import ModelConfig

    model = with_coordinate_leak(build_model(ModelConfig(attr_dim=2, hidden=8), seed=0))
    save_model(model, tmp_path / "leak.json")
    assert run("audit", "--ckpt", tmp_path / "leak.json", "--audit-samples", 3, "--out", tmp_path) == 2
    report = json.loads((tmp_path / "audit.json").read_text())
    assert not report["en_nodes"]["pass"]
