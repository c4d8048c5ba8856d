import json

import pytest

from sdbox.cli import main
from sdbox.experiments.registry import RecordStore

FAST = ["--epochs", "1", "--student-epochs", "1", "--batch-size", "32"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    root = d / "runs"
    assert main(["--root", str(root), "make-data", "--out", str(d / "data"), "--num-classes", "3",
                 "--per-class", "16", "--test-per-class", "4"]) == 0
    assert main(["gen-key", "--seed", "5", "--out", str(d / "k.key")]) == 0
    assert main(["--root", str(root), "--deterministic", "pretrain", "--data", str(d / "data"),
                 "--out", str(d / "t.ckpt"), *FAST]) == 0
    assert main(["--root", str(root), "train-sdb", "--data", str(d / "data"), "--teacher", str(d / "t.ckpt"),
                 "--key", str(d / "k.key"), "--out", str(d / "s.ckpt"), *FAST]) == 0
    return d


def _common(ws):
    return ["--root", str(ws / "runs")]


def test_usage_errors_exit_2(capsys):
    assert main(["--no-such-flag"]) == 2
    assert main(["distill", "--bogus"]) == 2
    assert main([]) == 2


def test_failed_run_exits_1_with_category(workspace, capsys):
    code = main([*_common(workspace), "distill", "--mode", "kd", "--out", str(workspace / "x.ckpt"), *FAST])
    assert code == 1
    assert "error [parameter]" in capsys.readouterr().err
    (workspace / "bad.key").write_bytes(b"junk")
    code = main([*_common(workspace), "train-sdb", "--data", str(workspace / "data"), "--teacher",
                 str(workspace / "t.ckpt"), "--key", str(workspace / "bad.key"), "--out", str(workspace / "y.ckpt")])
    assert code == 1
    assert "error [integrity]" in capsys.readouterr().err


def test_import_data(workspace, capsys):
    assert main(["import-data", "--path", str(workspace / "data")]) == 0
    assert "train: 48 samples" in capsys.readouterr().out


def test_distill_no_key_then_report(workspace, capsys):
    ws = workspace
    assert main([*_common(ws), "distill", "--data", str(ws / "data"), "--mode", "kd", "--teacher",
                 str(ws / "s.ckpt"), "--no-key", "--out", str(ws / "st.ckpt"), *FAST]) == 0
    run_id = capsys.readouterr().out.split("record ")[1].split()[0]
    assert main([*_common(ws), "report", "--runs", run_id, "--layout", "table3"]) == 0
    out = capsys.readouterr().out
    sdb_row = next(l for l in out.splitlines() if l.startswith("SDB ") and "×" in l)
    assert "[missing]" not in sdb_row.split("|")[3]
    assert (ws / "runs" / "reports" / "table3.json").exists()


def test_ablate_kdis(workspace, capsys):
    ws = workspace
    assert main([*_common(ws), "ablate", "--disable", "kdis", "--data", str(ws / "data"), "--teacher",
                 str(ws / "t.ckpt"), "--key", str(ws / "k.key"), "--out", str(ws / "ab.ckpt"), *FAST]) == 0
    recs = [r for r in RecordStore(ws / "runs").all() if r.method == "w/o KDis"]
    assert {r.with_key for r in recs} == {False, True}
    assert all(r.mode == "ablation" for r in recs)


def test_attack_and_train_aug(workspace):
    ws = workspace
    assert main([*_common(ws), "attack", "--data", str(ws / "data"), "--sdb", str(ws / "s.ckpt"), "--key",
                 str(ws / "k.key"), "--temps", "1,4", "--student-epochs", "1", "--out", str(ws / "att.json")]) == 0
    assert len(json.loads((ws / "att.json").read_text())["rows"]) == 2
    assert main([*_common(ws), "train-aug", "--data", str(ws / "data"), "--teacher", str(ws / "t.ckpt"),
                 "--out", str(ws / "aug.ckpt"), *FAST]) == 0


def _run_twice(ws, argv_fn):
    outs = []
    for i in range(2):
        d = ws / f"det{i}"
        d.mkdir(exist_ok=True)
        assert main(["--root", str(d / "runs"), "--deterministic", "--seed", "3", *argv_fn(d)]) == 0
        outs.append(d)
    return outs


@pytest.mark.parametrize("sub", ["pretrain", "train-sdb", "distill"])
def test_deterministic_runs_are_bit_identical(workspace, sub):
    ws = workspace

    def argv(d):
        base = ["--data", str(ws / "data"), "--out", str(d / f"{sub}.ckpt"), *FAST]
        if sub == "train-sdb":
            return [sub, *base, "--teacher", str(ws / "t.ckpt"), "--key", str(ws / "k.key")]
        if sub == "distill":
            return [sub, *base, "--teacher", str(ws / "s.ckpt"), "--key", str(ws / "k.key")]
        return [sub, *base]

    a, b = _run_twice(ws, argv)
    for suffix in (".ckpt", ".metrics.jsonl", ".json"):
        assert (a / f"{sub}{suffix}").read_bytes() == (b / f"{sub}{suffix}").read_bytes(), suffix
