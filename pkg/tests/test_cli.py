from __future__ import annotations

import argparse
import json
import re
from pathlib import Path

import pytest

from conftest import TWO_FUNCTIONS
from dshgt import cli

TINY = {"d": 8, "D": 8, "heads": 2, "layers": 1, "batch": 16, "epochs": 2}


def tree_bytes(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert cli.run(["synth", "--pattern", "cwe369", "--n", "24", "--seed", "7", "--out", str(root / "c")]) == 0
    (root / "cfg.json").write_text(json.dumps(TINY))
    assert cli.run(["train", "--manifest", str(root / "c" / "manifest.jsonl"), "--config", str(root / "cfg.json"),
                    "--out", str(root / "m.ckpt")]) == 0
    return root


def test_synth_is_byte_identical(tmp_path, capsys):
    for name in ("a", "b"):
        assert cli.run(["synth", "--pattern", "cwe369", "--n", "20", "--seed", "7", "--out", str(tmp_path / name)]) == 0
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")
    rows = [json.loads(x) for x in (tmp_path / "a" / "manifest.jsonl").read_text().splitlines()]
    assert len(rows) == 20 and {r["label"] for r in rows} == {0, 1}
    assert all(r["cwe"] == "CWE-369" and r["annotation"] for r in rows)


@pytest.mark.parametrize("pattern", ["cwe834", "cwe676"])
def test_synth_other_patterns_parse(tmp_path, pattern):
    assert cli.run(["synth", "--pattern", pattern, "--n", "6", "--seed", "1", "--out", str(tmp_path)]) == 0
    from dshgt.train_eval import ingest

    assert len(ingest(tmp_path / "manifest.jsonl")) == 6


def test_build_cpg_and_slice(tmp_path, capsys):
    src = tmp_path / "src"
    src.mkdir()
    (src / "main.c").write_text(TWO_FUNCTIONS)
    assert cli.run(["build-cpg", str(src), "--out", str(tmp_path / "g.json")]) == 0
    first = (tmp_path / "g.json").read_bytes()
    assert cli.run(["build-cpg", str(src), "--out", str(tmp_path / "g.json")]) == 0
    assert (tmp_path / "g.json").read_bytes() == first
    assert cli.run(["slice", str(tmp_path / "g.json"), "--out", str(tmp_path / "s")]) == 0
    files = sorted((tmp_path / "s").iterdir())
    assert len(files) == 2
    doc = json.loads(files[1].read_text())
    codes = {n.get("code") for n in doc["nodes"]}
    assert "VAR2 = METHOD1(VAR1)" in codes


def test_train_eval_report_fields(workspace, capsys):
    out = workspace / "metrics.json"
    code = cli.run(["eval", "--ckpt", str(workspace / "m.ckpt"), "--manifest",
                    str(workspace / "c" / "manifest.jsonl"), "--split", "test", "--out", str(out)])
    assert code == 0
    metrics = json.loads(capsys.readouterr().out)
    assert {"accuracy", "precision", "recall", "f1"} <= set(metrics)
    assert json.loads(out.read_text()) == metrics
    assert metrics["tp"] + metrics["fp"] + metrics["tn"] + metrics["fn"] == 8


def test_train_twice_gives_identical_checkpoint(workspace, tmp_path, capsys):
    argv = ["train", "--manifest", str(workspace / "c" / "manifest.jsonl"), "--config",
            str(workspace / "cfg.json"), "--out", str(tmp_path / "again.ckpt")]
    assert cli.run(argv) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["train_samples"] == 16 and report["test_samples"] == 8
    assert len(report["loss_trace"]) == 2
    assert (tmp_path / "again.ckpt").read_bytes() == (workspace / "m.ckpt").read_bytes()


def test_flag_overrides_config(workspace, tmp_path, capsys):
    argv = ["train", "--manifest", str(workspace / "c" / "manifest.jsonl"), "--config",
            str(workspace / "cfg.json"), "--out", str(tmp_path / "o.ckpt"), "--epochs", "1", "--lam", "0"]
    assert cli.run(argv) == 0
    assert len(json.loads(capsys.readouterr().out)["loss_trace"]) == 1


def test_predict_outputs_one_line_per_method(workspace, tmp_path, capsys):
    src = tmp_path / "p.c"
    src.write_text(TWO_FUNCTIONS)
    capsys.readouterr()
    assert cli.run(["predict", "--ckpt", str(workspace / "m.ckpt"), "--source", str(src)]) == 0
    lines = capsys.readouterr().out.splitlines()
    rows = [json.loads(x) for x in lines]
    assert [r["method"] for r in rows] == ["readData", "writeData"]
    for r in rows:
        assert r["label"] in (0, 1) and 0.0 <= r["probability"] <= 1.0
        assert isinstance(r["annotation"], list)


def test_predict_on_broken_cpg_exits_2_without_output(workspace, tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"version": "dshgt-cpg/1", "nodes": [], "edges": [{"src": 1, "dst": 2}]}))
    capsys.readouterr()
    code = cli.run(["predict", "--ckpt", str(workspace / "m.ckpt"), "--source", str(bad)])
    captured = capsys.readouterr()
    assert code == 2 and captured.out == ""
    assert captured.err.startswith("E: data:")


def test_transfer_command(workspace, tmp_path, capsys):
    assert cli.run(["synth", "--pattern", "cwe369", "--n", "10", "--seed", "3", "--out", str(tmp_path / "b"),
                    "--language", "b"]) == 0
    capsys.readouterr()
    assert cli.run(["transfer", "--ckpt", str(workspace / "m.ckpt"), "--manifest",
                    str(tmp_path / "b" / "manifest.jsonl"), "--out", str(tmp_path / "t.ckpt")]) == 0
    report = json.loads(capsys.readouterr().out)
    assert len(report["loss_trace"]) == 10 and (tmp_path / "t.ckpt").exists()


def test_usage_errors_exit_1(capsys):
    assert cli.run([]) == 1
    assert cli.run(["synth", "--pattern", "cwe000", "--n", "1", "--out", "x"]) == 1
    assert cli.run(["train", "--manifest", "m"]) == 1
    assert capsys.readouterr().err.startswith("E: usage:")


def test_data_errors_exit_2(tmp_path, capsys):
    assert cli.run(["build-cpg", str(tmp_path), "--out", str(tmp_path / "g.json")]) == 2
    assert "no source files" in capsys.readouterr().err
    assert cli.run(["eval", "--ckpt", str(tmp_path / "none"), "--manifest", "m"]) == 2


def test_config_with_unknown_key_is_usage_error(tmp_path, capsys):
    (tmp_path / "c.json").write_text(json.dumps({"colour": 3}))
    assert cli.run(["train", "--manifest", "m", "--config", str(tmp_path / "c.json"), "--out", "o"]) == 1


def test_grad_check_command(capsys):
    assert cli.run(["grad-check", "--seed", "1"]) == 0
    assert "PASS" in capsys.readouterr().out


def test_help_lists_every_consumed_flag(capsys):
    parser = cli.build_parser()
    subs = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    source = Path(cli.__file__).read_text()
    consumed = set(re.findall(r"args\.([a-z_]+)", source)) | set(
        re.findall(r'for key in \(([^)]*)\)', source)[0].replace('"', "").replace(" ", "").split(","))
    declared = set()
    for name, sp in subs.choices.items():
        assert cli.run([name, "--help"]) == 0
        text = capsys.readouterr().out
        for action in sp._actions:
            if isinstance(action, argparse._HelpAction):
                continue
            declared.add(action.dest)
            shown = action.option_strings[0] if action.option_strings else action.dest
            assert shown in text, (name, shown)
    assert consumed - {"func"} <= declared
