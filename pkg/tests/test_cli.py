import json
import subprocess
import sys

import pytest

from polymix import __version__
from polymix.cli import main

COMMANDS = ["ingest", "synth", "mix", "cqt", "train", "predict", "evaluate", "ensemble"]


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert run("synth", "--out", d / "corpus", "--per-class", 5, "--seconds", 2,
               "--classes", "cla,pia,vio", "--polyphonic", 4, "--seed", 3) == 0
    assert run("mix", "--in", d / "corpus", "--out", d / "mix", "--strategy", "random",
               "--max-pairs", 2) == 0
    assert run("cqt", "--in", d / "corpus", "--out", d / "mono.cqts") == 0
    assert run("cqt", "--in", d / "mix", "--out", d / "mix.cqts") == 0
    assert run("train", "--store", d / "mono.cqts", "--extra", d / "mix.cqts", "--out", d / "run",
               "--folds", 2, "--fold", 0, "--epochs", 1, "--batch-size", 8, "--refresh-bn",
               "--depths", "2,2,2,2", "--dense-units", 4) == 0
    assert run("predict", "--checkpoint", d / "run" / "fold0.pmxm",
               "--tracks", d / "corpus" / "polyphonic", "--out", d / "preds.csv") == 0
    return d


def test_pipeline_outputs(pipeline):
    d = pipeline
    assert (d / "corpus" / "manifest.jsonl").exists()
    summary = json.loads((d / "mix" / "summary.json").read_text())
    assert len(summary["pairs"]) == 3
    for name in ("fold0.pmxm", "folds.json", "history_fold0.json", "config.json"):
        assert (d / "run" / name).exists(), name
    lines = (d / "preds.csv").read_text().splitlines()
    assert len(lines) == 5 and lines[0].startswith("track_id,score_cel")
    assert (d / "preds.csv.config.json").exists()


def test_test_tracks_use_held_out_parents(pipeline):
    d = pipeline
    train_ids = {json.loads(line)["path"].rsplit("/", 1)[-1]
                 for line in (d / "corpus" / "manifest.jsonl").read_text().splitlines()}
    tracks = [json.loads(line) for line in
              (d / "corpus" / "polyphonic" / "manifest.jsonl").read_text().splitlines()]
    assert len(tracks) == 4
    for t in tracks:
        assert len(t["instruments"]) == 2
        assert not {f"{s}.wav" for s in t["sources"]} & train_ids
    assert run("synth", "--out", d / "x", "--per-class", 2, "--seconds", 1, "--classes",
               "cla,pia", "--polyphonic", 1, "--seed", 4, "--test-seed", 4) == 1


def test_evaluate_and_ensemble(pipeline, capsys):
    d = pipeline
    assert run("ensemble", "--preds", d / "preds.csv", d / "preds.csv",
               "--out", d / "avg.csv") == 0
    assert (d / "avg.csv").read_text() == (d / "preds.csv").read_text()
    assert run("evaluate", "--preds", d / "preds.csv", d / "avg.csv", "--ensemble", "mean",
               "--baseline", d / "preds.csv", "--out", d / "report.json") == 0
    report = json.loads((d / "report.json").read_text())
    text = json.dumps(report)
    assert "lrap" in text and "f1_micro" in text
    assert "LRAP" in capsys.readouterr().out


def test_snapshot_replay_is_bit_exact(pipeline):
    d = pipeline
    for out in ("run/fold0.pmxm", "preds.csv", "mono.cqts"):
        before = (d / out).read_bytes()
        snapshot = (d / out).parent / "config.json" if out.startswith("run") \
            else d / f"{out}.config.json"
        (d / out).unlink()
        assert run("--config", snapshot) == 0
        assert (d / out).read_bytes() == before, out


def test_snapshot_contents(pipeline):
    snap = json.loads((pipeline / "run" / "config.json").read_text())
    assert snap["polymix_version"] == __version__
    assert snap["args"]["command"] == "train"
    assert snap["args"]["store"].startswith("/")


def test_exit_codes(tmp_path):
    assert run("bogus") == 2
    assert run() == 2
    assert run("predict", "--checkpoint", tmp_path / "none.pmxm", "--tracks", tmp_path,
               "--out", tmp_path / "p.csv") == 1
    assert run("--config", tmp_path / "missing.json") == 2
    (tmp_path / "junk.cqts").write_bytes(b"junk")
    assert run("train", "--store", tmp_path / "junk.cqts", "--out", tmp_path / "r") == 1


@pytest.mark.parametrize("command", COMMANDS)
def test_help(command, capsys):
    assert run(command, "--help") == 0
    assert "usage: polymix " + command in capsys.readouterr().out


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "polymix.cli", "--version"],
                         capture_output=True, text=True, check=True)
    assert __version__ in out.stdout
