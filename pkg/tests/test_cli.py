from __future__ import annotations

import io
import json
import subprocess
import sys

import pytest
from helpers import quickstart

from musim.cli import build_parser, parse_play_move, run
from musim.corpus import load_corpus
from musim.domain import DialogueAct, HelAction, HoType, TargetKind


@pytest.fixture(scope="module")
def qs(tmp_path_factory):
    w = tmp_path_factory.mktemp("qs")
    return w, quickstart(w)


def test_quickstart_outputs(qs):
    w, out = qs
    assert len(load_corpus(w / "corpus.jsonl")) == 693
    assert len(load_corpus(w / "augmented.jsonl")) == 1932
    assert [len(load_corpus(w / f"{p}.jsonl")) for p in ("train", "val", "test")] == [1545, 193, 194]
    assert out["report.txt"].startswith(b"n = 194\n")
    assert json.loads(out["compare.json"])["n"] == 15056


def test_quickstart_is_deterministic(qs, tmp_path):
    _, first = qs
    assert quickstart(tmp_path) == first


def test_unknown_command_is_usage_error(capsys):
    assert run(["frobnicate"]) == 2
    assert "usage" in capsys.readouterr().err


def test_no_command_is_usage_error(capsys):
    assert run([]) == 2


def test_missing_required_flag(capsys):
    assert run(["train", "--train", "x.jsonl"]) == 2
    assert "--val" in capsys.readouterr().err


def test_missing_input_is_operation_error(tmp_path):
    assert run(["split", str(tmp_path / "nope.jsonl"), "--quiet"]) == 1


def test_bad_ratios_are_usage_error():
    assert run(["split", "x.jsonl", "--ratios", "0.5,0.5"]) == 2


def test_min_accuracy_gate(qs):
    w, _ = qs
    base = ["eval", "--model", str(w / "model.bin"), "--test", str(w / "test.jsonl"), "--quiet", "--out", str(w / "r")]
    assert run(base + ["--min-accuracy", "0.5"]) == 0
    assert run(base + ["--min-accuracy", "1.01"]) == 1


def _resolved(err: str) -> dict:
    line = next(line for line in err.splitlines() if " config {" in line)
    return json.loads(line.split(" config ", 1)[1])


def test_config_file_and_flag_precedence(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"noise": 0.0, "dialogues": 2, "seed": 5}))
    assert run(["generate", "--config", str(cfg), "--out", str(tmp_path / "a.jsonl")]) == 0
    resolved = _resolved(capsys.readouterr().err)
    assert (resolved["noise"], resolved["dialogues"], resolved["seed"]) == (0.0, 2, 5)
    assert run(["--seed", "9", "generate", "--config", str(cfg), "--dialogues", "3", "--out", str(tmp_path / "b.jsonl")]) == 0
    resolved = _resolved(capsys.readouterr().err)
    assert (resolved["noise"], resolved["dialogues"], resolved["seed"]) == (0.0, 3, 9)


def test_unknown_config_key(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"colour": "red"}))
    assert run(["generate", "--config", str(cfg), "--out", str(tmp_path / "a.jsonl")]) == 2


def test_seed_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("MUSIM_SEED", "4")
    assert run(["generate", "--dialogues", "3", "--out", str(tmp_path / "env.jsonl"), "--quiet"]) == 0
    assert run(["generate", "--dialogues", "3", "--seed", "4", "--out", str(tmp_path / "flag.jsonl"), "--quiet"]) == 0
    assert (tmp_path / "env.jsonl").read_bytes() == (tmp_path / "flag.jsonl").read_bytes()
    monkeypatch.setenv("MUSIM_SEED", "four")
    assert run(["generate", "--dialogues", "3", "--out", str(tmp_path / "x.jsonl")]) == 2


def test_global_options_either_side():
    p = build_parser()
    assert p.parse_args(["--seed", "3", "generate"]).seed == 3
    assert p.parse_args(["generate", "--seed", "3"]).seed == 3


def test_parse_play_move():
    m = parse_play_move("QueryYn VerifyO ho=TakeOutObject@O:small_bowl:bowl say=L:cabinet")
    assert (m.da, m.hel_action) == (DialogueAct.QueryYn, HelAction.VerifyO)
    assert m.ho.ho_type is HoType.TakeOutObject and m.ho.target.identity == "small_bowl"
    assert m.mentioned[0].kind is TargetKind.Location
    with pytest.raises(ValueError):
        parse_play_move("Check")
    with pytest.raises(KeyError):
        parse_play_move("Chek VerifyOT")


def test_play_session(monkeypatch, capsys):
    moves = "\n".join([
        "help",
        "Check VerifyOT say=O::bowl",
        "QueryW RequestL",
        "Check VerifyL say=L:cabinet",
        "NoUtterance VerifyL ho=OpenLocation@L:cabinet",
        "QueryYn VerifyO ho=TakeOutObject@O:small_bowl:bowl",
        "Nonsense",
        "StateY Yes",
        "quit",
    ])
    monkeypatch.setattr(sys, "stdin", io.StringIO(moves + "\n"))
    assert run(["play", "--goal", "bowl,cabinet,small_bowl", "--quiet"]) == 0
    out = capsys.readouterr().out
    assert "episode over: Success, total reward +0.94" in out
    assert "error:" in out


def test_serve_stdio_subprocess():
    request = json.dumps({"type": "reset", "goal": {"object_type": "bowl", "location": "cabinet", "object": "small_bowl"}})
    proc = subprocess.run(
        [sys.executable, "-m", "musim.cli", "serve", "--stdio", "--quiet"],
        input=request + "\nnot json\n", capture_output=True, text=True, timeout=60,
    )
    assert proc.returncode == 0
    lines = [json.loads(line) for line in proc.stdout.splitlines()]
    assert lines[0]["type"] == "eld_move" and lines[0]["utteredOT"] is True
    assert lines[1] == {"type": "error", "code": "parse", "detail": lines[1]["detail"]}
