from __future__ import annotations

from pathlib import Path

from musim.cli import run

QUICKSTART_FILES = ("corpus.jsonl", "augmented.jsonl", "model.bin", "report.txt", "report.csv", "compare.json")


def quickstart(workdir: Path, seed: int = 0) -> dict[str, bytes]:
    """The README quickstart, in process; returns the bytes of every output."""
    w = Path(workdir)
    steps = [
        ["generate", "--records", "693", "--noise", "0.1", "--out", w / "corpus.jsonl"],
        ["augment", w / "corpus.jsonl", "--preset", "paper-profile", "--out", w / "augmented.jsonl"],
        ["split", w / "augmented.jsonl", "--ratios", "0.8,0.1,0.1", "--out-dir", w],
        ["train", "--train", w / "train.jsonl", "--val", w / "val.jsonl", "--out", w / "model.bin"],
        ["eval", "--model", w / "model.bin", "--test", w / "test.jsonl", "--out", w / "report.txt"],
        ["eval", "--model", w / "model.bin", "--test", w / "test.jsonl", "--format", "csv", "--out", w / "report.csv"],
        ["compare", "--model", w / "model.bin", "--format", "json", "--out", w / "compare.json"],
    ]
    for argv in steps:
        code = run([str(a) for a in argv] + ["--seed", str(seed), "--quiet"])
        if code != 0:
            raise RuntimeError(f"{argv[0]} exited with {code}")
    return {name: (w / name).read_bytes() for name in QUICKSTART_FILES + ("train.jsonl", "val.jsonl", "test.jsonl")}
