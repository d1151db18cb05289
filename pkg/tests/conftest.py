from __future__ import annotations

import pytest

from musim.corpus import split, synthesize_records
from musim.domain import WorldGoal
from musim.model import TrainConfig, train
from musim.oracle import OraclePolicy

GOAL = WorldGoal.make("bowl", "cabinet", "small_bowl")


@pytest.fixture
def goal() -> WorldGoal:
    return GOAL


@pytest.fixture(scope="session")
def oracle_corpus():
    """2000 oracle-labelled records at noise 0.2, seed 0."""
    return synthesize_records(OraclePolicy(), 0.2, 2000, 0)


@pytest.fixture(scope="session")
def corpus_parts(oracle_corpus):
    return split(oracle_corpus, (0.8, 0.1, 0.1), seed=0)


@pytest.fixture(scope="session")
def trained(corpus_parts):
    """Models trained with the shipped defaults, keyed by activation."""
    tr, va, _ = corpus_parts
    return {act: train(tr, va, TrainConfig(seed=0, activation=act)) for act in ("identity", "tanh")}


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    """Record and print one acceptance line; the caller still asserts."""

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"ACCEPTANCE {number:>2} {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
