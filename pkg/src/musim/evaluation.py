"""Accuracy and confusion reports, Cohen's kappa and agreement with the oracle."""

from __future__ import annotations

import csv
import io
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .domain import ALL_BELIEFS, DialogueAct, EldAction, gives
from .features import encode_batch
from .model import Mlp, coherent_batch, predict_batch
from .oracle import (
    OracleTuple,
    classify_subtask,
    intent_class,
    is_permitted,
    oracle_respond,
    permitted_intents,
    tuple_actions,
)

HEADS = ("action", "da", "state")
HEAD_LABELS = {
    "action": [a.name for a in EldAction],
    "da": [d.name for d in DialogueAct],
    "state": [str(b) for b in ALL_BELIEFS],
}
EMPTY_CELL = "−"


class DegenerateMarginals(ValueError):
    pass


class UnsupportedFormat(ValueError):
    pass


@dataclass
class ConfusionMatrix:
    """Rows are true classes, columns predicted classes."""

    labels: list[str]
    counts: np.ndarray

    @classmethod
    def from_labels(cls, labels: list[str], y_true, y_pred) -> ConfusionMatrix:
        n = len(labels)
        counts = np.zeros((n, n), dtype=np.int64)
        np.add.at(counts, (np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)), 1)
        return cls(list(labels), counts)

    @property
    def support(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def row_percentages(self) -> list[list[float] | None]:
        out = []
        for row, total in zip(self.counts, self.support):
            out.append(None if total == 0 else [100.0 * c / total for c in row])
        return out

    def accuracy(self) -> float:
        total = self.counts.sum()
        return float(np.trace(self.counts) / total) if total else 0.0


@dataclass
class EvalReport:
    n: int
    overall_accuracy: float
    action_accuracy: float
    da_accuracy: float
    state_accuracy: float
    confusion: dict[str, ConfusionMatrix] = field(default_factory=dict)

    def accuracies(self) -> dict[str, float]:
        return {
            "overall": self.overall_accuracy,
            "action": self.action_accuracy,
            "da": self.da_accuracy,
            "state": self.state_accuracy,
        }


def _predictions(model, x: np.ndarray, contexts=None) -> np.ndarray:
    if isinstance(model, Mlp):
        return predict_batch(model, x)
    if hasattr(model, "respond_batch"):
        return np.asarray(model.respond_batch(contexts))
    if hasattr(model, "respond"):
        rows = []
        for ctx in contexts:
            move, nb = model.respond(ctx)
            rows.append((int(move.eld_action), int(move.da), nb.index))
        return np.array(rows, dtype=np.int64).reshape(-1, 3)
    return np.asarray(model(x))


def evaluate_arrays(y_true: np.ndarray, y_pred: np.ndarray) -> EvalReport:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if len(y_true) == 0:
        raise ValueError("nothing to evaluate")
    hits = y_true == y_pred
    confusion = {
        h: ConfusionMatrix.from_labels(HEAD_LABELS[h], y_true[:, i], y_pred[:, i]) for i, h in enumerate(HEADS)
    }
    return EvalReport(
        n=len(y_true),
        overall_accuracy=float(hits.all(axis=1).mean()),
        action_accuracy=float(hits[:, 0].mean()),
        da_accuracy=float(hits[:, 1].mean()),
        state_accuracy=float(hits[:, 2].mean()),
        confusion=confusion,
    )


def evaluate(model, test) -> EvalReport:
    """Per-head and joint accuracy of ``model`` on a test corpus.

    ``model`` is a trained network, a policy with ``respond``, or any callable
    mapping encoded inputs to an (n, 3) label array.
    """
    x, y = test.arrays()
    contexts = [r.input for r in test.records]
    return evaluate_arrays(y, _predictions(model, x, contexts))


def cohens_kappa(a, b) -> float:
    """Cohen's kappa for two label sequences.

    When chance agreement is 1 (both raters always use one and the same
    label) kappa is defined here as 1.
    """
    a, b = list(a), list(b)
    if len(a) != len(b) or not a:
        raise ValueError("kappa needs two nonempty sequences of equal length")
    n = len(a)
    p_o = sum(x == y for x, y in zip(a, b)) / n
    ca, cb = Counter(a), Counter(b)
    p_e = sum(ca[k] * cb[k] for k in ca) / (n * n)
    if p_e == 1.0:
        if p_o == 1.0:
            return 1.0
        raise DegenerateMarginals("chance agreement is 1 but observed agreement is not")
    return (p_o - p_e) / (1.0 - p_e)


# -- agreement with the oracle -----------------------------------------------


@dataclass
class SubtaskAgreement:
    n: int = 0
    exact: int = 0
    intent: int = 0


@dataclass
class AgreementReport:
    n: int
    exact_agreement: float
    intent_agreement: float
    per_subtask: dict[str, SubtaskAgreement]

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "exact_agreement": self.exact_agreement,
            "intent_agreement": self.intent_agreement,
            "per_subtask": {k: vars(v) for k, v in self.per_subtask.items()},
        }


class OracleAsModel:
    """The oracle behind the predictor interface used by the comparison."""

    def respond_batch(self, contexts) -> np.ndarray:
        rows = []
        for ctx in contexts:
            move, nb = oracle_respond(ctx)
            rows.append((int(move.eld_action), int(move.da), nb.index))
        return np.array(rows, dtype=np.int64)


def compare_to_oracle(model, inputs, coherent: bool = False) -> AgreementReport:
    """How often the model's reply is one the oracle tables permit.

    The model has no utterance generator, so whether its reply names O_T or L
    is read off the predicted action (GiveOT names O_T, and so on). Exact
    agreement also requires the predicted action to be one the matched table
    entry can realize, so a permitted (O_T, L, DA) tuple paired with a
    contradictory action does not count; this keeps exact agreement a
    refinement of intent agreement.
    """
    inputs = list(inputs)
    if not inputs:
        raise ValueError("no inputs")
    x = encode_batch(inputs)
    if isinstance(model, Mlp):
        pred = coherent_batch(model, x) if coherent else predict_batch(model, x)
    else:
        pred = _predictions(model, x, inputs)
    per: dict[str, SubtaskAgreement] = {}
    exact = intent = 0
    for ctx, (a, d, _) in zip(inputs, pred):
        action, da = EldAction(int(a)), DialogueAct(int(d))
        subtask = classify_subtask(ctx)
        ot, loc = gives(action)
        t = OracleTuple(int(ot), int(loc), da)
        # The DA and action must also form one realizable table output.
        e = is_permitted(subtask, t) and action in tuple_actions(t)
        i = intent_class(da, action) in permitted_intents(subtask)
        s = per.setdefault(subtask.value, SubtaskAgreement())
        s.n += 1
        s.exact += e
        s.intent += i
        exact += e
        intent += i
    n = len(inputs)
    return AgreementReport(n, exact / n, intent / n, dict(sorted(per.items())))


# -- rendering ---------------------------------------------------------------


def _render_text(report: EvalReport) -> str:
    lines = [f"n = {report.n}"]
    for name, value in report.accuracies().items():
        lines.append(f"{name + ' accuracy':<18} {100 * value:6.2f}%")
    for head in HEADS:
        cm = report.confusion[head]
        width = max(9, max(len(label) for label in cm.labels) + 1)
        lines.append("")
        lines.append(f"{head} confusion (row %, true \\ predicted)")
        lines.append(" " * width + "".join(f"{label:>{width}}" for label in cm.labels))
        for label, row in zip(cm.labels, cm.row_percentages()):
            cells = [EMPTY_CELL] * len(cm.labels) if row is None else [f"{v:.2f}" for v in row]
            lines.append(f"{label:<{width}}" + "".join(f"{c:>{width}}" for c in cells))
    return "\n".join(lines) + "\n"


def _render_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["section", "row", "column", "value"])
    w.writerow(["summary", "n", "", report.n])
    for name, value in report.accuracies().items():
        w.writerow(["summary", name, "accuracy", f"{value:.6f}"])
    for head in HEADS:
        cm = report.confusion[head]
        for i, true in enumerate(cm.labels):
            for j, pred in enumerate(cm.labels):
                w.writerow([head, true, pred, int(cm.counts[i, j])])
    return buf.getvalue()


def render_report(report: EvalReport, fmt: str = "text") -> str:
    if fmt == "text":
        return _render_text(report)
    if fmt == "csv":
        return _render_csv(report)
    raise UnsupportedFormat(f"unsupported report format {fmt!r}")


def parse_report_csv(text: str) -> dict[str, ConfusionMatrix]:
    """Confusion matrices back from a CSV report."""
    rows = list(csv.DictReader(io.StringIO(text)))
    out = {}
    for head in HEADS:
        labels = HEAD_LABELS[head]
        index = {label: k for k, label in enumerate(labels)}
        counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
        for r in rows:
            if r["section"] == head:
                counts[index[r["row"]], index[r["column"]]] = int(r["value"])
        out[head] = ConfusionMatrix(list(labels), counts)
    return out


def render_agreement(report: AgreementReport) -> str:
    lines = [
        f"inputs             {report.n}",
        f"exact agreement    {100 * report.exact_agreement:6.2f}%",
        f"intent agreement   {100 * report.intent_agreement:6.2f}%",
        "",
        f"{'subtask':<16}{'n':>7}{'exact %':>10}{'intent %':>10}",
    ]
    for name, s in report.per_subtask.items():
        lines.append(f"{name:<16}{s.n:>7}{100 * s.exact / s.n:>10.2f}{100 * s.intent / s.n:>10.2f}")
    return "\n".join(lines) + "\n"
