"""Confusion matrices, accuracy / precision / recall / F1 and Table-2-shaped reports.

Per class c with confusion matrix M (rows gold, columns predicted):
TP = M[c,c], FP = column sum - TP, FN = row sum - TP, TN = total - TP - FP - FN.
Precision TP/(TP+FP), recall TP/(TP+FN), F1 their harmonic mean; any 0/0 is 0.
Multi-class precision/recall/F1 are macro averages (unweighted mean over classes).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .corpus import SentimentScale


class EmptyEvaluationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    labels: tuple
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def class_counts(self, label) -> dict:
        i = self.labels.index(label)
        tp = int(self.counts[i, i])
        fp = int(self.counts[:, i].sum()) - tp
        fn = int(self.counts[i, :].sum()) - tp
        return {"tp": tp, "fp": fp, "fn": fn, "tn": self.total - tp - fp - fn}

    def __eq__(self, other):
        return (isinstance(other, ConfusionMatrix) and self.labels == other.labels
                and np.array_equal(self.counts, other.counts))


def confusion(gold: Sequence, pred: Sequence, scale: SentimentScale | Sequence) -> ConfusionMatrix:
    labels = tuple(scale.labels if isinstance(scale, SentimentScale) else scale)
    if len(gold) != len(pred):
        raise ValueError(f"gold has {len(gold)} labels but pred has {len(pred)}")
    index = {l: i for i, l in enumerate(labels)}
    try:
        g = np.array([index[x] for x in gold], dtype=np.int64)
        p = np.array([index[x] for x in pred], dtype=np.int64)
    except KeyError as exc:
        raise ValueError(f"label {exc.args[0]!r} is not one of {list(labels)}") from None
    k = len(labels)
    counts = np.bincount(g * k + p, minlength=k * k).reshape(k, k) if k else np.zeros((0, 0), np.int64)
    return ConfusionMatrix(labels, counts.astype(np.int64))


class Scores(NamedTuple):
    precision: float
    recall: float
    f1: float


class SummaryRow(NamedTuple):
    accuracy: float
    precision: float
    recall: float
    f1: float


def _div(a, b) -> float:
    return float(a) / float(b) if b else 0.0


def f1_score(precision: float, recall: float) -> float:
    return _div(2.0 * precision * recall, precision + recall)


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    per_class: dict
    macro: Scores
    n: int

    def summary(self) -> SummaryRow:
        return SummaryRow(self.accuracy, *self.macro)

    def to_json(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "per_class": {SentimentScale.format(l): s._asdict() for l, s in self.per_class.items()},
            "macro": self.macro._asdict(),
            "n": self.n,
            "averaging": "macro",
            "avg_recall": self.macro.recall,
        }

    @classmethod
    def from_json(cls, payload: Mapping, scale: SentimentScale | None = None) -> "MetricsReport":
        per_class = {}
        for tok, s in payload["per_class"].items():
            label = scale.parse(tok) if scale is not None else tok
            per_class[label] = Scores(s["precision"], s["recall"], s["f1"])
        m = payload["macro"]
        return cls(payload["accuracy"], per_class,
                   Scores(m["precision"], m["recall"], m["f1"]), payload["n"])


def compute_metrics(m: ConfusionMatrix) -> MetricsReport:
    total = m.total
    if total == 0:
        raise EmptyEvaluationError("no examples were evaluated")
    c = m.counts
    per_class = {}
    for i, label in enumerate(m.labels):
        tp = c[i, i]
        p = _div(tp, c[:, i].sum())
        r = _div(tp, c[i, :].sum())
        per_class[label] = Scores(p, r, f1_score(p, r))
    k = len(m.labels)
    macro = Scores(*(sum(s[j] for s in per_class.values()) / k for j in range(3)))
    return MetricsReport(_div(np.trace(c), total), per_class, macro, total)


def evaluate(gold: Sequence, pred: Sequence, scale) -> MetricsReport:
    return compute_metrics(confusion(gold, pred, scale))


def fmt4(x: float) -> str:
    """Four decimals, rounding half up on the shortest decimal repr of ``x``."""
    return str(Decimal(repr(float(x))).quantize(Decimal("0.0001"), rounding=ROUND_HALF_UP))


COLUMNS = ("Model", "Accuracy", "Precision", "Recall", "F1 Score")


def _row(value) -> SummaryRow:
    if hasattr(value, "summary"):
        return value.summary()
    if isinstance(value, Mapping):
        return SummaryRow(value["accuracy"], value["precision"], value["recall"], value["f1"])
    return SummaryRow(*value)


def render_report(results: Mapping) -> str:
    """Fixed-width table: one row per experiment, macro values to 4 decimals.

    Values may be MetricsReports, SummaryRows, or mappings with
    accuracy/precision/recall/f1 keys.
    """
    rows = [[name, *(fmt4(v) for v in _row(val))] for name, val in results.items()]
    widths = [max([len(COLUMNS[j])] + [len(r[j]) for r in rows]) for j in range(len(COLUMNS))]
    lines = [" | ".join(h.ljust(w) for h, w in zip(COLUMNS, widths))]
    lines.append("-+-".join("-" * w for w in widths))
    for r in rows:
        lines.append(" | ".join(v.ljust(w) for v, w in zip(r, widths)))
    return "\n".join(lines) + "\n"


def report_json(results: Mapping) -> str:
    out = {}
    for name, val in results.items():
        if isinstance(val, MetricsReport):
            out[name] = val.to_json()
        else:
            out[name] = _row(val)._asdict()
    return json.dumps(out, indent=2, sort_keys=True)
