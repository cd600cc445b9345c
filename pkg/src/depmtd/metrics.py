"""Classification metrics, average precision and length-stratified AUPRC."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from .corpus import BINS, bin_for_count, word_count


class UndefinedMetricError(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def confusion(preds: Sequence[int], labels: Sequence[int]) -> ConfusionMatrix:
    if len(preds) != len(labels):
        raise ValueError(f"length mismatch: {len(preds)} predictions vs {len(labels)} labels")
    if not len(preds):
        raise ValueError("no predictions to evaluate")
    tp = fp = fn = tn = 0
    for p, y in zip(preds, labels):
        if p not in (0, 1) or y not in (0, 1):
            raise ValueError("predictions and labels must be 0 or 1")
        if p == 1 and y == 1:
            tp += 1
        elif p == 1:
            fp += 1
        elif y == 1:
            fn += 1
        else:
            tn += 1
    return ConfusionMatrix(tp, fp, fn, tn)


def scalar_metrics(cm: ConfusionMatrix) -> tuple[float, float, float, float]:
    """(accuracy, precision, recall, f1); any 0/0 ratio is reported as 0."""
    if cm.total <= 0:
        raise ValueError("confusion matrix is empty")
    accuracy = (cm.tp + cm.tn) / cm.total
    precision = cm.tp / (cm.tp + cm.fp) if cm.tp + cm.fp else 0.0
    recall = cm.tp / (cm.tp + cm.fn) if cm.tp + cm.fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return accuracy, precision, recall, f1


def _ranked_labels(scores: Sequence[float], labels: Sequence[int]) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must have the same length")
    order = np.argsort(-scores, kind="stable")
    return labels[order]


def pr_curve(scores: Sequence[float], labels: Sequence[int]) -> list[tuple[float, float]]:
    """(recall, precision) after each rank in descending-score order."""
    ranked = _ranked_labels(scores, labels)
    n_pos = int(ranked.sum())
    if n_pos == 0:
        raise UndefinedMetricError("precision-recall curve needs at least one positive")
    hits = np.cumsum(ranked)
    k = np.arange(1, len(ranked) + 1)
    return [(float(h / n_pos), float(h / i)) for h, i in zip(hits, k)]


def auprc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Average precision: mean over positives of precision at that positive's rank.

    Scores are ranked in descending order; equal scores keep their input order.
    """
    ranked = _ranked_labels(scores, labels)
    n_pos = int(ranked.sum())
    if n_pos == 0:
        raise UndefinedMetricError("AUPRC is undefined without positive labels")
    hits = np.cumsum(ranked)
    ranks = np.nonzero(ranked)[0] + 1
    return float(np.sum(hits[ranks - 1] / ranks) / n_pos)


def stratify_by_length(texts: Sequence[str], scores: Sequence[float], labels: Sequence[int]) -> dict[str, float]:
    """AUPRC per word-count bin; bins without positives are left out."""
    if not len(texts) == len(scores) == len(labels):
        raise ValueError("texts, scores and labels must be parallel")
    groups: dict[str, list[int]] = {b: [] for b in BINS}
    for i, t in enumerate(texts):
        groups[bin_for_count(word_count(t))].append(i)
    out = {}
    for b in BINS:
        idx = groups[b]
        sub_labels = [labels[i] for i in idx]
        if not any(sub_labels):
            continue
        out[b] = auprc([scores[i] for i in idx], sub_labels)
    return out


@dataclass
class EvalReport:
    cm: ConfusionMatrix
    accuracy: float
    precision: float
    recall: float
    f1: float
    auprc: float | None
    per_bin: dict[str, float] = field(default_factory=dict)
    model: str = "Joint-MTL"

    def flat(self) -> dict:
        out = {
            "model": self.model,
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "auprc": self.auprc,
            "tp": self.cm.tp,
            "fp": self.cm.fp,
            "fn": self.cm.fn,
            "tn": self.cm.tn,
        }
        for b in BINS:
            out[f"auprc_{b.lower()}"] = self.per_bin.get(b)
        return out

    def to_keyvalue(self) -> str:
        lines = []
        for k, v in self.flat().items():
            lines.append(f"{k}={'' if v is None else repr(float(v)) if isinstance(v, float) else v}")
        return "\n".join(lines) + "\n"


def evaluate(
    texts: Sequence[str],
    scores: Sequence[float],
    labels: Sequence[int],
    preds: Sequence[int],
    model: str = "Joint-MTL",
) -> EvalReport:
    """Assemble a full report from parallel texts, scores, labels and predictions."""
    cm = confusion(list(preds), list(labels))
    acc, prec, rec, f1 = scalar_metrics(cm)
    ap = auprc(scores, labels) if any(labels) else None
    return EvalReport(cm, acc, prec, rec, f1, ap, stratify_by_length(texts, scores, labels), model)
