"""CSV and aligned-text renderings of evaluation results.

CSV files keep full precision (``repr`` of floats); text tables round to
three decimals. Missing values render as ``-`` in both.
"""

from __future__ import annotations

import csv
import io
import json
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

from .corpus import BINS
from .metrics import EvalReport

METRIC_COLUMNS = ("Model", "Accuracy", "Precision", "Recall", "F1-Score", "AUPRC")
LENGTH_COLUMNS = ("Model", "Short Posts (AUPRC)", "Medium (AUPRC)", "Long (AUPRC)")
EXPLANATION_COLUMNS = ("Social Media Post", "Ground Truth", "Prediction", "Generated Explanation")
NO_EXPLANATION = "-"


def _csv(rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def _full(v) -> str:
    if v is None:
        return "-"
    return repr(float(v)) if isinstance(v, float) else str(v)


def _short(v) -> str:
    return "-" if v is None else f"{v:.3f}"


def _align(rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    out = []
    for r in rows:
        cells = [c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))]
        out.append("  ".join(cells).rstrip())
    return "\n".join(out) + "\n"


def _t1_values(rep: EvalReport | None):
    if rep is None:
        return [None] * 5
    return [rep.accuracy, rep.precision, rep.recall, rep.f1, rep.auprc]


def metrics_csv(reports: Sequence[EvalReport], blank_rows: Sequence[str] = ()) -> str:
    rows = [METRIC_COLUMNS]
    rows += [[r.model] + [_full(v) for v in _t1_values(r)] for r in reports]
    rows += [[name] + ["-"] * 5 for name in blank_rows]
    return _csv(rows)


def metrics_text(reports: Sequence[EvalReport], blank_rows: Sequence[str] = ()) -> str:
    rows = [list(METRIC_COLUMNS)]
    rows += [[r.model] + [_short(v) for v in _t1_values(r)] for r in reports]
    rows += [[name] + ["-"] * 5 for name in blank_rows]
    return _align(rows)


def length_auprc_csv(reports: Sequence[EvalReport]) -> str:
    rows = [LENGTH_COLUMNS]
    rows += [[r.model] + [_full(r.per_bin.get(b)) for b in BINS] for r in reports]
    return _csv(rows)


def length_auprc_text(reports: Sequence[EvalReport]) -> str:
    rows = [list(LENGTH_COLUMNS)]
    rows += [[r.model] + [_short(r.per_bin.get(b)) for b in BINS] for r in reports]
    return _align(rows)


def confusion_csv(rep: EvalReport) -> str:
    cm = rep.cm
    return _csv(
        [
            ("", "Predicted Positive", "Predicted Negative"),
            ("Actual Positive", cm.tp, cm.fn),
            ("Actual Negative", cm.fp, cm.tn),
        ]
    )


def confusion_text(rep: EvalReport) -> str:
    cm = rep.cm
    return _align(
        [
            ["", "Predicted Positive", "Predicted Negative"],
            ["Actual Positive", str(cm.tp), str(cm.fn)],
            ["Actual Negative", str(cm.fp), str(cm.tn)],
        ]
    )


def write_report(rep: EvalReport, out_dir, prefix: str = "") -> list[Path]:
    """Write the metrics row, per-length AUPRC, the confusion matrix and a
    flat key=value file. Returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {
        "metrics.csv": metrics_csv([rep]),
        "metrics.txt": metrics_text([rep]),
        "length_auprc.csv": length_auprc_csv([rep]),
        "length_auprc.txt": length_auprc_text([rep]),
        "confusion.csv": confusion_csv(rep),
        "confusion.txt": confusion_text(rep),
        "report.txt": rep.to_keyvalue(),
    }
    written = []
    for name, body in files.items():
        path = out_dir / f"{prefix}{name}"
        path.write_text(body, encoding="utf-8")
        written.append(path)
    return written


# -- scored dumps --------------------------------------------------------------

SCORE_COLUMNS = ("id", "label", "score", "pred", "word_count")


@dataclass
class ScoredRow:
    id: str
    label: int
    score: float
    pred: int
    word_count: int


def scores_csv(rows: Sequence[ScoredRow]) -> str:
    return _csv([SCORE_COLUMNS] + [[r.id, r.label, repr(float(r.score)), r.pred, r.word_count] for r in rows])


def read_scores(path) -> list[ScoredRow]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(SCORE_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"scores file lacks columns {sorted(missing)}")
        return [
            ScoredRow(r["id"], int(r["label"]), float(r["score"]), int(r["pred"]), int(r["word_count"]))
            for r in reader
        ]


# -- explanations --------------------------------------------------------------


def _polarity(label: int | None) -> str:
    if label is None:
        return "-"
    return "Positive" if label == 1 else "Negative"


def explanation_line(
    rec_id: str, text: str, label: int | None, pred: int, prob: float, explanation: str | None
) -> str:
    obj = {
        "id": rec_id,
        "text": text,
        "label": label,
        "predicted": pred,
        "probability": prob,
        "explanation": explanation if explanation is not None else NO_EXPLANATION,
    }
    return json.dumps(obj, ensure_ascii=False)


def explanations_text(lines: Sequence[str]) -> str:
    rows = [list(EXPLANATION_COLUMNS)]
    for line in lines:
        obj = json.loads(line)
        rows.append([obj["text"], _polarity(obj["label"]), _polarity(obj["predicted"]), obj["explanation"]])
    return "\n".join(" | ".join(r) for r in rows) + "\n"
