"""Record format and aggregation for 1-5 rubric ratings of explanations."""

from __future__ import annotations

import json
from collections.abc import Iterable, Sequence
from dataclasses import asdict, dataclass
from pathlib import Path

CRITERIA = ("relevance", "completeness", "medical_accuracy")
_HEADERS = ("Model", "Relevance", "Completeness", "Medical Accuracy")


class ScoreSchemaError(ValueError):
    pass


@dataclass(frozen=True)
class RubricScore:
    post_id: str
    annotator_id: str
    system: str
    relevance: int
    completeness: int
    medical_accuracy: int

    def __post_init__(self):
        for c in CRITERIA:
            v = getattr(self, c)
            if isinstance(v, bool) or not isinstance(v, int) or not 1 <= v <= 5:
                raise ScoreSchemaError(f"{c} must be an integer in [1, 5], got {v!r}")


def load_scores(path) -> list[RubricScore]:
    out = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            out.append(RubricScore(**json.loads(line)))
        except (TypeError, json.JSONDecodeError, ScoreSchemaError) as exc:
            raise ScoreSchemaError(f"line {lineno}: {exc}") from None
    return out


def save_scores(scores: Iterable[RubricScore], path) -> None:
    Path(path).write_text("".join(json.dumps(asdict(s)) + "\n" for s in scores), encoding="utf-8")


def aggregate_scores(scores: Sequence[RubricScore]) -> dict[str, tuple[float, float, float]]:
    """Mean of each criterion over all annotators and posts, per system."""
    if not scores:
        raise ValueError("no scores to aggregate")
    grouped: dict[str, list[RubricScore]] = {}
    for s in scores:
        grouped.setdefault(s.system, []).append(s)
    out = {}
    for system in sorted(grouped):
        rows = grouped[system]
        out[system] = tuple(sum(getattr(r, c) for r in rows) / len(rows) for c in CRITERIA)
    return out


def render_table(means: dict[str, tuple[float, float, float]]) -> str:
    rows = [_HEADERS] + [(name, *(f"{v:.1f}" for v in vals)) for name, vals in means.items()]
    widths = [max(len(r[i]) for r in rows) for i in range(len(_HEADERS))]
    lines = []
    for r in rows:
        lines.append("  ".join(cell.ljust(w) if i == 0 else cell.rjust(w) for i, (cell, w) in enumerate(zip(r, widths))))
    return "\n".join(lines) + "\n"
