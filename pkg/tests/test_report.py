import json

import pytest
from helpers import confusion_dump_rows

from depmtd import report
from depmtd.metrics import ConfusionMatrix, EvalReport, evaluate, scalar_metrics


def _rep(model="Joint-MTL", per_bin=None, auprc=0.9):
    cm = ConfusionMatrix(tp=155, fp=35, fn=45, tn=765)
    acc, p, r, f = scalar_metrics(cm)
    return EvalReport(cm, acc, p, r, f, auprc, per_bin if per_bin is not None else {"SHORT": 0.85}, model)


def test_metrics_table_columns_and_rounding():
    text = report.metrics_text([_rep()], ["BERT-FineTune"])
    lines = text.splitlines()
    assert lines[0].split() == ["Model", "Accuracy", "Precision", "Recall", "F1-Score", "AUPRC"]
    assert lines[1].split() == ["Joint-MTL", "0.920", "0.816", "0.775", "0.795", "0.900"]
    assert lines[2].split() == ["BERT-FineTune", "-", "-", "-", "-", "-"]


def test_metrics_csv_keeps_full_precision():
    rows = [line.split(",") for line in report.metrics_csv([_rep()]).splitlines()]
    assert rows[0] == list(report.METRIC_COLUMNS)
    assert float(rows[1][2]) == 155 / 190
    assert float(rows[1][4]) == pytest.approx(310 / 390, abs=1e-15)


def test_csv_and_text_share_numbers():
    rep = _rep(per_bin={"SHORT": 0.123456, "LONG": 0.98765})
    for csv_body, text_body in (
        (report.metrics_csv([rep]), report.metrics_text([rep])),
        (report.length_auprc_csv([rep]), report.length_auprc_text([rep])),
    ):
        full = csv_body.splitlines()[1].split(",")[1:]
        short = text_body.splitlines()[1].split()[1:]
        assert len(full) == len(short)
        for f, s in zip(full, short):
            assert s == ("-" if f == "-" else f"{float(f):.3f}")


def test_length_table_layout_and_missing_bins():
    lines = report.length_auprc_text([_rep()]).splitlines()
    assert lines[0].startswith("Model")
    assert ["Short Posts (AUPRC)", "Medium (AUPRC)", "Long (AUPRC)"] == [
        c.strip() for c in report.length_auprc_csv([_rep()]).splitlines()[0].split(",")[1:]
    ]
    assert lines[1].split() == ["Joint-MTL", "0.850", "-", "-"]


def test_confusion_layout():
    lines = report.confusion_text(_rep()).splitlines()
    assert lines[0].split() == ["Predicted", "Positive", "Predicted", "Negative"]
    assert lines[1].split() == ["Actual", "Positive", "155", "45"]
    assert lines[2].split() == ["Actual", "Negative", "35", "765"]
    assert report.confusion_csv(_rep()).splitlines()[1:] == ["Actual Positive,155,45", "Actual Negative,35,765"]


def test_write_report_files(tmp_path):
    paths = report.write_report(_rep(), tmp_path)
    names = sorted(p.name for p in paths)
    assert names == sorted([
        "metrics.csv", "metrics.txt", "length_auprc.csv", "length_auprc.txt",
        "confusion.csv", "confusion.txt", "report.txt",
    ])
    kv = dict(line.split("=", 1) for line in (tmp_path / "report.txt").read_text().splitlines())
    assert kv["recall"] == "0.775" and kv["tp"] == "155" and kv["auprc_medium"] == ""


def test_scores_roundtrip(tmp_path):
    rows = confusion_dump_rows()
    path = tmp_path / "s.csv"
    path.write_text(report.scores_csv(rows))
    assert report.read_scores(path) == rows


def test_scores_missing_column(tmp_path):
    path = tmp_path / "s.csv"
    path.write_text("id,label,score\na,1,0.3\n")
    with pytest.raises(ValueError, match="pred"):
        report.read_scores(path)


def test_confusion_dump_reproduces_counts():
    rows = confusion_dump_rows()
    rep = evaluate(["w"] * len(rows), [r.score for r in rows], [r.label for r in rows], [r.pred for r in rows])
    assert (rep.cm.tp, rep.cm.fn, rep.cm.fp, rep.cm.tn) == (155, 45, 35, 765)
    assert rep.recall == 0.775


def test_explanation_dash_for_missing():
    neg = report.explanation_line("a", "fine day", 0, 0, 0.1, None)
    pos = report.explanation_line("b", "so tired", 1, 1, 0.9, "The post expresses tiredness.")
    assert json.loads(neg)["explanation"] == "-"
    lines = report.explanations_text([neg, pos]).splitlines()
    assert lines[0] == "Social Media Post | Ground Truth | Prediction | Generated Explanation"
    assert lines[1] == "fine day | Negative | Negative | -"
    assert lines[2] == "so tired | Positive | Positive | The post expresses tiredness."
