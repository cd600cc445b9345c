import json
import subprocess
import sys

import pytest
from conftest import PIPELINE_SEED, TINY_MODEL
from helpers import confusion_dump_rows

from depmtd import checkpoint, corpus
from depmtd.cli import main, sha256_file
from depmtd.corpus import PostRecord, SyntheticSpec, generate_synthetic
from depmtd.report import read_scores, scores_csv
from depmtd.tokenizer import Vocabulary

DETERMINISTIC_FILES = [
    "data.jsonl",
    "train/checkpoint.ckpt",
    "train/vocab.txt",
    "eval/metrics.csv",
    "eval/metrics.txt",
    "eval/length_auprc.csv",
    "eval/confusion.csv",
    "eval/report.txt",
    "eval/scores.csv",
    "explain/explanations.jsonl",
    "explain/explanations.txt",
    "baseline/report.txt",
    "baseline/scores.csv",
    "baseline/tfidf.tsv",
    "baseline/svm_weights.tsv",
]


def _kv(path):
    return dict(line.split("=", 1) for line in path.read_text().splitlines())


def test_gen_data_writes_file_and_manifest(tmp_path):
    assert main(["gen-data", "--n-records", "30", "--out-dir", str(tmp_path)]) == 0
    assert len(corpus.load(tmp_path / "dataset.jsonl")) == 30
    manifest = json.loads((tmp_path / "manifest-gen-data.json").read_text())
    assert manifest["command"] == "gen-data"
    assert manifest["config"]["n_records"] == 30 and manifest["config"]["noise_rate"] == 0.0
    assert manifest["outputs"][str(tmp_path / "dataset.jsonl")] == sha256_file(tmp_path / "dataset.jsonl")


def test_gen_data_bad_fraction(tmp_path, capsys):
    out = tmp_path / "d.jsonl"
    code = main(["gen-data", "--positive-fraction", "1.5", "--out", str(out), "--out-dir", str(tmp_path)])
    assert code != 0
    assert not out.exists()
    assert "usage" in capsys.readouterr().err


def test_gen_data_same_seed_same_checksum(tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    for out in (a, b):
        assert main(["gen-data", "--seed", "4", "--n-records", "50", "--out", str(out), "--out-dir", str(tmp_path)]) == 0
    assert sha256_file(a) == sha256_file(b)


def test_seed_before_or_after_subcommand(tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    main(["--seed", "9", "gen-data", "--n-records", "20", "--out", str(a), "--out-dir", str(tmp_path)])
    main(["gen-data", "--seed", "9", "--n-records", "20", "--out", str(b), "--out-dir", str(tmp_path)])
    assert a.read_bytes() == b.read_bytes()


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("n_records = 25\npositive_fraction = 0.4\n")
    main(["gen-data", "--config", str(cfg), "--out", str(tmp_path / "a.jsonl"), "--out-dir", str(tmp_path)])
    recs = corpus.load(tmp_path / "a.jsonl")
    assert len(recs) == 25 and sum(r.label for r in recs) == 10
    main(["gen-data", "--config", str(cfg), "--n-records", "15", "--out", str(tmp_path / "b.jsonl"), "--out-dir", str(tmp_path)])
    assert len(corpus.load(tmp_path / "b.jsonl")) == 15


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_data")
    path = root / "data.jsonl"
    corpus.save(generate_synthetic(SyntheticSpec(n_records=40, positive_fraction=0.3, length_mix=(1.0, 0.0, 0.0), seed=1)), path)
    return path


def test_train_one_epoch(dataset, tmp_path, capsys):
    assert main(["train", "--data", str(dataset), "--epochs", "1", *TINY_MODEL, "--out-dir", str(tmp_path)]) == 0
    assert len((tmp_path / "history.csv").read_text().splitlines()) == 2
    params, meta = checkpoint.load(tmp_path / "checkpoint.ckpt")
    assert meta["lambda"] == 0.5 and meta["split_seed"] == 0
    assert params.config.V == len(Vocabulary.load(tmp_path / "vocab.txt"))
    assert "l_cls=" in capsys.readouterr().err
    manifest = json.loads((tmp_path / "manifest-train.json").read_text())
    assert manifest["untracked_outputs"] == [str(tmp_path / "history.csv")]
    assert set(manifest["config"]) >= {"lr", "epochs", "batch_size", "patience", "lam", "d"}


def test_train_lambda_grid(dataset, tmp_path):
    argv = ["train", "--data", str(dataset), "--epochs", "1", *TINY_MODEL, "--lambda-grid", "0.5,1.0", "--out-dir", str(tmp_path)]
    assert main(argv) == 0
    assert sorted(p.name for p in tmp_path.glob("history*.csv")) == ["history_lambda_0.5.csv", "history_lambda_1.csv"]
    assert len(list(tmp_path.glob("*.ckpt"))) == 1
    assert checkpoint.load(tmp_path / "checkpoint.ckpt")[1]["lambda"] in (0.5, 1.0)


def test_train_unreadable_data(tmp_path, capsys):
    assert main(["train", "--data", str(tmp_path / "missing.jsonl"), "--out-dir", str(tmp_path)]) == 1
    assert "cannot read dataset" in capsys.readouterr().err


def test_train_bad_lambda_grid(dataset, tmp_path):
    assert main(["train", "--data", str(dataset), "--lambda-grid", "0.5,2", "--out-dir", str(tmp_path)]) == 2


def test_eval_vocab_mismatch_names_field(dataset, tmp_path, capsys):
    main(["train", "--data", str(dataset), "--epochs", "1", *TINY_MODEL, "--out-dir", str(tmp_path)])
    vocab = Vocabulary.load(tmp_path / "vocab.txt")
    Vocabulary(list(vocab.tokens) + ["zzzextra"]).save(tmp_path / "other.txt")
    code = main(["eval", "--checkpoint", str(tmp_path / "checkpoint.ckpt"), "--vocab", str(tmp_path / "other.txt"),
                 "--data", str(dataset), "--out-dir", str(tmp_path / "e")])
    assert code == 1
    assert "field V" in capsys.readouterr().err


def test_eval_needs_inputs(tmp_path):
    assert main(["eval", "--out-dir", str(tmp_path)]) == 2


def test_eval_scores_confusion_dump(tmp_path):
    (tmp_path / "scores.csv").write_text(scores_csv(confusion_dump_rows()))
    assert main(["eval", "--scores", str(tmp_path / "scores.csv"), "--out-dir", str(tmp_path / "out")]) == 0
    lines = (tmp_path / "out/confusion.txt").read_text().splitlines()
    assert lines[1].split()[-2:] == ["155", "45"]
    assert lines[2].split()[-2:] == ["35", "765"]
    kv = _kv(tmp_path / "out/report.txt")
    assert float(kv["recall"]) == 0.775


def test_eval_perfect_predictions(tmp_path):
    rows = confusion_dump_rows()
    for r in rows:
        r.pred = r.label
        r.score = float(r.label) + 0.01 * r.score
    (tmp_path / "s.csv").write_text(scores_csv(rows))
    assert main(["eval", "--scores", str(tmp_path / "s.csv"), "--out-dir", str(tmp_path)]) == 0
    assert (tmp_path / "metrics.txt").read_text().splitlines()[1].split()[1:] == ["1.000"] * 5


def test_eval_report_auprc_matches_scores(pipeline_runs):
    from depmtd.metrics import auprc

    root = pipeline_runs[0]
    rows = read_scores(root / "eval/scores.csv")
    assert float(_kv(root / "eval/report.txt")["auprc"]) == auprc([r.score for r in rows], [r.label for r in rows])


def test_eval_uses_checkpoint_split_seed(pipeline_runs):
    root = pipeline_runs[0]
    manifest = json.loads((root / "eval/manifest-eval.json").read_text())
    assert manifest["config"]["seed"] == PIPELINE_SEED
    assert len(read_scores(root / "eval/scores.csv")) == 32


def test_explain_dash_convention(pipeline_runs):
    root = pipeline_runs[0]
    objs = [json.loads(line) for line in (root / "explain/explanations.jsonl").read_text().splitlines()]
    assert objs
    for o in objs:
        assert set(o) == {"id", "text", "label", "predicted", "probability", "explanation"}
        if o["predicted"] == 0:
            assert o["explanation"] == "-"
        else:
            assert o["explanation"] not in ("", "-")
    assert {o["predicted"] for o in objs} == {0, 1}


def test_explain_all_posts(pipeline_runs, tmp_path):
    root = pipeline_runs[0]
    argv = ["explain", "--checkpoint", str(root / "train/checkpoint.ckpt"), "--data", str(root / "data.jsonl"),
            "--max-new", "4", "--no-only-positive-predictions", "--out-dir", str(tmp_path)]
    assert main(argv) == 0
    objs = [json.loads(line) for line in (tmp_path / "explanations.jsonl").read_text().splitlines()]
    assert all(o["explanation"] != "-" for o in objs)


def test_baseline_excludes_test_only_terms(tmp_path):
    recs = generate_synthetic(SyntheticSpec(n_records=100, positive_fraction=0.3, length_mix=(1.0, 0.0, 0.0), seed=2))
    from depmtd.training import split_dataset

    _, _, test = split_dataset(recs, 0)
    marked = {test[0].id}
    recs = [PostRecord(r.id, r.text + " qqxyzzy", r.label, r.explanation) if r.id in marked else r for r in recs]
    corpus.save(recs, tmp_path / "d.jsonl")
    assert main(["baseline", "--data", str(tmp_path / "d.jsonl"), "--out-dir", str(tmp_path)]) == 0
    terms = [line.split("\t")[0] for line in (tmp_path / "tfidf.tsv").read_text().splitlines()]
    assert "qqxyzzy" not in terms and len(terms) > 10


def test_baseline_separable_data(tmp_path):
    corpus.save(generate_synthetic(SyntheticSpec(n_records=400, noise_rate=0.0, seed=3)), tmp_path / "d.jsonl")
    assert main(["baseline", "--data", str(tmp_path / "d.jsonl"), "--out-dir", str(tmp_path)]) == 0
    assert float(_kv(tmp_path / "report.txt")["accuracy"]) >= 0.95


def test_baseline_single_class(tmp_path, capsys):
    recs = [PostRecord(f"n{i}", "a quiet ordinary day", 0) for i in range(20)]
    corpus.save(recs, tmp_path / "d.jsonl")
    assert main(["baseline", "--data", str(tmp_path / "d.jsonl"), "--out-dir", str(tmp_path)]) == 1
    assert "single class" in capsys.readouterr().err


def test_report_columns_shared_between_model_and_baseline(pipeline_runs):
    root = pipeline_runs[0]
    for name in ("metrics.csv", "length_auprc.csv", "confusion.csv"):
        a = (root / "eval" / name).read_text().splitlines()[0]
        b = (root / "baseline" / name).read_text().splitlines()[0]
        assert a == b


def test_compare_builds_tables(pipeline_runs, tmp_path):
    root = pipeline_runs[0]
    assert main(["compare", str(root / "baseline"), str(root / "eval"), "--out-dir", str(tmp_path)]) == 0
    lines = (tmp_path / "metrics.txt").read_text().splitlines()
    assert [line.split()[0] for line in lines] == ["Model", "SVM+TF-IDF", "Joint-MTL", "BERT-FineTune"]
    assert lines[3].split()[1:] == ["-"] * 5


@pytest.mark.parametrize("path", DETERMINISTIC_FILES)
def test_rerun_is_byte_identical(pipeline_runs, path):
    a, b = pipeline_runs
    assert (a / path).read_bytes() == (b / path).read_bytes()


def test_manifest_checksums_match(pipeline_runs):
    root = pipeline_runs[0]
    for manifest in root.rglob("manifest-*.json"):
        m = json.loads(manifest.read_text())
        for path, digest in m["outputs"].items():
            assert sha256_file(path) == digest


def test_module_entry_point(tmp_path):
    out = tmp_path / "d.jsonl"
    proc = subprocess.run(
        [sys.executable, "-m", "depmtd", "gen-data", "--n-records", "12", "--out", str(out), "--out-dir", str(tmp_path)],
        capture_output=True, text=True, check=False,
    )
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout == "" and out.exists()
