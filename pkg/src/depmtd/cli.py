"""Command-line entry point: gen-data, train, eval, explain, baseline, compare."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from collections.abc import Sequence
from pathlib import Path

from . import __version__, corpus, report
from . import checkpoint as ckpt
from .baselines import (
    classification_only_preset,
    fit_tfidf,
    train_linear_svm,
    transform_many,
)
from .corpus import DatasetError, SyntheticSpec, generate_synthetic
from .metrics import ConfusionMatrix, EvalReport, evaluate
from .model import (
    ModelConfig,
    ModelParams,
    forward,
    generate_explanation,
    predict_label,
)
from .tokenizer import CapacityError, Vocabulary, build_training_sequence
from .training import (
    TrainConfig,
    TrainingDiverged,
    fit,
    select_lambda,
    split_dataset,
    training_vocab,
)

logger = logging.getLogger("depmtd")


class UsageError(Exception):
    pass


class RunError(Exception):
    pass


# -- configuration -------------------------------------------------------------

DEFAULTS = {
    "seed": 0,
    "out_dir": ".",
    # gen-data
    "n_records": 1000,
    "positive_fraction": 0.2,
    "noise_rate": 0.0,
    "length_mix": "0.4,0.45,0.15",
    # train
    "lam": 0.5,
    "lambda_grid": None,
    "epochs": 20,
    "batch_size": 8,
    "lr": 3e-4,
    "patience": 3,
    "clip_norm": 1.0,
    "min_freq": 1,
    "d": 64,
    "n_layers": 2,
    "n_heads": 4,
    "max_len": 128,
    "threshold": 0.5,
    # eval / explain
    "split": "test",
    "max_new": 48,
    "mode": "greedy",
    "temperature": 1.0,
    # baseline
    "reg_grid": "1e-4,1e-3,1e-2,1e-1",
    "svm_epochs": 20,
}

_ALIASES = {"lambda": "lam", "layers": "n_layers", "heads": "n_heads"}


def _resolve(args: argparse.Namespace, keys: Sequence[str]) -> dict:
    """Flag value if given, else config-file value, else built-in default."""
    file_values = {}
    if args.config:
        try:
            text = Path(args.config).read_text(encoding="utf-8")
            file_values = {_ALIASES.get(k, k): v for k, v in corpus.parse_keyvalue(text).items()}
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
    out = {}
    for key in keys:
        flag = getattr(args, key, None)
        if flag is not None:
            out[key] = flag
        elif key in file_values:
            out[key] = _coerce(key, file_values[key])
        else:
            out[key] = DEFAULTS[key]
    return out


def _coerce(key: str, raw: str):
    default = DEFAULTS.get(key)
    if raw.lower() in ("none", ""):
        return None
    try:
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise UsageError(f"config value for {key} is not a number: {raw!r}") from None
    return raw


def _floats(text: str, what: str) -> list[float]:
    try:
        return [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"{what} must be a comma-separated list of numbers, got {text!r}") from None


# -- manifest ------------------------------------------------------------------


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out_dir: Path, command: str, config: dict, inputs: dict, outputs: Sequence[Path], untracked=()) -> Path:
    manifest = {
        "command": command,
        "version": __version__,
        "seed": config.get("seed"),
        "config": config,
        "inputs": {k: {"path": str(v), "sha256": sha256_file(v)} for k, v in inputs.items()},
        "outputs": {str(p): sha256_file(p) for p in outputs},
        # files carrying wall-clock values; listed without checksum
        "untracked_outputs": [str(p) for p in untracked],
    }
    path = out_dir / f"manifest-{command}.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


# -- helpers -------------------------------------------------------------------


def _load_records(path):
    try:
        return corpus.load(path)
    except OSError as exc:
        raise RunError(f"cannot read dataset {path}: {exc}") from None
    except DatasetError as exc:
        raise RunError(f"invalid dataset {path}: {exc}") from None


def _pick_split(records, split: str, seed: int):
    if split == "all":
        return records
    try:
        train, val, test = split_dataset(records, seed)
    except ValueError as exc:
        raise RunError(str(exc)) from None
    return {"train": train, "val": val, "test": test}[split]


def _load_model(args) -> tuple[ModelParams, dict, Vocabulary, Path]:
    cpath = Path(args.checkpoint)
    try:
        params, meta = ckpt.load(cpath)
    except (OSError, ckpt.CheckpointError, ValueError, KeyError) as exc:
        raise RunError(f"cannot load checkpoint {cpath}: {exc}") from None
    vpath = Path(args.vocab) if args.vocab else cpath.parent / "vocab.txt"
    try:
        vocab = Vocabulary.load(vpath)
    except (OSError, ValueError) as exc:
        raise RunError(f"cannot load vocabulary {vpath}: {exc}") from None
    try:
        ckpt.check_vocab(params, meta, vocab)
    except ckpt.CheckpointError as exc:
        raise RunError(f"checkpoint/vocabulary mismatch: {exc}") from None
    return params, meta, vocab, vpath


# -- commands ------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    conf = _resolve(args, ["seed", "out_dir", "n_records", "positive_fraction", "noise_rate", "length_mix"])
    try:
        spec = SyntheticSpec(
            n_records=int(conf["n_records"]),
            positive_fraction=float(conf["positive_fraction"]),
            length_mix=tuple(_floats(conf["length_mix"], "length_mix")),
            noise_rate=float(conf["noise_rate"]),
            seed=int(conf["seed"]),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out_dir = Path(conf["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    out = Path(args.out) if args.out else out_dir / "dataset.jsonl"
    corpus.save(generate_synthetic(spec), out)
    conf["out"] = str(out)
    write_manifest(out_dir, "gen-data", conf, {}, [out])
    logger.info("wrote %d records to %s", spec.n_records, out)
    return 0


_TRAIN_KEYS = [
    "seed", "out_dir", "lam", "lambda_grid", "epochs", "batch_size", "lr", "patience",
    "clip_norm", "min_freq", "d", "n_layers", "n_heads", "max_len", "threshold",
]


def cmd_train(args) -> int:
    conf = _resolve(args, _TRAIN_KEYS)
    if args.no_clip:
        conf["clip_norm"] = None
    records = _load_records(args.data)
    train, val, _ = _pick_split_all(records, conf["seed"])
    vocab = training_vocab(train, conf["min_freq"])
    try:
        model_cfg = ModelConfig(
            V=len(vocab), d=conf["d"], n_layers=conf["n_layers"], n_heads=conf["n_heads"],
            max_len=conf["max_len"], threshold=conf["threshold"],
        )
        cfg = TrainConfig(
            lr=conf["lr"], epochs=conf["epochs"], batch_size=conf["batch_size"], lam=conf["lam"],
            seed=conf["seed"], patience=conf["patience"], clip_norm=conf["clip_norm"], min_freq=conf["min_freq"],
        )
        grid = _floats(conf["lambda_grid"], "lambda_grid") if conf["lambda_grid"] else None
        if grid is not None and (not grid or any(not 0 <= g <= 1 for g in grid)):
            raise ValueError("lambda grid values must lie in [0, 1]")
    except ValueError as exc:
        raise UsageError(str(exc)) from None

    out_dir = Path(conf["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    untracked = []
    try:
        if grid is None:
            params, hist = fit(train, val, cfg, model_cfg, vocab)
            lam = cfg.lam
            hpath = out_dir / "history.csv"
            hpath.write_text(hist.to_csv(), encoding="utf-8")
            untracked.append(hpath)
        else:
            lam, hists, params = select_lambda(grid, train, val, cfg, model_cfg, vocab)
            for g, h in hists.items():
                hpath = out_dir / f"history_lambda_{g:g}.csv"
                hpath.write_text(h.to_csv(), encoding="utf-8")
                untracked.append(hpath)
            hist = hists[lam]
    except (TrainingDiverged, CapacityError) as exc:
        raise RunError(f"training failed: {exc}") from None

    vpath = out_dir / "vocab.txt"
    vocab.save(vpath)
    cpath = out_dir / "checkpoint.ckpt"
    meta = {"lambda": lam, "split_seed": conf["seed"], "vocab_sha256": ckpt.vocab_digest(vocab)}
    ckpt.save(params, cpath, meta)
    conf["selected_lambda"] = lam
    write_manifest(out_dir, "train", conf, {"data": Path(args.data)}, [cpath, vpath], untracked)

    best = hist.records[hist.best_epoch - 1]
    print(
        f"best epoch {best.epoch}: lambda={lam:g} l_cls={best.loss.l_cls:.6f} l_gen={best.loss.l_gen:.6f} "
        f"l_total={best.loss.l_total:.6f} val_auprc={best.val_auprc:.6f}",
        file=sys.stderr,
    )
    return 0


def _pick_split_all(records, seed):
    try:
        return split_dataset(records, seed)
    except ValueError as exc:
        raise RunError(str(exc)) from None


def _split_seed(args, meta) -> int:
    if args.seed is not None:
        return args.seed
    return int(meta.get("split_seed", DEFAULTS["seed"]))


def cmd_eval(args) -> int:
    conf = _resolve(args, ["out_dir", "split"])
    out_dir = Path(conf["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    inputs = {}
    if args.scores:
        try:
            rows = report.read_scores(args.scores)
        except (OSError, ValueError, KeyError) as exc:
            raise RunError(f"cannot read scores {args.scores}: {exc}") from None
        inputs["scores"] = Path(args.scores)
        conf["seed"] = args.seed
    else:
        if not (args.checkpoint and args.data):
            raise UsageError("eval needs --checkpoint and --data, or --scores")
        params, meta, vocab, vpath = _load_model(args)
        seed = _split_seed(args, meta)
        conf["seed"] = seed
        records = _pick_split(_load_records(args.data), conf["split"], seed)
        rows = []
        for r in records:
            seq = build_training_sequence(vocab, r.text, None, params.config.max_len)
            p = forward(params, seq, with_logits=False).prob
            rows.append(report.ScoredRow(r.id, r.label, p, predict_label(p, params.config.threshold), r.word_count))
        inputs.update(checkpoint=Path(args.checkpoint), vocab=vpath, data=Path(args.data))
    if not rows:
        raise RunError("nothing to evaluate")
    rep = _report_from_rows(rows, args.model_name)
    written = report.write_report(rep, out_dir)
    if not args.scores:
        spath = out_dir / "scores.csv"
        spath.write_text(report.scores_csv(rows), encoding="utf-8")
        written.append(spath)
    write_manifest(out_dir, "eval", conf, inputs, written)
    sys.stderr.write(report.metrics_text([rep]))
    return 0


def _report_from_rows(rows, model_name: str) -> EvalReport:
    # word counts travel with the rows; stand-in texts of that many words
    texts = [" ".join(["w"] * r.word_count) for r in rows]
    return evaluate(texts, [r.score for r in rows], [r.label for r in rows], [r.pred for r in rows], model_name)


def cmd_explain(args) -> int:
    conf = _resolve(args, ["out_dir", "split", "max_new", "mode", "temperature"])
    params, meta, vocab, vpath = _load_model(args)
    seed = _split_seed(args, meta)
    conf["seed"] = seed
    conf["only_positive_predictions"] = args.only_positive_predictions
    if conf["mode"] not in ("greedy", "sampled"):
        raise UsageError(f"unknown mode {conf['mode']!r}")
    records = _pick_split(_load_records(args.data), conf["split"], seed)
    lines = []
    for i, r in enumerate(records):
        seq = build_training_sequence(vocab, r.text, None, params.config.max_len)
        p = forward(params, seq, with_logits=False).prob
        pred = predict_label(p, params.config.threshold)
        if pred == 1 or not args.only_positive_predictions:
            expl = generate_explanation(
                params, r.text, vocab, conf["max_new"], conf["mode"], conf["temperature"], seed=seed + i
            )
        else:
            expl = None
        lines.append(report.explanation_line(r.id, r.text, r.label, pred, p, expl))
    out_dir = Path(conf["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    jpath = out_dir / "explanations.jsonl"
    jpath.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    tpath = out_dir / "explanations.txt"
    tpath.write_text(report.explanations_text(lines), encoding="utf-8")
    write_manifest(
        out_dir, "explain", conf,
        {"checkpoint": Path(args.checkpoint), "vocab": vpath, "data": Path(args.data)},
        [jpath, tpath],
    )
    return 0


def cmd_baseline(args) -> int:
    conf = _resolve(args, ["seed", "out_dir", "reg_grid", "svm_epochs"])
    conf["model"] = args.model
    if args.model != "svm-tfidf":
        raise UsageError(f"unknown baseline {args.model!r}")
    regs = _floats(conf["reg_grid"], "reg_grid")
    if not regs or any(r <= 0 for r in regs):
        raise UsageError("reg values must be positive")
    records = _load_records(args.data)
    train, val, test = _pick_split_all(records, conf["seed"])
    labels_train = [r.label for r in train]
    if len(set(labels_train)) < 2:
        raise RunError("training split contains a single class; cannot train the SVM")

    tfidf = fit_tfidf([r.text for r in train])
    X_train = transform_many(tfidf, [r.text for r in train])
    best = None
    for reg in regs:
        clf = train_linear_svm(X_train, labels_train, reg, conf["svm_epochs"], conf["seed"])
        if val:
            X_val = transform_many(tfidf, [r.text for r in val])
            acc = float((clf.predict(X_val) == [r.label for r in val]).mean())
        else:
            acc = 0.0
        if best is None or (acc, reg) >= (best[0], best[1]):
            best = (acc, reg, clf)
    clf = best[2]
    conf["selected_reg"] = best[1]

    X_test = transform_many(tfidf, [r.text for r in test])
    scores = clf.decision_function(X_test)
    preds = clf.predict(X_test)
    rows = [
        report.ScoredRow(r.id, r.label, float(s), int(p), r.word_count)
        for r, s, p in zip(test, scores, preds)
    ]
    rep = _report_from_rows(rows, "SVM+TF-IDF")
    out_dir = Path(conf["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    written = report.write_report(rep, out_dir)
    spath = out_dir / "scores.csv"
    spath.write_text(report.scores_csv(rows), encoding="utf-8")
    tpath = out_dir / "tfidf.tsv"
    tfidf.save(tpath)
    wpath = out_dir / "svm_weights.tsv"
    clf.save(wpath, tfidf.terms)
    written += [spath, tpath, wpath]
    write_manifest(out_dir, "baseline", conf, {"data": Path(args.data)}, written)
    sys.stderr.write(report.metrics_text([rep]))
    return 0


def _read_keyvalue_report(path: Path) -> EvalReport:
    kv = corpus.parse_keyvalue(path.read_text(encoding="utf-8"))

    def num(key):
        v = kv.get(key, "")
        return float(v) if v else None

    cm = ConfusionMatrix(int(kv["tp"]), int(kv["fp"]), int(kv["fn"]), int(kv["tn"]))
    per_bin = {b: num(f"auprc_{b.lower()}") for b in corpus.BINS}
    return EvalReport(
        cm, num("accuracy"), num("precision"), num("recall"), num("f1"), num("auprc"),
        {k: v for k, v in per_bin.items() if v is not None}, kv.get("model", "?"),
    )


def cmd_compare(args) -> int:
    conf = _resolve(args, ["out_dir"])
    reps = []
    inputs = {}
    for i, d in enumerate(args.reports):
        path = Path(d) / "report.txt"
        try:
            reps.append(_read_keyvalue_report(path))
        except (OSError, KeyError, ValueError) as exc:
            raise RunError(f"cannot read report {path}: {exc}") from None
        inputs[f"report{i}"] = path
    present = {r.model for r in reps}
    blank = [m for m in args.blank if m not in present]
    out_dir = Path(conf["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {
        "metrics.csv": report.metrics_csv(reps, blank),
        "metrics.txt": report.metrics_text(reps, blank),
        "length_auprc.csv": report.length_auprc_csv(reps),
        "length_auprc.txt": report.length_auprc_text(reps),
    }
    written = []
    for name, body in files.items():
        (out_dir / name).write_text(body, encoding="utf-8")
        written.append(out_dir / name)
    write_manifest(out_dir, "compare", conf, inputs, written)
    return 0


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    def global_flags(default):
        # after the subcommand the flags must not clobber values given before it
        p = argparse.ArgumentParser(add_help=False)
        p.add_argument("--seed", type=int, default=default, help="master random seed")
        p.add_argument("--config", default=default, help="key=value config file; flags override it")
        p.add_argument("--out-dir", dest="out_dir", default=default, help="directory for all outputs")
        p.add_argument("-v", "--verbose", action="store_true", default=default)
        return p

    parser = argparse.ArgumentParser(prog="depmtd", description=__doc__, parents=[global_flags(None)])
    common = global_flags(argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="write a synthetic labelled dataset")
    p.add_argument("--n-records", dest="n_records", type=int)
    p.add_argument("--positive-fraction", dest="positive_fraction", type=float)
    p.add_argument("--noise-rate", dest="noise_rate", type=float)
    p.add_argument("--length-mix", dest="length_mix", help="SHORT,MEDIUM,LONG weights summing to 1")
    p.add_argument("--out", help="dataset path (default: OUT_DIR/dataset.jsonl)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", parents=[common], help="train the joint model")
    p.add_argument("--data", required=True)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--lambda-grid", dest="lambda_grid", help="comma-separated lambdas; selects on val AUPRC")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--patience", type=int)
    p.add_argument("--clip-norm", dest="clip_norm", type=float)
    p.add_argument("--no-clip", dest="no_clip", action="store_true", help="disable gradient clipping")
    p.add_argument("--min-freq", dest="min_freq", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--layers", dest="n_layers", type=int)
    p.add_argument("--heads", dest="n_heads", type=int)
    p.add_argument("--max-len", dest="max_len", type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("--classification-only", action="store_true", help="preset: lambda = 1")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint or a scored dump")
    p.add_argument("--checkpoint")
    p.add_argument("--vocab", help="vocabulary file (default: next to the checkpoint)")
    p.add_argument("--data")
    p.add_argument("--split", choices=["train", "val", "test", "all"])
    p.add_argument("--scores", help="report on an existing scores.csv instead of running a model")
    p.add_argument("--model-name", dest="model_name", default="Joint-MTL")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("explain", parents=[common], help="generate explanations for predicted positives")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab")
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=["train", "val", "test", "all"])
    p.add_argument(
        "--only-positive-predictions",
        dest="only_positive_predictions",
        action=argparse.BooleanOptionalAction,
        default=True,
        help="generate only when the classifier predicts positive (default); otherwise '-'",
    )
    p.add_argument("--max-new", dest="max_new", type=int)
    p.add_argument("--mode", choices=["greedy", "sampled"])
    p.add_argument("--temperature", type=float)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("baseline", parents=[common], help="TF-IDF + linear SVM baseline")
    p.add_argument("--data", required=True)
    p.add_argument("--model", default="svm-tfidf", choices=["svm-tfidf"])
    p.add_argument("--reg-grid", dest="reg_grid", help="comma-separated regularisation strengths")
    p.add_argument("--svm-epochs", dest="svm_epochs", type=int)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("compare", parents=[common], help="combine report directories into side-by-side metric tables")
    p.add_argument("reports", nargs="+", help="directories containing report.txt")
    p.add_argument("--blank", nargs="*", default=["BERT-FineTune"], help="model rows to show as '-'")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    if getattr(args, "classification_only", False):
        args.lam = classification_only_preset(TrainConfig()).lam
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"depmtd: error: {exc}", file=sys.stderr)
        return 2
    except RunError as exc:
        print(f"depmtd: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
