import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from depmtd.corpus import SyntheticSpec, generate_synthetic
from depmtd.model import ModelConfig, init_params
from depmtd.training import training_vocab


@pytest.fixture(scope="session")
def small_corpus():
    return generate_synthetic(SyntheticSpec(n_records=40, positive_fraction=0.3, seed=11))


@pytest.fixture(scope="session")
def small_vocab(small_corpus):
    return training_vocab(small_corpus)


@pytest.fixture
def tiny_params(small_vocab):
    cfg = ModelConfig(V=len(small_vocab), d=8, n_layers=2, n_heads=2, max_len=48)
    return init_params(cfg, seed=3)


PIPELINE_SEED = 7
TINY_MODEL = ["--d", "16", "--layers", "1", "--heads", "2", "--max-len", "64", "--lr", "3e-3", "--batch-size", "8"]


def run_pipeline(root: Path) -> Path:
    """gen-data, train, eval, explain and baseline into ``root`` with a fixed seed."""
    from depmtd.cli import main

    data = root / "data.jsonl"
    seed = ["--seed", str(PIPELINE_SEED)]
    steps = [
        ["gen-data", *seed, "--n-records", "160", "--positive-fraction", "0.3", "--noise-rate", "0.0",
         "--out-dir", str(root), "--out", str(data)],
        ["train", *seed, "--data", str(data), "--epochs", "25", *TINY_MODEL, "--out-dir", str(root / "train")],
        ["eval", "--checkpoint", str(root / "train/checkpoint.ckpt"), "--data", str(data), "--out-dir", str(root / "eval")],
        ["explain", "--checkpoint", str(root / "train/checkpoint.ckpt"), "--data", str(data), "--max-new", "8",
         "--out-dir", str(root / "explain")],
        ["baseline", *seed, "--data", str(data), "--out-dir", str(root / "baseline")],
    ]
    for argv in steps:
        code = main(argv)
        assert code == 0, argv
    return root


@pytest.fixture(scope="session")
def pipeline_runs(tmp_path_factory):
    return run_pipeline(tmp_path_factory.mktemp("run_a")), run_pipeline(tmp_path_factory.mktemp("run_b"))


# -- acceptance summary: one PASS/FAIL line per criterion ----------------------

_CRITERIA: dict[int, list] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.skipped:
        return
    if rep.when == "call" or rep.failed:
        number, title = marker.args
        entry = _CRITERIA.setdefault(number, [title, True])
        entry[1] = entry[1] and rep.passed


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, ok = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {title}")
