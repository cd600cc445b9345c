"""Adam training of the joint objective, data splits and lambda selection."""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from collections.abc import Sequence
from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import Tape
from .corpus import PostRecord
from .losses import LossBreakdown, batch_loss
from .metrics import UndefinedMetricError, auprc
from .model import ModelConfig, ModelParams, forward, init_params
from .tokenizer import (
    DEFAULT_PROMPT,
    SegmentedSequence,
    Vocabulary,
    build_training_sequence,
    build_vocab,
)

logger = logging.getLogger(__name__)

DEFAULT_LAMBDA_GRID = (0.25, 0.5, 0.75, 1.0)


class TrainingDiverged(RuntimeError):
    pass


class OptimizerStateError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 20
    batch_size: int = 8
    lam: float = 0.5
    seed: int = 0
    patience: int = 3
    clip_norm: float | None = 1.0
    min_freq: int = 1

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: ModelParams, state: OptimizerState, cfg: TrainConfig) -> None:
    """One bias-corrected Adam update, in place on ``params`` and ``state``."""
    for name, p in params:
        if p.grad is None:
            raise OptimizerStateError(f"parameter {name!r} has no gradient")
    state.t += 1
    bc1 = 1.0 - cfg.beta1**state.t
    bc2 = 1.0 - cfg.beta2**state.t
    for name, p in params:
        g = p.grad
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        p.data -= cfg.lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)


def clip_gradients(params: ModelParams, max_norm: float) -> float:
    """Rescale all gradients so their global L2 norm is at most ``max_norm``."""
    total = math.sqrt(sum(float(np.sum(p.grad * p.grad)) for _, p in params))
    if total > max_norm:
        factor = max_norm / total
        for _, p in params:
            p.grad *= factor
    return total


def split_dataset(records: Sequence[PostRecord], seed: int):
    """Seeded shuffle, then contiguous 70/10/20 train/val/test slices."""
    n = len(records)
    if n < 10:
        raise ValueError(f"need at least 10 records to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [records[i] for i in order]
    n_train = (7 * n) // 10
    n_val = n // 10
    return (
        shuffled[:n_train],
        shuffled[n_train : n_train + n_val],
        shuffled[n_train + n_val :],
    )


def training_vocab(records: Sequence[PostRecord], min_freq: int = 1, prompt: str = DEFAULT_PROMPT) -> Vocabulary:
    """Vocabulary over post texts, gold explanations and the prompt."""
    corpus = [r.text for r in records]
    corpus += [r.explanation for r in records if r.explanation]
    corpus += [prompt] * min_freq  # prompt words must always survive the frequency cut
    return build_vocab(corpus, min_freq)


@dataclass
class Example:
    record: PostRecord
    seq: SegmentedSequence


def prepare(records: Sequence[PostRecord], vocab: Vocabulary, max_len: int) -> list[Example]:
    """Sequences for training: gold explanations are attached to positives only."""
    out = []
    for r in records:
        expl = r.explanation if r.label == 1 else None
        out.append(Example(r, build_training_sequence(vocab, r.text, expl, max_len)))
    return out


def score(params: ModelParams, examples: Sequence[Example]) -> list[float]:
    """p(y=1|x) for each example; the explanation part does not change it."""
    return [forward(params, ex.seq, with_logits=False).prob for ex in examples]


@dataclass
class EpochRecord:
    epoch: int
    loss: LossBreakdown
    val_auprc: float
    seconds: float


@dataclass
class TrainHistory:
    lam: float
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    @property
    def best_val_auprc(self) -> float:
        vals = [r.val_auprc for r in self.records if not math.isnan(r.val_auprc)]
        return max(vals) if vals else float("nan")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "l_cls", "l_gen", "l_total", "val_auprc", "seconds"])
        for r in self.records:
            w.writerow(
                [r.epoch, repr(float(r.loss.l_cls)), repr(float(r.loss.l_gen)), repr(float(r.loss.l_total)), repr(float(r.val_auprc)), f"{r.seconds:.3f}"]
            )
        return buf.getvalue()


def _epoch_mean(parts: list[LossBreakdown], lam: float) -> LossBreakdown:
    k = len(parts)
    return LossBreakdown(
        l_cls=sum(p.l_cls for p in parts) / k,
        l_gen=sum(p.l_gen for p in parts) / k,
        l_total=sum(p.l_total for p in parts) / k,
        lam=lam,
        n_examples=sum(p.n_examples for p in parts),
        n_positive=sum(p.n_positive for p in parts),
    )


def train_step(params: ModelParams, state: OptimizerState, batch: Sequence[Example], cfg: TrainConfig) -> LossBreakdown:
    params.zero_grad()
    with Tape() as tape:
        outs = [(forward(params, ex.seq), ex.record, ex.seq) for ex in batch]
        total, breakdown = batch_loss(cfg.lam, outs)
    if not math.isfinite(breakdown.l_total):
        raise TrainingDiverged(f"non-finite loss {breakdown.l_total}")
    tape.backward(total)
    if cfg.clip_norm is not None:
        clip_gradients(params, cfg.clip_norm)
    adam_step(params, state, cfg)
    return breakdown


def evaluate_loss(params: ModelParams, examples: Sequence[Example], lam: float) -> LossBreakdown:
    """Multi-task loss over ``examples`` without recording gradients."""
    outs = [(forward(params, ex.seq), ex.record, ex.seq) for ex in examples]
    return batch_loss(lam, outs)[1]


def _validate(params: ModelParams, val: Sequence[Example], lam: float) -> tuple[float, float]:
    """(validation AUPRC, validation l_total)."""
    labels = [ex.record.label for ex in val]
    outs = [(forward(params, ex.seq), ex.record, ex.seq) for ex in val]
    loss = batch_loss(lam, outs)[1].l_total
    scores = [o.prob for o, _, _ in outs]
    try:
        return auprc(scores, labels), loss
    except UndefinedMetricError:
        return float("nan"), loss


def fit(
    train: Sequence[PostRecord],
    val: Sequence[PostRecord],
    cfg: TrainConfig,
    model_cfg: ModelConfig,
    vocab: Vocabulary,
) -> tuple[ModelParams, TrainHistory]:
    """Train from a seeded init and return the best-validation checkpoint.

    After each epoch the validation AUPRC is measured (ties broken by lower
    validation loss); training stops once ``max(patience, 1)`` consecutive
    epochs fail to improve on the best so far.
    """
    if not train:
        raise ValueError("training set is empty")
    if model_cfg.V != len(vocab):
        raise ValueError(f"model V={model_cfg.V} does not match vocabulary size {len(vocab)}")
    train_ex = prepare(train, vocab, model_cfg.max_len)
    val_ex = prepare(val, vocab, model_cfg.max_len) if val else train_ex

    params = init_params(model_cfg, cfg.seed)
    state = OptimizerState()
    history = TrainHistory(cfg.lam)
    best_key = (-math.inf, -math.inf)
    best_data = None
    stale = 0
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(train_ex))
        parts = []
        for b, start in enumerate(range(0, len(order), cfg.batch_size)):
            batch = [train_ex[i] for i in order[start : start + cfg.batch_size]]
            try:
                parts.append(train_step(params, state, batch, cfg))
            except TrainingDiverged as exc:
                raise TrainingDiverged(f"epoch {epoch}, batch {b}: {exc}") from None
        val_score, val_loss = _validate(params, val_ex, cfg.lam)
        history.records.append(EpochRecord(epoch, _epoch_mean(parts, cfg.lam), val_score, time.perf_counter() - t0))
        logger.info("epoch %d  l_total=%.4f  val_auprc=%.4f", epoch, history.records[-1].loss.l_total, val_score)
        # without validation positives the loss alone ranks checkpoints
        key = (0.0 if math.isnan(val_score) else val_score, -val_loss)
        if key > best_key:
            best_key = key
            best_data = {k: t.data.copy() for k, t in params}
            history.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= max(cfg.patience, 1):
                history.stopped_early = True
                break

    for k, t in params:
        t.data = best_data[k]
        t.grad = None
    return params, history


def select_lambda(
    grid: Sequence[float],
    train: Sequence[PostRecord],
    val: Sequence[PostRecord],
    cfg: TrainConfig,
    model_cfg: ModelConfig,
    vocab: Vocabulary,
) -> tuple[float, dict[float, TrainHistory], ModelParams]:
    """Train one model per lambda (seed = cfg.seed + index) and keep the one
    with the highest validation AUPRC; ties go to the larger lambda."""
    if not grid:
        raise ValueError("lambda grid is empty")
    histories: dict[float, TrainHistory] = {}
    best = None
    for idx, lam in enumerate(grid):
        run_cfg = replace(cfg, lam=float(lam), seed=cfg.seed + idx)
        params, hist = fit(train, val, run_cfg, model_cfg, vocab)
        histories[float(lam)] = hist
        auc = hist.best_val_auprc
        key = (-math.inf if math.isnan(auc) else auc, float(lam))
        if best is None or key > best[0]:
            best = (key, float(lam), params)
    return best[1], histories, best[2]
