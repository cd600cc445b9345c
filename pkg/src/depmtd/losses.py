"""Classification, generation and combined multi-task losses."""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .model import SchemaError
from .tokenizer import Segment, SegmentedSequence


@dataclass
class LossBreakdown:
    l_cls: float
    l_gen: float
    l_total: float
    lam: float
    n_examples: int
    n_positive: int

    def as_row(self) -> dict:
        return {
            "l_cls": self.l_cls,
            "l_gen": self.l_gen,
            "l_total": self.l_total,
            "lambda": self.lam,
            "n_examples": self.n_examples,
            "n_positive": self.n_positive,
        }


def bce(prob: float, y: int) -> float:
    """Binary cross-entropy of a probability against a 0/1 label."""
    if y not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {y}")
    return -(y * math.log(prob) + (1 - y) * math.log(1.0 - prob))


def bce_with_logit(logit: Tensor, y: int) -> Tensor:
    """BCE expressed on the pre-sigmoid score: softplus(z) - y*z.

    Same value as ``bce(sigmoid(z), y)``, but finite even when the sigmoid
    saturates, and its gradient in ``z`` is exactly ``sigmoid(z) - y``.
    """
    z = ad.reshape(logit, ())
    loss = ad.softplus(z)
    if y:
        loss = ad.sub(loss, z)
    return loss


def gen_nll(token_logits: Tensor, seq: SegmentedSequence) -> Tensor:
    """Mean negative log-likelihood of the EXPLANATION tokens (EOS included).

    Row ``j - 1`` of ``token_logits`` scores token ``j``; rows outside the
    explanation's predicting positions are never read.
    """
    positions = seq.positions(Segment.EXPLANATION)
    if not positions:
        raise SchemaError("sequence has no EXPLANATION tokens")
    rows = np.asarray(positions) - 1
    targets = np.asarray([seq.ids[j] for j in positions])
    # only the predicting rows go through log-softmax
    sub = ad.embedding(token_logits, rows)
    logp = ad.pick(ad.log_softmax_rows(sub), np.arange(len(rows)), targets)
    return ad.scale(ad.tsum(logp), -1.0 / len(positions))


def combine(lam: float, l_cls: Tensor, l_gen: Tensor) -> Tensor:
    """lam * l_cls + (1 - lam) * l_gen."""
    return ad.add(ad.scale(l_cls, lam), ad.scale(l_gen, 1.0 - lam))


def batch_loss(lam: float, batch: Sequence[tuple]) -> tuple[Tensor, LossBreakdown]:
    """Multi-task loss over a batch of ``(ForwardOutput, record, sequence)``.

    Classification loss averages over every example. Generation loss
    averages the per-example (length-normalised) NLL over examples that are
    positive and carry a gold explanation; with none of those it is 0.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    if not batch:
        raise ValueError("batch is empty")
    cls_terms = []
    gen_terms = []
    for out, rec, seq in batch:
        cls_terms.append(bce_with_logit(out.logit, rec.label))
        if rec.label == 1 and rec.explanation is not None and seq.has(Segment.EXPLANATION):
            if out.token_logits is None:
                raise ValueError("forward output lacks token logits for a generation example")
            gen_terms.append(gen_nll(out.token_logits, seq))

    l_cls = ad.scale(_stack_sum(cls_terms), 1.0 / len(cls_terms))
    if gen_terms:
        l_gen = ad.scale(_stack_sum(gen_terms), 1.0 / len(gen_terms))
    else:
        l_gen = Tensor(0.0)
    total = combine(lam, l_cls, l_gen)
    breakdown = LossBreakdown(
        l_cls=l_cls.item(),
        l_gen=l_gen.item(),
        l_total=total.item(),
        lam=lam,
        n_examples=len(batch),
        n_positive=sum(1 for _, rec, _ in batch if rec.label == 1),
    )
    return total, breakdown


def _stack_sum(terms: list) -> Tensor:
    acc = terms[0]
    for t in terms[1:]:
        acc = ad.add(acc, t)
    return acc
