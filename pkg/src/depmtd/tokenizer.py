"""Word-level tokenizer and segmented training sequences."""

from __future__ import annotations

import string
from collections import Counter
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

PAD, UNK, BOS, EOS, SEP = 0, 1, 2, 3, 4
RESERVED = ("<pad>", "<unk>", "<bos>", "<eos>", "<sep>")

DEFAULT_PROMPT = "Explain why this post might indicate depression based on medical knowledge:"

_PUNCT = str.maketrans("", "", string.punctuation)


class Segment(IntEnum):
    SPECIAL = 0
    POST = 1
    PROMPT = 2
    EXPLANATION = 3


class EmptyCorpusError(ValueError):
    pass


class CapacityError(ValueError):
    pass


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, strip punctuation, drop empties."""
    out = []
    for raw in text.lower().split():
        tok = raw.translate(_PUNCT)
        if tok:
            out.append(tok)
    return out


def normalize(text: str) -> str:
    return " ".join(tokenize(text))


class Vocabulary:
    """Bijection between token strings and dense integer ids.

    Ids 0..4 are the reserved PAD/UNK/BOS/EOS/SEP tokens; learned tokens
    follow in the order they were given.
    """

    def __init__(self, tokens: Sequence[str] = ()):
        self._itos = list(RESERVED)
        self._stoi = {t: i for i, t in enumerate(self._itos)}
        for tok in tokens:
            if tok in self._stoi:
                raise ValueError(f"duplicate token {tok!r} in vocabulary")
            if not tok or any(c.isspace() for c in tok):
                raise ValueError(f"invalid token {tok!r}")
            self._stoi[tok] = len(self._itos)
            self._itos.append(tok)

    def __len__(self) -> int:
        return len(self._itos)

    def __contains__(self, tok: str) -> bool:
        return tok in self._stoi

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self._itos == other._itos

    @property
    def tokens(self) -> list[str]:
        """Learned tokens (reserved block excluded), in id order."""
        return self._itos[len(RESERVED):]

    def id_of(self, tok: str) -> int:
        return self._stoi.get(tok, UNK)

    def token_of(self, idx: int) -> str:
        return self._itos[idx]

    def save(self, path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.tokens), encoding="utf-8")

    @classmethod
    def load(cls, path) -> Vocabulary:
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(lines)

    def to_text(self) -> str:
        return "".join(t + "\n" for t in self.tokens)


def build_vocab(corpus: Iterable[str], min_freq: int = 1) -> Vocabulary:
    """Vocabulary of tokens seen at least ``min_freq`` times.

    Ordering is by descending frequency, ties broken lexicographically, so
    the same corpus always yields the same ids.
    """
    if min_freq < 1:
        raise ValueError("min_freq must be >= 1")
    counts: Counter = Counter()
    n_docs = 0
    for text in corpus:
        n_docs += 1
        counts.update(tokenize(text))
    if n_docs == 0 or not counts:
        raise EmptyCorpusError("cannot build a vocabulary from an empty corpus")
    kept = [t for t, c in counts.items() if c >= min_freq and t not in RESERVED]
    kept.sort(key=lambda t: (-counts[t], t))
    return Vocabulary(kept)


def encode(vocab: Vocabulary, text: str) -> list[int]:
    return [vocab.id_of(t) for t in tokenize(text)]


def decode(vocab: Vocabulary, ids: Iterable[int]) -> str:
    """Join tokens with single spaces; PAD/BOS/EOS/SEP are skipped."""
    skip = {PAD, BOS, EOS, SEP}
    return " ".join(vocab.token_of(i) for i in ids if i not in skip)


@dataclass
class SegmentedSequence:
    ids: list[int]
    segments: list[Segment] = field(default_factory=list)

    def __post_init__(self):
        if len(self.ids) != len(self.segments):
            raise ValueError("ids and segments must have equal length")

    def __len__(self) -> int:
        return len(self.ids)

    def positions(self, seg: Segment) -> list[int]:
        return [i for i, s in enumerate(self.segments) if s == seg]

    def mask(self, seg: Segment) -> list[int]:
        return [1 if s == seg else 0 for s in self.segments]

    def has(self, seg: Segment) -> bool:
        return seg in self.segments

    def is_ordered(self) -> bool:
        """True if non-special segments appear as POST* PROMPT* EXPLANATION*."""
        last = Segment.SPECIAL
        for s in self.segments:
            if s == Segment.SPECIAL:
                continue
            if s < last:
                return False
            last = s
        return True


def build_training_sequence(
    vocab: Vocabulary,
    post: str,
    explanation: str | None,
    max_len: int,
    prompt: str = DEFAULT_PROMPT,
) -> SegmentedSequence:
    """Lay out ``BOS post SEP prompt SEP [explanation EOS]`` within ``max_len``.

    Over-long input loses POST tokens from the right first (one POST token is
    always kept when the post has any); only after that is the explanation
    trimmed from the right, keeping its EOS. The prompt is never cut.
    """
    if max_len < 8:
        raise CapacityError(f"max_len must be >= 8, got {max_len}")
    post_ids = encode(vocab, post)
    prompt_ids = encode(vocab, prompt)
    expl_ids = None if explanation is None else encode(vocab, explanation) + [EOS]

    fixed = 3 + len(prompt_ids)  # BOS, SEP, prompt, SEP
    if fixed + 1 > max_len:
        raise CapacityError(
            f"max_len={max_len} cannot hold BOS+SEP+prompt+SEP ({fixed} tokens) plus one post token"
        )
    room = max_len - fixed
    n_expl = len(expl_ids) if expl_ids is not None else 0
    if len(post_ids) + n_expl > room:
        keep_post = max(room - n_expl, min(1, len(post_ids)))
        post_ids = post_ids[:keep_post]
        if expl_ids is not None and len(post_ids) + n_expl > room:
            budget = room - len(post_ids)
            if budget < 1:
                raise CapacityError(f"max_len={max_len} leaves no room for the explanation")
            expl_ids = expl_ids[: budget - 1] + [EOS]

    ids = [BOS] + post_ids + [SEP] + prompt_ids + [SEP]
    segs = (
        [Segment.SPECIAL]
        + [Segment.POST] * len(post_ids)
        + [Segment.SPECIAL]
        + [Segment.PROMPT] * len(prompt_ids)
        + [Segment.SPECIAL]
    )
    if expl_ids is not None:
        ids += expl_ids
        segs += [Segment.EXPLANATION] * len(expl_ids)
    return SegmentedSequence(ids, segs)
