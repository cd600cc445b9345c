"""Post records, JSON-Lines persistence and a synthetic labelled corpus.

The generator mimics the shape of a self-reported-depression dataset:
positive posts mix symptom phrases into everyday filler, negative posts mix
in neutral or upbeat activity phrases, and every positive carries a templated
explanation that names each symptom phrase it contains.
"""

from __future__ import annotations

import json
import warnings
from collections.abc import Iterable
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SHORT, MEDIUM, LONG = "SHORT", "MEDIUM", "LONG"
BINS = (SHORT, MEDIUM, LONG)


class DatasetError(ValueError):
    """One or more dataset lines failed to parse or validate."""

    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("; ".join(problems))


def word_count(text: str) -> int:
    return len(text.split())


def bin_for_count(n_words: int) -> str:
    if n_words < 50:
        return SHORT
    if n_words <= 150:
        return MEDIUM
    return LONG


@dataclass(frozen=True)
class PostRecord:
    id: str
    text: str
    label: int
    explanation: str | None = None

    @property
    def word_count(self) -> int:
        return word_count(self.text)

    def to_json(self) -> str:
        obj = {"id": self.id, "text": self.text, "label": self.label}
        if self.explanation is not None:
            obj["explanation"] = self.explanation
        return json.dumps(obj, ensure_ascii=False)


def length_bin(record: PostRecord) -> str:
    return bin_for_count(record.word_count)


def _parse_line(obj) -> PostRecord:
    if not isinstance(obj, dict):
        raise ValueError("record must be a JSON object")
    extra = set(obj) - {"id", "text", "label", "explanation"}
    if extra:
        raise ValueError(f"unexpected fields {sorted(extra)}")
    for key in ("id", "text", "label"):
        if key not in obj:
            raise ValueError(f"missing field {key!r}")
    if not isinstance(obj["id"], str) or not obj["id"]:
        raise ValueError("id must be a non-empty string")
    if not isinstance(obj["text"], str):
        raise ValueError("text must be a string")
    label = obj["label"]
    if isinstance(label, bool) or label not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {label!r}")
    expl = obj.get("explanation")
    if expl is not None and not isinstance(expl, str):
        raise ValueError("explanation must be a string")
    return PostRecord(obj["id"], obj["text"], int(label), expl)


def load(path, gold: bool = False) -> list[PostRecord]:
    """Read a JSON-Lines dataset.

    Every bad line is reported (with its 1-based line number) in a single
    :class:`DatasetError`. With ``gold=True`` a positive record without an
    explanation triggers one ``UserWarning`` per line.
    """
    records: list[PostRecord] = []
    problems: list[str] = []
    seen: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = _parse_line(json.loads(line))
            except (json.JSONDecodeError, ValueError) as exc:
                problems.append(f"line {lineno}: {exc}")
                continue
            if rec.id in seen:
                problems.append(f"line {lineno}: duplicate id {rec.id!r} (first on line {seen[rec.id]})")
                continue
            seen[rec.id] = lineno
            if gold and rec.label == 1 and rec.explanation is None:
                warnings.warn(f"line {lineno}: positive record {rec.id!r} has no explanation", stacklevel=2)
            records.append(rec)
    if problems:
        raise DatasetError(problems)
    return records


def dumps(records: Iterable[PostRecord]) -> str:
    return "".join(r.to_json() + "\n" for r in records)


def save(records: Iterable[PostRecord], path) -> None:
    records = list(records)
    ids = [r.id for r in records]
    if len(set(ids)) != len(ids):
        raise DatasetError(["duplicate ids in records to save"])
    Path(path).write_text(dumps(records), encoding="utf-8")


# -- synthetic generator ------------------------------------------------------

# (symptom name, phrases); explanations cite the phrase and name the symptom
SYMPTOMS = {
    "hopelessness": [
        "feeling so hopeless lately",
        "nothing is ever going to get better",
        "i see no point in trying anymore",
    ],
    "anhedonia": [
        "nothing seems to bring me joy anymore",
        "i lost interest in everything i used to love",
        "even music feels empty to me now",
    ],
    "fatigue": [
        "just want to stay in bed all day",
        "i am exhausted no matter how much i sleep",
        "getting up takes all my energy",
    ],
    "worry": [
        "constantly worried about everything",
        "cant seem to relax my mind",
        "my thoughts keep racing at night",
    ],
    "worthlessness": [
        "i feel like a burden to everyone",
        "i hate myself for being useless",
        "everyone would be better off without me",
    ],
}

NEUTRAL_PHRASES = [
    "had a great day out with friends",
    "feeling much better now",
    "just finished a tough workout",
    "feeling exhausted but accomplished",
    "cooked a new pasta recipe tonight",
    "the hiking trail was beautiful this morning",
    "excited for the concert next week",
    "our team won the match on saturday",
    "planted tomatoes in the garden",
    "finally finished reading that novel",
]

FILLER_SENTENCES = [
    "the bus was late again this morning",
    "work has been busy with the new project",
    "my cat knocked a cup off the table",
    "it rained for most of the afternoon",
    "i watched a documentary about oceans",
    "the grocery store was out of bread",
    "we talked about the weekend plans",
    "my phone needs a new charger",
    "there was traffic on the way home",
    "i cleaned the kitchen after dinner",
    "the neighbors painted their fence blue",
    "a friend sent me a funny video",
    "the coffee shop changed its menu",
    "i updated the laptop software today",
    "the library opens late on tuesdays",
    "someone left a bike near the door",
]

NOISY_EXPLANATION = "The post gives no explicit symptom language, so the evidence for depression is indirect."

_LENGTH_RANGES = {SHORT: (12, 49), MEDIUM: (50, 150), LONG: (151, 230)}


@dataclass(frozen=True)
class SyntheticSpec:
    n_records: int = 1000
    positive_fraction: float = 0.2
    length_mix: tuple = (0.4, 0.45, 0.15)
    noise_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n_records < 1:
            raise ValueError("n_records must be >= 1")
        if not 0.0 < self.positive_fraction < 1.0:
            raise ValueError(f"positive_fraction must lie in (0, 1), got {self.positive_fraction}")
        if len(self.length_mix) != 3 or any(w < 0 for w in self.length_mix):
            raise ValueError("length_mix needs three nonnegative weights")
        if abs(sum(self.length_mix) - 1.0) > 1e-9:
            raise ValueError(f"length_mix must sum to 1, got {sum(self.length_mix)}")
        if not 0.0 <= self.noise_rate < 1.0:
            raise ValueError(f"noise_rate must lie in [0, 1), got {self.noise_rate}")


def _explain(found: list[tuple[str, str]]) -> str:
    parts = [f"The post expresses {phrase}, which is indicative of {name}." for name, phrase in found]
    return " ".join(parts)


def _sentence(words: str) -> str:
    return words[0].upper() + words[1:] + "."


def _compose(rng, core: list[str], target: int) -> str:
    """Shuffle ``core`` phrases among filler sentences; total words == max(target, core words).

    Excess words are trimmed from filler sentences only, so every core
    phrase survives verbatim.
    """
    sentences = [(c.split(), True) for c in core]
    n = sum(len(w) for w, _ in sentences)
    while n < target:
        s = FILLER_SENTENCES[rng.integers(len(FILLER_SENTENCES))].split()
        sentences.append((s, False))
        n += len(s)
    order = rng.permutation(len(sentences))
    sentences = [sentences[i] for i in order]
    excess = n - max(target, sum(len(c.split()) for c in core))
    for idx in range(len(sentences) - 1, -1, -1):
        if excess <= 0:
            break
        words, is_core = sentences[idx]
        if is_core:
            continue
        cut = min(excess, len(words))
        sentences[idx] = (words[: len(words) - cut], False)
        excess -= cut
    out = []
    for words, _ in sentences:
        if words:
            out.append(_sentence(" ".join(words)))
    return " ".join(out)


def generate_synthetic(spec: SyntheticSpec) -> list[PostRecord]:
    rng = np.random.default_rng(spec.seed)
    n = spec.n_records
    n_pos = round(n * spec.positive_fraction)
    n_pos = min(max(n_pos, 1), n - 1) if n > 1 else n_pos
    labels = np.array([1] * n_pos + [0] * (n - n_pos))
    labels = labels[rng.permutation(n)]
    n_noisy = round(n * spec.noise_rate)
    noisy = np.zeros(n, dtype=bool)
    noisy[rng.permutation(n)[:n_noisy]] = True
    bins = rng.choice(len(BINS), size=n, p=np.asarray(spec.length_mix, dtype=float))
    names = sorted(SYMPTOMS)

    records = []
    for i in range(n):
        label = int(labels[i])
        lo, hi = _LENGTH_RANGES[BINS[bins[i]]]
        target = int(rng.integers(lo, hi + 1))
        found: list[tuple[str, str]] = []
        core: list[str] = []
        if not noisy[i]:
            k = int(rng.integers(1, 3))
            if label == 1:
                for j in rng.choice(len(names), size=k, replace=False):
                    name = names[j]
                    phrase = SYMPTOMS[name][rng.integers(len(SYMPTOMS[name]))]
                    found.append((name, phrase))
                    core.append(phrase)
            else:
                for j in rng.choice(len(NEUTRAL_PHRASES), size=k, replace=False):
                    core.append(NEUTRAL_PHRASES[j])
        text = _compose(rng, core, target)
        low = text.lower()
        found.sort(key=lambda item: low.index(item[1]))
        if label == 1:
            expl = _explain(found) if found else NOISY_EXPLANATION
        else:
            expl = None
        records.append(PostRecord(f"syn-{spec.seed}-{i:06d}", text, label, expl))
    return records


def keyword_oracle(text: str) -> int:
    """1 iff the text contains any symptom phrase from the generator's bank."""
    low = text.lower()
    return int(any(p in low for phrases in SYMPTOMS.values() for p in phrases))


def parse_keyvalue(text: str) -> dict[str, str]:
    """Parse ``key=value`` lines; ``#`` starts a comment, blank lines ignored."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def spec_from_mapping(values: dict) -> SyntheticSpec:
    kw = {}
    if "n_records" in values:
        kw["n_records"] = int(values["n_records"])
    if "positive_fraction" in values:
        kw["positive_fraction"] = float(values["positive_fraction"])
    if "noise_rate" in values:
        kw["noise_rate"] = float(values["noise_rate"])
    if "seed" in values:
        kw["seed"] = int(values["seed"])
    if "length_mix" in values:
        mix = values["length_mix"]
        if isinstance(mix, str):
            mix = [float(x) for x in mix.split(",")]
        kw["length_mix"] = tuple(float(x) for x in mix)
    return SyntheticSpec(**kw)
