"""TF-IDF features with a linear SVM, plus the classification-only preset."""

from __future__ import annotations

import math
from collections import Counter
from collections.abc import Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import sparse

from .tokenizer import tokenize
from .training import TrainConfig


@dataclass
class TfIdfModel:
    terms: list[str]
    df: np.ndarray
    idf: np.ndarray
    n_docs: int
    index: dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.index:
            self.index = {t: i for i, t in enumerate(self.terms)}

    def __len__(self) -> int:
        return len(self.terms)

    def save(self, path) -> None:
        lines = [f"{t}\t{int(d)}\t{float(v)!r}" for t, d, v in zip(self.terms, self.df, self.idf)]
        Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")

    @classmethod
    def load(cls, path, n_docs: int = 0) -> TfIdfModel:
        terms, df, idf = [], [], []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            t, d, v = line.split("\t")
            terms.append(t)
            df.append(int(d))
            idf.append(float(v))
        return cls(terms, np.asarray(df), np.asarray(idf, dtype=np.float64), n_docs)


def fit_tfidf(corpus: Sequence[str], min_df: int = 1) -> TfIdfModel:
    """Smoothed idf: ln((1 + N) / (1 + df)) + 1; terms sorted lexicographically."""
    if not corpus:
        raise ValueError("cannot fit TF-IDF on an empty corpus")
    df: Counter = Counter()
    for text in corpus:
        df.update(set(tokenize(text)))
    terms = sorted(t for t, c in df.items() if c >= min_df)
    if not terms:
        raise ValueError("no term reaches min_df")
    n = len(corpus)
    dfs = np.array([df[t] for t in terms])
    idf = np.log((1.0 + n) / (1.0 + dfs)) + 1.0
    return TfIdfModel(terms, dfs, idf, n)


def transform(model: TfIdfModel, text: str) -> sparse.csr_matrix:
    """L2-normalised tf*idf row; OOV tokens ignored, all-OOV gives a zero row."""
    counts = Counter(t for t in tokenize(text) if t in model.index)
    cols = sorted(model.index[t] for t in counts)
    vals = np.array([counts[model.terms[c]] * model.idf[c] for c in cols], dtype=np.float64)
    norm = math.sqrt(float(vals @ vals)) if len(vals) else 0.0
    if norm > 0:
        vals = vals / norm
    return sparse.csr_matrix((vals, (np.zeros(len(cols), dtype=int), cols)), shape=(1, len(model)))


def transform_many(model: TfIdfModel, texts: Sequence[str]) -> sparse.csr_matrix:
    return sparse.vstack([transform(model, t) for t in texts], format="csr")


@dataclass
class LinearClassifier:
    weights: np.ndarray
    bias: float
    reg: float
    objective_history: list[float] = field(default_factory=list, repr=False)

    def decision_function(self, X) -> np.ndarray:
        return np.asarray(X @ self.weights).reshape(-1) + self.bias

    def predict(self, X) -> np.ndarray:
        return (self.decision_function(X) >= 0).astype(int)

    def save(self, path, terms: Sequence[str]) -> None:
        lines = [f"# bias={float(self.bias)!r} reg={float(self.reg)!r}"]
        lines += [f"{t}\t{float(w)!r}" for t, w in zip(terms, self.weights)]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def svm_objective(w: np.ndarray, b: float, X, y_pm: np.ndarray, reg: float) -> float:
    """reg/2 * (|w|^2 + b^2) + mean hinge loss, labels in {-1, +1}."""
    margins = y_pm * (np.asarray(X @ w).reshape(-1) + b)
    return 0.5 * reg * (float(w @ w) + b * b) + float(np.mean(np.maximum(0.0, 1.0 - margins)))


def train_linear_svm(X, y: Sequence[int], reg: float = 1e-3, epochs: int = 20, seed: int = 0) -> LinearClassifier:
    """Pegasos: single-example subgradient steps with rate 1/(reg*t).

    The bias is handled as a weight on a constant feature (and so is
    regularised too). The returned classifier is the average of the iterates
    visited during the final epoch; ``objective_history`` holds the objective
    of each epoch's average.
    """
    X = sparse.csr_matrix(X)
    y = np.asarray(y)
    if X.shape[0] == 0:
        raise ValueError("no training examples")
    if len(set(y.tolist())) < 2:
        raise ValueError("training data must contain both classes")
    if reg <= 0:
        raise ValueError("reg must be positive")
    y_pm = np.where(y == 1, 1.0, -1.0)
    n, dim = X.shape
    w = np.zeros(dim)
    b = 0.0
    rng = np.random.default_rng(seed)
    t = 0
    history = []
    indptr, indices, data = X.indptr, X.indices, X.data
    for _ in range(epochs):
        w_sum = np.zeros(dim)
        b_sum = 0.0
        for i in rng.permutation(n):
            t += 1
            eta = 1.0 / (reg * t)
            lo, hi = indptr[i], indptr[i + 1]
            cols, vals = indices[lo:hi], data[lo:hi]
            margin = y_pm[i] * (float(w[cols] @ vals) + b)
            w *= 1.0 - eta * reg
            b *= 1.0 - eta * reg
            if margin < 1.0:
                w[cols] += eta * y_pm[i] * vals
                b += eta * y_pm[i]
            w_sum += w
            b_sum += b
        w_avg, b_avg = w_sum / n, b_sum / n
        history.append(svm_objective(w_avg, b_avg, X, y_pm, reg))
    return LinearClassifier(w_avg, b_avg, reg, history)


def classification_only_preset(cfg: TrainConfig) -> TrainConfig:
    """The same training setup with the generation loss weighted out (lambda = 1)."""
    return replace(cfg, lam=1.0)
