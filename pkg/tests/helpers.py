"""Independent oracles shared by the test modules."""

from __future__ import annotations

import numpy as np

from depmtd.autodiff import Tape, Tensor, tsum


def central_diff(f, arr: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """d f / d arr by central differences; ``f`` reads ``arr`` in place."""
    grad = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = arr[idx]
        arr[idx] = orig + eps
        hi = f()
        arr[idx] = orig - eps
        lo = f()
        arr[idx] = orig
        grad[idx] = (hi - lo) / (2 * eps)
    return grad


def rel_err(analytic, numeric, floor: float = 1e-8) -> float:
    a = np.asarray(analytic, dtype=float)
    n = np.asarray(numeric, dtype=float)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def check_op_gradient(build, inputs: list[np.ndarray], eps: float = 1e-5) -> float:
    """Max relative error between tape gradients and finite differences.

    ``build(*tensors)`` must return a Tensor; it is reduced against a fixed
    random projection so every output element contributes.
    """
    tensors = [Tensor(x.copy(), requires_grad=True) for x in inputs]
    with Tape() as tape:
        out = build(*tensors)
        proj = np.random.default_rng(123).standard_normal(out.shape)
        loss = tsum(out * Tensor(proj))
    tape.backward(loss)
    worst = 0.0
    for t in tensors:
        def f():
            return float(np.sum(build(*[Tensor(u.data) for u in tensors]).data * proj))

        num = central_diff(f, t.data, eps)
        worst = max(worst, rel_err(t.grad, num))
    return worst


def brute_force_ap(scores, labels) -> float:
    """O(n^2) average precision: for each positive i, precision among the
    examples ranked at or above it (higher score first, ties by index)."""
    n = len(scores)
    total = 0.0
    n_pos = 0
    for i in range(n):
        if labels[i] != 1:
            continue
        n_pos += 1
        rank = 0
        hits = 0
        for j in range(n):
            ahead = scores[j] > scores[i] or (scores[j] == scores[i] and j <= i)
            if ahead:
                rank += 1
                hits += labels[j] == 1
        total += hits / rank
    return total / n_pos


def model_gradients(params, loss_fn, eps: float = 1e-5, sample=None, seed: int = 0):
    """Tape gradients of ``loss_fn(params)`` next to central differences.

    Returns ``(loss value, {name: (analytic, numeric)})``; ``sample`` limits
    each tensor to that many random entries, ``None`` checks every entry.
    """
    params.zero_grad()
    with Tape() as tape:
        loss = loss_fn(params)
    tape.backward(loss)
    rng = np.random.default_rng(seed)
    out = {}
    for name, t in params:
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if sample is not None and flat.size > sample:
            idx = rng.choice(flat.size, size=sample, replace=False)
        analytic = t.grad.reshape(-1)[idx]
        numeric = np.empty(len(idx))
        for k, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + eps
            hi = loss_fn(params).item()
            flat[i] = orig - eps
            lo = loss_fn(params).item()
            flat[i] = orig
            numeric[k] = (hi - lo) / (2 * eps)
        out[name] = (analytic, numeric)
    return loss.item(), out


def model_gradient_errors(params, loss_fn, eps: float = 1e-5, floor: float = 1e-8, sample=None, seed: int = 0):
    """Per-parameter max element-wise relative error (see :func:`model_gradients`)."""
    _, grads = model_gradients(params, loss_fn, eps, sample, seed)
    return {name: rel_err(a, n, floor) for name, (a, n) in grads.items()}


def confusion_dump_rows(seed: int = 0):
    """1000 scored rows with tp=155, fn=45, fp=35, tn=765 at threshold 0.5."""
    from depmtd.report import ScoredRow

    rng = np.random.default_rng(seed)
    plan = [(1, 1, 155), (1, 0, 45), (0, 1, 35), (0, 0, 765)]
    rows = []
    for label, pred, count in plan:
        for _ in range(count):
            u = float(rng.uniform(0.0, 0.5))
            score = 0.5 + u if pred else u
            # cycle through SHORT, MEDIUM and LONG word counts
            words = (10, 100, 200)[len(rows) % 3]
            rows.append(ScoredRow(f"r{len(rows):04d}", label, score, pred, words))
    return rows


GOLDEN_DIR = __import__("pathlib").Path(__file__).parent / "golden"


def assert_golden(name: str, text: str) -> None:
    """Compare ``text`` with tests/golden/<name>; DEPMTD_UPDATE_GOLDEN=1 rewrites it."""
    import os

    path = GOLDEN_DIR / name
    if os.environ.get("DEPMTD_UPDATE_GOLDEN") == "1":
        path.write_text(text, encoding="utf-8")
    assert path.exists(), f"missing golden file {path}"
    assert text == path.read_text(encoding="utf-8"), f"output differs from golden file {name}"
