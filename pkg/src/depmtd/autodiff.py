"""Small dense-tensor engine with a define-by-run tape.

Every array is float64. Operations executed while a :class:`Tape` is active
(``with Tape() as tape: ...``) are recorded whenever one of their inputs
requires a gradient; ``tape.backward(loss)`` then replays the record in
reverse and accumulates gradients into ``Tensor.grad``.

Outside an active tape the same functions are plain numpy computations,
which is what inference uses.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "DimensionError",
    "EmptyPoolError",
    "RankError",
    "Tape",
    "TapeError",
    "Tensor",
    "add",
    "backward",
    "causal_attention",
    "concat_cols",
    "embedding",
    "exp",
    "gelu",
    "layer_norm",
    "log",
    "log_softmax_rows",
    "matmul",
    "mean_rows",
    "mul",
    "neg",
    "pick",
    "reshape",
    "scale",
    "sigmoid",
    "slice_cols",
    "softmax_rows",
    "softplus",
    "sub",
    "transpose",
    "tsum",
]


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class RankError(ValueError):
    """A scalar was required but a higher-rank tensor was supplied."""


class EmptyPoolError(ValueError):
    """Masked pooling selected no rows."""


class TapeError(RuntimeError):
    """Misuse of a tape (double backward, foreign loss, ...)."""


class Tensor:
    __slots__ = ("data", "grad", "name", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise RankError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> Tensor:
        return transpose(self)


class _Node:
    __slots__ = ("backward", "out", "parents")

    def __init__(self, out: Tensor, parents: tuple, backward: Callable):
        self.out = out
        self.parents = parents
        self.backward = backward


_ACTIVE: list = []


class Tape:
    """Ordered record of executed operations.

    A tape is single-use: after :meth:`backward` it must be :meth:`reset`
    before it can run backward again.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._spent = False

    def __enter__(self) -> Tape:
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, out: Tensor, parents: tuple, backward_fn: Callable) -> None:
        if self._spent:
            raise TapeError("tape already ran backward; call reset() before recording")
        self.nodes.append(_Node(out, parents, backward_fn))

    def reset(self) -> None:
        self.nodes = []
        self._spent = False

    def backward(self, loss: Tensor) -> None:
        if loss.data.size != 1:
            raise RankError(f"backward needs a scalar loss, got shape {loss.shape}")
        if self._spent:
            raise TapeError("backward already called on this tape; reset() first")
        produced = {id(n.out) for n in self.nodes}
        if id(loss) not in produced:
            raise TapeError("loss was not produced on this tape")
        self._spent = True

        grads = {id(loss): np.ones_like(loss.data)}
        leaves = {}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            node.out.grad = g
            parent_grads = node.backward(g)
            for parent, pg in zip(node.parents, parent_grads):
                if pg is None or not isinstance(parent, Tensor) or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in produced:
                    if key in grads:
                        grads[key] = grads[key] + pg
                    else:
                        grads[key] = pg
                else:
                    leaves[key] = parent
                    if parent.grad is None:
                        parent.grad = np.array(pg, dtype=np.float64, copy=True)
                    else:
                        parent.grad += pg
        # leaves on the tape that received nothing still get an explicit zero
        for node in self.nodes:
            for parent in node.parents:
                if (
                    isinstance(parent, Tensor)
                    and parent.requires_grad
                    and id(parent) not in produced
                    and parent.grad is None
                ):
                    parent.zero_grad()


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate ``.grad`` on every tensor that ``loss`` depends on."""
    tape.backward(loss)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _wrap(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    out = Tensor(data)
    if _ACTIVE and any(p.requires_grad for p in parents):
        out.requires_grad = True
        _ACTIVE[-1].record(out, tuple(parents), backward_fn)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, opname: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{opname}: cannot combine shapes {a.shape} and {b.shape}") from None


# -- elementwise arithmetic ------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "add")
    return _wrap(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "sub")
    return _wrap(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "mul")
    return _wrap(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def neg(a: Tensor) -> Tensor:
    return _wrap(-a.data, (a,), lambda g: (-g,))


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a constant that is not itself differentiated."""
    c = float(c)
    return _wrap(a.data * c, (a,), lambda g: (g * c,))


# -- linear algebra -------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    return _wrap(
        a.data @ b.data,
        (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g),
    )


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError(f"transpose needs a matrix, got shape {a.shape}")
    return _wrap(a.data.T, (a,), lambda g: (g.T,))


def reshape(a: Tensor, shape: tuple) -> Tensor:
    old = a.shape
    return _wrap(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def tsum(a: Tensor) -> Tensor:
    """Sum of all entries as a 0-d tensor."""
    return _wrap(np.asarray(a.data.sum()), (a,), lambda g: (np.full(a.shape, float(g)),))


# -- pointwise nonlinearities ---------------------------------------------


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _wrap(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return _wrap(np.log(a.data), (a,), lambda g: (g / a.data,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # branch on sign so exp never sees a large positive argument
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(np.atleast_1d(a.data)).reshape(a.shape)
    return _wrap(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a: Tensor) -> Tensor:
    """log(1 + e^x), evaluated without overflow."""
    out = np.logaddexp(0.0, a.data)
    return _wrap(
        out,
        (a,),
        lambda g: (g * _sigmoid(np.atleast_1d(a.data)).reshape(a.shape),),
    )


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """GELU, tanh form."""
    x = a.data
    x2 = x * x
    inner = _GELU_C * x * (1.0 + 0.044715 * x2)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def back(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return _wrap(out, (a,), back)


# -- row-wise normalisations ----------------------------------------------


def _causal_mask(n_rows: int, n_cols: int) -> np.ndarray:
    return np.tril(np.ones((n_rows, n_cols), dtype=bool))


def softmax_rows(a: Tensor, causal: bool = False) -> Tensor:
    """Softmax over each row, with per-row max subtraction.

    With ``causal=True`` entry (i, j) is excluded for j > i and gets exactly
    zero probability.
    """
    x = a.data
    if x.ndim != 2 or x.shape[1] < 1:
        raise DimensionError(f"softmax_rows needs an r x c matrix with c >= 1, got {a.shape}")
    if causal:
        keep = _causal_mask(*x.shape)
        shifted = np.where(keep, x, -np.inf)
        m = shifted.max(axis=1, keepdims=True)
        e = np.where(keep, np.exp(np.where(keep, x - m, 0.0)), 0.0)
    else:
        e = np.exp(x - x.max(axis=1, keepdims=True))
    out = e / e.sum(axis=1, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return _wrap(out, (a,), back)


def log_softmax_rows(a: Tensor) -> Tensor:
    x = a.data
    if x.ndim != 2 or x.shape[1] < 1:
        raise DimensionError(f"log_softmax_rows needs an r x c matrix, got {a.shape}")
    shifted = x - x.max(axis=1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))

    def back(g):
        return (g - np.exp(out) * g.sum(axis=1, keepdims=True),)

    return _wrap(out, (a,), back)


def mean_rows(a: Tensor, mask) -> Tensor:
    """Mean of the rows of ``a`` whose mask entry is 1; result has shape (d,)."""
    mask = np.asarray(mask.data if isinstance(mask, Tensor) else mask, dtype=np.float64)
    if a.data.ndim != 2 or mask.shape != (a.shape[0],):
        raise DimensionError(f"mean_rows: mask shape {mask.shape} does not fit rows of {a.shape}")
    if not np.all((mask == 0) | (mask == 1)):
        raise ValueError("mean_rows: mask entries must be 0 or 1")
    count = mask.sum()
    if count == 0:
        raise EmptyPoolError("mean_rows: mask selects no rows")
    sel = mask.astype(bool)
    out = a.data[sel].sum(axis=0) / count

    def back(g):
        ga = np.zeros_like(a.data)
        ga[sel] = g / count
        return (ga,)

    return _wrap(out, (a,), back)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise each row to zero mean / unit variance, then apply gain and bias."""
    x = a.data
    d = x.shape[-1]
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def back(g):
        gx_hat = g * gain.data
        gx = inv / d * (
            d * gx_hat
            - gx_hat.sum(axis=-1, keepdims=True)
            - xhat * (gx_hat * xhat).sum(axis=-1, keepdims=True)
        )
        return (
            gx,
            _unbroadcast(g * xhat, gain.shape),
            _unbroadcast(g, bias.shape),
        )

    return _wrap(out, (a, gain, bias), back)


# -- indexing -------------------------------------------------------------


def embedding(table: Tensor, ids) -> Tensor:
    """Rows ``table[ids]``; gradient is scatter-added back."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"embedding ids out of range for table with {table.shape[0]} rows")

    def back(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return (gt,)

    return _wrap(table.data[ids], (table,), back)


def pick(a: Tensor, rows, cols) -> Tensor:
    """Gather ``a[rows[k], cols[k]]`` into a 1-d tensor."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)

    def back(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, (rows, cols), g)
        return (ga,)

    return _wrap(a.data[rows, cols], (a,), back)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    def back(g):
        ga = np.zeros_like(a.data)
        ga[:, start:stop] = g
        return (ga,)

    return _wrap(a.data[:, start:stop], (a,), back)


def concat_cols(parts: Iterable[Tensor]) -> Tensor:
    parts = list(parts)
    widths = [p.shape[1] for p in parts]
    bounds = np.cumsum([0] + widths)

    def back(g):
        return tuple(g[:, bounds[i] : bounds[i + 1]] for i in range(len(parts)))

    return _wrap(np.concatenate([p.data for p in parts], axis=1), parts, back)


# -- fused attention ------------------------------------------------------


def causal_attention(qkv: Tensor, n_heads: int) -> Tensor:
    """Multi-head causal self-attention on packed ``[Q | K | V]`` columns.

    ``qkv`` is (n, 3d); the result is (n, d) with heads concatenated in
    column order. Equivalent to slicing each head, applying
    ``softmax_rows(Q K^T / sqrt(dh), causal=True) @ V`` and concatenating.
    """
    n, three_d = qkv.shape
    d = three_d // 3
    if three_d != 3 * d or d % n_heads:
        raise DimensionError(f"causal_attention: bad packed shape {qkv.shape} for {n_heads} heads")
    dh = d // n_heads
    inv = 1.0 / math.sqrt(dh)

    def heads(block):
        return block.reshape(n, n_heads, dh).transpose(1, 0, 2)

    q = heads(qkv.data[:, :d])
    k = heads(qkv.data[:, d : 2 * d])
    v = heads(qkv.data[:, 2 * d :])
    keep = _causal_mask(n, n)
    s = np.matmul(q, k.transpose(0, 2, 1)) * inv
    s = np.where(keep, s, -np.inf)
    s -= s.max(axis=2, keepdims=True)
    e = np.where(keep, np.exp(s), 0.0)
    att = e / e.sum(axis=2, keepdims=True)
    out = np.matmul(att, v).transpose(1, 0, 2).reshape(n, d)

    def back(g):
        gh = heads(g)
        g_att = np.matmul(gh, v.transpose(0, 2, 1))
        g_v = np.matmul(att.transpose(0, 2, 1), gh)
        g_s = att * (g_att - (g_att * att).sum(axis=2, keepdims=True)) * inv
        g_q = np.matmul(g_s, k)
        g_k = np.matmul(g_s.transpose(0, 2, 1), q)
        merge = lambda x: x.transpose(1, 0, 2).reshape(n, d)
        return (np.concatenate([merge(g_q), merge(g_k), merge(g_v)], axis=1),)

    return _wrap(out, (qkv,), back)
