"""Decoder-only transformer with a pooled classification head.

One causal stack serves both tasks: hidden states over the post tokens are
mean-pooled and fed to a sigmoid head, and the same hidden states, projected
through the (tied) token embedding, give next-token logits for explanation
generation.
"""

from __future__ import annotations

import hashlib
import math
from collections.abc import Iterator
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .tokenizer import (
    DEFAULT_PROMPT,
    EOS,
    CapacityError,
    Segment,
    SegmentedSequence,
    Vocabulary,
    build_training_sequence,
    decode,
    encode,
)

INIT_STD = 0.02


class SchemaError(ValueError):
    """A sequence lacks the segment an operation needs."""


@dataclass(frozen=True)
class ModelConfig:
    V: int
    d: int = 64
    n_layers: int = 2
    n_heads: int = 4
    max_len: int = 128
    threshold: float = 0.5

    def __post_init__(self):
        if self.d % self.n_heads:
            raise ValueError(f"d={self.d} is not divisible by n_heads={self.n_heads}")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError(f"threshold must lie in (0, 1), got {self.threshold}")
        if self.max_len < 8:
            raise ValueError(f"max_len must be >= 8, got {self.max_len}")
        if self.V < 6 or self.d < 1 or self.n_layers < 1:
            raise ValueError("V, d and n_layers are too small")

    def to_dict(self) -> dict:
        return asdict(self)


def _param_shapes(cfg: ModelConfig) -> list[tuple[str, tuple]]:
    d, V = cfg.d, cfg.V
    shapes = [("tok_emb", (V, d)), ("pos_emb", (cfg.max_len, d))]
    for i in range(cfg.n_layers):
        p = f"layers.{i}."
        shapes += [
            (p + "ln1.gain", (d,)),
            (p + "ln1.bias", (d,)),
            (p + "attn.w_qkv", (d, 3 * d)),
            (p + "attn.b_qkv", (3 * d,)),
            (p + "attn.w_out", (d, d)),
            (p + "attn.b_out", (d,)),
            (p + "ln2.gain", (d,)),
            (p + "ln2.bias", (d,)),
            (p + "mlp.w_in", (d, 4 * d)),
            (p + "mlp.b_in", (4 * d,)),
            (p + "mlp.w_out", (4 * d, d)),
            (p + "mlp.b_out", (d,)),
        ]
    shapes += [
        ("ln_f.gain", (d,)),
        ("ln_f.bias", (d,)),
        ("cls.weight", (1, d)),
        ("cls.bias", (1,)),
    ]
    return shapes


@dataclass
class ModelParams:
    """Named learnable tensors plus the config that shaped them."""

    config: ModelConfig
    tensors: dict[str, Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self.tensors.items())

    def __len__(self) -> int:
        return len(self.tensors)

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()

    def n_parameters(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, t in self.tensors.items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
        return h.hexdigest()

    def copy(self) -> ModelParams:
        return ModelParams(
            self.config,
            {k: Tensor(v.data.copy(), requires_grad=True, name=k) for k, v in self.tensors.items()},
        )

    def all_finite(self) -> bool:
        return all(np.isfinite(t.data).all() for t in self.tensors.values())


def init_params(cfg: ModelConfig, seed: int) -> ModelParams:
    """Weights ~ N(0, 0.02); biases zero; layer-norm gains one."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in _param_shapes(cfg):
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "gain":
            data = np.ones(shape)
        elif leaf.startswith("b"):
            data = np.zeros(shape)
        else:
            data = rng.normal(0.0, INIT_STD, size=shape)
        tensors[name] = Tensor(data, requires_grad=True, name=name)
    return ModelParams(cfg, tensors)


@dataclass
class ForwardOutput:
    hidden: Tensor  # (n, d)
    pooled: Tensor  # (d,)
    logit: Tensor  # (1, 1), pre-sigmoid classification score
    prob_t: Tensor  # (1, 1)
    token_logits: Tensor | None  # (n, V); row i scores token i+1

    @property
    def prob(self) -> float:
        return self.prob_t.item()


def _attention_composite(qkv: Tensor, n_heads: int) -> Tensor:
    """Per-head reference built from primitive ops; same result as
    :func:`autodiff.causal_attention`."""
    d = qkv.shape[1] // 3
    dh = d // n_heads
    inv = 1.0 / math.sqrt(dh)
    heads = []
    for h in range(n_heads):
        q = ad.slice_cols(qkv, h * dh, (h + 1) * dh)
        k = ad.slice_cols(qkv, d + h * dh, d + (h + 1) * dh)
        v = ad.slice_cols(qkv, 2 * d + h * dh, 2 * d + (h + 1) * dh)
        att = ad.softmax_rows(ad.scale(ad.matmul(q, ad.transpose(k)), inv), causal=True)
        heads.append(ad.matmul(att, v))
    return heads[0] if n_heads == 1 else ad.concat_cols(heads)


def _attention(x: Tensor, params: ModelParams, prefix: str, n_heads: int) -> Tensor:
    qkv = ad.add(ad.matmul(x, params[prefix + "w_qkv"]), params[prefix + "b_qkv"])
    merged = ad.causal_attention(qkv, n_heads)
    return ad.add(ad.matmul(merged, params[prefix + "w_out"]), params[prefix + "b_out"])


def hidden_states(params: ModelParams, ids) -> Tensor:
    """Final-layer-normed hidden states H, one row per input position."""
    cfg = params.config
    n = len(ids)
    if n > cfg.max_len:
        raise CapacityError(f"sequence length {n} exceeds max_len={cfg.max_len}")
    x = ad.add(ad.embedding(params["tok_emb"], ids), ad.embedding(params["pos_emb"], np.arange(n)))
    for i in range(cfg.n_layers):
        p = f"layers.{i}."
        h = ad.layer_norm(x, params[p + "ln1.gain"], params[p + "ln1.bias"])
        x = ad.add(x, _attention(h, params, p + "attn.", cfg.n_heads))
        h = ad.layer_norm(x, params[p + "ln2.gain"], params[p + "ln2.bias"])
        h = ad.gelu(ad.add(ad.matmul(h, params[p + "mlp.w_in"]), params[p + "mlp.b_in"]))
        x = ad.add(x, ad.add(ad.matmul(h, params[p + "mlp.w_out"]), params[p + "mlp.b_out"]))
    return ad.layer_norm(x, params["ln_f.gain"], params["ln_f.bias"])


def lm_logits(params: ModelParams, hidden: Tensor) -> Tensor:
    return ad.matmul(hidden, ad.transpose(params["tok_emb"]))


def forward(params: ModelParams, seq: SegmentedSequence, with_logits: bool = True) -> ForwardOutput:
    """Run the stack on ``seq``.

    The pooled vector averages hidden states at POST positions only; because
    attention is causal these rows never see the prompt or explanation.
    """
    post_mask = seq.mask(Segment.POST)
    if not any(post_mask):
        raise ad.EmptyPoolError("sequence has no POST tokens to pool")
    hidden = hidden_states(params, seq.ids)
    pooled = ad.mean_rows(hidden, post_mask)
    logit = ad.add(
        ad.matmul(ad.reshape(pooled, (1, -1)), ad.transpose(params["cls.weight"])),
        params["cls.bias"],
    )
    prob = ad.sigmoid(logit)
    token_logits = lm_logits(params, hidden) if with_logits else None
    return ForwardOutput(hidden, pooled, logit, prob, token_logits)


def predict_label(prob: float, threshold: float = 0.5) -> int:
    return 1 if prob >= threshold else 0


def classify(params: ModelParams, vocab: Vocabulary, post: str, prompt: str = DEFAULT_PROMPT) -> float:
    """p(y=1 | post)."""
    seq = build_training_sequence(vocab, post, None, params.config.max_len, prompt)
    return forward(params, seq, with_logits=False).prob


def _log_softmax(row: np.ndarray) -> np.ndarray:
    shifted = row - row.max()
    return shifted - np.log(np.exp(shifted).sum())


def sequence_logprob(params: ModelParams, seq: SegmentedSequence, token_logits=None) -> float:
    """log p(explanation | post, prompt): sum of next-token log-probabilities
    over EXPLANATION positions (EOS included)."""
    positions = seq.positions(Segment.EXPLANATION)
    if not positions:
        raise SchemaError("sequence has no EXPLANATION segment")
    if token_logits is None:
        token_logits = forward(params, seq).token_logits
    logits = token_logits.data if isinstance(token_logits, Tensor) else np.asarray(token_logits)
    total = 0.0
    for j in positions:
        total += _log_softmax(logits[j - 1])[seq.ids[j]]
    return float(total)


def generate_ids(
    params: ModelParams,
    prefix: list[int],
    max_new: int,
    temperature: float | None = None,
    seed: int = 0,
) -> list[int]:
    """Extend ``prefix`` token by token; stops after EOS, ``max_new`` tokens,
    or when the context is full. Greedy when ``temperature`` is None."""
    rng = np.random.default_rng(seed) if temperature is not None else None
    ids = list(prefix)
    out: list[int] = []
    limit = params.config.max_len
    for _ in range(max_new):
        if len(ids) >= limit:
            break
        hidden = hidden_states(params, ids)
        row = (hidden.data[-1] @ params["tok_emb"].data.T)
        if rng is None:
            nxt = int(np.argmax(row))
        else:
            p = np.exp(_log_softmax(row / temperature))
            nxt = int(rng.choice(len(p), p=p / p.sum()))
        out.append(nxt)
        ids.append(nxt)
        if nxt == EOS:
            break
    return out


def generation_prefix(
    vocab: Vocabulary, post: str, max_len: int, prompt: str = DEFAULT_PROMPT, reserve: int = 0
) -> list[int]:
    """``BOS post SEP prompt SEP``, with the post shortened so that up to
    ``reserve`` tokens can still be generated (one post token always stays)."""
    smallest = 4 + len(encode(vocab, prompt))
    return build_training_sequence(vocab, post, None, max(max_len - reserve, min(smallest, max_len)), prompt).ids


def generate_explanation(
    params: ModelParams,
    post: str,
    vocab: Vocabulary,
    max_new: int = 48,
    mode: str = "greedy",
    temperature: float = 1.0,
    seed: int = 0,
    prompt: str = DEFAULT_PROMPT,
) -> str:
    """Decode an explanation after the ``BOS post SEP prompt SEP`` prefix.

    ``mode`` is ``"greedy"`` or ``"sampled"``; only the explanation text is
    returned (EOS and special tokens stripped).
    """
    if mode not in ("greedy", "sampled"):
        raise ValueError(f"unknown decoding mode {mode!r}")
    if max_new <= 0:
        return ""
    prefix = generation_prefix(vocab, post, params.config.max_len, prompt, reserve=max_new)
    new = generate_ids(params, prefix, max_new, temperature if mode == "sampled" else None, seed)
    return decode(vocab, new)
