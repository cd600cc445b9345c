"""Binary checkpoint files.

Layout (all integers little-endian)::

    8 bytes   magic  b"DMTDCKPT"
    uint32    format version (currently 1)
    uint32    header length H in bytes
    H bytes   UTF-8 JSON header, keys sorted, no whitespace:
                {"config": {ModelConfig fields},
                 "meta":   {free-form run metadata},
                 "params": [[name, [shape...]], ...]}
    then, for each entry of "params" in order, prod(shape) float64 values
    (little-endian, row-major).

The file ends exactly after the last block.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .model import ModelConfig, ModelParams
from .tokenizer import Vocabulary

MAGIC = b"DMTDCKPT"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def vocab_digest(vocab: Vocabulary) -> str:
    return hashlib.sha256(vocab.to_text().encode("utf-8")).hexdigest()


def to_bytes(params: ModelParams, meta: dict | None = None) -> bytes:
    header = {
        "config": params.config.to_dict(),
        "meta": meta or {},
        "params": [[name, list(t.shape)] for name, t in params],
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(hbytes)), hbytes]
    for _, t in params:
        parts.append(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    return b"".join(parts)


def from_bytes(blob: bytes) -> tuple[ModelParams, dict]:
    if blob[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    if len(blob) < 16:
        raise CheckpointError("checkpoint truncated inside the preamble")
    version, hlen = struct.unpack("<II", blob[8:16])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format version {version}")
    if 16 + hlen > len(blob):
        raise CheckpointError("checkpoint truncated inside the header")
    try:
        header = json.loads(blob[16 : 16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    cfg = ModelConfig(**header["config"])
    offset = 16 + hlen
    tensors = {}
    for name, shape in header["params"]:
        count = int(np.prod(shape, dtype=np.int64))
        end = offset + 8 * count
        if end > len(blob):
            raise CheckpointError(f"checkpoint truncated inside block {name!r}")
        data = np.frombuffer(blob[offset:end], dtype="<f8").astype(np.float64).reshape(shape)
        tensors[name] = Tensor(data, requires_grad=True, name=name)
        offset = end
    if offset != len(blob):
        raise CheckpointError("trailing bytes after last parameter block")
    return ModelParams(cfg, tensors), header["meta"]


def save(params: ModelParams, path, meta: dict | None = None) -> None:
    Path(path).write_bytes(to_bytes(params, meta))


def load(path) -> tuple[ModelParams, dict]:
    return from_bytes(Path(path).read_bytes())


def check_vocab(params: ModelParams, meta: dict, vocab: Vocabulary) -> None:
    """Raise :class:`CheckpointError` naming the first field that disagrees."""
    if params.config.V != len(vocab):
        raise CheckpointError(f"field V: checkpoint has {params.config.V}, vocabulary has {len(vocab)}")
    want = meta.get("vocab_sha256")
    if want is not None and want != vocab_digest(vocab):
        raise CheckpointError("field vocab_sha256: vocabulary file differs from the one used in training")
