import struct

import numpy as np
import pytest

from depmtd import checkpoint
from depmtd.checkpoint import (
    CheckpointError,
    check_vocab,
    from_bytes,
    to_bytes,
    vocab_digest,
)
from depmtd.tokenizer import Vocabulary


def test_roundtrip_is_exact(tiny_params, tmp_path):
    meta = {"lambda": 0.5, "split_seed": 3}
    path = tmp_path / "m.ckpt"
    checkpoint.save(tiny_params, path, meta)
    params, back_meta = checkpoint.load(path)
    assert back_meta == meta
    assert params.config == tiny_params.config
    assert params.checksum() == tiny_params.checksum()
    for (na, a), (nb, b) in zip(tiny_params, params):
        assert na == nb and np.array_equal(a.data, b.data)
    assert to_bytes(params, meta) == path.read_bytes()


def test_bytes_are_deterministic(tiny_params):
    assert to_bytes(tiny_params, {"b": 1, "a": 2}) == to_bytes(tiny_params, {"a": 2, "b": 1})


def test_bad_magic(tiny_params):
    blob = bytearray(to_bytes(tiny_params))
    blob[0:1] = b"X"
    with pytest.raises(CheckpointError, match="magic"):
        from_bytes(bytes(blob))


def test_bad_version(tiny_params):
    blob = bytearray(to_bytes(tiny_params))
    blob[8:12] = struct.pack("<I", 99)
    with pytest.raises(CheckpointError, match="version"):
        from_bytes(bytes(blob))


@pytest.mark.parametrize("cut", [4, 14, 40, 8])
def test_truncation(tiny_params, cut):
    blob = to_bytes(tiny_params)
    with pytest.raises(CheckpointError):
        from_bytes(blob[:cut] if cut < 16 else blob[:-cut])


def test_trailing_bytes(tiny_params):
    with pytest.raises(CheckpointError, match="trailing"):
        from_bytes(to_bytes(tiny_params) + b"\0")


def test_check_vocab_names_field(tiny_params, small_vocab):
    meta = {"vocab_sha256": vocab_digest(small_vocab)}
    check_vocab(tiny_params, meta, small_vocab)
    smaller = Vocabulary(small_vocab.tokens[:-1])
    with pytest.raises(CheckpointError, match="field V"):
        check_vocab(tiny_params, meta, smaller)
    swapped = list(small_vocab.tokens)
    swapped[-1], swapped[-2] = swapped[-2], swapped[-1]
    with pytest.raises(CheckpointError, match="field vocab_sha256"):
        check_vocab(tiny_params, meta, Vocabulary(swapped))
