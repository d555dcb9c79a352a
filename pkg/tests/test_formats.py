"""
Binary artifact formats (SALTCORP, SALTCKPT), byte-level ingestion and Corpus checks.
"""

import struct

import numpy as np
import pytest

from src.adapters.checkpoint_file import decode_checkpoint, encode_checkpoint
from src.adapters.corpus_file import BYTE_BOS, BYTE_VOCAB, decode_corpus, encode_corpus, ingest_text
from src.domain.source import Corpus
from src.lm.model import LmConfig, init_model
from src.numcore.rng import Rng


def _corpus():
    return Corpus(np.array([[0, 1, 2], [4, 3, 0]]), 5, {"stream": "corpus/train"})


# -- SALTCORP ------------------------------------------------------------------


def test_corpus_header_layout():
    data = encode_corpus(_corpus())
    assert data[:8] == b"SALTCORP"
    assert struct.unpack_from("<IIII", data, 8) == (1, 5, 2, 3)
    assert len(data) == 24 + 4 * 6


def test_corpus_round_trip_keeps_ids_and_takes_provenance():
    back = decode_corpus(encode_corpus(_corpus()), seed=3)
    np.testing.assert_array_equal(back.tokens, _corpus().tokens)
    assert back.vocab_size == 5 and back.provenance == {"seed": 3}
    assert back.tokens.dtype == np.int64


@pytest.mark.parametrize("mutate", [
    lambda d: d[:10],
    lambda d: b"SALTCKPT" + d[8:],
    lambda d: d[:8] + struct.pack("<I", 2) + d[12:],
    lambda d: d + b"\x00\x00\x00\x00",
])
def test_corpus_decode_rejects_damaged_files(mutate):
    with pytest.raises(ValueError, match="SALTCORP"):
        decode_corpus(mutate(encode_corpus(_corpus())))


def test_corpus_decode_rejects_ids_outside_vocab():
    data = bytearray(encode_corpus(_corpus()))
    struct.pack_into("<I", data, 24, 9)
    with pytest.raises(ValueError):
        decode_corpus(bytes(data))


# -- Corpus --------------------------------------------------------------------


def test_content_hash_ignores_provenance():
    a = _corpus()
    b = Corpus(a.tokens.copy(), 5, {"other": True})
    assert a.content_hash() == b.content_hash()
    assert a.content_hash() != Corpus(a.tokens[::-1], 5).content_hash()


def test_subset_keeps_order_and_merges_provenance():
    sub = _corpus().subset([1, 0], selected=True)
    np.testing.assert_array_equal(sub.tokens[0], [4, 3, 0])
    assert sub.provenance == {"stream": "corpus/train", "selected": True}


@pytest.mark.parametrize("tokens", [np.zeros((0, 3), dtype=int), np.array([0, 1]), np.array([[0.5, 1.0]]),
                                    np.array([[0, 5]]), np.array([[-1, 0]])])
def test_corpus_rejects_bad_tokens(tokens):
    with pytest.raises(ValueError):
        Corpus(tokens, 5)


# -- byte-level text -----------------------------------------------------------


def test_ingest_text_drops_the_short_tail(tmp_path):
    path = tmp_path / "book.txt"
    path.write_bytes(bytes(range(256)) * 3 + b"x" * 250)   # 1018 bytes
    corpus = ingest_text(path, 100)
    assert corpus.tokens.shape == (10, 100)
    assert corpus.vocab_size == BYTE_VOCAB
    assert corpus.provenance["bos_id"] == BYTE_BOS
    assert corpus.tokens[0, 5] == 5


def test_ingest_text_is_deterministic(tmp_path):
    path = tmp_path / "a.txt"
    path.write_bytes(b"hello world " * 50)
    np.testing.assert_array_equal(ingest_text(path, 7).tokens, ingest_text(path, 7).tokens)


def test_ingest_repeated_byte_gives_constant_sequences(tmp_path):
    path = tmp_path / "z.txt"
    path.write_bytes(b"z" * 64)
    assert np.all(ingest_text(path, 8).tokens == ord("z"))


@pytest.mark.parametrize("content,seq_len", [(b"", 4), (b"abc", 4), (b"abcd", 0)])
def test_ingest_text_rejects_unusable_input(tmp_path, content, seq_len):
    path = tmp_path / "t.txt"
    path.write_bytes(content)
    with pytest.raises(ValueError):
        ingest_text(path, seq_len)


# -- SALTCKPT ------------------------------------------------------------------


def _model(seed=0):
    config = LmConfig(vocab_size=7, max_len=5, d_model=8, n_layers=2, n_heads=2, d_ff=16, init_std=0.2)
    return init_model(config, Rng(seed))


def test_checkpoint_round_trip_is_bit_exact():
    model = _model()
    back, meta = decode_checkpoint(encode_checkpoint(model, {"step": 40, "role": "slm"}))
    assert back.config == model.config
    assert meta == {"step": 40, "role": "slm"}
    assert set(back.params) == set(model.params)
    for name, value in model.params.items():
        assert back.params[name].tobytes() == value.tobytes()


def test_checkpoint_starts_with_magic_and_version():
    data = encode_checkpoint(_model())
    assert data[:8] == b"SALTCKPT"
    assert struct.unpack_from("<I", data, 8) == (1,)


def test_checkpoint_encoding_is_deterministic():
    assert encode_checkpoint(_model(3), {"a": 1}) == encode_checkpoint(_model(3), {"a": 1})


@pytest.mark.parametrize("mutate", [
    lambda d: b"XALTCKPT" + d[8:],
    lambda d: d[:-8],
    lambda d: d + b"\x00",
    lambda d: d[:8] + struct.pack("<I", 9) + d[12:],
])
def test_checkpoint_decode_rejects_damaged_files(mutate):
    with pytest.raises(ValueError, match="SALTCKPT"):
        decode_checkpoint(mutate(encode_checkpoint(_model())))
