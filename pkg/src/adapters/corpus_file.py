"""
SALTCORP corpus files and byte-level text ingestion.

Layout (little-endian throughout):
    8 bytes   magic b"SALTCORP"
    u32       version (1)
    u32       V
    u32       N
    u32       T
    N*T u32   token ids, row-major
"""

import logging
import struct
from pathlib import Path

import numpy as np

from src.domain.source import Corpus

log = logging.getLogger(__name__)

MAGIC = b"SALTCORP"
VERSION = 1
_HEADER = struct.Struct("<8sIIII")

BYTE_VOCAB = 257   # 256 byte values + BOS
BYTE_BOS = 256


def encode_corpus(corpus: Corpus) -> bytes:
    n, t = corpus.tokens.shape
    header = _HEADER.pack(MAGIC, VERSION, corpus.vocab_size, n, t)
    return header + corpus.tokens.astype("<u4").tobytes()


def decode_corpus(data: bytes, **provenance) -> Corpus:
    if len(data) < _HEADER.size:
        raise ValueError(f"SALTCORP: truncated header ({len(data)} bytes)")
    magic, version, vocab, n, t = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValueError(f"SALTCORP: bad magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"SALTCORP: unsupported version {version}")
    expected = _HEADER.size + 4 * n * t
    if len(data) != expected:
        raise ValueError(f"SALTCORP: expected {expected} bytes for N={n} T={t}, got {len(data)}")
    tokens = np.frombuffer(data, dtype="<u4", offset=_HEADER.size).reshape(n, t).astype(np.int64)
    return Corpus(tokens, vocab, dict(provenance))


def ingest_text(path: str | Path, seq_len: int) -> Corpus:
    """
    Byte-level corpus from any file: V = 257 with BOS = 256.

    The file is cut into consecutive length-T chunks; a shorter tail is dropped.
    """
    if seq_len < 1:
        raise ValueError(f"seq_len must be >= 1, got {seq_len}")
    raw = Path(path).read_bytes()
    if not raw:
        raise ValueError(f"{path}: empty file")
    n = len(raw) // seq_len
    if n == 0:
        raise ValueError(f"{path}: {len(raw)} bytes is shorter than one sequence of length {seq_len}")
    tokens = np.frombuffer(raw[: n * seq_len], dtype=np.uint8).reshape(n, seq_len).astype(np.int64)
    log.info("ingest_text path=%s bytes=%d sequences=%d dropped_tail=%d", path, len(raw), n, len(raw) - n * seq_len)
    return Corpus(tokens, BYTE_VOCAB, {"source_id": f"bytes:{Path(path).name}", "bos_id": BYTE_BOS})
