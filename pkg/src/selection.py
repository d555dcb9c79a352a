"""
Teacher-driven data selection.

A sequence's score is the median of the teacher's per-token losses, taken over
the positions where the realised token is in the teacher's top-k.  Positions
outside the top-k are the ones the teacher finds unlearnable and do not count.
Sequences with high scores are hard but learnable and are kept for the KD phase.

mask_mode "exclude" drops masked positions before taking the median;
mask_mode "zero" keeps all T positions and sets the masked losses to 0.
"""

import csv
import io
import logging
from typing import Literal

import numpy as np

from src.domain.errors import CapacityError
from src.domain.model import NextTokenModel
from src.domain.selection import SelectionRecord
from src.domain.source import Corpus
from src.lm.distributions import in_top_k

log = logging.getLogger(__name__)

MaskMode = Literal["exclude", "zero"]
MASK_MODES = ("exclude", "zero")


def _median(values: np.ndarray) -> float:
    """Median; the mean of the two middle values when the count is even."""
    ordered = np.sort(values)
    mid = ordered.size // 2
    if ordered.size % 2:
        return float(ordered[mid])
    return float((ordered[mid - 1] + ordered[mid]) / 2.0)


def _check(k: int, vocab_size: int, mask_mode: str) -> None:
    if not 1 <= k <= vocab_size:
        raise ValueError(f"k must lie in [1, {vocab_size}], got {k}")
    if mask_mode not in MASK_MODES:
        raise ValueError(f"mask_mode must be one of {MASK_MODES}, got {mask_mode!r}")


def score_from_losses(losses: np.ndarray, kept: np.ndarray, mask_mode: MaskMode = "exclude") -> float | None:
    """Score of one sequence from its per-token losses and kept mask; None if nothing is kept."""
    if not kept.any():
        return None
    if mask_mode == "exclude":
        return _median(losses[kept])
    return _median(np.where(kept, losses, 0.0))


def _score_rows(logp: np.ndarray, tokens: np.ndarray, k: int, mask_mode: MaskMode):
    losses = -np.take_along_axis(logp, tokens[..., None], axis=-1)[..., 0]
    kept = in_top_k(logp, tokens, k)
    return [(score_from_losses(losses[i], kept[i], mask_mode), int(kept[i].sum())) for i in range(tokens.shape[0])]


def score_sequence(teacher: NextTokenModel, x, k: int, mask_mode: MaskMode = "exclude") -> float | None:
    _check(k, teacher.vocab_size, mask_mode)
    tokens = np.asarray(x, dtype=np.int64).reshape(1, -1)
    return _score_rows(teacher.log_probs(tokens), tokens, k, mask_mode)[0][0]


def score_corpus(
    teacher: NextTokenModel,
    corpus: Corpus,
    k: int,
    mask_mode: MaskMode = "exclude",
    chunk_size: int = 256,
) -> list[SelectionRecord]:
    """One record per sequence, in corpus order."""
    _check(k, teacher.vocab_size, mask_mode)
    records: list[SelectionRecord] = []
    for start in range(0, corpus.n_sequences, chunk_size):
        tokens = corpus.tokens[start:start + chunk_size]
        for offset, (score, kept) in enumerate(_score_rows(teacher.log_probs(tokens), tokens, k, mask_mode)):
            records.append(SelectionRecord(start + offset, score, kept, teacher.model_id))
    unscored = sum(r.score is None for r in records)
    log.info("score_corpus teacher=%s n=%d k=%d mode=%s unscored=%d",
             teacher.model_id, len(records), k, mask_mode, unscored)
    return records


def select_top_m(records: list[SelectionRecord], m: int) -> list[int]:
    """
    Indices of the m highest scores, highest first; equal scores go to the
    smaller index.  Unscored records are never selected.
    """
    scored = [r for r in records if r.score is not None]
    if not 0 <= m <= len(scored):
        raise CapacityError(f"cannot select m={m}: only {len(scored)} of {len(records)} sequences have a score")
    ranked = sorted(scored, key=lambda r: (-r.score, r.index))
    return [r.index for r in ranked[:m]]


def records_csv(records: list[SelectionRecord]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["index", "score", "kept_tokens", "teacher_ckpt"])
    for r in records:
        writer.writerow([r.index, "" if r.score is None else repr(r.score), r.kept_tokens, r.teacher_ckpt])
    return out.getvalue()


def parse_records_csv(text: str) -> list[SelectionRecord]:
    rows = [line for line in text.splitlines() if line and not line.startswith("#")]
    return [
        SelectionRecord(int(row["index"]), float(row["score"]) if row["score"] else None,
                        int(row["kept_tokens"]), row["teacher_ckpt"])
        for row in csv.DictReader(rows)
    ]
