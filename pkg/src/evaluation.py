"""
Held-out evaluation and difficulty buckets.

Accuracy is greedy next-token accuracy (argmax, ties to the smallest id) over
every position of every sequence; log-perplexity is the mean per-token
cross-entropy.  Buckets rank sequences by a teacher's per-sequence CE: the
lowest third is "easy", the highest third "hard".
"""

import csv
import io
import logging
from dataclasses import dataclass

import numpy as np

from src.domain.model import NextTokenModel
from src.domain.selection import BUCKETS, BucketAssignment
from src.domain.source import Corpus

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class HeldOutMetrics:
    accuracy: float
    log_perplexity: float
    n_tokens: int
    corpus_hash: str = ""

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "log_perplexity": self.log_perplexity,
            "n_tokens": self.n_tokens,
            "corpus_hash": self.corpus_hash,
        }


def _token_stats(model: NextTokenModel, tokens: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-position (correct, loss) arrays of shape [N, T]."""
    logp = model.log_probs(tokens)
    correct = np.argmax(logp, axis=-1) == tokens
    loss = -np.take_along_axis(logp, tokens[..., None], axis=-1)[..., 0]
    return correct, loss


def next_token_accuracy(model: NextTokenModel, tokens) -> float:
    tokens = np.asarray(tokens, dtype=np.int64)
    return float(np.mean(np.argmax(model.log_probs(tokens), axis=-1) == tokens))


def held_out_metrics(model: NextTokenModel, corpus: Corpus) -> HeldOutMetrics:
    if corpus is None or corpus.n_sequences == 0:
        raise ValueError("held_out_metrics needs a non-empty corpus")
    correct, loss = _token_stats(model, corpus.tokens)
    return HeldOutMetrics(
        accuracy=float(correct.mean()),
        log_perplexity=float(loss.mean()),
        n_tokens=int(correct.size),
        corpus_hash=corpus.content_hash(),
    )


def tertile_sizes(n: int) -> tuple[int, int, int]:
    """Bucket sizes for n sequences; remainders go to easy, then medium."""
    base, rem = divmod(n, 3)
    return base + (rem > 0), base + (rem > 1), base


def bucket_partition(teacher: NextTokenModel, corpus: Corpus) -> BucketAssignment:
    """
    Rank by teacher per-sequence CE ascending; ties go to the higher sequence
    log-likelihood, then to the lower index.  Tertiles become easy/medium/hard.
    """
    if corpus.n_sequences == 0:
        raise ValueError("bucket_partition needs a non-empty corpus")
    _, loss = _token_stats(teacher, corpus.tokens)
    scores = loss.mean(axis=-1)
    log_likelihoods = -loss.sum(axis=-1)
    index = np.arange(corpus.n_sequences)
    order = np.lexsort((index, -log_likelihoods, scores))

    buckets = [""] * corpus.n_sequences
    start = 0
    for name, size in zip(BUCKETS, tertile_sizes(corpus.n_sequences)):
        for i in order[start:start + size]:
            buckets[int(i)] = name
        start += size
    assignment = BucketAssignment(buckets, scores, log_likelihoods)
    log.info("bucket_partition teacher=%s sizes=%s", teacher.model_id, assignment.sizes())
    return assignment


def per_bucket_metrics(
    model: NextTokenModel, corpus: Corpus, buckets: BucketAssignment
) -> dict[str, HeldOutMetrics | None]:
    """held_out_metrics on each bucket; an empty bucket maps to None."""
    if len(buckets.buckets) != corpus.n_sequences:
        raise ValueError(f"{len(buckets.buckets)} bucket labels for {corpus.n_sequences} sequences")
    result: dict[str, HeldOutMetrics | None] = {}
    for name in BUCKETS:
        idx = buckets.indices(name)
        result[name] = held_out_metrics(model, corpus.subset(idx)) if idx.size else None
    return result


def buckets_csv(buckets: BucketAssignment) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["index", "score", "bucket"])
    for i, (score, name) in enumerate(zip(buckets.scores, buckets.buckets)):
        writer.writerow([i, repr(float(score)), name])
    return out.getvalue()
