"""
Two-stage training loop.

For j = 1..n: pick a batch, ask the teacher for its distributions if omega_j > 0,
build the combined objective (1/B) sum_x l^{omega_j}(x) on a fresh tape, take one
Adam step at lr_j, and append a StepRecord.  While j is inside the KD phase the
batch comes from `kd_corpus` when one is given (selected data), otherwise from
the full corpus.

Random streams, all derived from plan.seed:
    "init"       student initialisation
    "batches"    full-corpus epoch shuffles
    "batches/kd" KD-subset epoch shuffles
    "probe"      the fixed probe subset of the training corpus
"""

import logging
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from src.domain.metrics import MetricsSink
from src.domain.model import NextTokenModel
from src.domain.source import Corpus
from src.domain.training import MetricsLog, StepRecord, TrainPlan
from src.evaluation import held_out_metrics, next_token_accuracy
from src.adapters.transformer_model import TransformerModel
from src.losses import combined_graph, teacher_targets
from src.lm.model import LmConfig, LmModel, build_log_probs, init_model, model_variables
from src.numcore.rng import Rng
from src.numcore.tape import Tape, backward
from src.numcore.tensor import NonFiniteError
from src.trainer.batching import BatchSampler
from src.trainer.optimizer import AdamState, optimizer_step
from src.trainer.schedules import lr_at_step, omega_at_step

log = logging.getLogger(__name__)

# (tag, step, model) -> location of the written checkpoint
Checkpointer = Callable[[str, int, LmModel], str]


class TrainingDiverged(RuntimeError):
    """The objective became non-finite; the last good parameters were checkpointed first."""

    def __init__(self, step: int, last_good: str | None, reason: str):
        self.step = step
        self.last_good = last_good
        super().__init__(f"training diverged at step {step}: {reason} (last good checkpoint: {last_good})")


@dataclass
class TrainResult:
    model: LmModel
    log: MetricsLog
    teacher_forwards: int = 0


def probe_indices(plan: TrainPlan, n_sequences: int) -> np.ndarray:
    """The fixed, sorted probe subset of a training corpus with n_sequences rows."""
    size = min(plan.probe_size, n_sequences)
    return np.sort(Rng(plan.seed).derive("probe").generator().choice(n_sequences, size=size, replace=False))


def _check_inputs(plan, corpus, config, teacher, kd_corpus, held_out) -> None:
    if plan.uses_teacher and teacher is None:
        raise ValueError(f"mode {plan.mode!r} needs a teacher")
    if not plan.uses_teacher and teacher is not None:
        raise ValueError("baseline mode does not take a teacher")
    if teacher is not None and teacher.vocab_size != config.vocab_size:
        raise ValueError(f"teacher vocab {teacher.vocab_size} != student vocab {config.vocab_size}")
    for what, c in (("corpus", corpus), ("kd_corpus", kd_corpus), ("held_out", held_out)):
        if c is None:
            continue
        if c.vocab_size != config.vocab_size:
            raise ValueError(f"{what} vocab {c.vocab_size} != student vocab {config.vocab_size}")
        if c.seq_len > config.max_len:
            raise ValueError(f"{what} sequence length {c.seq_len} exceeds max_len {config.max_len}")
    if plan.kd_top_k is not None and plan.kd_top_k > config.vocab_size:
        raise ValueError(f"kd_top_k {plan.kd_top_k} exceeds vocab size {config.vocab_size}")


def train(
    plan: TrainPlan,
    corpus: Corpus,
    student_config: LmConfig,
    teacher: NextTokenModel | None = None,
    *,
    kd_corpus: Corpus | None = None,
    held_out: Corpus | None = None,
    sink: MetricsSink | None = None,
    checkpointer: Checkpointer | None = None,
    init: LmModel | None = None,
) -> TrainResult:
    _check_inputs(plan, corpus, student_config, teacher, kd_corpus, held_out)
    rng = Rng(plan.seed)
    model = init.copy() if init is not None else init_model(student_config, rng.derive("init"))
    state = AdamState()
    metrics = MetricsLog()

    full = BatchSampler(corpus.n_sequences, plan.batch_size, rng.derive("batches"))
    subset = BatchSampler(kd_corpus.n_sequences, plan.batch_size, rng.derive("batches/kd")) if kd_corpus else None
    probe = corpus.tokens[probe_indices(plan, corpus.n_sequences)]

    kd_steps = plan.kd_steps
    checkpoint_steps = set(plan.checkpoint_steps)
    teacher_forwards = 0
    log.info(
        "train start mode=%s n=%d kd_steps=%d B=%d omega=%.4f rho=%.4f top_k=%s params=%d",
        plan.mode, plan.n_steps, kd_steps, plan.batch_size, plan.omega, plan.rho,
        plan.kd_top_k, student_config.param_count,
    )

    for j in range(1, plan.n_steps + 1):
        started = time.perf_counter()
        omega_j = omega_at_step(plan, j)
        lr_j = lr_at_step(plan, j)
        in_kd = j <= kd_steps
        if in_kd and subset is not None:
            tokens = kd_corpus.tokens[subset.next_batch()]
        else:
            tokens = corpus.tokens[full.next_batch()]

        try:
            targets = None
            if omega_j > 0.0:
                targets = teacher_targets(teacher.log_probs(tokens), plan.rho)
                teacher_forwards += 1
            tape = Tape()
            logp = build_log_probs(tape, model_variables(tape, model), student_config, tokens)
            loss, std, dist = combined_graph(logp, tokens, targets, omega_j, plan.kd_top_k)
            grads = backward(tape, loss)
        except NonFiniteError as exc:
            location = checkpointer("last_good", j - 1, model) if checkpointer else None
            if sink is not None:
                sink.write({"event": "diverged", "step": j, "reason": str(exc), "last_good": location})
            log.error("step=%d diverged: %s last_good=%s", j, exc, location)
            raise TrainingDiverged(j, location, str(exc)) from exc

        outcome = optimizer_step(model.params, grads, state, lr_j, plan.adam)
        record = StepRecord(
            step=j,
            omega=omega_j,
            lr=lr_j,
            loss_standard=float(std.value.mean()),
            loss_distill=float(dist.value.mean()) if dist is not None else 0.0,
            loss_combined=float(loss.value),
            batch_accuracy=float(np.mean(np.argmax(logp.value, axis=-1) == tokens)),
            skipped=outcome.skipped,
        )

        current = None
        if j == plan.n_steps or j == kd_steps or (plan.probe_every and j % plan.probe_every == 0):
            current = TransformerModel(model)
            record.probe_accuracy = next_token_accuracy(current, probe)
        if held_out is not None and (j == plan.n_steps or (plan.eval_every and j % plan.eval_every == 0)):
            current = current or TransformerModel(model)
            metrics_j = held_out_metrics(current, held_out)
            record.held_out_accuracy = metrics_j.accuracy
            record.held_out_log_perplexity = metrics_j.log_perplexity
        record.wall_time_s = time.perf_counter() - started

        metrics.append(record)
        if sink is not None:
            sink.write(record.to_dict())
        log.debug(
            "step=%d omega=%.4f lr=%.3g loss=%.4f std=%.4f distill=%.4f acc=%.4f",
            j, omega_j, lr_j, record.loss_combined, record.loss_standard, record.loss_distill,
            record.batch_accuracy,
        )
        if j == kd_steps and j < plan.n_steps:
            log.info("step=%d KD phase over; standard training for %d more steps", j, plan.n_steps - j)
        if checkpointer and (j in checkpoint_steps or (plan.checkpoint_every and j % plan.checkpoint_every == 0)):
            location = checkpointer("step", j, model)
            log.info("step=%d checkpoint=%s", j, location)

    final = metrics.records[-1]
    log.info(
        "train done mode=%s steps=%d loss=%.4f probe_acc=%s teacher_forwards=%d",
        plan.mode, plan.n_steps, final.loss_combined, final.probe_accuracy, teacher_forwards,
    )
    return TrainResult(model, metrics, teacher_forwards)
