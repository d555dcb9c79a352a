"""
Training plan and metrics log.

A TrainPlan fully determines a run: given the same plan, corpus, student config
and teacher, the trainer produces the same model and the same MetricsLog.
"""

import json
from dataclasses import asdict, dataclass, field
from typing import Literal

from src.domain.errors import ConfigError

Mode = Literal["baseline", "salt", "rkd"]
TransitionKind = Literal["step", "linear_decay", "linear_ratio_decay"]

MODES = ("baseline", "salt", "rkd")
TRANSITIONS = ("step", "linear_decay", "linear_ratio_decay")


@dataclass(frozen=True)
class Transition:
    kind: TransitionKind = "step"
    n1: int | None = None   # linear schedules: last step at full omega
    n2: int | None = None   # linear schedules: first step at omega 0


@dataclass(frozen=True)
class LrSchedule:
    peak: float = 1e-3
    warmup_steps: int = 0
    final: float = 1e-4


@dataclass(frozen=True)
class AdamSettings:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float | None = 1.0


@dataclass(frozen=True)
class TrainPlan:
    mode: Mode
    n_steps: int
    batch_size: int
    omega: float = 0.0
    rho: float = 1.0
    n_kd: int = 0
    transition: Transition = field(default_factory=Transition)
    lr: LrSchedule = field(default_factory=LrSchedule)
    adam: AdamSettings = field(default_factory=AdamSettings)
    seed: int = 0
    teacher_ref: str | None = None
    kd_top_k: int | None = None
    eval_every: int = 0        # 0: held-out metrics only at the last step
    probe_every: int = 0       # 0: probe accuracy only at the end of the KD phase and the last step
    probe_size: int = 64
    checkpoint_every: int = 0  # 0: no periodic checkpoints
    checkpoint_steps: tuple[int, ...] = ()

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.n_steps < 1 or self.batch_size < 1:
            raise ConfigError(f"n_steps and batch_size must be positive, got {self.n_steps}, {self.batch_size}")
        if not 0.0 <= self.omega <= 1.0:
            raise ConfigError(f"omega must lie in [0, 1], got {self.omega}")
        if self.rho <= 0.0:
            raise ConfigError(f"rho must be positive, got {self.rho}")
        if not 0 <= self.n_kd <= self.n_steps:
            raise ConfigError(f"n_kd must lie in [0, n_steps={self.n_steps}], got {self.n_kd}")
        t = self.transition
        if t.kind not in TRANSITIONS:
            raise ConfigError(f"transition must be one of {TRANSITIONS}, got {t.kind!r}")
        if t.kind != "step":
            if t.n1 is None or t.n2 is None or not 0 <= t.n1 <= t.n2 <= self.n_steps:
                raise ConfigError(
                    f"{t.kind} needs 0 <= n1 <= n2 <= n_steps={self.n_steps}, got n1={t.n1} n2={t.n2}"
                )
            if t.kind == "linear_ratio_decay" and self.mode == "salt" and self.omega == 1.0:
                raise ConfigError("linear_ratio_decay is undefined for omega = 1 (ratio omega/(1-omega))")
        if self.lr.peak <= 0.0 or self.lr.final < 0.0 or self.lr.warmup_steps < 0:
            raise ConfigError(f"invalid learning-rate schedule {self.lr}")
        if self.lr.warmup_steps > self.n_steps:
            raise ConfigError(f"warmup_steps {self.lr.warmup_steps} exceeds n_steps {self.n_steps}")
        a = self.adam
        if not (0.0 <= a.beta1 < 1.0 and 0.0 <= a.beta2 < 1.0 and a.eps > 0.0):
            raise ConfigError(f"invalid Adam settings {a}")
        if a.clip_norm is not None and a.clip_norm <= 0.0:
            raise ConfigError(f"clip_norm must be positive or null, got {a.clip_norm}")
        if self.kd_top_k is not None and self.kd_top_k < 1:
            raise ConfigError(f"kd_top_k must be >= 1, got {self.kd_top_k}")
        if min(self.eval_every, self.probe_every, self.checkpoint_every) < 0 or self.probe_size < 1:
            raise ConfigError("eval_every, probe_every and checkpoint_every must be >= 0; probe_size >= 1")

    @property
    def uses_teacher(self) -> bool:
        return self.mode in ("salt", "rkd")

    @property
    def kd_steps(self) -> int:
        """Length of the distillation phase: the last step with omega_j > 0 can be at most this."""
        if self.mode == "baseline" or self.omega == 0.0:
            return 0
        if self.mode == "rkd":
            return self.n_steps
        if self.transition.kind == "step":
            return self.n_kd
        return self.transition.n2


@dataclass
class StepRecord:
    step: int
    omega: float
    lr: float
    loss_standard: float
    loss_distill: float
    loss_combined: float
    batch_accuracy: float
    skipped: bool = False
    probe_accuracy: float | None = None
    held_out_accuracy: float | None = None
    held_out_log_perplexity: float | None = None
    wall_time_s: float | None = None

    def to_dict(self, include_timing: bool = True) -> dict:
        record = asdict(self)
        if not include_timing:
            record.pop("wall_time_s")
        return record


class MetricsLog:
    """Append-only list of StepRecords with strictly increasing steps."""

    def __init__(self):
        self.records: list[StepRecord] = []

    def append(self, record: StepRecord) -> None:
        if self.records and record.step <= self.records[-1].step:
            raise ValueError(f"step {record.step} does not follow step {self.records[-1].step}")
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def at(self, step: int) -> StepRecord:
        for r in self.records:
            if r.step == step:
                return r
        raise KeyError(f"no record for step {step}")

    def last_held_out(self) -> StepRecord | None:
        for r in reversed(self.records):
            if r.held_out_log_perplexity is not None:
                return r
        return None

    def to_jsonl(self, include_timing: bool = True) -> str:
        return "".join(json.dumps(r.to_dict(include_timing), sort_keys=True) + "\n" for r in self.records)

    @classmethod
    def from_records(cls, records: list[dict]) -> "MetricsLog":
        log = cls()
        for rec in records:
            if "step" in rec and "event" not in rec:
                log.append(StepRecord(**{k: rec.get(k) for k in StepRecord.__dataclass_fields__ if k in rec}))
        return log
