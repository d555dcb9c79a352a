"""
Experiment configuration: one YAML file mapped onto nested dataclasses.

    name: desk
    seed: 0
    source: {kind: markov, vocab_size: 64, order: 2}
    corpus: {n_train: 50000, n_held_out: 5000, seq_len: 32}
    llm_train: {n_steps: 20000, batch_size: 64}
    distill: {omega: 0.667, rho: 0.25, n_kd: 4000}

Unknown keys are rejected.  `--set dotted.key=value` overrides are applied to
the raw mapping before it is built, with the value parsed as a YAML scalar.
"""

import dataclasses
import hashlib
import json
import logging
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from src.domain.errors import ConfigError
from src.domain.training import AdamSettings, LrSchedule, TrainPlan, Transition
from src.lm.model import LmConfig
from src.numcore.rng import derive_seed

log = logging.getLogger(__name__)

ROLES = ("slm", "baseline", "salt", "salt_ds", "rkd")
LLM_ROLES = ("baseline", "salt", "salt_ds", "rkd")

# Purpose labels for derive_seed(config.seed, label).
SEED_LABELS = ("source", "corpus/train", "corpus/held_out", "slm", "llm", "diagnostics")


@dataclass
class SourceSpec:
    kind: str = "markov"          # markov | cycle | text
    vocab_size: int = 16
    order: int = 1
    concentration: float = 1.0
    text_path: str | None = None  # kind=text: any file, read as bytes (V = 257)


@dataclass
class CorpusSpec:
    n_train: int = 512
    n_held_out: int = 128
    seq_len: int = 8


@dataclass
class ModelSpec:
    d_model: int = 16
    n_layers: int = 2
    n_heads: int = 2
    d_ff: int = 32
    init_std: float = 0.02
    prob_floor: float = 1e-4


@dataclass
class TrainSpec:
    n_steps: int = 200
    batch_size: int = 16
    lr_peak: float = 1e-3
    warmup_steps: int = 0
    lr_final: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float | None = 1.0
    eval_every: int = 0
    probe_every: int = 20
    probe_size: int = 64
    checkpoint_every: int = 0


@dataclass
class DistillSpec:
    omega: float = 0.667
    rho: float = 0.25
    n_kd: int = 0
    transition: str = "step"
    n1: int | None = None
    n2: int | None = None
    top_k: int | None = None


@dataclass
class SelectionSpec:
    k: int = 10
    m: int | None = None            # None: the smallest m salt_ds can run with
    n0_fraction: float = 0.125
    mask_mode: str = "exclude"
    kd_epochs_allowed: int = 1
    use_early_checkpoint: bool = True


@dataclass
class DiagnosticsSpec:
    student: str = "salt"
    teacher: str = "slm"
    oracle_teacher: bool = False    # use the source's own table as the teacher
    omega: float | None = None      # None: distill.omega
    rho: float | None = None        # None: distill.rho
    floor: float = 1e-4
    delta: float = 0.1
    log_card: float = 0.0
    omega_grid: tuple[float, ...] = (0.0, 0.25, 0.5, 0.75, 1.0)
    n_prefixes: int = 32
    mc_samples: int = 4096


@dataclass
class ExperimentConfig:
    name: str = "salt"
    seed: int = 0
    record_timing: bool = False
    source: SourceSpec = field(default_factory=SourceSpec)
    corpus: CorpusSpec = field(default_factory=CorpusSpec)
    slm: ModelSpec = field(default_factory=ModelSpec)
    llm: ModelSpec = field(default_factory=lambda: ModelSpec(d_model=32, n_layers=2, n_heads=4, d_ff=64))
    slm_train: TrainSpec = field(default_factory=TrainSpec)
    llm_train: TrainSpec = field(default_factory=TrainSpec)
    distill: DistillSpec = field(default_factory=DistillSpec)
    roles: dict[str, dict] = field(default_factory=dict)   # per-role DistillSpec overrides
    selection: SelectionSpec = field(default_factory=SelectionSpec)
    diagnostics: DiagnosticsSpec = field(default_factory=DiagnosticsSpec)

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if self.source.kind not in ("markov", "cycle", "text"):
            raise ConfigError(f"source.kind must be markov, cycle or text, got {self.source.kind!r}")
        if self.source.kind == "text" and not self.source.text_path:
            raise ConfigError("source.kind=text needs source.text_path")
        c = self.corpus
        if min(c.n_train, c.n_held_out, c.seq_len) < 1:
            raise ConfigError(f"corpus sizes must be positive, got {c}")
        s = self.selection
        if not 0.0 < s.n0_fraction <= 1.0:
            raise ConfigError(f"selection.n0_fraction must lie in (0, 1], got {s.n0_fraction}")
        if s.kd_epochs_allowed < 1:
            raise ConfigError(f"selection.kd_epochs_allowed must be >= 1, got {s.kd_epochs_allowed}")
        for role, overrides in self.roles.items():
            if role not in LLM_ROLES:
                raise ConfigError(f"roles: unknown role {role!r}; expected one of {LLM_ROLES}")
            unknown = set(overrides) - {f.name for f in dataclasses.fields(DistillSpec)}
            if unknown:
                raise ConfigError(f"roles.{role}: unknown keys {sorted(unknown)}")
        baseline_omega = self.roles.get("baseline", {}).get("omega", 0.0)
        if baseline_omega:
            raise ConfigError(f"role baseline trains without distillation; roles.baseline.omega={baseline_omega}")
        d = self.diagnostics
        for what in ("student", "teacher"):
            if getattr(d, what) not in ROLES:
                raise ConfigError(f"diagnostics.{what} must be one of {ROLES}, got {getattr(d, what)!r}")

    @property
    def vocab_size(self) -> int:
        from src.adapters.corpus_file import BYTE_VOCAB

        return BYTE_VOCAB if self.source.kind == "text" else self.source.vocab_size

    def seed_for(self, label: str) -> int:
        return derive_seed(self.seed, label)

    def distill_for(self, role: str) -> DistillSpec:
        return dataclasses.replace(self.distill, **self.roles.get(role, {}))

    def lm_config(self, role: str) -> LmConfig:
        from src.adapters.corpus_file import BYTE_BOS

        spec = self.slm if role == "slm" else self.llm
        return LmConfig(
            vocab_size=self.vocab_size,
            max_len=self.corpus.seq_len,
            d_model=spec.d_model,
            n_layers=spec.n_layers,
            n_heads=spec.n_heads,
            d_ff=spec.d_ff,
            prob_floor=spec.prob_floor,
            init_std=spec.init_std,
            bos_id=BYTE_BOS if self.source.kind == "text" else None,
        )

    def plan(self, role: str, **extra) -> TrainPlan:
        """
        The TrainPlan a role trains with.  Every LLM role shares the "llm" seed, so
        baseline and salt with n_kd=0 take identical batches from an identical init.
        """
        if role not in ROLES:
            raise ConfigError(f"unknown role {role!r}; expected one of {ROLES}")
        spec = self.slm_train if role == "slm" else self.llm_train
        common = dict(
            n_steps=spec.n_steps,
            batch_size=spec.batch_size,
            lr=LrSchedule(spec.lr_peak, spec.warmup_steps, spec.lr_final),
            adam=AdamSettings(spec.beta1, spec.beta2, spec.eps, spec.clip_norm),
            seed=self.seed_for("slm" if role == "slm" else "llm"),
            eval_every=spec.eval_every,
            probe_every=spec.probe_every,
            probe_size=spec.probe_size,
            checkpoint_every=spec.checkpoint_every,
        )
        common.update(extra)
        if role in ("slm", "baseline"):
            return TrainPlan(mode="baseline", **common)

        d = self.distill_for(role)
        return TrainPlan(
            mode="rkd" if role == "rkd" else "salt",
            omega=d.omega,
            rho=d.rho,
            n_kd=d.n_kd,
            transition=Transition(d.transition, d.n1, d.n2),
            kd_top_k=d.top_k,
            teacher_ref="slm",
            **common,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON form (sorted keys, no whitespace)."""
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _build(cls, data, where: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'} must be a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown keys {sorted(unknown)}")

    kwargs = {}
    for name, value in data.items():
        hint = hints[name]
        path = f"{where}.{name}" if where else name
        if dataclasses.is_dataclass(hint):
            kwargs[name] = _build(hint, value, path)
        elif typing.get_origin(hint) is tuple:
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"{path} must be a list, got {value!r}")
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from exc


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    """Apply "dotted.key=value" strings to a raw config mapping, in order."""
    raw = json.loads(json.dumps(raw))
    for item in overrides:
        key, sep, text = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override must look like dotted.key=value, got {item!r}")
        node = raw
        parts = key.split(".")
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(f"override {key!r}: {part!r} is not a section")
            node = child
        node[parts[-1]] = yaml.safe_load(text)
    return raw


def config_from_dict(raw: dict | None, overrides: list[str] = ()) -> ExperimentConfig:
    return _build(ExperimentConfig, apply_overrides(raw or {}, list(overrides)), "")


def load_config(path: str | Path | None, overrides: list[str] = ()) -> ExperimentConfig:
    """Read a YAML config (or start from defaults when path is None) and apply overrides."""
    raw = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh) or {}
    config = config_from_dict(raw, overrides)
    log.info("config name=%s seed=%d hash=%s", config.name, config.seed, config.config_hash()[:12])
    return config
