"""
Experiment pipeline: one method per command.

    gen-data -> train(slm) -> score -> select -> train(baseline | salt | salt_ds | rkd)
             -> eval / report -> diagnose

Every artifact goes through one ArtifactStore rooted at the run directory, so the
whole pipeline runs against InMemoryArtifactStore in tests.  Artifact names and
byte layouts are listed in docs/formats/README.md.

Every output carries the config hash and the hash of the corpus it was computed
from: JSON files as keys, CSV files as a leading "# key=value ..." line, metrics
JSONL as a first {"event": "provenance"} record and checkpoints in their meta block.
"""

import csv
import dataclasses
import io
import json
import logging
import math
from functools import cached_property
from typing import Callable

import numpy as np

from src.adapters.checkpoint_file import decode_checkpoint, encode_checkpoint
from src.adapters.corpus_file import decode_corpus, encode_corpus, ingest_text
from src.adapters.factory import create_metrics_sink, create_source
from src.adapters.jsonl_metrics import read_jsonl
from src.adapters.source_model import SourceAsModel
from src.adapters.transformer_model import TransformerModel
from src.config import LLM_ROLES, ROLES, ExperimentConfig
from src.diagnostics.report import DiagnosticsReport, DiagnosticsSettings, build_report
from src.domain.errors import CapacityError, ConfigError, MissingArtifactError
from src.domain.selection import BUCKETS, SelectionRecord
from src.domain.source import Corpus, GroundTruthSource
from src.domain.store import ArtifactStore
from src.domain.training import MetricsLog, TrainPlan, Transition
from src.evaluation import bucket_partition, buckets_csv, held_out_metrics, next_token_accuracy, per_bucket_metrics
from src.lm.model import LmModel
from src.numcore.rng import Rng
from src.selection import parse_records_csv, records_csv, score_corpus, select_top_m
from src.trainer.loop import TrainResult, probe_indices, train
from src.trainer.schedules import omega_at_step

log = logging.getLogger(__name__)

CORPUS_TRAIN = "corpus/train.saltcorp"
CORPUS_HELD_OUT = "corpus/held_out.saltcorp"
MANIFEST = "corpus/manifest.json"
SCORES = "selection/scores.csv"
SELECTED = "selection/selected.saltcorp"
SELECTED_META = "selection/selected.json"
REPORT_METRICS = "report/metrics.json"
DIAGNOSTICS_REPORT = "diagnostics/report.json"
ACCEPTANCE = "acceptance.json"

ABLATIONS = ("n_kd", "transition")
CURVE_COLUMNS = ("step", "omega", "probe_accuracy", "batch_accuracy", "loss_standard",
                 "held_out_accuracy", "held_out_log_perplexity")


def checkpoint_name(label: str, tag: str = "") -> str:
    return f"checkpoints/{label}_{tag}.saltckpt" if tag else f"checkpoints/{label}.saltckpt"


def metrics_name(label: str) -> str:
    return f"metrics/{label}.jsonl"


def _csv(header, rows, comment: str = "") -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(["" if v is None else v for v in row])
    return comment + out.getvalue()


class Experiment:
    """
    One experiment run: an ExperimentConfig bound to the ArtifactStore of its run
    directory.  Commands read their prerequisites from the store and fail with
    MissingArtifactError (carrying the expected location) when one is absent.
    """

    def __init__(self, config: ExperimentConfig, store: ArtifactStore, sink_kind: str | None = None):
        self.config = config
        self.store = store
        self._sink_kind = sink_kind
        self.config_hash = config.config_hash()

    # -- provenance and artifact helpers ------------------------------------------

    def _provenance(self, **extra) -> dict:
        return {"config_hash": self.config_hash, **extra}

    def _comment(self, **extra) -> str:
        fields = self._provenance(**extra)
        return "# " + " ".join(f"{k}={fields[k]}" for k in sorted(fields)) + "\n"

    def _require(self, name: str, hint: str) -> bytes:
        if not self.store.exists(name):
            raise MissingArtifactError(self.store.location(name), hint)
        return self.store.read_bytes(name)

    def corpus(self, name: str = CORPUS_TRAIN) -> Corpus:
        return decode_corpus(self._require(name, "run gen-data first"), artifact=name)

    def save_checkpoint(self, name: str, model: LmModel, **meta) -> str:
        return self.store.write_bytes(name, encode_checkpoint(model, self._provenance(**meta)))

    def load_checkpoint(self, name: str, hint: str = "") -> tuple[LmModel, dict]:
        return decode_checkpoint(self._require(name, hint))

    @cached_property
    def source(self) -> GroundTruthSource | None:
        """The synthetic source rebuilt from the config; None for text corpora."""
        s = self.config.source
        if s.kind == "text":
            return None
        return create_source(s.kind, s.vocab_size, s.order, s.concentration, Rng(self.config.seed_for("source")))

    # -- gen-data -----------------------------------------------------------------

    def gen_data(self) -> dict:
        """Write the train and held-out SALTCORP files plus corpus/manifest.json."""
        cfg = self.config
        c = cfg.corpus
        source = self.source
        if source is None:
            text = ingest_text(cfg.source.text_path, c.seq_len)
            need = c.n_train + c.n_held_out
            if text.n_sequences < need:
                raise CapacityError(
                    f"{cfg.source.text_path} yields {text.n_sequences} sequences of length {c.seq_len}; "
                    f"need n_train + n_held_out = {need}"
                )
            source_id = f"text({cfg.source.text_path})"
            train_corpus = text.subset(np.arange(c.n_train), source=source_id, stream="text[:n_train]")
            held_out = text.subset(np.arange(c.n_train, need), source=source_id, stream="text[n_train:]")
        else:
            source_id = source.source_id
            train_corpus, held_out = (
                Corpus(source.sample(n, c.seq_len, Rng(cfg.seed_for(label))), source.vocab_size,
                       {"source": source_id, "stream": label})
                for n, label in ((c.n_train, "corpus/train"), (c.n_held_out, "corpus/held_out"))
            )

        self.store.write_bytes(CORPUS_TRAIN, encode_corpus(train_corpus))
        self.store.write_bytes(CORPUS_HELD_OUT, encode_corpus(held_out))
        manifest = self._provenance(
            format="SALTCORP v1",
            source_kind=cfg.source.kind,
            source_id=source_id,
            V=train_corpus.vocab_size,
            N=train_corpus.n_sequences,
            N_held_out=held_out.n_sequences,
            T=c.seq_len,
            order=None if source is None else source.order,
            concentration=cfg.source.concentration if cfg.source.kind == "markov" else None,
            seed=cfg.seed,
            streams={label: cfg.seed_for(label) for label in ("source", "corpus/train", "corpus/held_out")},
            train_hash=train_corpus.content_hash(),
            held_out_hash=held_out.content_hash(),
        )
        self.store.write_text(MANIFEST, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        log.info("gen-data source=%s N=%d held_out=%d T=%d train_hash=%s",
                 source_id, train_corpus.n_sequences, held_out.n_sequences, c.seq_len, manifest["train_hash"][:12])
        return manifest

    def manifest(self) -> dict:
        return json.loads(self._require(MANIFEST, "run gen-data first").decode("utf-8"))

    # -- train --------------------------------------------------------------------

    def required_m(self, plan: TrainPlan) -> int:
        """Smallest selected subset that covers the KD phase in kd_epochs_allowed epochs."""
        return math.ceil(plan.kd_steps * plan.batch_size / self.config.selection.kd_epochs_allowed)

    def _kd_end(self, role: str, plan: TrainPlan) -> int:
        # Every LLM role is checkpointed at the step SALT leaves its KD phase so the
        # roles can be compared there.
        return plan.kd_steps if role in ("salt", "salt_ds") else self.config.plan("salt").kd_steps

    def train(self, role: str, plan: TrainPlan | None = None, label: str | None = None) -> TrainResult:
        """
        Train one role and write checkpoints/<label>.saltckpt and metrics/<label>.jsonl.

        `plan` and `label` let ablations run a modified SALT plan under their own names.
        """
        cfg = self.config
        if role not in ROLES:
            raise ConfigError(f"unknown role {role!r}; expected one of {ROLES}")
        label = label or role
        plan = plan or cfg.plan(role)
        if role == "baseline" and plan.omega > 0.0:
            raise ConfigError(f"role baseline trains without distillation; got omega={plan.omega}")

        train_corpus = self.corpus(CORPUS_TRAIN)
        held_out = self.corpus(CORPUS_HELD_OUT)

        named_steps: dict[int, str] = {}
        if role == "slm":
            n0 = max(1, round(cfg.selection.n0_fraction * plan.n_steps))
            named_steps[n0] = checkpoint_name("slm", "n0")
        else:
            kd_end = self._kd_end(role, plan)
            if 0 < kd_end < plan.n_steps:
                named_steps[kd_end] = checkpoint_name(label, "kd_end")

        teacher = None
        if plan.uses_teacher:
            slm, _ = self.load_checkpoint(checkpoint_name("slm"), "train the slm role first")
            teacher = TransformerModel(slm, model_id=checkpoint_name("slm"))

        kd_corpus = None
        if role == "salt_ds":
            self._require(SCORES, "run score first")
            kd_corpus = decode_corpus(self._require(SELECTED, "run select first"), artifact=SELECTED)
            required = self.required_m(plan)
            if kd_corpus.n_sequences < required:
                raise CapacityError(
                    f"salt_ds needs m >= ceil(kd_steps * B / epochs) = ceil({plan.kd_steps} * {plan.batch_size}"
                    f" / {cfg.selection.kd_epochs_allowed}) = {required}; selected subset has "
                    f"{kd_corpus.n_sequences}"
                )

        plan = dataclasses.replace(plan, checkpoint_steps=tuple(sorted(named_steps)))
        train_hash = train_corpus.content_hash()

        def checkpointer(tag: str, step: int, model: LmModel) -> str:
            if tag == "last_good":
                name = checkpoint_name(label, "last_good")
            else:
                name = named_steps.get(step) or checkpoint_name(label, f"step{step}")
            return self.save_checkpoint(name, model, role=role, label=label, step=step, kind=tag,
                                        corpus_hash=train_hash)

        sink = create_metrics_sink(self.store, metrics_name(label), self._sink_kind, cfg.record_timing)
        sink.write({"event": "provenance", **self._provenance(
            role=role,
            label=label,
            mode=plan.mode,
            corpus_hash=train_hash,
            held_out_hash=held_out.content_hash(),
            kd_corpus_hash=kd_corpus.content_hash() if kd_corpus else None,
            teacher=teacher.model_id if teacher else None,
        )})
        try:
            result = train(plan, train_corpus, cfg.lm_config(role), teacher,
                           kd_corpus=kd_corpus, held_out=held_out, sink=sink, checkpointer=checkpointer)
        finally:
            sink.close()

        location = self.save_checkpoint(checkpoint_name(label), result.model, role=role, label=label,
                                        step=plan.n_steps, kind="final", corpus_hash=train_hash)
        log.info("train role=%s label=%s checkpoint=%s", role, label, location)
        return result

    # -- score / select -----------------------------------------------------------

    def score(self) -> list[SelectionRecord]:
        """Score every training sequence with the (early) SLM checkpoint; writes selection/scores.csv."""
        s = self.config.selection
        name = checkpoint_name("slm", "n0") if s.use_early_checkpoint else checkpoint_name("slm")
        model, meta = self.load_checkpoint(name, "train the slm role first")
        teacher = TransformerModel(model, model_id=f"{name}@{meta.get('step')}")
        corpus = self.corpus(CORPUS_TRAIN)
        records = score_corpus(teacher, corpus, s.k, s.mask_mode)
        comment = self._comment(corpus_hash=corpus.content_hash(), teacher_ckpt=teacher.model_id,
                                k=s.k, mask_mode=s.mask_mode)
        self.store.write_text(SCORES, comment + records_csv(records))
        return records

    def select(self, m: int | None = None) -> Corpus:
        """
        Keep the top-m scored sequences, highest score first; writes selection/selected.saltcorp.

        m defaults to selection.m, then to the smallest m salt_ds can train with.
        """
        cfg = self.config
        records = parse_records_csv(self._require(SCORES, "run score first").decode("utf-8"))
        if m is None:
            m = cfg.selection.m if cfg.selection.m is not None else self.required_m(cfg.plan("salt_ds"))
        if m < 1:
            raise CapacityError(f"select needs m >= 1, got {m}")
        indices = select_top_m(records, m)
        corpus = self.corpus(CORPUS_TRAIN)
        selected = corpus.subset(indices, selection=f"top_{m}")
        self.store.write_bytes(SELECTED, encode_corpus(selected))
        meta = self._provenance(
            m=m,
            indices=indices,
            teacher_ckpt=records[0].teacher_ckpt if records else None,
            corpus_hash=corpus.content_hash(),
            selected_hash=selected.content_hash(),
        )
        self.store.write_text(SELECTED_META, json.dumps(meta, sort_keys=True) + "\n")
        log.info("select m=%d of %d teacher=%s", m, corpus.n_sequences, meta["teacher_ckpt"])
        return selected

    # -- eval / report ------------------------------------------------------------

    def _checkpoints(self) -> list[tuple[str, str]]:
        """(label, artifact name) for every role checkpoint present, final then kd_end / n0."""
        found = []
        for role in ROLES:
            for tag in ("", "n0" if role == "slm" else "kd_end"):
                name = checkpoint_name(role, tag)
                if self.store.exists(name):
                    found.append((f"{role}_{tag}" if tag else role, name))
        return found

    def evaluate(self) -> dict:
        """
        Held-out metrics and per-bucket metrics of every trained role.  Buckets are
        tertiles of the held-out corpus ranked by the final SLM's per-sequence CE.
        """
        held_out = self.corpus(CORPUS_HELD_OUT)
        held_out_hash = held_out.content_hash()
        slm, _ = self.load_checkpoint(checkpoint_name("slm"), "train the slm role first")
        buckets = bucket_partition(TransformerModel(slm, model_id="slm"), held_out)

        models = {}
        comparison, bucket_rows = [], []
        for label, name in self._checkpoints():
            params, meta = self.load_checkpoint(name)
            model = TransformerModel(params, model_id=label)
            overall = held_out_metrics(model, held_out)
            per_bucket = per_bucket_metrics(model, held_out, buckets)
            models[label] = {
                "step": meta.get("step"),
                "held_out": overall.to_dict(),
                "buckets": {b: (m.to_dict() if m else None) for b, m in per_bucket.items()},
            }
            comparison.append([label, meta.get("step"), repr(overall.accuracy), repr(overall.log_perplexity),
                               overall.n_tokens, held_out_hash])
            for b in BUCKETS:
                m = per_bucket[b]
                bucket_rows.append([label, b, repr(m.accuracy) if m else None,
                                    repr(m.log_perplexity) if m else None, m.n_tokens if m else 0])
            log.info("eval model=%s acc=%.4f log_ppl=%.4f", label, overall.accuracy, overall.log_perplexity)

        comment = self._comment(corpus_hash=held_out_hash, bucket_teacher="slm")
        self.store.write_text("report/buckets.csv", comment + buckets_csv(buckets))
        self.store.write_text("report/bucket_metrics.csv", _csv(
            ["model", "bucket", "accuracy", "log_perplexity", "n_tokens"], bucket_rows, comment))
        self.store.write_text("report/comparison.csv", _csv(
            ["model", "step", "accuracy", "log_perplexity", "n_tokens", "corpus_hash"], comparison, comment))
        summary = self._provenance(corpus_hash=held_out_hash, bucket_sizes=buckets.sizes(), models=models)
        self.store.write_text(REPORT_METRICS, json.dumps(summary, indent=2, sort_keys=True) + "\n")
        return summary

    def report(self) -> dict:
        """evaluate() plus one step-vs-accuracy curve CSV per trained role."""
        summary = self.evaluate()
        for role in ROLES:
            name = metrics_name(role)
            if not self.store.exists(name):
                continue
            records = read_jsonl(self.store, name)
            provenance = next((r for r in records if r.get("event") == "provenance"), {})
            metrics = MetricsLog.from_records(records)
            rows = [[getattr(r, column) for column in CURVE_COLUMNS] for r in metrics.records]
            comment = self._comment(corpus_hash=provenance.get("corpus_hash"), role=role)
            self.store.write_text(f"report/{role}_curve.csv", _csv(CURVE_COLUMNS, rows, comment))
        return summary

    def train_accuracy(self, label: str, plan: TrainPlan) -> float:
        """Next-token accuracy of a stored checkpoint on the trainer's probe subset for `plan`."""
        params, _ = self.load_checkpoint(checkpoint_name(label))
        corpus = self.corpus(CORPUS_TRAIN)
        probe = corpus.tokens[probe_indices(plan, corpus.n_sequences)]
        return next_token_accuracy(TransformerModel(params, model_id=label), probe)

    # -- diagnose -----------------------------------------------------------------

    def diagnose(self) -> DiagnosticsReport:
        cfg = self.config
        d = cfg.diagnostics
        source = self.source
        if source is None:
            raise ConfigError("diagnose needs a synthetic source with exact conditionals; source.kind=text has none")

        params, _ = self.load_checkpoint(checkpoint_name(d.student), f"train the {d.student} role first")
        student = TransformerModel(params, floor=d.floor, model_id=d.student)
        if d.oracle_teacher:
            teacher = SourceAsModel(source, model_id="source")
        else:
            params, _ = self.load_checkpoint(checkpoint_name(d.teacher), f"train the {d.teacher} role first")
            teacher = TransformerModel(params, model_id=d.teacher)

        settings = DiagnosticsSettings(
            omega=cfg.distill.omega if d.omega is None else d.omega,
            rho=cfg.distill.rho if d.rho is None else d.rho,
            floor=d.floor,
            delta=d.delta,
            log_card=d.log_card,
            omega_grid=d.omega_grid,
            n_prefixes=d.n_prefixes,
            mc_samples=d.mc_samples,
            seed=cfg.seed_for("diagnostics"),
        )
        corpus = self.corpus(CORPUS_TRAIN)
        report = build_report(student, teacher, source, corpus, settings)
        corpus_hash = corpus.content_hash()
        self.store.write_text(DIAGNOSTICS_REPORT,
                              report.to_json(config_hash=self.config_hash, corpus_hash=corpus_hash) + "\n")
        self.store.write_text("diagnostics/omega_sweep.csv",
                              self._comment(corpus_hash=corpus_hash) + report.sweep_csv())
        return report

    # -- ablate -------------------------------------------------------------------

    def ablate(self, kind: str, values) -> list[dict]:
        """
        Train SALT once per value and write ablation/<kind>.csv.

        kind="n_kd" sweeps the transition point (0 trains like baseline, n like RKD);
        kind="transition" sweeps the omega schedule, filling n1/n2 from distill or
        from (n_kd // 2, n_kd) when unset.
        """
        if kind not in ABLATIONS:
            raise ValueError(f"Unknown ablation: {kind!r}")
        d = self.config.distill
        base = self.config.plan("salt")
        rows = []
        for value in values:
            if kind == "n_kd":
                value = int(value)
                plan = dataclasses.replace(base, n_kd=value, transition=Transition("step"))
            elif value == "step":
                plan = dataclasses.replace(base, transition=Transition("step"))
            else:
                n1 = d.n1 if d.n1 is not None else d.n_kd // 2
                n2 = d.n2 if d.n2 is not None else d.n_kd
                plan = dataclasses.replace(base, transition=Transition(value, n1, n2))
            label = f"ablation/{kind}_{value}"
            result = self.train("salt", plan=plan, label=label)
            kd_steps = plan.kd_steps
            final = result.log.records[-1]
            at_kd_end = result.log.at(kd_steps) if kd_steps else None
            rows.append({
                "value": value,
                "kd_steps": kd_steps,
                "omega_first": omega_at_step(plan, 1),
                "omega_mid_kd": omega_at_step(plan, max(1, kd_steps // 2)),
                "probe_accuracy_kd_end": at_kd_end.probe_accuracy if at_kd_end else None,
                "probe_accuracy_final": final.probe_accuracy,
                "held_out_accuracy": final.held_out_accuracy,
                "held_out_log_perplexity": final.held_out_log_perplexity,
                "teacher_forwards": result.teacher_forwards,
            })
        header = list(rows[0]) if rows else ["value"]
        self.store.write_text(f"ablation/{kind}.csv", _csv(
            header, [[row[k] for k in header] for row in rows],
            self._comment(corpus_hash=self.corpus(CORPUS_TRAIN).content_hash(), kind=kind)))
        return rows


def acceptance(config: ExperimentConfig, seeds, make_store: Callable[[str], ArtifactStore],
               sink_kind: str | None = None) -> dict:
    """
    The full recipe once per master seed (run "seed<s>"), then the directional
    checks averaged over seeds, written to acceptance.json in run "acceptance".
    """
    kd_end = config.plan("salt").kd_steps
    per_seed = []
    for seed in seeds:
        cfg = dataclasses.replace(config, seed=int(seed))
        exp = Experiment(cfg, make_store(f"seed{seed}"), sink_kind)
        exp.gen_data()
        exp.train("slm")
        exp.score()
        exp.select()
        results = {role: exp.train(role) for role in LLM_ROLES}
        summary = exp.report()
        exp.diagnose()

        row = {"seed": int(seed)}
        for role, result in results.items():
            final = result.log.last_held_out()
            row[f"{role}_held_out_log_perplexity"] = final.held_out_log_perplexity
            row[f"{role}_held_out_accuracy"] = final.held_out_accuracy
        if 0 < kd_end < cfg.llm_train.n_steps:
            for role in LLM_ROLES:
                label = f"{role}_kd_end"
                row[f"{role}_train_accuracy_kd_end"] = exp.train_accuracy(label, cfg.plan(role))
                easy = summary["models"][label]["buckets"]["easy"]
                row[f"{role}_easy_accuracy_kd_end"] = easy["accuracy"] if easy else None
        per_seed.append(row)
        log.info("acceptance seed=%s done", seed)

    def mean(key: str) -> float | None:
        values = [r[key] for r in per_seed if r.get(key) is not None]
        return float(np.mean(values)) if values else None

    means = {key: mean(key) for key in per_seed[0] if key != "seed"} if per_seed else {}

    def at_most(a: str, b: str) -> bool | None:
        return None if means.get(a) is None or means.get(b) is None else means[a] <= means[b]

    checks = {
        "salt_log_perplexity_le_baseline": at_most("salt_held_out_log_perplexity",
                                                   "baseline_held_out_log_perplexity"),
        "rkd_log_perplexity_gt_baseline": (None if means.get("rkd_held_out_log_perplexity") is None
                                           else not at_most("rkd_held_out_log_perplexity",
                                                            "baseline_held_out_log_perplexity")),
        "salt_train_accuracy_kd_end_ge_baseline": at_most("baseline_train_accuracy_kd_end",
                                                          "salt_train_accuracy_kd_end"),
        "rkd_train_accuracy_kd_end_ge_baseline": at_most("baseline_train_accuracy_kd_end",
                                                         "rkd_train_accuracy_kd_end"),
        "salt_easy_accuracy_kd_end_ge_baseline": at_most("baseline_easy_accuracy_kd_end",
                                                         "salt_easy_accuracy_kd_end"),
    }
    result = {
        "config_hash": config.config_hash(),
        "seeds": [int(s) for s in seeds],
        "kd_end": kd_end,
        "per_seed": per_seed,
        "means": means,
        "checks": checks,
    }
    make_store("acceptance").write_text(ACCEPTANCE, json.dumps(result, indent=2, sort_keys=True) + "\n")
    log.info("acceptance checks=%s", checks)
    return result
