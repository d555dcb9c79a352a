"""
DiagnosticsReport: every theory quantity for one student/teacher/source triple.

Exact modes are used wherever the enumeration cap allows.  When it does not,
the quantity is recomputed by Monte Carlo and its name is listed under
"substitutions" so no reader mistakes an estimate for an exact value.
"""

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field


from src.adapters.source_model import SourceAsModel
from src.domain.errors import CapacityError
from src.domain.model import NextTokenModel
from src.domain.source import Corpus, GroundTruthSource
from src.lm.distributions import max_token_loss
from src.numcore.rng import Rng

from .bounds import population_risk, risk_bound, risk_gap_check, variance_bound_block
from .calibration import excess01_bound, zero_one_risk
from .divergence import div_term
from .enumeration import Objective
from .martingale import martingale_constants, martingale_constants_mc, variance_reduction_check

log = logging.getLogger(__name__)

REPORT_KEYS = (
    "settings", "div_term", "V_N", "variance_bound", "per_t", "risk_bound", "risk_gap",
    "variance_identity", "zero_one_risk", "bayes_zero_one_risk", "excess_ce",
    "excess01_bound", "excess01_realized", "omega_sweep", "substitutions", "notes",
)

VARIANCE_FACTOR_NOTE = (
    "conditional second moment of xi_T scales with (1 - omega)^2; the single_factor "
    "column uses one (1 - omega) factor for comparison"
)


@dataclass
class DiagnosticsSettings:
    omega: float
    rho: float
    floor: float = 1e-4
    delta: float = 0.1
    log_card: float = 0.0
    omega_grid: tuple[float, ...] = (0.0, 0.25, 0.5, 0.75, 1.0)
    n_prefixes: int = 32
    mc_samples: int = 4096
    seed: int = 0


@dataclass
class DiagnosticsReport:
    settings: dict
    div_term: dict
    V_N: float
    variance_bound: dict
    per_t: list[dict]
    risk_bound: dict
    risk_gap: dict
    variance_identity: dict
    zero_one_risk: dict
    bayes_zero_one_risk: dict
    excess_ce: float
    excess01_bound: float
    excess01_realized: float
    omega_sweep: list[dict] = field(default_factory=list)
    substitutions: list[str] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, **extra) -> str:
        return json.dumps({**extra, **self.to_dict()}, indent=2, sort_keys=True)

    def sweep_csv(self) -> str:
        out = io.StringIO()
        columns = ["omega", "div_term", "risk_gap_lhs", "risk_gap_rhs", "second_moment", "reference", "ratio_to_variance"]
        writer = csv.DictWriter(out, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
        writer.writeheader()
        for row in self.omega_sweep:
            writer.writerow(row)
        return out.getvalue()


def _exact_or_mc(name: str, substitutions: list[str], exact, mc):
    try:
        return exact()
    except CapacityError as exc:
        log.warning("%s: %s; using Monte Carlo instead", name, exc)
        substitutions.append(name)
        return mc()


def build_report(
    student: NextTokenModel,
    teacher: NextTokenModel | None,
    source: GroundTruthSource,
    train_corpus: Corpus,
    settings: DiagnosticsSettings,
) -> DiagnosticsReport:
    """
    `student` must already carry the probability floor settings.floor; M is log(V / floor).
    """
    length = train_corpus.seq_len
    vocab = source.vocab_size
    rng = Rng(settings.seed)
    m = max_token_loss(vocab, settings.floor)
    n = settings.mc_samples
    subs: list[str] = []
    objective = Objective(student, teacher if settings.omega > 0 else None, settings.omega, settings.rho)

    div = _exact_or_mc(
        "div_term", subs,
        lambda: div_term(teacher, source, settings.omega, settings.rho, length, "exact"),
        lambda: div_term(teacher, source, settings.omega, settings.rho, length, "mc", n, rng.derive("div")),
    )

    losses = objective.sequence_loss(train_corpus.tokens)
    variance_bound = variance_bound_block(losses)

    per_t = _exact_or_mc(
        "martingale_constants", subs,
        lambda: martingale_constants(objective, source, length, settings.n_prefixes, rng.derive("martingale")),
        lambda: martingale_constants_mc(objective, source, length, settings.n_prefixes, 256, rng.derive("martingale")),
    )
    bound = risk_bound(
        r_n_omega=variance_bound["empirical_risk"],
        v_t=[c.v_t for c in per_t],
        c=max(c.c_t for c in per_t),
        m=m,
        omega=settings.omega,
        div_term=div.value,
        n=train_corpus.n_sequences,
        log_card=settings.log_card,
        delta=settings.delta,
        length=length,
    )

    def gap_at(omega: float):
        return _exact_or_mc(
            f"risk_gap(omega={omega:g})", subs,
            lambda: risk_gap_check(student, teacher, source, omega, settings.rho, m, length),
            lambda: risk_gap_check(student, teacher, source, omega, settings.rho, m, length, "mc", n,
                                   rng.derive(f"gap/{omega}")),
        )

    gap = gap_at(settings.omega)

    prefixes = source.sample(settings.n_prefixes, length, rng.derive("variance"))[:, :length - 1]
    variance = variance_reduction_check(student, teacher, source, settings.rho, settings.omega_grid, prefixes, length)

    risk01 = _exact_or_mc(
        "zero_one_risk", subs,
        lambda: zero_one_risk(student, source, length, "exact"),
        lambda: zero_one_risk(student, source, length, "mc", n, rng.derive("zero_one")),
    )
    bayes = SourceAsModel(source)
    bayes01 = _exact_or_mc(
        "bayes_zero_one_risk", subs,
        lambda: zero_one_risk(bayes, source, length, "exact"),
        lambda: zero_one_risk(bayes, source, length, "mc", n, rng.derive("zero_one")),
    )
    student_risk = _exact_or_mc(
        "population_risk", subs,
        lambda: population_risk(Objective(student), source, length, "exact"),
        lambda: population_risk(Objective(student), source, length, "mc", n, rng.derive("risk")),
    )
    entropy = _exact_or_mc(
        "population_entropy", subs,
        lambda: population_risk(Objective(bayes), source, length, "exact"),
        lambda: population_risk(Objective(bayes), source, length, "mc", n, rng.derive("risk")),
    )
    excess_ce = student_risk.value - entropy.value

    sweep = []
    by_omega = {row.omega: row for row in variance.rows}
    for omega in sorted(settings.omega_grid):
        d = _exact_or_mc(
            f"div_term(omega={omega:g})", subs,
            lambda: div_term(teacher, source, omega, settings.rho, length, "exact"),
            lambda: div_term(teacher, source, omega, settings.rho, length, "mc", n, rng.derive("div")),
        )
        g = gap_at(omega)
        v = by_omega[float(omega)]
        sweep.append({
            "omega": float(omega),
            "div_term": d.value,
            "risk_gap_lhs": g.lhs,
            "risk_gap_rhs": g.rhs,
            "second_moment": v.second_moment,
            "reference": v.reference,
            "ratio_to_variance": v.ratio_to_variance,
        })

    report = DiagnosticsReport(
        settings={**asdict(settings), "M": m, "T": length, "V": vocab, "N": train_corpus.n_sequences,
                  "student": student.model_id, "teacher": teacher.model_id if teacher else None,
                  "source": source.source_id},
        div_term=div.to_dict(),
        V_N=variance_bound["V_N"],
        variance_bound=variance_bound,
        per_t=[c.to_dict() for c in per_t],
        risk_bound=bound.to_dict(),
        risk_gap=gap.to_dict(),
        variance_identity=variance.to_dict(),
        zero_one_risk=risk01.to_dict(),
        bayes_zero_one_risk=bayes01.to_dict(),
        excess_ce=float(excess_ce),
        excess01_bound=excess01_bound(excess_ce),
        excess01_realized=float(risk01.value - bayes01.value),
        omega_sweep=sweep,
        substitutions=subs,
        notes=[VARIANCE_FACTOR_NOTE],
    )
    log.info(
        "diagnostics div=%.4g V_N=%.4g bound=%.4g gap_holds=%s zero_one=%.4f substitutions=%d",
        div.value, report.V_N, bound.value, gap.holds, risk01.value, len(subs),
    )
    return report

