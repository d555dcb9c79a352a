"""
The assembled diagnostics report, exact and with Monte-Carlo substitutes.
"""

import json

import numpy as np
import pytest

from src.adapters.markov_source import make_markov_source
from src.adapters.source_model import SourceAsModel
from src.diagnostics import enumeration
from src.diagnostics.report import REPORT_KEYS, DiagnosticsSettings, build_report
from src.domain.source import Corpus
from src.numcore.rng import Rng

FLOOR = 1e-4


@pytest.fixture
def parts():
    source = make_markov_source(1, 3, 1.0, 0)
    student = SourceAsModel(make_markov_source(1, 3, 1.0, 1), floor=FLOOR, model_id="salt")
    teacher = SourceAsModel(make_markov_source(1, 3, 1.0, 2), floor=FLOOR, model_id="slm")
    corpus = Corpus(source.sample(20, 3, Rng(3)), 3)
    settings = DiagnosticsSettings(omega=0.5, rho=0.25, floor=FLOOR, omega_grid=(0.0, 0.5, 1.0),
                                   n_prefixes=4, mc_samples=512, seed=0)
    return source, student, teacher, corpus, settings


def test_exact_report_has_every_key(parts):
    report = build_report(*_ordered(parts))
    d = report.to_dict()
    assert set(d) == set(REPORT_KEYS)
    assert report.substitutions == []
    assert d["settings"]["T"] == 3 and d["settings"]["M"] == pytest.approx(np.log(3 / FLOOR))
    assert d["variance_bound"]["growth_term"] == "M(N)"
    assert d["risk_gap"]["holds"]
    assert d["variance_identity"]["all_agree"]
    assert [row["omega"] for row in d["omega_sweep"]] == [0.0, 0.5, 1.0]
    assert len(d["per_t"]) == 3
    assert 0.0 <= d["excess01_bound"] <= 1.0


def test_length_one_report(parts):
    student, teacher, source, _, settings = _ordered(parts)
    corpus = Corpus(source.sample(20, 1, Rng(3)), 3)
    d = build_report(student, teacher, source, corpus, settings).to_dict()
    assert set(d) == set(REPORT_KEYS)
    assert d["settings"]["T"] == 1 and len(d["per_t"]) == 1
    assert d["variance_identity"]["all_agree"]


def test_report_is_deterministic(parts):
    a = build_report(*_ordered(parts)).to_json()
    b = build_report(*_ordered(parts)).to_json()
    assert a == b


def test_report_json_carries_extra_keys(parts):
    text = build_report(*_ordered(parts)).to_json(config_hash="abc")
    assert json.loads(text)["config_hash"] == "abc"


def test_sweep_csv_header(parts):
    csv_text = build_report(*_ordered(parts)).sweep_csv()
    lines = csv_text.splitlines()
    assert lines[0] == "omega,div_term,risk_gap_lhs,risk_gap_rhs,second_moment,reference,ratio_to_variance"
    assert len(lines) == 4


def test_over_cap_quantities_fall_back_to_monte_carlo(parts, monkeypatch):
    monkeypatch.setattr(enumeration, "ENUMERATION_CAP", 8)
    report = build_report(*_ordered(parts))
    for name in ("div_term", "martingale_constants", "risk_gap(omega=0.5)", "zero_one_risk", "population_risk"):
        assert name in report.substitutions
    assert report.div_term["mode"] == "mc"
    assert report.zero_one_risk["mode"] == "mc"


def _ordered(parts):
    source, student, teacher, corpus, settings = parts
    return student, teacher, source, corpus, settings
