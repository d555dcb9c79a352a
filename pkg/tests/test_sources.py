"""
Ground-truth sources: contract runs plus Markov-specific behaviour.
"""

import numpy as np
import pytest

from src.adapters.factory import create_source
from src.adapters.markov_source import MarkovSource, cycle_source, make_markov_source
from src.domain.errors import ConfigError
from src.numcore.rng import Rng
from tests.contracts.ground_truth_source_contract import GroundTruthSourceContract


class TestFirstOrderMarkov(GroundTruthSourceContract):

    def create_source(self):
        return make_markov_source(order=1, vocab_size=4, concentration=1.0, seed=0)


class TestSecondOrderMarkov(GroundTruthSourceContract):

    def create_source(self):
        return make_markov_source(order=2, vocab_size=3, concentration=0.5, seed=1)


class TestCycleSource(GroundTruthSourceContract):

    def create_source(self):
        return cycle_source(5)


# -- Markov specifics ----------------------------------------------------------


def test_table_is_seeded():
    a = make_markov_source(1, 6, 1.0, 7)
    b = make_markov_source(1, 6, 1.0, 7)
    c = make_markov_source(1, 6, 1.0, 8)
    np.testing.assert_array_equal(a.table, b.table)
    assert not np.array_equal(a.table, c.table)
    assert a.source_id == b.source_id != c.source_id


def test_context_index_uses_oldest_token_most_significant():
    src = make_markov_source(2, 3, 1.0, 2)
    np.testing.assert_array_equal(src.true_conditional([0, 2, 1]), src.table[2 * 3 + 1])


def test_short_prefix_uses_initial_distribution():
    src = make_markov_source(2, 3, 1.0, 2)
    np.testing.assert_array_equal(src.true_conditional([1]), src.initial)
    np.testing.assert_array_equal(src.conditional_table([[0, 1, 2]])[0, :2], np.stack([src.initial] * 2))


def test_order_zero_is_iid():
    src = make_markov_source(0, 4, 1.0, 3)
    np.testing.assert_array_equal(src.true_conditional([3, 1]), src.table[0])


def test_sample_frequencies_follow_the_table():
    table = np.array([[0.9, 0.1], [0.2, 0.8]])
    src = MarkovSource(table, np.array([0.5, 0.5]), 1)
    seqs = src.sample(2000, 20, Rng(11))
    prev, nxt = seqs[:, :-1].ravel(), seqs[:, 1:].ravel()
    for v in range(2):
        freq = np.mean(nxt[prev == v] == 1)
        assert freq == pytest.approx(table[v, 1], abs=0.02)


def test_sequence_is_regenerable_from_its_own_stream():
    src = make_markov_source(1, 5, 1.0, 4)
    rng = Rng(9)
    full = src.sample(6, 8, rng)
    # sample(1, ...) uses stream seq/0 only; reproduce row 0 directly
    np.testing.assert_array_equal(full[0], src.sample(1, 8, rng)[0])


def test_cycle_source_is_deterministic_after_the_first_token():
    seqs = cycle_source(5).sample(10, 7, Rng(0))
    np.testing.assert_array_equal(np.diff(seqs, axis=1) % 5, 1)


@pytest.mark.parametrize("table,initial", [
    (np.array([[0.5, 0.6], [0.5, 0.5]]), np.array([0.5, 0.5])),
    (np.array([[1.5, -0.5], [0.5, 0.5]]), np.array([0.5, 0.5])),
    (np.array([[0.5, 0.5]]), np.array([0.5, 0.5])),
    (np.array([[0.5, 0.5], [0.5, 0.5]]), np.array([0.7, 0.7])),
])
def test_malformed_tables_are_rejected(table, initial):
    with pytest.raises(ConfigError):
        MarkovSource(table, initial, 1)


@pytest.mark.parametrize("kw", [
    dict(order=4, vocab_size=3, concentration=1.0),
    dict(order=1, vocab_size=1, concentration=1.0),
    dict(order=1, vocab_size=3, concentration=0.0),
    dict(order=3, vocab_size=300, concentration=1.0),
])
def test_make_markov_source_validates(kw):
    with pytest.raises(ConfigError):
        make_markov_source(seed=0, **kw)


def test_prefix_out_of_range_is_rejected():
    with pytest.raises(ValueError):
        cycle_source(3).true_conditional([0, 3])


def test_sample_rejects_empty_requests():
    with pytest.raises(ValueError):
        cycle_source(3).sample(0, 4, Rng(0))


def test_factory_builds_sources_by_kind():
    assert create_source("cycle", 4).source_id == "cycle(V=4)"
    assert create_source("markov", 4, order=2, seed=1).order == 2
    with pytest.raises(ValueError, match="Unknown source kind"):
        create_source("zipf", 4)
