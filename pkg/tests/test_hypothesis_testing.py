import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eht_lab.game_core import Game
from eht_lab.hypothesis_testing import (
    SampleSizeCapped,
    TestConfig,
    TestsNeverNeeded,
    empirical_counts,
    empirical_distribution,
    estimate_error_rates,
    rejection_threshold,
    run_test,
    sample_size_for_gap,
    sample_size_report,
)

STAG = Game.from_profile_table([[[4, 4], [0, 3]], [[3, 0], [3, 3]]])


def test_config_validation():
    with pytest.raises(ValueError):
        TestConfig(0.0, 0.05, 10)
    with pytest.raises(ValueError):
        TestConfig(0.1, 1.0, 10)
    with pytest.raises(ValueError):
        TestConfig(0.1, 0.05, 0)


def test_threshold_monotonicity():
    base = rejection_threshold(TestConfig(0.1, 0.05, 100), 4)
    assert rejection_threshold(TestConfig(0.1, 0.05, 200), 4) < base
    assert rejection_threshold(TestConfig(0.1, 0.05, 100), 9) > base
    assert rejection_threshold(TestConfig(0.1, 0.01, 100), 4) > base


def test_empirical_distribution_is_exact():
    d = empirical_distribution([0, 2, 2, 1, 2], 4)
    assert d.tolist() == [1 / 5, 1 / 5, 3 / 5, 0.0]
    assert d.sum() == 1.0
    with pytest.raises(ValueError):
        empirical_counts([0, 4], 4)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=1, max_size=60), st.randoms(use_true_random=False))
def test_decision_ignores_sample_order(samples, rnd):
    cfg = TestConfig(0.2, 0.05, len(samples))
    belief = np.array([0.4, 0.3, 0.2, 0.1])
    shuffled = list(samples)
    rnd.shuffle(shuffled)
    a, b = run_test(belief, samples, cfg), run_test(belief, shuffled, cfg)
    assert a.rejected == b.rejected
    assert math.isclose(a.statistic, b.statistic, rel_tol=0, abs_tol=1e-15)


def test_equality_does_not_reject(monkeypatch):
    import eht_lab.hypothesis_testing as ht

    counts = np.array([2, 2])
    belief = np.array([1.0, 0.0])
    stat = float(np.linalg.norm(counts / 4 - belief))
    monkeypatch.setattr(ht, "rejection_threshold", lambda config, k: stat)
    out = ht.run_test(belief, None, TestConfig(0.1, 0.05, 4), counts=counts)
    assert out.statistic == out.threshold
    assert not out.rejected
    monkeypatch.setattr(ht, "rejection_threshold", lambda config, k: np.nextafter(stat, 0))
    assert ht.run_test(belief, None, TestConfig(0.1, 0.05, 4), counts=counts).rejected


def test_sample_size_for_gap_formula():
    assert sample_size_for_gap(0.1, 4, 0.05) == math.ceil(8 * math.log(40) / 0.01)
    cfg = TestConfig(0.1, 0.05, sample_size_for_gap(0.2, 4, 0.05))
    # the slack at T(gap) is half the gap
    assert rejection_threshold(cfg, 4) - 0.1 == pytest.approx(0.1, rel=1e-3)


def test_sample_size_report_stag_hunt():
    rep = sample_size_report(STAG, 4, 0.25, 0.1, 0.05)
    assert not rep.capped
    assert rep.min_gap > 0
    assert rep.sample_size == sample_size_for_gap(rep.min_gap, 2, 0.05)


def test_sample_size_capped_warns():
    with pytest.warns(SampleSizeCapped):
        rep = sample_size_report(STAG, 4, 0.25, 0.1, 1e-300, max_T=10)
    assert rep.capped and rep.sample_size == 10 and rep.uncapped > 10


def test_tests_never_needed():
    with pytest.raises(TestsNeverNeeded):
        sample_size_report(STAG, 2, 0.25, 2.0, 0.05)


def test_error_rates_at_exact_belief():
    b = np.array([0.25, 0.25, 0.5])
    cfg = TestConfig(0.1, 0.05, sample_size_for_gap(0.1, 3, 0.05))
    est = estimate_error_rates(b, b, cfg, 2000, seed=1)
    assert est.kind == "type1"
    assert est.rate <= 0.05 + est.halfwidth


def test_type2_at_double_tolerance():
    tau = 0.1
    b = np.array([0.5, 0.5])
    truth = b + np.array([1, -1]) * 2 * tau / math.sqrt(2)
    cfg = TestConfig(tau, 0.05, sample_size_for_gap(tau, 2, 0.05))
    est = estimate_error_rates(b, truth, cfg, 2000, seed=2)
    assert est.kind == "type2"
    assert est.distance == pytest.approx(2 * tau)
    assert est.rate <= 0.05 + est.halfwidth


def test_tiny_sample_fails_to_detect():
    # with T=1 the slack swamps any gap, so an inconsistent belief is almost never rejected
    b = np.array([0.5, 0.5])
    truth = np.array([0.7, 0.3])
    est = estimate_error_rates(b, truth, TestConfig(0.1, 0.05, 1), 1000, seed=3)
    assert est.kind == "type2" and est.rate > 0.95


def test_error_rates_reproducible():
    b = np.array([0.5, 0.5])
    cfg = TestConfig(0.1, 0.05, 50)
    a = estimate_error_rates(b, [np.array([0.6, 0.4])], cfg, 500, seed=9)
    c = estimate_error_rates(b, [np.array([0.6, 0.4])], cfg, 500, seed=9)
    assert a == c
    with pytest.raises(ValueError):
        estimate_error_rates(b, b, cfg, 10)
