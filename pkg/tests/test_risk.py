import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qterm_lab.risk import (HypothesisEnsemble, LossVector, RiskError, TiltConfig, erm,
                            qterm_mu, qterm_risk, term, tilted_generalization_error,
                            tilted_mean, tilted_statistic_from_outcomes)

KET0 = np.diag([1.0, 0.0]).astype(complex)
KET1 = np.diag([0.0, 1.0]).astype(complex)


def mp_tilted(values, gamma, dps=50):
    with mpmath.workdps(dps):
        g = mpmath.mpf(gamma)
        s = mpmath.fsum(mpmath.exp(g * mpmath.mpf(v)) for v in values) / len(values)
        return float(mpmath.log(s) / g)


def test_erm_examples():
    assert erm([0, 1]) == 0.5
    assert erm([0.3, 0.3, 0.3]) == pytest.approx(0.3, abs=1e-15)
    assert erm([0.1, 0.2, 0.7]) == pytest.approx(1 / 3, abs=1e-12)


def test_term_examples():
    assert term([0, 1], 1.0) == pytest.approx(math.log((1 + math.e) / 2), abs=1e-13)
    assert term([0, 1], 1.0) == pytest.approx(0.620115, abs=1e-6)
    for g in (-30, -1, 1e-9, 2, 40):
        assert term([0.37] * 5, g) == pytest.approx(0.37, abs=1e-14)
    assert abs(term([0.2, 0.9], 200) - 0.9) < 0.02
    assert term([0.2, 0.4], 0) == erm([0.2, 0.4])


def test_loss_vector_domain():
    with pytest.raises(RiskError):
        LossVector([])
    with pytest.raises(RiskError):
        LossVector([0.5, 1.2])
    assert term(LossVector([0.5, 1.5], bound=2.0), 1.0) > 0.5


def test_qterm_risk_examples():
    for g in (-3, 0, 0.5, 4):
        assert qterm_risk([KET0] * 3, [KET0] * 3, g) == pytest.approx(0.0, abs=1e-12)
        assert qterm_risk([KET0] * 3, [KET1] * 3, g) == pytest.approx(1.0, abs=1e-12)
    r = qterm_risk([KET0, KET0], [KET1, KET0], 1.0)
    assert r == pytest.approx(1 - math.log((1 + math.e) / 2), abs=1e-12)
    assert qterm_mu([KET0, KET0], [KET1, KET0], 1.0) == pytest.approx(1 - r, abs=1e-15)
    with pytest.raises(RiskError):
        qterm_risk([KET0], [KET0, KET1], 1.0)


def test_outcome_statistic_examples():
    assert tilted_statistic_from_outcomes([1, 1, 1], 0.5) == pytest.approx(1.0, abs=1e-15)
    assert tilted_statistic_from_outcomes([0, 0, 1, 1], 0) == 0.5
    assert tilted_statistic_from_outcomes([0, 0, 1, 1], 1e-12) == pytest.approx(0.5, abs=1e-10)
    val = tilted_statistic_from_outcomes([0, 1], -1.0)
    assert val == pytest.approx(-math.log((1 + math.exp(-1)) / 2), abs=1e-13)
    with pytest.raises(RiskError):
        tilted_statistic_from_outcomes([], 1.0)


def test_generalization_error_examples():
    assert tilted_generalization_error(0.5, [0.5] * 4, 3.0) == pytest.approx(0, abs=1e-15)
    assert tilted_generalization_error(0.7, [0, 1], 1.0) == pytest.approx(
        0.7 - math.log((1 + math.e) / 2), abs=1e-13)
    assert tilted_generalization_error(0.0, [0, 0], 3.0) == 0


def test_no_overflow_at_extreme_tilt():
    v = np.linspace(0, 1, 1000)
    assert term(v, 1e5) == pytest.approx(1.0, abs=1e-3)
    assert term(v, -1e5) == pytest.approx(0.0, abs=1e-3)


def test_weighted_tilted_mean_ignores_zero_weights():
    assert tilted_mean([5.0, 0.2, 0.4], 3.0, [0, 1, 1]) == pytest.approx(term([0.2, 0.4], 3.0), abs=1e-14)


def test_high_precision_oracle():
    rng = np.random.default_rng(5)
    for _ in range(25):
        v = rng.random(rng.integers(1, 40))
        g = float(rng.choice([-1, 1]) * 10 ** rng.uniform(-8, 2))
        assert term(v, g) == pytest.approx(mp_tilted(v, g), rel=1e-12, abs=1e-13)


def test_tilt_config_validation():
    with pytest.raises(RiskError):
        TiltConfig(0.1, 0.0, 0.1)
    with pytest.raises(RiskError):
        TiltConfig(0.1, 0.1, 1.0)
    with pytest.raises(RiskError):
        TiltConfig(0.1, 0.1, 0.1, C1=0)
    with pytest.raises(RiskError):
        TiltConfig(0.1, 0.1, 0.1, T=0)
    t = TiltConfig(0.01, 0.1, 0.1, T=2, k=3, l=4)
    assert t.has_geometry and t.with_(l=None).has_geometry is False


def test_ensemble_mu_matches_direct():
    rng = np.random.default_rng(6)
    from qterm_lab.operators import random_pure_state, random_rank_projector
    states = [random_pure_state(2, rng) for _ in range(6)]
    lists = [[random_rank_projector(2, 1, rng) for _ in range(6)] for _ in range(3)]
    ens = HypothesisEnsemble(lists)
    from qterm_lab.operators import OperatorPool
    pool = OperatorPool.coerce(states, "state")
    mus = ens.mu(pool, 0.7)
    for c in range(3):
        assert mus[c] == pytest.approx(qterm_mu(states, lists[c], 0.7), abs=1e-14)
    sub = ens.subset([2, 0])
    assert sub.m == 2 and sub.labels == ("h2", "h0")
    assert np.allclose(sub.complement_lists[0].matrices, ens.complement_lists[2].matrices)


vectors = st.lists(st.floats(0, 1), min_size=1, max_size=30)


@settings(max_examples=200, deadline=None)
@given(vectors, st.floats(-60, 60))
def test_term_within_range(v, g):
    t = term(v, g)
    assert min(v) <= t <= max(v)


@settings(max_examples=200, deadline=None)
@given(vectors, st.floats(-20, 20), st.floats(0, 5))
def test_term_nondecreasing_in_gamma(v, g, step):
    assert term(v, g + step) >= term(v, g) - 1e-12


@settings(max_examples=200, deadline=None)
@given(vectors, st.floats(-1, 1))
def test_tilt_gap_bound(v, g):
    gap = abs(tilted_statistic_from_outcomes(v, g) - float(np.mean(v)))
    assert gap <= abs(g) / 8 + 1e-9
