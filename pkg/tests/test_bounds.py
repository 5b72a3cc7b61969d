import math
import zlib

import mpmath
import numpy as np
import pytest

from qterm_lab import bounds as B
from qterm_lab.risk import TiltConfig
from qterm_lab.operators import OperatorPool
from qterm_lab.search import PreconditionError

mp = mpmath.mp


def oracle(kind, p):
    """Each bound written out again at 50 digits."""
    with mpmath.workdps(50):
        f = {k: mpmath.mpf(v) for k, v in p.items() if not isinstance(v, str)}
        if kind == "chernoff_unit":
            v = 2 * mpmath.exp(-f["mean"] * f["eps"] ** 2 / 3)
        elif kind == "chernoff_bounded":
            v = 2 * mpmath.exp(-f["n"] * f["delta_dev"] ** 2 / (3 * (f["b"] - f["a"]) ** 2))
        elif kind == "naive_expectation":
            v = 2 * mpmath.exp(-f["n"] * f["eps"] ** 2 / 3)
        elif kind == "exponential_expectation":
            r = mpmath.fabs(mpmath.exp(f["c"]) - 1)
            v = 2 * mpmath.exp(-f["n"] * f["eps"] ** 2 / (3 * r ** 2))
        elif kind == "hoeffding_wor":
            v = 2 * mpmath.exp(-2 * f["n"] * f["t"] ** 2 / (f["b"] - f["a"]) ** 2)
        elif kind == "hoeffding_multi":
            v = 2 * f["M"] * mpmath.exp(-2 * f["l"] * f["t"] ** 2 / (f["b"] - f["a"]) ** 2)
        elif kind == "hoeffding_batched":
            v = 2 * f["K"] * f["M"] * mpmath.exp(-f["l"] * f["t"] ** 2 / (2 * (f["b"] - f["a"]) ** 2))
        elif kind == "pac_term":
            v = 8 * f["Gamma"] * mpmath.exp(-f["n"] * f["eps"] ** 2 / (32 * (mpmath.exp(f["gamma"]) - 1) ** 2))
        elif kind == "agnostic_budget":
            g = mpmath.fabs(f["gamma"])
            T, k, l, eps = f["T"], f["k"], f["l"], f["eps"]
            s = f["C3"] * T * k * f["Gamma_half"] * mpmath.exp(-l * g * eps ** 2 / (12 * (mpmath.exp(g) - 1)))
            pw = 1 if p.get("form", "statement") == "statement" else 2
            u = 8 * f["Gamma_fine"] * mpmath.exp(-6 * T * k * l * eps ** 2 / (512 * mpmath.fabs(mpmath.exp(f["gamma"]) - 1) ** pw))
            v = f["delta"] / 2 + s + u
        return float(v)


def random_params(kind, rng):
    n = int(rng.integers(1, 2000))
    a = float(rng.uniform(0, 1))
    b = a + float(rng.uniform(0.1, 3))
    eps = float(rng.uniform(0.001, 0.9))
    if kind == "chernoff_unit":
        return {"n": n, "mean": float(rng.uniform(0, n)), "eps": eps}
    if kind == "chernoff_bounded":
        return {"n": n, "delta_dev": float(rng.uniform(0.01, 0.99)), "a": a, "b": b}
    if kind == "naive_expectation":
        return {"n": n, "eps": eps}
    if kind == "exponential_expectation":
        return {"n": n, "eps": eps, "c": float(rng.uniform(-2, 2))}
    if kind == "hoeffding_wor":
        return {"n": n, "t": float(rng.uniform(0.01, 1)), "a": a, "b": b}
    if kind == "hoeffding_multi":
        return {"l": n, "t": float(rng.uniform(0.01, 1)), "a": a, "b": b, "M": int(rng.integers(1, 20))}
    if kind == "hoeffding_batched":
        return {"K": int(rng.integers(1, 9)), "l": n, "t": float(rng.uniform(0.01, 1)), "a": a,
                "b": b, "M": int(rng.integers(1, 20))}
    if kind == "pac_term":
        return {"n": n * 100, "eps": eps, "gamma": eps * float(rng.uniform(0.05, 0.95)),
                "Gamma": int(rng.integers(1, 50))}
    return {"delta": float(rng.uniform(0.01, 0.9)), "T": int(rng.integers(1, 8)),
            "k": int(rng.integers(1, 30)), "l": int(rng.integers(100, 50000)),
            "gamma": float(rng.uniform(-0.09, 0.09)) or 0.01, "eps": 0.1,
            "Gamma_half": int(rng.integers(1, 10)), "Gamma_fine": int(rng.integers(1, 10)),
            "C3": 4.0, "form": str(rng.choice(["statement", "lemma"]))}


@pytest.mark.parametrize("kind", B.KINDS)
def test_closed_forms_against_high_precision(kind):
    rng = np.random.default_rng(zlib.crc32(kind.encode()))
    for _ in range(25):
        p = random_params(kind, rng)
        got = B.eval_bound(B.BoundSpec(kind, p))
        want = oracle(kind, p)
        assert got == pytest.approx(want, rel=1e-10, abs=1e-300)


def test_unit_chernoff_at_zero_eps_is_vacuous():
    v = B.eval_bound(B.BoundSpec("chernoff_unit", {"mean": 100, "eps": 0.0, "n": 200}))
    assert v == 2.0 and B.is_vacuous(v)


def test_pac_example_exponent():
    with mpmath.workdps(50):
        expo = -100 * mpmath.mpf("0.0025") / (32 * (mpmath.exp(mpmath.mpf("0.01")) - 1) ** 2)
    assert float(expo) == pytest.approx(-77.347, abs=1e-3)
    v = B.eval_bound(B.BoundSpec("pac_term", {"n": 100, "eps": 0.05, "gamma": 0.01, "Gamma": 4}))
    assert v == pytest.approx(32 * math.exp(float(expo)), rel=1e-12)
    assert not B.is_vacuous(v)


def test_exponential_bound_shrinks_with_c():
    vals = [B.eval_bound(B.BoundSpec("exponential_expectation", {"n": 100, "eps": 0.1, "c": c}))
            for c in (1.0, 0.5, 0.2, 0.1, 0.05)]
    assert all(b < a for a, b in zip(vals, vals[1:]))
    assert B.eval_bound(B.BoundSpec("exponential_expectation", {"n": 100, "eps": 0.1, "c": 0.0})) == 0.0


def test_pac_monotonicity():
    base = {"n": 100, "eps": 0.05, "gamma": 0.01, "Gamma": 4}
    ns = [B.eval_bound(B.BoundSpec("pac_term", {**base, "n": n})) for n in (10, 50, 100, 400)]
    assert all(b < a for a, b in zip(ns, ns[1:]))
    gs = [B.eval_bound(B.BoundSpec("pac_term", {**base, "gamma": g})) for g in (0.005, 0.01, 0.03, 0.049)]
    assert all(b > a for a, b in zip(gs, gs[1:]))


def test_bounded_chernoff_on_unit_interval_matches_unit_form():
    lhs = B.eval_bound(B.BoundSpec("chernoff_bounded",
                                   {"n": 80, "delta_dev": 0.3, "a": 0.0, "b": 1.0}))
    rhs = B.eval_bound(B.BoundSpec("chernoff_unit", {"mean": 80, "eps": 0.3, "n": 80}))
    assert math.log(lhs / 2) / math.log(rhs / 2) == pytest.approx(1.0, abs=1e-12)


def test_domain_errors():
    with pytest.raises(B.BoundDomainError):
        B.BoundSpec("nope", {})
    with pytest.raises(B.BoundDomainError):
        B.BoundSpec("chernoff_unit", {"n": 2, "eps": 0.1})
    with pytest.raises(B.BoundDomainError):
        B.BoundSpec("hoeffding_wor", {"n": 2, "t": 0.1, "a": 1.0, "b": 0.0})
    with pytest.raises(B.BoundDomainError):
        B.BoundSpec("agnostic_budget", {"delta": 0.1, "T": 1, "k": 1, "l": 1, "gamma": 0.05,
                                        "eps": 0.1, "Gamma_half": 0, "Gamma_fine": 1, "C3": 4})


def test_agnostic_budget_examples():
    tilt = TiltConfig(0.05, 0.1, 0.1, T=4, k=12, l=10 ** 9)
    assert B.agnostic_error_budget(tilt, 1) == pytest.approx(0.05, abs=1e-15)
    prev = None
    for l in (1000, 2000, 4000, 8000, 16000):
        v = B.agnostic_error_budget(tilt.with_(l=l), 5)
        assert prev is None or v <= prev
        prev = v
    planted = TiltConfig(0.05, 0.1, 0.1, T=4, k=12, l=12000)
    for form in ("statement", "lemma"):
        assert B.agnostic_error_budget(planted, 5, m_net=5, form=form) < 1
    with pytest.raises(PreconditionError):
        B.agnostic_error_budget(planted.with_(l=100), 5, m_net=5)
    with pytest.raises(B.BoundDomainError):
        B.agnostic_error_budget(TiltConfig(0.05, 0.1, 0.1), 5)
    assert B.agnostic_error_budget(planted, {"half": 5, "fine": 5}) == B.agnostic_error_budget(planted, 5)


def test_mc_examples():
    spec = B.BoundSpec("chernoff_unit", {"mean": 100.0, "eps": 0.2, "n": 200})
    rep = B.mc_tail(spec, B.BernoulliSum((0.5,) * 200), 10_000, 11)
    assert rep.empirical_frequency <= rep.theoretical
    grid = np.linspace(0, 1, 500)[None, :]
    spec = B.BoundSpec("hoeffding_wor", {"n": 50, "t": 0.15, "a": 0.0, "b": 1.0})
    rep = B.mc_tail(spec, B.FinitePopulations(grid, 50), 10_000, 12)
    assert rep.empirical_frequency <= rep.theoretical
    spec = B.BoundSpec("exponential_expectation", {"n": 100, "eps": 0.1, "c": 0.5})
    rep = B.mc_tail(spec, B.BernoulliSum((0.3,) * 100), 10_000, 13)
    assert rep.empirical_frequency <= 2 * math.exp(-100 * 0.01 / (3 * math.expm1(0.5) ** 2))


def test_mc_is_worker_invariant():
    spec = B.BoundSpec("chernoff_unit", {"mean": 10.0, "eps": 0.3, "n": 20})
    sc = B.BernoulliSum((0.5,) * 20)
    a = B.mc_tail(spec, sc, 2000, 5, workers=1)
    b = B.mc_tail(spec, sc, 2000, 5, workers=3)
    assert a.hits == b.hits


def test_mc_mismatch_refused():
    spec = B.BoundSpec("chernoff_unit", {"mean": 10.0, "eps": 0.3, "n": 20})
    with pytest.raises(B.BoundDomainError):
        B.mc_tail(spec, B.TwoPoint(0, 1, 0.5, 20), 10, 0)
    with pytest.raises(B.BoundDomainError):
        B.mc_tail(spec, B.BernoulliSum((0.4,) * 20), 10, 0)  # mean mismatch
    with pytest.raises(B.BoundDomainError):
        B.mc_tail(B.BoundSpec("pac_term", {"n": 1, "eps": 0.1, "gamma": 0.01, "Gamma": 1}),
                  B.BernoulliSum((0.5,)), 10, 0)


def test_quantum_sampler():
    rng = np.random.default_rng(3)
    from qterm_lab.operators import random_pure_state, random_rank_projector
    st = OperatorPool.coerce([random_pure_state(2, rng) for _ in range(100)], "state")
    pr = OperatorPool.coerce([random_rank_projector(2, 1, rng) for _ in range(100)], "projector")
    sc = B.QuantumOutcomes(st, pr)
    rep = B.mc_tail(B.BoundSpec("naive_expectation", {"n": 100, "eps": 0.15}), sc, 2000, 1)
    assert rep.dominated


def test_pac_examples():
    rep = B.pac_gap_experiment(B.ConstantLosses((0.4,)), 50, 0.01, 0.05, 200, 1)
    assert rep.empirical_frequency == 0.0
    with pytest.raises(PreconditionError):
        B.pac_gap_experiment(B.ThresholdLosses((0.2, 0.4)), 100, 0.2, 0.05, 10, 1)
    with pytest.raises(B.BoundDomainError):
        B.pac_gap_experiment(B.ConstantLosses((1.4,)), 10, 0.01, 0.05, 10, 1)


def test_report_tolerance():
    r = B.BoundReport("x", 0.01, 0.02, 100, 0, 2)
    assert r.tolerance == pytest.approx(0.01 + 3 * 0.01)
    assert r.dominated
