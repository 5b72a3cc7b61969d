"""Closed-form tail bounds and Monte Carlo checks against matched samplers.

Bounds are returned uncapped; a value above 1 is vacuous and flagged as such.
The deviation event that each bound controls lives in ``EVENTS``, one entry per
kind, so the sampler side and the formula side cannot drift apart.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .risk import TiltConfig, term
from .search import PreconditionError
from .sim import ProductSample, fidelities, measure_block

KINDS = (
    "chernoff_unit",
    "chernoff_bounded",
    "naive_expectation",
    "exponential_expectation",
    "hoeffding_wor",
    "hoeffding_multi",
    "hoeffding_batched",
    "pac_term",
    "agnostic_budget",
)

_REQUIRED = {
    "chernoff_unit": ("mean", "eps", "n"),
    "chernoff_bounded": ("n", "delta_dev", "a", "b"),
    "naive_expectation": ("n", "eps"),
    "exponential_expectation": ("n", "eps", "c"),
    "hoeffding_wor": ("n", "t", "a", "b"),
    "hoeffding_multi": ("l", "t", "a", "b", "M"),
    "hoeffding_batched": ("K", "l", "t", "a", "b", "M"),
    "pac_term": ("n", "eps", "gamma", "Gamma"),
    "agnostic_budget": ("delta", "T", "k", "l", "gamma", "eps", "Gamma_half", "Gamma_fine", "C3"),
}


class BoundDomainError(ValueError):
    pass


@dataclass(frozen=True)
class BoundSpec:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in _REQUIRED:
            raise BoundDomainError(f"unknown bound kind {self.kind!r}")
        missing = [p for p in _REQUIRED[self.kind] if p not in self.params]
        if missing:
            raise BoundDomainError(f"{self.kind} needs parameters {missing}")
        object.__setattr__(self, "params", dict(self.params))
        _validate(self.kind, self.params)

    def __getitem__(self, key):
        return self.params[key]


def _need(cond: bool, msg: str) -> None:
    if not cond:
        raise BoundDomainError(msg)


def _validate(kind: str, p: dict) -> None:
    for key in ("n", "l", "K", "M", "T", "k"):
        if key in p:
            _need(p[key] >= 1 and float(p[key]).is_integer(), f"{key} must be a positive integer")
    if "a" in p:
        _need(p["b"] > p["a"], "need b > a")
    if kind == "chernoff_unit":
        _need(0 <= p["eps"] <= 1, "chernoff_unit needs 0 <= eps <= 1")
        _need(0 <= p["mean"] <= p["n"], "chernoff_unit needs 0 <= E[X] <= n")
    elif kind == "chernoff_bounded":
        _need(0 < p["delta_dev"] < 1, "chernoff_bounded needs 0 < delta < 1")
        _need(p["a"] >= 0, "chernoff_bounded needs a, b >= 0")
    elif kind == "naive_expectation":
        _need(0 <= p["eps"] < 1, "naive_expectation needs 0 <= eps < 1")
    elif kind == "exponential_expectation":
        _need(0 <= p["eps"] <= 1, "exponential_expectation needs 0 <= eps <= 1")
    elif kind in ("hoeffding_wor", "hoeffding_multi", "hoeffding_batched"):
        _need(p["t"] > 0, f"{kind} needs t > 0")
        if kind == "hoeffding_batched" and "N" in p:
            _need(p["N"] >= 3 * p["K"] * p["l"], "batched sampling needs N >= 3 K l")
    elif kind == "pac_term":
        _need(p["eps"] > 0, "pac_term needs eps > 0")
        _need(0 < p["gamma"] < p["eps"], "pac_term needs gamma in (0, eps)")
        _need(p["Gamma"] >= 1, "covering number must be at least 1")
    elif kind == "agnostic_budget":
        _need(0 < p["delta"] < 1, "agnostic_budget needs delta in (0, 1)")
        _need(p["eps"] > 0 and p["gamma"] != 0, "agnostic_budget needs eps > 0, gamma != 0")
        _need(p["Gamma_half"] > 0 and p["Gamma_fine"] > 0, "covering numbers must be positive")
        _need(p["C3"] > 0, "C3 must be positive")
        _need(p.get("form", "statement") in ("statement", "lemma"),
              "form must be 'statement' or 'lemma'")


def _agnostic(p: dict) -> float:
    g, eps, T, k, l = abs(p["gamma"]), p["eps"], p["T"], p["k"], p["l"]
    search = p["C3"] * T * k * p["Gamma_half"] * math.exp(-l * g * eps ** 2 / (12 * math.expm1(g)))
    power = 1 if p.get("form", "statement") == "statement" else 2
    uniform = 8 * p["Gamma_fine"] * math.exp(
        -6 * T * k * l * eps ** 2 / (512 * abs(math.expm1(p["gamma"])) ** power))
    return p["delta"] / 2 + search + uniform


def eval_bound(spec: BoundSpec) -> float:
    p, kind = spec.params, spec.kind
    if kind == "chernoff_unit":
        return 2 * math.exp(-p["mean"] * p["eps"] ** 2 / 3)
    if kind == "chernoff_bounded":
        return 2 * math.exp(-p["n"] * p["delta_dev"] ** 2 / (3 * (p["b"] - p["a"]) ** 2))
    if kind == "naive_expectation":
        return 2 * math.exp(-p["n"] * p["eps"] ** 2 / 3)
    if kind == "exponential_expectation":
        r = abs(math.expm1(p["c"]))
        if r == 0:
            return 0.0 if p["eps"] > 0 else 2.0
        return 2 * math.exp(-p["n"] * p["eps"] ** 2 / (3 * r ** 2))
    if kind == "hoeffding_wor":
        return 2 * math.exp(-2 * p["n"] * p["t"] ** 2 / (p["a"] - p["b"]) ** 2)
    if kind == "hoeffding_multi":
        return 2 * p["M"] * math.exp(-2 * p["l"] * p["t"] ** 2 / (p["b"] - p["a"]) ** 2)
    if kind == "hoeffding_batched":
        return 2 * p["K"] * p["M"] * math.exp(-2 * p["l"] * p["t"] ** 2 / (4 * (p["b"] - p["a"]) ** 2))
    if kind == "pac_term":
        return 8 * p["Gamma"] * math.exp(-p["n"] * p["eps"] ** 2 / (32 * math.expm1(p["gamma"]) ** 2))
    if kind == "agnostic_budget":
        return _agnostic(p)
    raise BoundDomainError(kind)


def is_vacuous(value: float) -> bool:
    return value > 1.0


def agnostic_error_budget(tilt: TiltConfig, covering, m_net: int | None = None,
                          form: str = "statement") -> float:
    """Failure budget of the cover-then-learn pipeline.

    ``covering`` is one value (a finite class, the same at every scale) or a
    mapping with ``"half"`` (radius eps/2 on 6Tkl points) and ``"fine"`` (radius
    eps/128 on 12Tkl points).  With ``m_net`` the block-length requirement
    (log m_net + C2)^2 <= C1 l eps^2 is enforced.
    """
    if not tilt.has_geometry:
        raise BoundDomainError("the budget needs explicit T, k and l")
    if isinstance(covering, dict):
        half, fine = covering["half"], covering["fine"]
    else:
        half = fine = covering
    if m_net is not None:
        lhs = (math.log(m_net) + tilt.C2) ** 2
        if lhs > tilt.C1 * tilt.l * tilt.epsilon ** 2:
            raise PreconditionError(
                f"(log m + C2)^2 = {lhs:.4g} exceeds C1 l eps^2 = {tilt.C1 * tilt.l * tilt.epsilon ** 2:.4g}")
    spec = BoundSpec("agnostic_budget", {
        "delta": tilt.delta, "T": tilt.T, "k": tilt.k, "l": tilt.l, "gamma": tilt.gamma,
        "eps": tilt.epsilon, "Gamma_half": half, "Gamma_fine": fine, "C3": tilt.C3, "form": form})
    return eval_bound(spec)


# -- samplers ----------------------------------------------------------------------

@dataclass(frozen=True)
class BernoulliSum:
    """n independent Bernoulli(p_i) variables."""
    p: tuple

    def draw(self, rng):
        p = np.asarray(self.p)
        return (rng.random(p.size) < p).astype(float)


@dataclass(frozen=True)
class TwoPoint:
    """n i.i.d. copies of a variable taking ``lo`` or ``hi`` (the latter w.p. ``q``)."""
    lo: float
    hi: float
    q: float
    n: int

    @property
    def mean(self):
        return self.lo + self.q * (self.hi - self.lo)

    def draw(self, rng):
        return np.where(rng.random(self.n) < self.q, self.hi, self.lo)


@dataclass(frozen=True, eq=False)
class QuantumOutcomes:
    """Measure Pi_i on fresh copies of rho_i; outcomes are the measurement bits."""
    states: object
    projectors: object

    def __post_init__(self):
        s = ProductSample(self.states)
        object.__setattr__(self, "states", s.states)
        object.__setattr__(self, "_p", fidelities(s, np.arange(len(s)), self.projectors))

    def draw(self, rng):
        s = ProductSample(self.states)
        return measure_block(s, np.arange(len(s)), self.projectors, rng).astype(float)

    def probabilities(self):
        return self._p


@dataclass(frozen=True, eq=False)
class FinitePopulations:
    """M populations of N points sharing one without-replacement index draw.

    ``batches`` disjoint batches of ``l`` indices are taken per trial.
    """
    values: np.ndarray  # (M, N)
    l: int
    batches: int = 1

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.values, dtype=float))
        object.__setattr__(self, "values", v)
        if self.l * self.batches > v.shape[1]:
            raise BoundDomainError("not enough population points for the requested draws")

    def draw(self, rng):
        idx = rng.choice(self.values.shape[1], size=self.l * self.batches, replace=False)
        return self.values[:, idx.reshape(self.batches, self.l)]  # (M, K, l)


# the deviation event of each concentration statement
def _ev_chernoff_unit(x, sc, p):
    return abs(x.sum() - np.sum(sc.p)) >= p["n"] * p["eps"]


def _ev_chernoff_bounded(x, sc, p):
    return abs(x.sum() - p["n"] * sc.mean) >= p["n"] * p["delta_dev"]


def _ev_naive(x, sc, p):
    return abs(x.sum() - sc.probabilities().sum()) >= p["n"] * p["eps"]


def _ev_exponential(x, sc, p):
    c = p["c"]
    probs = sc.probabilities() if isinstance(sc, QuantumOutcomes) else np.asarray(sc.p)
    # centring at sum_s e^{c E[Y_s]}, as the statement defines it
    return abs(np.exp(c * x).sum() - np.exp(c * probs).sum()) >= p["n"] * p["eps"]


def _ev_hoeffding(x, sc, p):
    mu = sc.values.mean(axis=1)[:, None]
    l = x.shape[-1]
    return bool(np.max(np.abs(x.sum(axis=-1) - l * mu)) >= l * p["t"])


EVENTS = {
    "chernoff_unit": (BernoulliSum, _ev_chernoff_unit),
    "chernoff_bounded": (TwoPoint, _ev_chernoff_bounded),
    "naive_expectation": (QuantumOutcomes, _ev_naive),
    "exponential_expectation": ((BernoulliSum, QuantumOutcomes), _ev_exponential),
    "hoeffding_wor": (FinitePopulations, _ev_hoeffding),
    "hoeffding_multi": (FinitePopulations, _ev_hoeffding),
    "hoeffding_batched": (FinitePopulations, _ev_hoeffding),
}


def _check_match(spec: BoundSpec, sc) -> None:
    if spec.kind not in EVENTS:
        raise BoundDomainError(f"{spec.kind} has no Monte Carlo event")
    cls, _ = EVENTS[spec.kind]
    if not isinstance(sc, cls):
        raise BoundDomainError(f"scenario {type(sc).__name__} does not match bound {spec.kind}")
    p = spec.params
    if isinstance(sc, (BernoulliSum,)):
        if len(sc.p) != p["n"]:
            raise BoundDomainError("sampler length differs from n")
        if spec.kind == "chernoff_unit" and not math.isclose(np.sum(sc.p), p["mean"], rel_tol=1e-9):
            raise BoundDomainError("mean parameter differs from the sampler's E[X]")
    if isinstance(sc, TwoPoint):
        if sc.n != p["n"] or not (p["a"] <= sc.lo <= sc.hi <= p["b"]):
            raise BoundDomainError("two-point sampler outside [a, b] or wrong n")
    if isinstance(sc, QuantumOutcomes) and len(sc.states) != p["n"]:
        raise BoundDomainError("quantum sampler length differs from n")
    if isinstance(sc, FinitePopulations):
        v = sc.values
        if v.min() < p["a"] or v.max() > p["b"]:
            raise BoundDomainError("population values outside [a, b]")
        if spec.kind == "hoeffding_wor" and (v.shape[0] != 1 or sc.l != p["n"] or sc.batches != 1):
            raise BoundDomainError("hoeffding_wor needs one population and n draws")
        if spec.kind == "hoeffding_multi" and (v.shape[0] != p["M"] or sc.l != p["l"] or sc.batches != 1):
            raise BoundDomainError("hoeffding_multi needs M populations and one batch of l")
        if spec.kind == "hoeffding_batched":
            if v.shape[0] != p["M"] or sc.l != p["l"] or sc.batches != p["K"]:
                raise BoundDomainError("hoeffding_batched needs M populations and K batches of l")
            if v.shape[1] < 3 * p["K"] * p["l"]:
                raise BoundDomainError("batched sampling needs N >= 3 K l")


@dataclass
class BoundReport:
    kind: str
    theoretical: float
    empirical_frequency: float
    trials: int
    seed: int
    hits: int

    @property
    def vacuous(self) -> bool:
        return is_vacuous(self.theoretical)

    @property
    def tolerance(self) -> float:
        return self.theoretical + 3 * math.sqrt(self.theoretical / self.trials)

    @property
    def dominated(self) -> bool:
        """Empirical tail within the bound plus three binomial standard errors."""
        return self.empirical_frequency <= self.tolerance

    def to_dict(self) -> dict:
        return {"kind": self.kind, "theoretical": self.theoretical,
                "empirical_frequency": self.empirical_frequency, "trials": self.trials,
                "seed": self.seed, "hits": self.hits, "vacuous": self.vacuous,
                "dominated": self.dominated}


def _count(args) -> int:
    kind, params, sc, seed, lo, hi = args
    event = EVENTS[kind][1]
    hits = 0
    for t in range(lo, hi):
        g = rngmod.trial_stream(seed, t)
        hits += bool(event(sc.draw(g), sc, params))
    return hits


def _shards(trials: int, workers: int):
    step = -(-trials // workers)
    return [(lo, min(lo + step, trials)) for lo in range(0, trials, step)]


def _run_counts(fn, payload, trials, workers):
    shards = _shards(trials, max(1, workers))
    rngmod.check_disjoint([range(lo, hi) for lo, hi in shards])
    jobs = [payload + (lo, hi) for lo, hi in shards]
    if workers <= 1 or len(jobs) == 1:
        return sum(fn(j) for j in jobs)
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return sum(ex.map(fn, jobs))


def mc_tail(spec: BoundSpec, scenario, trials: int, seed: int, workers: int = 1) -> BoundReport:
    """Empirical frequency of the bound's deviation event over seeded trials."""
    if trials < 1:
        raise ValueError("trials must be positive")
    _check_match(spec, scenario)
    hits = _run_counts(_count, (spec.kind, spec.params, scenario, rngmod.check_seed(seed)),
                       trials, workers)
    return BoundReport(spec.kind, eval_bound(spec), hits / trials, trials, seed, hits)


# -- PAC gap experiment ------------------------------------------------------------

@dataclass(frozen=True)
class ThresholdLosses:
    """Hypotheses h with loss 1[Z < cut_h] on a shared Z ~ U(0, 1); R(h) = cut_h."""
    cuts: tuple

    @property
    def risks(self) -> np.ndarray:
        return np.asarray(self.cuts, dtype=float)

    def draw(self, rng, n):
        z = rng.random(n)
        return (z[None, :] < self.risks[:, None]).astype(float)


@dataclass(frozen=True)
class ConstantLosses:
    values: tuple

    @property
    def risks(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)

    def draw(self, rng, n):
        return np.repeat(self.risks[:, None], n, axis=1)


def _pac_count(args) -> int:
    cls, n, gamma, eps, seed, lo, hi = args
    risks = cls.risks
    hits = 0
    for t in range(lo, hi):
        losses = cls.draw(rngmod.trial_stream(seed, t), n)
        if losses.min() < 0 or losses.max() > 1:
            raise BoundDomainError("losses must lie in [0, 1]")
        gap = max(abs(r - term(row, gamma)) for r, row in zip(risks, losses))
        hits += gap >= eps
    return hits


def pac_gap_experiment(class_losses, n: int, gamma: float, epsilon: float, trials: int,
                       seed: int, workers: int = 1) -> BoundReport:
    """Frequency of sup_h |R(h) - TERM_gamma(h)| >= eps against the finite-class bound."""
    if not 0 < gamma < epsilon:
        raise PreconditionError(f"gamma = {gamma!r} must lie in (0, eps = {epsilon!r})")
    risks = class_losses.risks
    if risks.min() < 0 or risks.max() > 1:
        raise BoundDomainError("losses must lie in [0, 1]")
    spec = BoundSpec("pac_term", {"n": n, "eps": epsilon, "gamma": gamma, "Gamma": risks.size})
    hits = _run_counts(_pac_count, (class_losses, n, gamma, epsilon, rngmod.check_seed(seed)),
                       trials, workers)
    return BoundReport("pac_term", eval_bound(spec), hits / trials, trials, seed, hits)
