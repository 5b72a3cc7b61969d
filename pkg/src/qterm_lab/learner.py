"""Block binary search learner for projector-valued hypotheses.

The sample is cut into 2Tk disjoint blocks of length l.  Round r runs a
threshold search on block 2r and, when a concept c is returned, checks it on
block 2r+1 by measuring Pi^(c) and forming the tilted statistic of the 0/1
outcomes.  A passed check raises ``low``; k consecutive failures lower ``high``.
The loop stops once ``high - low < 6 eps``.

Search lists per round (all concepts scanned at precision eps/4):
    {Pi^(c)}      at threshold theta + 7 eps/4
    {I - Pi^(c)}  at threshold 1 - theta - 7 eps/4
A hit in the second group is evidence that no concept clears theta and is
scored as a failure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .operators import pool_fidelities
from .risk import HypothesisEnsemble, RiskError, TiltConfig, tilted_mean, tilted_statistic_from_outcomes
from .search import PreconditionError, ThresholdedHypothesis, threshold_search
from .sim import ProductSample, draw_block_plan, measure_block


class SampleExhaustedError(RuntimeError):
    pass


# -- sample-size calculator --------------------------------------------------------

def tilt_factor(gamma: float) -> float:
    """(e^|g| - 1)^2 / g^2, equal to 1 in the g -> 0 limit."""
    g = abs(gamma)
    if g == 0:
        return 1.0
    return (math.expm1(g) / g) ** 2


def _check_regime(tilt: TiltConfig) -> None:
    if not 0 < tilt.epsilon < 1:
        raise RiskError("epsilon must lie in (0, 1)")
    if not 0 < abs(tilt.gamma) < tilt.epsilon:
        raise RiskError(f"|gamma| = {abs(tilt.gamma)!r} must lie in (0, epsilon)")


def sample_geometry(tilt: TiltConfig, m: int, *, untilted: bool = False) -> dict:
    """Default T, k, l and n = 6 T k l for ``m`` hypotheses."""
    if untilted:
        if tilt.gamma != 0 or not 0 < tilt.epsilon < 1:
            raise RiskError("an untilted geometry needs gamma = 0 and epsilon in (0, 1)")
    else:
        _check_regime(tilt)
    if m < 1:
        raise RiskError("m must be positive")
    eps, delta = tilt.epsilon, tilt.delta
    T = math.ceil(math.log2(1 / eps))
    k = math.ceil(math.log2(1 / delta) * math.log2(1 / eps))
    a = tilt_factor(tilt.gamma) * math.log(4 * T * k * m / delta)
    b = (math.log(m) + tilt.C2) ** 2
    l = math.ceil(max(a, b) / (tilt.C1 * eps ** 2))
    return {"T": T, "k": k, "l": l, "n": 6 * T * k * l}


def required_sample_size(tilt: TiltConfig, m: int) -> int:
    return sample_geometry(tilt, m)["n"]


@dataclass(frozen=True)
class LearnerParams:
    """Tilt configuration plus class size; fills in T, k, l when absent."""

    tilt: TiltConfig
    m: int
    plain: bool = False

    def __post_init__(self):
        if self.m < 1:
            raise RiskError("m must be positive")
        if self.plain:
            if self.tilt.gamma != 0:
                raise RiskError("an untilted run needs gamma = 0")
        else:
            _check_regime(self.tilt)
        if not self.tilt.has_geometry:
            g = sample_geometry(self.tilt, self.m, untilted=self.plain)
            fill = {key: getattr(self.tilt, key) or g[key] for key in ("T", "k", "l")}
            object.__setattr__(self, "tilt", self.tilt.with_(**fill))

    @property
    def T(self) -> int:
        return self.tilt.T

    @property
    def k(self) -> int:
        return self.tilt.k

    @property
    def l(self) -> int:
        return self.tilt.l

    @property
    def n_required(self) -> int:
        return 6 * self.T * self.k * self.l

    def untilted(self) -> LearnerParams:
        """Same geometry with gamma = 0 (plain empirical means)."""
        return LearnerParams(self.tilt.with_(gamma=0.0), self.m, plain=True)

    def with_m(self, m: int) -> LearnerParams:
        return LearnerParams(self.tilt, m, self.plain)

    def block_conditions(self) -> dict:
        """Per-block length requirements; the learner refuses to run if either fails."""
        t, m = self.tilt, self.m
        need_i = (math.log(m) + t.C2) ** 2 / (t.C1 * t.epsilon ** 2)
        need_ii = math.log(self.T * self.k / t.delta) / t.epsilon ** 2
        return {"search": (self.l > need_i, need_i), "confidence": (self.l > need_ii, need_ii)}


# -- results -----------------------------------------------------------------------

@dataclass
class LearnerResult:
    c_star: int
    mu_hat: float
    theta_final: float
    transcript: list = field(default_factory=list)
    random_pick: bool = False
    low: float = 0.0
    high: float = 1.0
    net: object = None

    def to_dict(self) -> dict:
        out = {
            "c_star": self.c_star,
            "mu_hat": self.mu_hat,
            "theta_final": self.theta_final,
            "random_pick": self.random_pick,
            "low": self.low,
            "high": self.high,
            "rounds": self.transcript,
        }
        if self.net is not None:
            out["net"] = list(self.net.representatives)
        return out


# -- the learner -------------------------------------------------------------------

def learn(sample: ProductSample, ensemble: HypothesisEnsemble, params: LearnerParams,
          backend: str = "oracle", rng: np.random.Generator | None = None) -> LearnerResult:
    if rng is None:
        raise ValueError("learn needs an rng")
    if ensemble.m != params.m:
        raise RiskError(f"params were built for m={params.m}, ensemble has m={ensemble.m}")
    if ensemble.n != len(sample):
        raise RiskError(f"ensemble spans {ensemble.n} factors, sample has {len(sample)}")
    if len(sample) < params.n_required:
        raise SampleExhaustedError(
            f"sample of {len(sample)} factors is below the required 6Tkl = {params.n_required}")
    for name, (ok, need) in params.block_conditions().items():
        if not ok:
            raise PreconditionError(f"block length l={params.l} must exceed {need:.4g} ({name})")

    eps, gamma = params.tilt.epsilon, params.tilt.gamma
    T, k, l, m = params.T, params.k, params.l, params.m
    plan = draw_block_plan(len(sample), l, 2 * T * k, rng)
    lists = ensemble.projector_lists
    comps = ensemble.complement_lists

    theta, low, high, failures = 0.5, 0.0, 1.0, 0
    selected, mu_hat = None, None
    r = 0
    transcript = []
    # the tolerance keeps decimal inputs such as eps = 0.05 on the exact-arithmetic side
    while high - low >= 6 * eps - 1e-12:
        if failures >= k:
            high = theta
            theta = 0.5 * (high + low)
            failures = 0
            transcript.append({"round": None, "action": "lower", "theta": theta,
                               "low": low, "high": high})
            continue
        if r >= T * k:
            raise SampleExhaustedError(f"all {T * k} search/check block pairs were used")
        search_block, check_block = plan[2 * r], plan[2 * r + 1]
        r += 1
        up = min(max(theta + 7 * eps / 4, 0.0), 1.0)
        down = min(max(1.0 - theta - 7 * eps / 4, 0.0), 1.0)
        hyps = [ThresholdedHypothesis(p.take(search_block), up) for p in lists]
        hyps += [ThresholdedHypothesis(p.take(search_block), down) for p in comps]
        out = threshold_search(sample.view(search_block), hyps, eps / 4, backend, rng,
                               C1=params.tilt.C1, C2=params.tilt.C2, precondition="ignore")
        rec = {"round": r - 1, "theta": theta, "search": out.accepted, "concept": None,
               "statistic": None, "passed": None}
        hit = out.accepted
        if hit is not None and hit < m:
            bits = measure_block(sample, check_block, lists[hit].take(check_block), rng)
            stat = float(tilted_statistic_from_outcomes(bits, gamma))
            passed = bool(abs(stat - theta) > eps)
            rec.update(concept=hit, statistic=stat, passed=passed)
            if passed:
                selected, mu_hat = hit, stat
                low = theta - 2 * eps
                theta = 0.5 * (high + low)
                failures = 0
                rec["action"] = "raise"
            else:
                failures += 1
                rec["action"] = "fail"
        else:
            failures += 1
            rec["action"] = "fail"
        rec.update(low=low, high=high, failures=failures)
        transcript.append(rec)

    random_pick = selected is None
    if random_pick:
        selected = int(rng.integers(m))
        mu_hat = theta
    return LearnerResult(int(selected), min(max(float(mu_hat), 0.0), 1.0), theta,
                         transcript, random_pick, low, high)


# -- agnostic pipeline -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class EpsilonNet:
    representatives: tuple
    radius: float
    pseudometric: np.ndarray
    assignment: np.ndarray  # representative index for each hypothesis

    def covers(self) -> bool:
        m = self.pseudometric.shape[0]
        reps = list(self.representatives)
        return all(self.pseudometric[h, reps].min() <= self.radius for h in range(m))


def tilted_risks(classical_data, gamma: float) -> np.ndarray:
    """1 - tilted mean of each row of an (m, l0) fidelity matrix."""
    data = np.asarray(classical_data, dtype=float)
    if data.ndim != 2 or data.shape[0] == 0 or data.shape[1] == 0:
        raise RiskError("classical data must be a non-empty (m, l0) matrix")
    return np.array([1.0 - tilted_mean(row, gamma) for row in data])


def net_from_risks(risks, radius: float) -> EpsilonNet:
    """Greedy cover under d(g1, g2) = |R(g1) - R(g2)|, lowest uncovered index first."""
    risks = np.asarray(risks, dtype=float).ravel()
    if risks.size == 0:
        raise RiskError("empty ensemble")
    if not radius > 0:
        raise RiskError("radius must be positive")
    dist = np.abs(risks[:, None] - risks[None, :])
    assigned = np.full(risks.size, -1, dtype=np.intp)
    reps = []
    for h in range(risks.size):
        if assigned[h] >= 0:
            continue
        reps.append(h)
        free = (assigned < 0) & (dist[h] <= radius)
        assigned[free] = h
    return EpsilonNet(tuple(reps), radius, dist, assigned)


def build_epsilon_net(ensemble, classical_data, gamma: float, radius: float) -> EpsilonNet:
    data = np.asarray(classical_data, dtype=float)
    m = ensemble.m if isinstance(ensemble, HypothesisEnsemble) else int(ensemble)
    if data.ndim != 2 or data.shape[0] != m:
        raise RiskError(f"classical data needs one row per hypothesis ({m})")
    return net_from_risks(tilted_risks(data, gamma), radius)


def classical_fidelities(ensemble: HypothesisEnsemble, states, positions) -> np.ndarray:
    """Exact fidelities of every hypothesis at the given sample positions."""
    pos = np.asarray(positions, dtype=np.intp)
    return np.stack([pool_fidelities(states, p, pos, pos) for p in ensemble.projector_lists])


def agnostic_learn(sample: ProductSample, ensemble: HypothesisEnsemble, classical_data,
                   params: LearnerParams, backend: str = "oracle",
                   rng: np.random.Generator | None = None) -> LearnerResult:
    """Cover the class at radius eps/2, then learn over the representatives only."""
    net = build_epsilon_net(ensemble, classical_data, params.tilt.gamma, params.tilt.epsilon / 2)
    reps = list(net.representatives)
    res = learn(sample, ensemble.subset(reps), params.with_m(len(reps)), backend, rng)
    res.c_star = reps[res.c_star]
    res.net = net
    return res
