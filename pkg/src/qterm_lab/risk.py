"""Risk functionals: ERM, TERM, and the projector-valued tilted risk.

The tilted mean ``(1/g) log( mean exp(g x) )`` is evaluated as

    x_ref + log1p( mean( expm1( g (x - x_ref) ) ) ) / g

with ``x_ref`` the maximiser of ``g x``.  Every exponent is then <= 0, so nothing
overflows, and ``log1p``/``expm1`` keep full precision when ``g`` is tiny.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, field, replace

import numpy as np

from .operators import DimensionMismatch, OperatorPool, clamp_unit, pool_fidelities


class RiskError(ValueError):
    pass


def tilted_mean(values, gamma: float, weights=None) -> float:
    """(1/gamma) log( sum_i w_i exp(gamma x_i) ) with weights normalized to 1.

    ``gamma == 0`` returns the (weighted) arithmetic mean, the analytic limit.
    """
    x = np.asarray(values, dtype=float).ravel()
    if x.size == 0:
        raise RiskError("tilted mean of an empty sequence")
    if weights is None:
        w = None
    else:
        w = np.asarray(weights, dtype=float).ravel()
        if w.shape != x.shape or np.any(w < 0) or w.sum() <= 0:
            raise RiskError("weights must be nonnegative, same length, not all zero")
        keep = w > 0
        x, w = x[keep], w[keep] / w.sum()
    if gamma == 0:
        return float(np.average(x, weights=w))
    span = float(x.max() - x.min())
    if abs(gamma) * span < 1e-8:
        # mean + gamma var / 2; the next cumulant term is below 1e-16 * span here,
        # and the direct formula would lose everything to underflow for subnormal gamma
        mu = float(np.average(x, weights=w))
        var = float(np.average((x - mu) ** 2, weights=w))
        return min(max(mu + gamma * var / 2, float(x.min())), float(x.max()))
    ref = x.max() if gamma > 0 else x.min()
    z = np.expm1(gamma * (x - ref))
    avg = float(np.average(z, weights=w))
    out = ref + math.log1p(avg) / gamma
    # round-off can leave the result a hair outside [min, max]
    return min(max(out, float(x.min())), float(x.max()))


@dataclass(frozen=True, eq=False)
class LossVector:
    """Per-sample losses, each in ``[0, bound]``."""

    values: np.ndarray
    bound: float = 1.0

    def __post_init__(self):
        v = np.array(self.values, dtype=float).ravel()
        if v.size == 0:
            raise RiskError("loss vector must be non-empty")
        if not self.bound > 0:
            raise RiskError("loss bound must be positive")
        if not np.all(np.isfinite(v)) or v.min() < 0 or v.max() > self.bound:
            raise RiskError(f"losses must lie in [0, {self.bound}]")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.size


def _losses(losses) -> LossVector:
    return losses if isinstance(losses, LossVector) else LossVector(losses)


def erm(losses) -> float:
    return float(np.mean(_losses(losses).values))


def term(losses, gamma: float) -> float:
    """Tilted empirical risk (1/gamma) log( (1/N) sum exp(gamma L_i) )."""
    return tilted_mean(_losses(losses).values, gamma)


def tilted_statistic_from_outcomes(outcomes, gamma: float) -> float:
    """Tilted mean of measurement outcomes in [0, 1]."""
    y = np.asarray(outcomes, dtype=float).ravel()
    if y.size == 0:
        raise RiskError("no outcomes")
    if y.min() < 0 or y.max() > 1:
        raise RiskError("outcomes must lie in [0, 1]")
    return tilted_mean(y, gamma)


def tilted_generalization_error(population_risk: float, losses, gamma: float) -> float:
    lv = _losses(losses)
    if not 0 <= population_risk <= lv.bound:
        raise RiskError(f"population risk must lie in [0, {lv.bound}]")
    return population_risk - term(lv, gamma)


def exact_fidelities(rhos, pis) -> np.ndarray:
    """Tr[rho_i Pi_i] for aligned sequences of states and projectors."""
    states = OperatorPool.coerce(rhos, "state")
    projs = OperatorPool.coerce(pis, "projector")
    if len(states) != len(projs):
        raise RiskError(f"{len(states)} states but {len(projs)} projectors")
    if states.dim != projs.dim:
        raise DimensionMismatch(f"state dim {states.dim} != projector dim {projs.dim}")
    pos = np.arange(len(states))
    return pool_fidelities(states, projs, pos, pos)


def qterm_mu(rhos, pis, gamma: float) -> float:
    """Inner tilted mean mu_c(gamma) of the fidelities (unclamped)."""
    return tilted_mean(exact_fidelities(rhos, pis), gamma)


def qterm_risk(rhos, pis, gamma: float) -> float:
    """Tilted risk 1 - mu_c(gamma) of one projector-valued hypothesis."""
    return 1.0 - qterm_mu(rhos, pis, gamma)


def mu_clamped(mu: float) -> float:
    return clamp_unit(mu)


@dataclass(frozen=True)
class TiltConfig:
    """Tilt, accuracy, confidence, block geometry and constants.

    ``T``, ``k`` and ``l`` may be left as ``None``; the learner then fills
    them in from the sample-size formula.
    """

    gamma: float
    epsilon: float
    delta: float
    T: int | None = None
    k: int | None = None
    l: int | None = None
    C1: float = 1.0
    C2: float = 1.0
    C3: float = 4.0

    def __post_init__(self):
        if not 0 < self.epsilon <= 1:
            raise RiskError("epsilon must lie in (0, 1]")
        if not 0 < self.delta < 1:
            raise RiskError("delta must lie in (0, 1)")
        for name in ("C1", "C2", "C3"):
            if not getattr(self, name) > 0:
                raise RiskError(f"{name} must be positive")
        for name in ("T", "k", "l"):
            v = getattr(self, name)
            if v is not None and (int(v) != v or v < 1):
                raise RiskError(f"{name} must be a positive integer")

    @property
    def has_geometry(self) -> bool:
        return None not in (self.T, self.k, self.l)

    def with_(self, **changes) -> TiltConfig:
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {f: getattr(self, f) for f in
                ("gamma", "epsilon", "delta", "T", "k", "l", "C1", "C2", "C3")}


@dataclass(frozen=True, eq=False)
class HypothesisEnsemble:
    """``m`` projector-valued hypotheses, each a length-``n`` list of projectors."""

    projector_lists: tuple
    labels: tuple = field(default=None)

    def __post_init__(self):
        lists = tuple(OperatorPool.coerce(p, "projector") for p in self.projector_lists)
        if not lists:
            raise RiskError("ensemble needs at least one hypothesis")
        n, d = len(lists[0]), lists[0].dim
        for p in lists:
            if len(p) != n:
                raise RiskError("all projector lists must have the same length")
            if p.dim != d:
                raise DimensionMismatch("all projectors must share one dimension")
        labels = self.labels
        if labels is None:
            labels = tuple(f"h{c}" for c in range(len(lists)))
        labels = tuple(str(x) for x in labels)
        if len(labels) != len(lists):
            raise RiskError("one label per hypothesis")
        object.__setattr__(self, "projector_lists", lists)
        object.__setattr__(self, "labels", labels)

    @property
    def m(self) -> int:
        return len(self.projector_lists)

    @property
    def n(self) -> int:
        return len(self.projector_lists[0])

    @property
    def dim(self) -> int:
        return self.projector_lists[0].dim

    @property
    def complement_lists(self) -> tuple:
        """``I - Pi`` pools, built once per ensemble."""
        cached = self.__dict__.get("_complements")
        if cached is None:
            cached = tuple(p.complement() for p in self.projector_lists)
            object.__setattr__(self, "_complements", cached)
        return cached

    def subset(self, hypotheses: Sequence[int]) -> HypothesisEnsemble:
        idx = list(hypotheses)
        sub = HypothesisEnsemble(tuple(self.projector_lists[c] for c in idx),
                                 tuple(self.labels[c] for c in idx))
        comp = self.complement_lists
        object.__setattr__(sub, "_complements", tuple(comp[c] for c in idx))
        return sub

    def fidelities(self, states: OperatorPool) -> np.ndarray:
        """Exact ``(m, n)`` matrix of Tr[rho_i Pi_i^(c)]."""
        return np.stack([exact_fidelities(states, p) for p in self.projector_lists])

    def mu(self, states: OperatorPool, gamma: float) -> np.ndarray:
        """Exact tilted means mu_c(gamma) over the whole sample, one per hypothesis."""
        return np.array([tilted_mean(row, gamma) for row in self.fidelities(states)])
