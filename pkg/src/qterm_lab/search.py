"""Sequential threshold search over (projector list, threshold) pairs.

Contract of a search over one product state of ``n`` factors with precision ``eps``:

* completeness: if some pair has block mean > theta_c, an index is accepted with
  probability at least 0.03;
* soundness: an accepted index c has block mean >= theta_c - eps, except with
  probability at most ``p_false`` per scan.

Two backends honour it.  ``oracle`` decides from the exact block mean and spends
no copies.  ``sampled`` measures a fresh random sub-block of ``n // m`` unspent
factors per pair and accepts when the plain empirical mean clears theta_c - eps/2.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .operators import OperatorPool
from .sim import InsufficientSampleError, ProductSample, exact_block_mean, measure_block

BACKENDS = ("oracle", "sampled")
COMPLETENESS_FLOOR = 0.03


class PreconditionError(ValueError):
    pass


class PreconditionWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class ThresholdedHypothesis:
    projectors: OperatorPool
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "projectors", OperatorPool.coerce(self.projectors, "projector"))
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"threshold {self.theta!r} outside [0, 1]")


@dataclass(frozen=True)
class ScanRecord:
    index: int
    theta: float
    exact_mean: float
    statistic: float | None
    factors: int
    accepted: bool


@dataclass(frozen=True)
class SearchOutcome:
    accepted: int | None
    scans: tuple = field(default_factory=tuple)
    p_false: float = 0.0
    backend: str = "oracle"

    def __post_init__(self):
        if self.accepted is not None and self.accepted not in [s.index for s in self.scans]:
            raise ValueError("accepted index was never scanned")

    def to_dict(self) -> dict:
        return {
            "accepted": self.accepted,
            "p_false": self.p_false,
            "scans": [s.__dict__.copy() for s in self.scans],
        }


def precondition_holds(n: int, m: int, epsilon: float, C1: float = 1.0, C2: float = 1.0) -> bool:
    return (math.log(m) + C2) ** 2 < C1 * n * epsilon ** 2


def soundness_failure_bound(factors: int, epsilon: float) -> float:
    """Two-sided Hoeffding tail for a deviation of eps/2 on ``factors`` Bernoulli outcomes."""
    return 2.0 * math.exp(-factors * epsilon ** 2 / 2.0)


def threshold_search(sample: ProductSample, hypotheses, epsilon: float,
                     backend: str = "oracle", rng: np.random.Generator | None = None, *,
                     C1: float = 1.0, C2: float = 1.0,
                     precondition: str = "raise") -> SearchOutcome:
    hyps = list(hypotheses)
    if not hyps:
        raise ValueError("threshold search needs at least one hypothesis")
    if backend not in BACKENDS:
        raise ValueError(f"unknown backend {backend!r}")
    if not 0 <= epsilon <= 1:
        raise ValueError("epsilon must lie in [0, 1]")
    n, m = len(sample), len(hyps)
    for h in hyps:
        if len(h.projectors) != n:
            raise ValueError(f"projector list of length {len(h.projectors)} on a sample of {n}")
    if precondition not in ("raise", "warn", "ignore"):
        raise ValueError(f"unknown precondition mode {precondition!r}")
    if precondition != "ignore" and not precondition_holds(n, m, epsilon, C1, C2):
        msg = (f"(log m + C2)^2 = {(math.log(m) + C2) ** 2:.4g} is not below "
               f"C1 n eps^2 = {C1 * n * epsilon ** 2:.4g}")
        if precondition == "raise":
            raise PreconditionError(msg)
        warnings.warn(msg, PreconditionWarning, stacklevel=2)

    block = np.arange(n)
    scans = []
    if backend == "oracle":
        for c, h in enumerate(hyps):
            mean = exact_block_mean(sample, block, h.projectors)
            ok = mean >= h.theta - epsilon / 2
            scans.append(ScanRecord(c, h.theta, mean, None, 0, ok))
            if ok:
                return SearchOutcome(c, tuple(scans), 0.0, backend)
        return SearchOutcome(None, tuple(scans), 0.0, backend)

    if rng is None:
        raise ValueError("the sampled backend needs an rng")
    b = n // m
    if b < 1:
        raise InsufficientSampleError(f"{n} factors cannot be split over {m} hypotheses")
    p_false = soundness_failure_bound(b, epsilon)
    for c, h in enumerate(hyps):
        free = sample.available()
        if free.size < b:
            raise InsufficientSampleError(f"only {free.size} unspent factors, need {b}")
        sub = np.sort(rng.choice(free, size=b, replace=False))
        mean = exact_block_mean(sample, block, h.projectors)
        pis = h.projectors.take(sub)
        stat = float(np.mean(measure_block(sample, sub, pis, rng)))
        ok = stat >= h.theta - epsilon / 2
        scans.append(ScanRecord(c, h.theta, mean, stat, b, ok))
        if ok:
            return SearchOutcome(c, tuple(scans), p_false, backend)
    return SearchOutcome(None, tuple(scans), p_false, backend)
