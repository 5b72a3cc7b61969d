"""Synthetic hypothesis classes with exactly known tilted means.

Factor ``i`` of the product state is the pure state ``psi_{i mod K}``.  For
hypothesis ``c`` and type ``k`` the projector is ``|phi><phi|`` with

    phi = sqrt(p) psi_k + sqrt(1 - p) e^{i alpha} psi_k^perp,

so Tr[rho_i Pi_i^(c)] = p_{c, i mod K}.  The per-type fidelities are a random
spread around each target, shifted so that the tilted mean over the whole sample
hits the target exactly (tilted means are translation covariant).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .operators import OperatorPool, random_unit_vector
from .risk import HypothesisEnsemble, tilted_mean
from .sim import ProductSample


@dataclass(frozen=True, eq=False)
class PlantedInstance:
    states: OperatorPool
    ensemble: HypothesisEnsemble
    mu: np.ndarray          # exact mu_c(gamma) over the full sample
    type_fidelities: np.ndarray  # (m, K)
    gamma: float

    def fresh_sample(self) -> ProductSample:
        return ProductSample(self.states)

    @property
    def best(self) -> int:
        return int(np.argmax(self.mu))


def _orthogonal_unit(psi: np.ndarray, rng) -> np.ndarray:
    v = random_unit_vector(psi.size, rng)
    v = v - np.vdot(psi, v) * psi
    return v / np.linalg.norm(v)


def planted_fidelities(targets, gamma: float, counts, rng, spread: float = 0.1) -> np.ndarray:
    """Per-type fidelity table whose count-weighted tilted means equal ``targets``."""
    counts = np.asarray(counts, dtype=float)
    rows = []
    for t in targets:
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"target {t!r} outside [0, 1]")
        s = min(spread, t / 3.0, (1.0 - t) / 3.0)
        u = rng.uniform(-s, s, size=counts.size)
        row = u + (t - tilted_mean(u, gamma, counts))
        rows.append(np.clip(row, 0.0, 1.0))
    return np.array(rows)


def planted_instance(targets, gamma: float, n: int, rng: np.random.Generator, *,
                     dim: int = 2, types: int = 16, spread: float = 0.1,
                     labels=None) -> PlantedInstance:
    if dim < 2:
        raise ValueError("planted states need dim >= 2")
    K = min(types, n)
    index = np.arange(n, dtype=np.intp) % K
    counts = np.bincount(index, minlength=K)
    psis = [random_unit_vector(dim, rng) for _ in range(K)]
    perps = [_orthogonal_unit(p, rng) for p in psis]
    states = OperatorPool(np.stack([np.outer(p, p.conj()) for p in psis]), index, "state")
    table = planted_fidelities(targets, gamma, counts, rng, spread)
    lists = []
    for row in table:
        mats = []
        for k in range(K):
            alpha = rng.uniform(0, 2 * np.pi)
            phi = np.sqrt(row[k]) * psis[k] + np.sqrt(1.0 - row[k]) * np.exp(1j * alpha) * perps[k]
            mats.append(np.outer(phi, phi.conj()))
        lists.append(OperatorPool(np.stack(mats), index, "projector"))
    ensemble = HypothesisEnsemble(tuple(lists), labels)
    mu = ensemble.mu(states, gamma)
    return PlantedInstance(states, ensemble, mu, table, gamma)
