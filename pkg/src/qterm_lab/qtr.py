"""Tilted risk of a Hamiltonian on a state, its partition function, and Renyi divergences.

All quantities are evaluated in the eigenbasis of ``H``: with ``H = sum_i l_i |i><i|``
and weights ``w_i = <i|rho|i>``,

    Z(g)   = Tr(e^{g H} rho) = sum_i w_i e^{g l_i}
    qtr(g) = (1/g) log Z(g),

so qtr is a weighted tilted mean of the spectrum and inherits its stable evaluation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .operators import (
    TAU_HERM,
    DensityOperator,
    DimensionMismatch,
    HermitianOperator,
    apply_spectral,
    eigh_hermitian,
)
from .risk import tilted_mean

# eigenvalues at or below this are treated as outside the support
SUPPORT_TOL = 1e-12


@dataclass(frozen=True)
class TiltedHamiltonianModel:
    hamiltonian: HermitianOperator
    state: DensityOperator

    def __post_init__(self):
        h = self.hamiltonian
        r = self.state
        if not isinstance(h, HermitianOperator):
            object.__setattr__(self, "hamiltonian", h := HermitianOperator(h))
        if not isinstance(r, DensityOperator):
            object.__setattr__(self, "state", r := DensityOperator(r))
        if h.dim != r.dim:
            raise DimensionMismatch(f"Hamiltonian dim {h.dim} != state dim {r.dim}")

    def spectral_weights(self):
        evals, vecs = eigh_hermitian(self.hamiltonian.matrix)
        w = np.einsum("ai,ab,bi->i", vecs.conj(), self.state.matrix, vecs).real
        return evals, np.clip(w, 0.0, None)


def qtr(model: TiltedHamiltonianModel, gamma: float) -> float:
    """(1/gamma) log Tr(e^{gamma H} rho); use :func:`qtr_limit` at gamma = 0."""
    if gamma == 0:
        raise ValueError("gamma = 0 is the limit case; call qtr_limit")
    lam, w = model.spectral_weights()
    return tilted_mean(lam, gamma, w)


def qtr_limit(model: TiltedHamiltonianModel) -> float:
    """Tr(H rho)."""
    tr = np.sum(model.hamiltonian.matrix * model.state.matrix.T)
    if abs(tr.imag) > TAU_HERM * max(1.0, abs(tr.real)):
        raise ValueError(f"Tr(H rho) has imaginary part {tr.imag:.3g}")
    return float(tr.real)


def partition_function(model: TiltedHamiltonianModel, gamma: float) -> float:
    lam, w = model.spectral_weights()
    return float(np.sum(w * np.exp(gamma * lam)))


def log_partition_function(model: TiltedHamiltonianModel, gamma: float) -> float:
    lam, w = model.spectral_weights()
    z = gamma * lam
    top = z[w > 0].max()
    return float(top + math.log(np.sum(w * np.exp(z - top))))


def tilted_overlap(rho, sigma, gamma: float) -> float:
    """Tr(sigma^gamma rho) computed from the spectrum of sigma."""
    r = rho if isinstance(rho, DensityOperator) else DensityOperator(rho)
    s = sigma if isinstance(sigma, DensityOperator) else DensityOperator(sigma)
    if r.dim != s.dim:
        raise DimensionMismatch("states differ in dimension")
    sg = apply_spectral(s.matrix, lambda lam: np.clip(lam, 0.0, None) ** gamma)
    return float(np.sum(sg * r.matrix.T).real)


def _support_spectrum(m):
    evals, vecs = eigh_hermitian(m)
    evals = np.where(evals > SUPPORT_TOL, evals, 0.0)
    return evals, vecs


def renyi_relative_entropy(rho, sigma, alpha: float) -> float:
    """D_alpha = log Tr(rho^alpha sigma^{1-alpha}) / (alpha - 1); ``math.inf`` on support failure."""
    if not alpha > 0 or alpha == 1:
        raise ValueError("alpha must be positive and different from 1")
    r = rho if isinstance(rho, DensityOperator) else DensityOperator(rho)
    s = sigma if isinstance(sigma, DensityOperator) else DensityOperator(sigma)
    if r.dim != s.dim:
        raise DimensionMismatch("states differ in dimension")
    a, va = _support_spectrum(r.matrix)
    b, vb = _support_spectrum(s.matrix)
    overlap = np.abs(va.conj().T @ vb) ** 2  # |<a_i|b_j>|^2
    on_a, on_b = a > 0, b > 0
    if alpha > 1:
        leak = float(np.sum((a[:, None] * overlap)[np.ix_(on_a, ~on_b)]))
        if leak > SUPPORT_TOL:
            return math.inf
    ra = np.where(on_a, a, 1.0) ** alpha * on_a
    sb = np.where(on_b, b, 1.0) ** (1.0 - alpha) * on_b
    q = float(ra @ overlap @ sb)
    if q <= 0:
        return math.inf
    return math.log(q) / (alpha - 1.0)


def relative_entropy(rho, sigma) -> float:
    """Tr rho (log rho - log sigma), ``math.inf`` if rho leaves the support of sigma."""
    r = rho if isinstance(rho, DensityOperator) else DensityOperator(rho)
    s = sigma if isinstance(sigma, DensityOperator) else DensityOperator(sigma)
    a, va = _support_spectrum(r.matrix)
    b, vb = _support_spectrum(s.matrix)
    overlap = np.abs(va.conj().T @ vb) ** 2
    on_a, on_b = a > 0, b > 0
    if float(np.sum((a[:, None] * overlap)[np.ix_(on_a, ~on_b)])) > SUPPORT_TOL:
        return math.inf
    ent = float(np.sum(a[on_a] * np.log(a[on_a])))
    logb = np.log(np.where(on_b, b, 1.0)) * on_b
    cross = float(a @ overlap @ logb)
    return ent - cross
