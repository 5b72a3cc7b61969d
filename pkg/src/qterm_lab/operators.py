"""Dense complex-matrix algebra for small qudit systems.

Everything here works on plain ``numpy`` arrays of shape ``(d, d)``.  The thin
wrapper types (:class:`DensityOperator`, :class:`Projector`,
:class:`HermitianOperator`) validate once at construction and are read-only
afterwards, so they can be shared freely.

:class:`OperatorPool` is the workhorse for large product samples: it stores
``K`` distinct matrices plus an index map of length ``n``, so a sequence of a
million qubit states drawn from a pool of 64 costs a few megabytes.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

TAU_HERM = 1e-9
TAU_IDEM = 1e-9
TAU_PSD = 1e-9
TAU_TR = 1e-9
TAU_CLAMP = 1e-9
MAX_DIM = 64

# pair tables larger than this are not cached; fidelities are then computed per position
_MAX_TABLE = 1_000_000


class OperatorError(ValueError):
    """An operator violates a structural invariant (shape, hermiticity, ...)."""


class DimensionMismatch(OperatorError):
    pass


def as_matrix(op) -> np.ndarray:
    """Return the complex ndarray behind ``op`` (wrapper or array-like)."""
    m = op.matrix if isinstance(op, _Operator) else op
    m = np.asarray(m, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise OperatorError(f"expected a square matrix, got shape {m.shape}")
    if m.shape[0] < 1:
        raise OperatorError("matrix dimension must be positive")
    if m.shape[0] > MAX_DIM:
        raise OperatorError(f"dimension {m.shape[0]} exceeds the cap of {MAX_DIM}")
    if not np.all(np.isfinite(m)):
        raise OperatorError("matrix has non-finite entries")
    return m


def hermiticity_error(m: np.ndarray) -> float:
    return float(np.max(np.abs(m - m.conj().T)))


def is_hermitian(op, tol: float = TAU_HERM) -> bool:
    return hermiticity_error(as_matrix(op)) <= tol


def is_projector(op, tol: float = TAU_IDEM) -> bool:
    m = as_matrix(op)
    return hermiticity_error(m) <= TAU_HERM and float(np.max(np.abs(m @ m - m))) <= tol


def is_density(op) -> bool:
    m = as_matrix(op)
    if hermiticity_error(m) > TAU_HERM:
        return False
    evals = np.linalg.eigvalsh(_hermitize(m))
    return evals[0] >= -TAU_PSD and abs(np.trace(m).real - 1.0) <= TAU_TR


def _hermitize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.conj().T)


def _readonly(m: np.ndarray) -> np.ndarray:
    m = np.array(m, dtype=complex, copy=True)
    m.setflags(write=False)
    return m


@dataclass(frozen=True, eq=False)
class _Operator:
    matrix: np.ndarray

    def __post_init__(self):
        m = as_matrix(self.matrix)
        self._check(m)
        object.__setattr__(self, "matrix", _readonly(m))

    def _check(self, m: np.ndarray) -> None:
        if hermiticity_error(m) > TAU_HERM:
            raise OperatorError(
                f"{type(self).__name__} is not Hermitian "
                f"(max |A - A^dag| = {hermiticity_error(m):.3g})"
            )

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.matrix, dtype=dtype)

    def __repr__(self):
        return f"{type(self).__name__}(dim={self.dim})"


class HermitianOperator(_Operator):
    """A Hermitian matrix, e.g. a Hamiltonian at a fixed parameter point."""


class DensityOperator(_Operator):
    """Hermitian, positive semidefinite, unit trace."""

    def _check(self, m):
        super()._check(m)
        evals = np.linalg.eigvalsh(_hermitize(m))
        if evals[0] < -TAU_PSD:
            raise OperatorError(f"density operator has negative eigenvalue {evals[0]:.3g}")
        tr = np.trace(m).real
        if abs(tr - 1.0) > TAU_TR:
            raise OperatorError(f"density operator has trace {tr!r}, expected 1")


class Projector(_Operator):
    """Orthogonal projector: Hermitian and idempotent."""

    def _check(self, m):
        super()._check(m)
        err = float(np.max(np.abs(m @ m - m)))
        if err > TAU_IDEM:
            raise OperatorError(f"projector is not idempotent (max |P^2 - P| = {err:.3g})")

    @property
    def rank(self) -> int:
        return int(round(np.trace(self.matrix).real))

    def complement(self) -> Projector:
        return Projector(np.eye(self.dim) - self.matrix)


def clamp_unit(x: float, tol: float = TAU_CLAMP) -> float:
    """Clamp ``x`` into [0, 1] if it is outside by at most ``tol``; raise otherwise."""
    if x < -tol or x > 1.0 + tol:
        raise OperatorError(f"value {x!r} lies outside [0, 1] beyond tolerance")
    return min(max(x, 0.0), 1.0)


def expectation(rho, pi) -> float:
    """Born-rule probability Tr[rho Pi] of the projector ``pi`` on state ``rho``.

    Both arguments are validated (wrappers are trusted, raw arrays are wrapped).
    The result is clamped into [0, 1] when round-off pushes it out by at most
    ``TAU_CLAMP``.
    """
    r = rho if isinstance(rho, DensityOperator) else DensityOperator(rho)
    p = pi if isinstance(pi, Projector) else Projector(pi)
    if r.dim != p.dim:
        raise DimensionMismatch(f"state has dim {r.dim}, projector has dim {p.dim}")
    # Tr[AB] = sum_ab A_ab B_ba
    tr = np.sum(r.matrix * p.matrix.T)
    if abs(tr.imag) > TAU_HERM:
        raise OperatorError(f"Tr[rho Pi] has imaginary part {tr.imag:.3g}")
    return clamp_unit(float(tr.real))


def eigh_hermitian(h) -> tuple[np.ndarray, np.ndarray]:
    m = as_matrix(h)
    if hermiticity_error(m) > TAU_HERM:
        raise OperatorError("eigendecomposition requested for a non-Hermitian matrix")
    return np.linalg.eigh(_hermitize(m))


def apply_spectral(h, fn) -> np.ndarray:
    """Return ``V diag(fn(lambda)) V^dag`` for Hermitian ``h``."""
    evals, vecs = eigh_hermitian(h)
    return (vecs * fn(evals)) @ vecs.conj().T


def matrix_exp_hermitian(h, scale: float = 1.0) -> np.ndarray:
    """exp(scale * H) through the eigendecomposition of H."""
    return apply_spectral(h, lambda lam: np.exp(scale * lam))


def random_unit_vector(dim: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def random_pure_state(dim: int, rng: np.random.Generator) -> DensityOperator:
    """|psi><psi| for a normalized complex-Gaussian vector |psi>."""
    if dim < 1:
        raise OperatorError("dimension must be at least 1")
    psi = random_unit_vector(dim, rng)
    return DensityOperator(np.outer(psi, psi.conj()))


def random_rank_projector(dim: int, rank: int, rng: np.random.Generator) -> Projector:
    """Projector onto the first ``rank`` columns of a QR-orthonormalized Gaussian matrix."""
    if dim < 1:
        raise OperatorError("dimension must be at least 1")
    if not 0 <= rank <= dim:
        raise OperatorError(f"rank {rank} outside [0, {dim}]")
    g = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    q, _ = np.linalg.qr(g)
    cols = q[:, :rank]
    return Projector(cols @ cols.conj().T)


def random_hermitian(dim: int, rng: np.random.Generator, scale: float = 1.0) -> HermitianOperator:
    g = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    return HermitianOperator(scale * 0.5 * (g + g.conj().T))


def random_mixed_state(dim: int, rng: np.random.Generator, rank: int | None = None) -> DensityOperator:
    """Normalized Wishart-type state G G^dag / Tr(G G^dag)."""
    rank = dim if rank is None else rank
    g = rng.standard_normal((dim, rank)) + 1j * rng.standard_normal((dim, rank))
    w = g @ g.conj().T
    return DensityOperator(_hermitize(w / np.trace(w).real))


# -- serialization -----------------------------------------------------------------

def matrix_to_json(op) -> list:
    """Row-major nested list of ``[re, im]`` pairs."""
    m = as_matrix(op)
    return [[[float(z.real), float(z.imag)] for z in row] for row in m]


def matrix_from_json(data) -> np.ndarray:
    arr = np.asarray(data, dtype=float)
    if arr.ndim != 3 or arr.shape[-1] != 2:
        raise OperatorError("serialized matrix must be a nested array of [re, im] pairs")
    return as_matrix(arr[..., 0] + 1j * arr[..., 1])


# -- pooled operator sequences -----------------------------------------------------

_WRAPPERS = {"state": DensityOperator, "projector": Projector, "hermitian": HermitianOperator}


class _PoolData:
    """Shared, validated stack of distinct matrices with a pairwise-trace cache."""

    def __init__(self, matrices: np.ndarray, kind: str):
        self.matrices = matrices
        self.kind = kind
        self._tables: dict[int, tuple[_PoolData, np.ndarray]] = {}

    def trace_table(self, other: _PoolData) -> np.ndarray | None:
        """Re Tr[A_i B_j] for every pair, or None when the table would be too large."""
        ks, kp = len(self.matrices), len(other.matrices)
        if ks * kp > _MAX_TABLE:
            return None
        hit = self._tables.get(id(other))
        if hit is not None and hit[0] is other:
            return hit[1]
        d = self.matrices.shape[1]
        a = self.matrices.reshape(ks, d * d)
        b = other.matrices.transpose(0, 2, 1).reshape(kp, d * d)
        tab = a @ b.T
        table = _checked_real(tab)
        self._tables[id(other)] = (other, table)
        return table


def _checked_real(tr: np.ndarray) -> np.ndarray:
    if tr.size and float(np.max(np.abs(tr.imag))) > TAU_HERM:
        raise OperatorError("Tr[rho Pi] has a non-negligible imaginary part")
    out = tr.real
    if out.size and (out.min() < -TAU_CLAMP or out.max() > 1.0 + TAU_CLAMP):
        raise OperatorError("Tr[rho Pi] outside [0, 1] beyond tolerance")
    return np.clip(out, 0.0, 1.0)


class OperatorPool(Sequence):
    """Length-``n`` sequence of operators backed by ``K`` distinct matrices.

    ``pool[i]`` returns the wrapped operator ``matrices[index[i]]``.  Pools are
    immutable; :meth:`take` and :meth:`complement` build new pools that share
    storage where possible.
    """

    def __init__(self, matrices, index=None, kind: str = "state", *, _data: _PoolData | None = None):
        if kind not in _WRAPPERS:
            raise ValueError(f"unknown pool kind {kind!r}")
        if _data is None:
            mats = np.asarray(matrices, dtype=complex)
            if mats.ndim != 3:
                raise OperatorError("pool matrices must have shape (K, d, d)")
            wrap = _WRAPPERS[kind]
            for m in mats:
                wrap(m)  # validation only
            mats = mats.copy()
            mats.setflags(write=False)
            _data = _PoolData(mats, kind)
        self._data = _data
        k = len(_data.matrices)
        if index is None:
            index = np.arange(k)
        index = np.asarray(index, dtype=np.intp)
        if index.ndim != 1:
            raise ValueError("pool index must be one-dimensional")
        if index.size and (index.min() < 0 or index.max() >= k):
            raise IndexError("pool index refers outside the matrix stack")
        index.setflags(write=False)
        self._index = index
        self.kind = kind

    @classmethod
    def from_operators(cls, ops, kind: str = "state") -> OperatorPool:
        mats = np.stack([as_matrix(o) for o in ops]) if len(ops) else np.zeros((0, 1, 1), complex)
        return cls(mats, kind=kind)

    @classmethod
    def coerce(cls, ops, kind: str) -> OperatorPool:
        if isinstance(ops, OperatorPool):
            if ops.kind != kind:
                raise OperatorError(f"expected a {kind} pool, got a {ops.kind} pool")
            return ops
        return cls.from_operators(list(ops), kind=kind)

    @property
    def matrices(self) -> np.ndarray:
        return self._data.matrices

    @property
    def index(self) -> np.ndarray:
        return self._index

    @property
    def dim(self) -> int:
        return self._data.matrices.shape[1]

    def __len__(self):
        return len(self._index)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return self.take(np.arange(len(self))[i])
        return _WRAPPERS[self.kind](self._data.matrices[self._index[i]])

    def matrix_at(self, i: int) -> np.ndarray:
        return self._data.matrices[self._index[i]]

    def take(self, positions) -> OperatorPool:
        positions = np.asarray(positions, dtype=np.intp)
        return OperatorPool(None, self._index[positions], self.kind, _data=self._data)

    def complement(self) -> OperatorPool:
        """Pool of ``I - P`` for each projector (same index map)."""
        if self.kind != "projector":
            raise OperatorError("complement is only defined for projector pools")
        comp = np.eye(self.dim)[None, :, :] - self._data.matrices
        comp.setflags(write=False)
        return OperatorPool(None, self._index, "projector", _data=_PoolData(comp, "projector"))


def pool_fidelities(states: OperatorPool, projectors: OperatorPool,
                    state_positions, projector_positions) -> np.ndarray:
    """Vector of Tr[rho_a Pi_b] over aligned position arrays."""
    if states.dim != projectors.dim:
        raise DimensionMismatch(f"state dim {states.dim} != projector dim {projectors.dim}")
    sid = states.index[np.asarray(state_positions, dtype=np.intp)]
    pid = projectors.index[np.asarray(projector_positions, dtype=np.intp)]
    if sid.shape != pid.shape:
        raise DimensionMismatch("position arrays differ in length")
    table = states._data.trace_table(projectors._data)
    if table is not None:
        return table[sid, pid]
    a = states._data.matrices[sid]
    b = projectors._data.matrices[pid]
    return _checked_real(np.einsum("kab,kba->k", a, b))
