"""Single-copy measurement simulation on product states.

A :class:`ProductSample` owns a consumption ledger: each factor may be measured
once.  Views created with :meth:`ProductSample.view` share the parent's ledger,
so a sub-block handed to a search still spends the parent's copies.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .operators import DimensionMismatch, OperatorPool, Projector, pool_fidelities


class DoubleConsumptionError(RuntimeError):
    """A factor of the product state was measured a second time."""


class InsufficientSampleError(ValueError):
    pass


class ProductSample:
    """Ordered single copies rho_1 (x) ... (x) rho_n plus a per-factor ledger."""

    def __init__(self, states, *, _ledger=None, _positions=None):
        self.states = OperatorPool.coerce(states, "state")
        if _ledger is None:
            _ledger = np.zeros(len(self.states), dtype=bool)
            _positions = np.arange(len(self.states))
        self._ledger = _ledger
        self._positions = np.asarray(_positions, dtype=np.intp)

    def __len__(self):
        return len(self.states)

    @property
    def dim(self) -> int:
        return self.states.dim

    @property
    def consumed(self) -> np.ndarray:
        return self._ledger[self._positions].copy()

    def available(self) -> np.ndarray:
        """Local indices of factors not yet measured."""
        return np.flatnonzero(~self._ledger[self._positions])

    def n_consumed(self) -> int:
        return int(self._ledger[self._positions].sum())

    def view(self, indices) -> ProductSample:
        """Sub-sample over ``indices`` that spends copies from this sample's ledger."""
        idx = np.asarray(indices, dtype=np.intp)
        if idx.size and (idx.min() < 0 or idx.max() >= len(self)):
            raise IndexError("view index out of range")
        return ProductSample(self.states.take(idx), _ledger=self._ledger,
                             _positions=self._positions[idx])

    def consume(self, indices) -> None:
        idx = np.asarray(indices, dtype=np.intp).ravel()
        if idx.size and (idx.min() < 0 or idx.max() >= len(self)):
            raise IndexError("sample index out of range")
        glob = self._positions[idx]
        if np.unique(glob).size != glob.size:
            raise DoubleConsumptionError("the same factor appears twice in one measurement")
        used = self._ledger[glob]
        if used.any():
            first = int(idx[np.flatnonzero(used)[0]])
            raise DoubleConsumptionError(f"factor {first} has already been measured")
        self._ledger[glob] = True


@dataclass(frozen=True, eq=False)
class BlockPlan:
    block_length: int
    block_count: int
    index_blocks: np.ndarray  # shape (block_count, block_length)

    def __post_init__(self):
        b = np.asarray(self.index_blocks, dtype=np.intp)
        if b.shape != (self.block_count, self.block_length):
            raise ValueError("index_blocks has the wrong shape")
        if np.unique(b).size != b.size:
            raise ValueError("blocks are not disjoint")
        b.setflags(write=False)
        object.__setattr__(self, "index_blocks", b)

    def __getitem__(self, s: int) -> np.ndarray:
        return self.index_blocks[s]

    def __len__(self):
        return self.block_count


def draw_block_plan(n: int, l: int, count: int, rng: np.random.Generator) -> BlockPlan:
    """``count`` disjoint blocks of length ``l`` drawn without replacement from range(n)."""
    if l < 1 or count < 1:
        raise ValueError("block length and count must be positive")
    if l * count > n:
        raise InsufficientSampleError(f"{count} blocks of length {l} need {l * count} > {n} factors")
    idx = rng.choice(n, size=l * count, replace=False)
    return BlockPlan(l, count, idx.reshape(count, l))


def _projector_pool(pis, length: int) -> OperatorPool:
    if isinstance(pis, Projector):
        return OperatorPool(pis.matrix[None], np.zeros(length, dtype=np.intp), "projector")
    pool = OperatorPool.coerce(pis, "projector")
    if len(pool) != length:
        raise DimensionMismatch(f"{len(pool)} projectors for {length} factors")
    return pool


def fidelities(sample: ProductSample, block, pis) -> np.ndarray:
    """Tr[rho_{block[j]} Pi_j] for each j; no copies are spent."""
    block = np.asarray(block, dtype=np.intp)
    pool = _projector_pool(pis, block.size)
    if pool.dim != sample.dim:
        raise DimensionMismatch(f"projector dim {pool.dim} != state dim {sample.dim}")
    return pool_fidelities(sample.states, pool, block, np.arange(block.size))


def exact_block_mean(sample: ProductSample, block, pis) -> float:
    """(1/l) sum_j Tr[rho_{block[j]} Pi_j], the exact (oracle) block mean."""
    return float(np.mean(fidelities(sample, block, pis)))


def measure_block(sample: ProductSample, block, pis, rng: np.random.Generator) -> np.ndarray:
    """Measure {Pi_j, I - Pi_j} on each factor of ``block``; returns 0/1 outcomes."""
    block = np.asarray(block, dtype=np.intp)
    p = fidelities(sample, block, pis)
    sample.consume(block)
    return (rng.random(block.size) < p).astype(np.int8)


def measure_projector(sample: ProductSample, index: int, pi, rng: np.random.Generator) -> int:
    """Born-rule outcome of {Pi, I - Pi} on factor ``index``; 1 means Pi clicked."""
    if not 0 <= index < len(sample):
        raise IndexError(f"index {index} out of range for a sample of {len(sample)}")
    return int(measure_block(sample, [index], [pi], rng)[0])
