import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qterm_lab import rng as rngmod
from qterm_lab.operators import (DensityOperator, Projector, expectation, random_pure_state,
                                 random_rank_projector)
from qterm_lab.sim import (DoubleConsumptionError, InsufficientSampleError, ProductSample,
                           draw_block_plan, exact_block_mean, measure_block, measure_projector)

KET0 = np.diag([1.0, 0.0]).astype(complex)
KET1 = np.diag([0.0, 1.0]).astype(complex)


def test_streams_are_reproducible_and_distinct():
    a = rngmod.trial_stream(42, 3).random(5)
    assert np.array_equal(a, rngmod.trial_stream(42, 3).random(5))
    assert not np.array_equal(a, rngmod.trial_stream(42, 4).random(5))
    assert not np.array_equal(a, rngmod.stream(42, rngmod.SCENARIO, 3).random(5))
    rngmod.check_seed(2 ** 64 - 1)
    with pytest.raises(ValueError):
        rngmod.check_seed(-1)
    with pytest.raises(ValueError):
        rngmod.check_seed(2 ** 64)


def test_shard_collision_refused():
    rngmod.check_disjoint([range(0, 5), range(5, 9)])
    with pytest.raises(rngmod.SeedCollisionError):
        rngmod.check_disjoint([range(0, 5), range(4, 9)])


def test_measure_trivial_projectors():
    rng = np.random.default_rng(0)
    s = ProductSample([random_pure_state(2, rng) for _ in range(50)])
    assert all(measure_projector(s, i, np.eye(2), rng) == 1 for i in range(25))
    assert all(measure_projector(s, i, np.zeros((2, 2)), rng) == 0 for i in range(25, 50))


def test_born_frequency_maximally_mixed():
    rng = np.random.default_rng(1)
    n = 100_000
    s = ProductSample([DensityOperator(np.eye(2) / 2)] * n)
    out = measure_block(s, np.arange(n), Projector(KET0), rng)
    assert abs(out.mean() - 0.5) < 0.01


def test_double_consumption_raises():
    rng = np.random.default_rng(2)
    s = ProductSample([KET0] * 4)
    measure_projector(s, 1, KET0, rng)
    with pytest.raises(DoubleConsumptionError):
        measure_projector(s, 1, KET0, rng)
    with pytest.raises(DoubleConsumptionError):
        measure_block(s, [0, 0], [KET0, KET0], rng)
    v = s.view([0, 1, 2])
    with pytest.raises(DoubleConsumptionError):
        measure_block(v, [1], [KET0], rng)  # view shares the parent ledger
    measure_block(v, [2], [KET0], rng)
    assert s.consumed.tolist() == [False, True, True, False]


def test_block_plan_examples():
    rng = np.random.default_rng(3)
    p = draw_block_plan(4, 2, 2, rng)
    assert sorted(p.index_blocks.ravel().tolist()) == [0, 1, 2, 3]
    p = draw_block_plan(10, 3, 2, rng)
    assert np.unique(p.index_blocks).size == 6
    with pytest.raises(InsufficientSampleError):
        draw_block_plan(5, 3, 2, rng)


def test_block_plan_uniform_inclusion():
    rng = np.random.default_rng(4)
    hits = np.zeros(100)
    for _ in range(10_000):
        hits[draw_block_plan(100, 5, 4, rng).index_blocks.ravel()] += 1
    assert np.max(np.abs(hits / 10_000 - 0.2)) <= 0.02


def test_exact_block_mean_examples():
    s = ProductSample([KET0, KET1, KET0, KET1])
    assert exact_block_mean(s, [0, 1, 2, 3], [KET0, KET1, KET0, KET1]) == 1.0
    assert exact_block_mean(s, [0, 1, 2, 3], [KET0, KET0, KET0, KET0]) == 0.5
    rng = np.random.default_rng(5)
    states = [random_pure_state(2, rng) for _ in range(4)]
    pis = [random_rank_projector(2, 1, rng) for _ in range(4)]
    direct = np.mean([expectation(r, p) for r, p in zip(states, pis)])
    assert abs(exact_block_mean(ProductSample(states), range(4), pis) - direct) < 1e-12
    assert ProductSample(states).n_consumed() == 0


def test_oracle_matches_sampled_in_distribution():
    rng = np.random.default_rng(6)
    rho, pi = random_pure_state(2, rng), random_rank_projector(2, 1, rng)
    n = 50_000
    s = ProductSample([rho] * n)
    p = exact_block_mean(s, np.arange(n), pi)
    freq = measure_block(s, np.arange(n), pi, rng).mean()
    assert abs(freq - p) < 4 * np.sqrt(p * (1 - p) / n) + 1 / n


def test_born_statistics_coverage():
    # |freq - p| within 3 sigma + 1/N in at least 99% of seeded runs
    base = np.random.default_rng(7)
    rho, pi = random_pure_state(2, base), random_rank_projector(2, 1, base)
    N = 400
    p = expectation(rho, pi)
    ok = 0
    for seed in range(500):
        s = ProductSample([rho] * N)
        f = measure_block(s, np.arange(N), pi, rngmod.trial_stream(seed, 0)).mean()
        ok += abs(f - p) <= 3 * np.sqrt(p * (1 - p) / N) + 1 / N
    assert ok / 500 >= 0.99


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 60), st.integers(1, 6), st.integers(1, 6), st.integers(0, 2 ** 32))
def test_block_plans_are_disjoint(n, l, count, seed):
    rng = np.random.default_rng(seed)
    if l * count > n:
        with pytest.raises(InsufficientSampleError):
            draw_block_plan(n, l, count, rng)
    else:
        b = draw_block_plan(n, l, count, rng).index_blocks
        assert np.unique(b).size == l * count and b.min() >= 0 and b.max() < n
