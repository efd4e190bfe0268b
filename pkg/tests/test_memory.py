#!/usr/bin/env python
from collections import deque

import numpy as np
import pytest

from massl import errors
from massl import memory
from massl import numkernel
from massl.memory import SamplingStrategy


def _unit_rows(rng, n, dim):
    return numkernel.l2_normalize(rng.standard_normal((n, dim)))


def test_memory_init_is_deterministic():
    first = memory.memory_init(4, 3, seed=7)
    second = memory.memory_init(4, 3, seed=7)
    assert np.array_equal(first.slots, second.slots)
    assert np.array_equal(first.ages, second.ages)


def test_memory_init_slots_are_unit():
    mem = memory.memory_init(64, 5, seed=1)
    assert np.allclose(np.linalg.norm(mem.slots, axis=1), 1.0, atol=1e-6)
    assert mem.cursor == 0


@pytest.mark.parametrize("capacity, dim", [(0, 3), (4, 1)])
def test_memory_init_rejects_degenerate_shapes(capacity, dim):
    with pytest.raises(errors.InvalidShape):
        memory.memory_init(capacity, dim, seed=0)


def test_enqueue_evicts_oldest(rng):
    mem = memory.memory_init(4, 3, seed=0)
    a, b, c, d, e, f = _unit_rows(rng, 6, 3)
    memory.enqueue_batch(mem, np.stack([a, b, c, d]))
    memory.enqueue_batch(mem, np.stack([e, f]))
    vectors, ages = mem.ordered()
    assert np.array_equal(vectors, np.stack([c, d, e, f]))
    assert list(ages) == sorted(ages)


def test_enqueue_full_replacement(rng):
    mem = memory.memory_init(5, 3, seed=0)
    memory.enqueue_batch(mem, _unit_rows(rng, 2, 3))
    batch = _unit_rows(rng, 5, 3)
    memory.enqueue_batch(mem, batch)
    vectors, _ = mem.ordered()
    assert np.array_equal(vectors, batch)


def test_enqueue_rejects_large_batch(rng):
    mem = memory.memory_init(4, 3, seed=0)
    with pytest.raises(errors.BatchTooLarge):
        memory.enqueue_batch(mem, _unit_rows(rng, 5, 3))


def test_enqueue_rejects_non_unit_rows():
    mem = memory.memory_init(4, 2, seed=0)
    with pytest.raises(errors.NotUnitNorm):
        memory.enqueue_batch(mem, np.array([[3.0, 4.0]]))


def test_enqueue_rejects_wrong_dimension(rng):
    mem = memory.memory_init(4, 2, seed=0)
    with pytest.raises(errors.DimMismatch):
        memory.enqueue_batch(mem, _unit_rows(rng, 2, 3))


def test_memory_matches_last_k_oracle(rng):
    for _ in range(1000):
        capacity = int(rng.integers(1, 12))
        dim = int(rng.integers(2, 4))
        mem = memory.memory_init(capacity, dim, seed=int(rng.integers(1 << 30)))
        oracle = deque(
            zip(mem.slots.copy(), range(capacity)), maxlen=capacity
        )
        inserted = capacity
        for _ in range(int(rng.integers(1, 6))):
            n = int(rng.integers(0, capacity + 1))
            batch = _unit_rows(rng, n, dim) if n else np.zeros((0, dim))
            memory.enqueue_batch(mem, batch)
            for row in batch:
                oracle.append((row, inserted))
                inserted += 1
        vectors, ages = mem.ordered()
        assert np.array_equal(vectors, np.stack([v for v, _ in oracle]))
        assert list(ages) == [age for _, age in oracle]
        assert mem.inserted == inserted


def test_blockwise_plan():
    plan = memory.sample_blocks(8, 4, SamplingStrategy.BLOCKWISE, 0)
    assert plan.blocks.tolist() == [[0, 1, 2, 3], [4, 5, 6, 7]]
    assert plan.num_blocks == 2
    assert plan.block_size == 4


def test_blockwise_plan_ignores_seed():
    plans = [memory.sample_blocks(16, 4, "blockwise", seed).blocks for seed in range(5)]
    assert all(np.array_equal(plans[0], p) for p in plans)


def test_stochastic_plan_is_a_partition():
    plan = memory.sample_blocks(8, 4, SamplingStrategy.STOCHASTIC, np.random.default_rng(3))
    assert plan.blocks.shape == (2, 4)
    assert not set(plan.blocks[0]) & set(plan.blocks[1])
    assert sorted(plan.blocks.ravel().tolist()) == list(range(8))


def test_sample_blocks_rejects_indivisible_size():
    with pytest.raises(errors.IndivisibleBlockSize):
        memory.sample_blocks(6, 4, SamplingStrategy.STOCHASTIC, 0)


def test_sample_blocks_rejects_unit_block():
    with pytest.raises(errors.InvalidParameter):
        memory.sample_blocks(6, 1, SamplingStrategy.STOCHASTIC, 0)


def test_stochastic_partition_property(rng):
    for _ in range(1000):
        block_size = int(rng.integers(2, 9))
        capacity = block_size * int(rng.integers(1, 9))
        plan = memory.sample_blocks(
            capacity, block_size, SamplingStrategy.STOCHASTIC, int(rng.integers(1 << 30))
        )
        flat = plan.blocks.ravel()
        assert flat.size == capacity
        assert np.array_equal(np.sort(flat), np.arange(capacity))


def test_stochastic_block_membership_is_uniform():
    trials = 10_000
    capacity, block_size = 16, 4
    p = block_size / capacity
    sampler = np.random.default_rng(99)
    counts = np.zeros(capacity)
    for _ in range(trials):
        plan = memory.sample_blocks(capacity, block_size, SamplingStrategy.STOCHASTIC, sampler)
        counts[plan.blocks[0]] += 1
    sigma = np.sqrt(p * (1 - p) / trials)
    assert np.all(np.abs(counts / trials - p) <= 4 * sigma)


def test_gather_fresh_memory_in_storage_order():
    mem = memory.memory_init(6, 3, seed=2)
    assert np.array_equal(memory.gather(mem, np.arange(6)), mem.slots)


def test_gather_is_pure(rng):
    mem = memory.memory_init(6, 3, seed=2)
    block = np.array([4, 1, 3])
    first = memory.gather(mem, block)
    second = memory.gather(mem, block)
    assert np.array_equal(first, second)
    memory.enqueue_batch(mem, _unit_rows(rng, 6, 3))
    assert np.array_equal(first, second)
    assert not np.array_equal(first, memory.gather(mem, block))


def test_gather_rejects_out_of_range():
    mem = memory.memory_init(6, 3, seed=2)
    with pytest.raises(errors.IndexOutOfRange):
        memory.gather(mem, [0, 6])


def test_gather_uses_logical_positions(rng):
    mem = memory.memory_init(4, 3, seed=0)
    batch = _unit_rows(rng, 3, 3)
    memory.enqueue_batch(mem, batch)
    # Position 0 is now the only surviving initial vector.
    assert np.array_equal(memory.gather(mem, [1, 2, 3]), batch)


def test_gather_plan_shape():
    mem = memory.memory_init(8, 3, seed=0)
    plan = memory.sample_blocks(8, 2, SamplingStrategy.STOCHASTIC, 0)
    assert memory.gather_plan(mem, plan).shape == (4, 2, 3)
