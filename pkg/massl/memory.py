"""Memory

The non-parametric FIFO memory of past teacher representations and the
samplers that partition it into blocks.

The memory is a ring buffer. Callers address it by logical position:
position 0 is the oldest slot and position K - 1 the newest, which is what
a queue that physically shifts on every insertion would show. The ring
buffer only moves a cursor.
"""

import enum
import logging
from dataclasses import dataclass

import numpy as np

from massl import errors
from massl import numkernel

LOGGER = logging.getLogger("massl")


class SamplingStrategy(enum.Enum):
    """How the memory is partitioned into blocks at each step."""

    STOCHASTIC = "stochastic"
    BLOCKWISE = "blockwise"


@dataclass
class Memory:
    """Fixed-capacity FIFO of K unit vectors of dimension D.

    ``ages[s]`` is the insertion counter of the vector held in physical slot
    ``s``; ``inserted`` counts every vector ever written, including the
    random fill.
    """

    capacity: int
    dim: int
    slots: np.ndarray
    cursor: int
    ages: np.ndarray
    inserted: int

    def physical(self, positions):
        """Map logical positions to physical slot indices."""
        return (self.cursor + np.asarray(positions, dtype=np.int64)) % self.capacity

    def ordered(self):
        """Return (vectors, ages) oldest first."""
        idx = self.physical(np.arange(self.capacity))
        return self.slots[idx].copy(), self.ages[idx].copy()

    def copy(self):
        return Memory(
            capacity=self.capacity,
            dim=self.dim,
            slots=self.slots.copy(),
            cursor=self.cursor,
            ages=self.ages.copy(),
            inserted=self.inserted,
        )


@dataclass(frozen=True)
class BlockPlan:
    """A partition of the K memory positions into B blocks of N_b each."""

    blocks: np.ndarray
    strategy: SamplingStrategy

    @property
    def num_blocks(self):
        return self.blocks.shape[0]

    @property
    def block_size(self):
        return self.blocks.shape[1]


def memory_init(capacity, dim, seed):
    """Create a memory pre-filled with random unit vectors.

    :param int capacity: K, number of slots
    :param int dim: D, vector dimensionality
    :param int seed: seed of the standard-normal fill
    :returns: Memory
    """
    if capacity < 1 or dim < 2:
        raise errors.InvalidShape(
            f"memory needs K >= 1 and D >= 2, got K={capacity}, D={dim}"
        )
    rng = np.random.default_rng(seed)
    slots = numkernel.l2_normalize(rng.standard_normal((capacity, dim)))
    return Memory(
        capacity=capacity,
        dim=dim,
        slots=slots,
        cursor=0,
        ages=np.arange(capacity, dtype=np.int64),
        inserted=capacity,
    )


def enqueue_batch(mem, batch):
    """Write ``batch`` over the oldest slots, in insertion order.

    The memory is updated in place and returned.

    :param Memory mem: memory to update
    :param batch: (N, D) array of unit vectors, N <= K
    :raises BatchTooLarge: when N > K
    :raises NotUnitNorm: when a row is off the unit sphere
    """
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != mem.dim:
        raise errors.DimMismatch(
            f"expected batch of shape (N, {mem.dim}), got {batch.shape}"
        )
    n = batch.shape[0]
    if n > mem.capacity:
        raise errors.BatchTooLarge(
            f"cannot enqueue {n} vectors into a memory of {mem.capacity}"
        )
    if n == 0:
        return mem
    if not numkernel.is_unit(batch):
        raise errors.NotUnitNorm("enqueued vectors must be unit-norm")
    idx = mem.physical(np.arange(n))
    mem.slots[idx] = batch
    mem.ages[idx] = mem.inserted + np.arange(n, dtype=np.int64)
    mem.inserted += n
    mem.cursor = (mem.cursor + n) % mem.capacity
    return mem


def sample_blocks(capacity, block_size, strategy, rng):
    """Partition positions {0, ..., K-1} into K / N_b disjoint blocks.

    Stochastic plans split a uniform random permutation into consecutive
    chunks; Blockwise plans are contiguous slices and ignore ``rng``.

    :param int capacity: K
    :param int block_size: N_b, must divide K
    :param SamplingStrategy strategy: partition rule
    :param rng: numpy Generator (or seed) driving the permutation
    :returns: BlockPlan
    """
    if block_size < 2:
        raise errors.InvalidParameter(f"block size must be >= 2, got {block_size}")
    if capacity % block_size != 0:
        raise errors.IndivisibleBlockSize(
            f"block size {block_size} does not divide memory size {capacity}"
        )
    strategy = SamplingStrategy(strategy)
    if strategy is SamplingStrategy.STOCHASTIC:
        rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        order = rng.permutation(capacity)
    else:
        order = np.arange(capacity)
    blocks = order.astype(np.int64).reshape(capacity // block_size, block_size)
    return BlockPlan(blocks=blocks, strategy=strategy)


def gather(mem, block):
    """Copy the vectors at the given logical positions.

    The returned matrix is detached from the memory: later enqueues do not
    change it.

    :raises IndexOutOfRange: for positions outside [0, K)
    """
    block = np.asarray(block, dtype=np.int64)
    if block.size and (block.min() < 0 or block.max() >= mem.capacity):
        raise errors.IndexOutOfRange(
            f"memory positions must lie in [0, {mem.capacity})"
        )
    return mem.slots[mem.physical(block)]


def gather_plan(mem, plan):
    """Gather every block of ``plan`` at once as a (B, N_b, D) array."""
    if plan.blocks.size != mem.capacity:
        raise errors.DimMismatch(
            f"plan covers {plan.blocks.size} positions, memory has {mem.capacity}"
        )
    return gather(mem, plan.blocks)
