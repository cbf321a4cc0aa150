"""Deterministic sums over the timestep axis.

Timesteps are cut into fixed-size blocks, each block is summed on its own
(optionally on a worker thread) and the block partials are merged with a
pairwise tree in block order. Block boundaries never depend on the worker
count, so results are bit-identical for any ``workers`` value.
"""

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Tuple

import numpy as np

BLOCK_STEPS = 64

PartialSum = Tuple[np.ndarray, ...]


def step_blocks(num_steps: int, block_steps: int = BLOCK_STEPS) -> List[Tuple[int, int]]:
    """Half-open [start, stop) index ranges covering ``num_steps`` timesteps."""
    if num_steps <= 0:
        raise ValueError(f"num_steps must be positive, got {num_steps}")
    return [(start, min(start + block_steps, num_steps)) for start in range(0, num_steps, block_steps)]


def pairwise_combine(partials: List[PartialSum]) -> PartialSum:
    """Merge block partials with a balanced tree, left to right at every level."""
    level = list(partials)
    while len(level) > 1:
        merged = []
        for i in range(0, len(level) - 1, 2):
            merged.append(tuple(a + b for a, b in zip(level[i], level[i + 1])))
        if len(level) % 2:
            merged.append(level[-1])
        level = merged
    return level[0]


def block_reduce(
    block_fn: Callable[[int, int], PartialSum],
    num_steps: int,
    workers: int = 1,
    block_steps: int = BLOCK_STEPS
) -> PartialSum:
    """
    Sum per-timestep terms over all timesteps.

    Args:
        block_fn: Returns the partial sums (a tuple of arrays) for timesteps [start, stop)
        num_steps: Total number of timesteps
        workers: Thread count; 1 runs the blocks inline
        block_steps: Timesteps per block

    Returns:
        Tuple of summed arrays, same structure as ``block_fn`` output
    """
    blocks = step_blocks(num_steps, block_steps)
    if workers <= 1 or len(blocks) == 1:
        partials = [block_fn(start, stop) for start, stop in blocks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            partials = list(pool.map(lambda bounds: block_fn(*bounds), blocks))
    return pairwise_combine(partials)
