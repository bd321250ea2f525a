"""Reproducible random streams.

Paths are grouped in fixed-size blocks; block ``b`` of a run seeded with
``seed`` always draws from the counter-based Philox generator keyed by
``SeedSequence(seed, spawn_key=(b,))``.  A path's randomness therefore
depends only on ``(seed, path index)``, never on how many workers process
the blocks.
"""

from concurrent.futures import ThreadPoolExecutor

import numpy as np

BLOCK_SIZE = 8192


def block_generator(seed, block):
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(block),))
    return np.random.Generator(np.random.Philox(ss))


def generator(seed, *key):
    """Generator for an auxiliary stream identified by integer ``key``
    components (kept disjoint from path blocks by a leading marker)."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(2**31 - 1, *[int(k) for k in key]))
    return np.random.Generator(np.random.Philox(ss))


def blocks(n, block_size=BLOCK_SIZE):
    return [(b, start, min(start + block_size, n)) for b, start in enumerate(range(0, n, block_size))]


def map_blocks(fn, n, seed, workers=1, block_size=BLOCK_SIZE):
    """Call ``fn(rng, n_block)`` for every block and return the results in
    block order."""
    jobs = blocks(n, block_size)

    def run(job):
        b, start, stop = job
        return fn(block_generator(seed, b), stop - start)

    if workers is None or workers <= 1 or len(jobs) == 1:
        return [run(job) for job in jobs]
    with ThreadPoolExecutor(max_workers=int(workers)) as pool:
        return list(pool.map(run, jobs))
