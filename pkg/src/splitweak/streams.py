"""Reproducible random streams addressed by (seed, purpose, grid point, block).

Paths are processed in fixed-size blocks.  Each block owns a Philox
generator keyed by a ``SeedSequence`` spawn key, so every block can be
produced independently and in any order: the draws for path ``i`` depend
only on the seed, the key and ``i``, never on scheduling or worker count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Sequence, Tuple

import numpy as np

BLOCK_SIZE = 4096

# purpose tags
SCHEME = 0
REFERENCE = 1
SUPERMARTINGALE = 2
COUPLED = 3


@dataclass(frozen=True)
class Stream:
    seed: int
    key: Tuple[int, ...] = ()

    def child(self, *key: int) -> "Stream":
        return Stream(self.seed, self.key + tuple(int(k) for k in key))

    def block(self, b: int) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=int(self.seed) & (2**64 - 1), spawn_key=self.key + (int(b),))
        return np.random.Generator(np.random.Philox(ss))


def blocks(npaths: int, block_size: int = BLOCK_SIZE) -> List[Tuple[int, int, int]]:
    """``(block index, first path, block length)`` covering ``npaths`` paths."""
    return [(b, start, min(block_size, npaths - start)) for b, start in enumerate(range(0, npaths, block_size))]


def map_blocks(fn: Callable, items: Sequence, workers: int = 1) -> list:
    """Ordered map; the worker count never changes the result."""
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
