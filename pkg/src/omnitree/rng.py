"""Purpose-keyed, counter-based random substreams.

Every random draw in the package comes from a Philox generator whose key is
derived from ``(master seed, purpose tag, key integers)``. Streams for
different leaves or purposes never depend on the order in which they are
requested, so results do not change with refinement order or thread count.
"""
import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def purpose_id(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


def substream(seed: int, purpose: str, *key: int) -> np.random.Generator:
    """Return an independent generator for ``(seed, purpose, *key)``."""
    if any(k < 0 for k in key):
        raise ValueError("substream keys must be non-negative")
    ss = np.random.SeedSequence(
        entropy=int(seed) & _MASK64,
        spawn_key=(purpose_id(purpose), *map(int, key)),
    )
    return np.random.Generator(np.random.Philox(ss))
