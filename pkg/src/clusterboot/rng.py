"""Counter-based random streams.

All randomness in the library flows through keyed Philox streams. A stream is
addressed by ``(seed, namespace, index, tag)``: the 128-bit Philox key holds
``(seed, namespace)`` and the 256-bit counter is advanced to a fixed slot
derived from ``(index, tag)``. Every slot owns 2**64 draws, so streams never
overlap and any consumer can be evaluated in any order (or in parallel) with
bit-identical results.

For bootstrap replicates ``index`` is the replicate number and ``tag`` the
per-dimension component (row map, column map, row weights, ...). For Monte
Carlo simulations ``index`` is the simulation number.
"""

from __future__ import annotations

import numpy as np

# Namespaces separate the major consumers of a single user-facing seed.
NS_REPLICATE = 0
NS_SIMULATION = 1
NS_DERIVED = 2

# Tags within one bootstrap replicate. Dimension d (0-based) uses 2d for its
# index map and 2d + 1 for its weight vector; slots 8+ hold per-cell extras.
TAGS_PER_INDEX = 16


def tag_map(dim: int) -> int:
    return 2 * dim


def tag_weights(dim: int) -> int:
    return 2 * dim + 1


TAG_CELL_PICKS = 8
TAG_OBS_WEIGHTS = 9

_MASK64 = (1 << 64) - 1


def _key(seed: int, namespace: int) -> np.ndarray:
    return np.array([seed & _MASK64, namespace & _MASK64], dtype=np.uint64)


def substream(seed: int, namespace: int, index: int, tag: int = 0) -> np.random.Generator:
    """Build a standalone generator for one (index, tag) slot."""
    bitgen = np.random.Philox(key=_key(seed, namespace))
    bitgen.advance((index * TAGS_PER_INDEX + tag) << 64)
    return np.random.Generator(bitgen)


class CounterStreams:
    """Reusable stream source for one (seed, namespace).

    ``stream(index, tag)`` repositions a single underlying Philox generator,
    which is much cheaper than constructing a fresh one per slot. The returned
    generator is shared state: finish drawing from it before requesting the
    next slot. Not thread-safe; parallel consumers should each own an instance
    (slots are absolute, so results do not depend on who evaluates them).
    """

    def __init__(self, seed: int, namespace: int):
        self._bitgen = np.random.Philox(key=_key(seed, namespace))
        self._gen = np.random.Generator(self._bitgen)

    def stream(self, index: int, tag: int = 0) -> np.random.Generator:
        slot = index * TAGS_PER_INDEX + tag
        state = self._bitgen.state
        counter = state["state"]["counter"]
        counter[:] = 0
        counter[1] = slot & _MASK64  # advance(slot << 64) without the advance() cost
        counter[2] = (slot >> 64) & _MASK64
        state["buffer_pos"] = 4  # discard buffered output from the previous slot
        self._bitgen.state = state
        return self._gen


def derived_seed(seed: int, index: int) -> int:
    """Derive an independent 63-bit child seed (e.g. one per simulation)."""
    return int(substream(seed, NS_DERIVED, index).integers(0, 1 << 63))
