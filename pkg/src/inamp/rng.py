"""Deterministic random streams.

A run has one global seed. Every consumer (parameter initialization,
shuffling, augmentation, data generation, splitting) draws from its own named
stream, so adding draws to one stream never shifts another. A stream is a pure
function of ``(seed, stream name, index...)``.
"""

import logging
import zlib
from typing import Optional

import numpy as np

logger = logging.getLogger(__name__)

STREAMS = ("init", "shuffle", "augment", "generate", "split")

_MASK = (1 << 64) - 1


class Seeds:
    """Factory of independent named random streams under one seed."""

    def __init__(self, seed: int):
        """Class Constructor.

        Params:
            seed: global seed.
        """
        self.seed = int(seed)

    def stream(self, name: str, *index: int) -> np.random.Generator:
        """Return a fresh generator for ``name`` (and optional sub-indices)."""
        entropy = [self.seed & _MASK, zlib.crc32(name.encode("utf-8"))]
        entropy.extend(int(i) & _MASK for i in index)
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))

    def __repr__(self) -> str:  # noqa: D105
        return "<Seeds: %d>" % self.seed


_current: Optional[Seeds] = None


def set_seed(seed: int) -> Seeds:
    """Set the global seed and return its stream factory."""
    global _current
    _current = Seeds(seed)
    logger.debug("global seed set to %d", seed)
    return _current


def current() -> Seeds:
    """Return the stream factory of the last `set_seed` call (seed 0 if none)."""
    return _current if _current is not None else set_seed(0)
