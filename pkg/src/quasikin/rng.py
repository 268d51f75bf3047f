"""Reproducible random streams.

All stochastic code in the package draws from Philox, a counter-based
generator, so that replicate studies can hand out independent substreams
from one master seed and every output file can record exactly which
stream produced it.
"""

from __future__ import annotations

import numpy as np

GENERATOR_NAME = "philox"


def substream(master_seed: int, *ids: int) -> np.random.Generator:
    """Return the generator for substream ``ids`` under ``master_seed``.

    The same (master_seed, ids) pair always yields the same stream, and
    distinct id tuples yield statistically independent streams.
    """
    seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(i) for i in ids))
    return np.random.Generator(np.random.Philox(seq))


def stream_label(master_seed: int, *ids: int) -> str:
    """Human-readable provenance tag recorded in output files."""
    if not ids:
        return str(int(master_seed))
    return f"{int(master_seed)}/" + ":".join(str(int(i)) for i in ids)


def as_generator(seed) -> np.random.Generator:
    """Coerce a seed, SeedSequence, or Generator into a Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.Philox(seed))
    return substream(int(seed))
