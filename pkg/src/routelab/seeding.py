"""Named random sub-streams derived from one root seed.

Every source of randomness in a run (data generation, agent exploration,
acceptance draws, forecasting noise) pulls its generator from here, so
components can be re-seeded independently while the whole run stays
reproducible from a single integer.
"""

from __future__ import annotations

import zlib

import numpy as np


def substream(root_seed: int, name: str) -> np.random.Generator:
    """Return a generator for the named sub-stream of ``root_seed``."""
    tag = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([root_seed, tag]))
