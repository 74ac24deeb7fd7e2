"""Named random substreams derived from one global seed.

Each (seed, name) pair yields an independent generator, so e.g. changing the
PKD batch size never perturbs the evaluation sample.
"""

from __future__ import annotations

import zlib

import numpy as np


def substream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())]))
