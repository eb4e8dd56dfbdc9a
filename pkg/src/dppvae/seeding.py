"""Named random substreams derived from one global seed.

Each phase (``"data"``, ``"init"``, ``"training"``, ``"generation"``, ...) gets
its own generator, so changing how much randomness one phase consumes never
shifts the draws of another.
"""

import zlib

import numpy as np


def substream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())]))
