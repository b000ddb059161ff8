import zlib

import numpy as np


def substream_seed(seed: int, name: str) -> int:
    """Independent integer seed for the named component of a seeded run."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode())])
    return int(ss.generate_state(1)[0])


def substream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(substream_seed(seed, name))
