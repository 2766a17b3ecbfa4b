import zlib

import numpy as np

# Named substreams used across the package
FIT = "tree-fitting"
JITTER = "jitter"
SAMPLING = "sampling"
CV_SHUFFLE = "cv-shuffle"
SCENARIO = "scenario"
MONTE_CARLO = "monte-carlo"


def substream(seed, name):
    """Return a Philox generator for the named substream of `seed`.

    Each name maps to its own key, so drawing more numbers from one stream
    never shifts another.
    """
    key = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode("utf-8"))])
    return np.random.Generator(np.random.Philox(key))
