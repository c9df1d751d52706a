"""Keyed random streams.

Every stochastic draw in the package comes from a generator keyed by
``(seed, *key)``, typically ``(seed, tag, replicate, epoch)``.  Streams are
built on Philox, a counter-based bit generator, so a replicate's draws do not
depend on how many other replicates ran before it or on which worker ran it.
"""

import zlib

import numpy as np

# tags keep streams of different experiments disjoint for the same seed
TAGS = {
    "bbm": 1,
    "sbm": 2,
    "mass": 3,
    "calibration": 4,
    "ensemble": 5,
    "lineage": 6,
}


def _tag_id(tag):
    if isinstance(tag, str):
        return TAGS.get(tag, zlib.crc32(tag.encode()) + 1000)
    return int(tag)


def stream(seed, *key):
    """Return a Generator for the stream identified by ``(seed, *key)``.

    String key parts are mapped to stable integers.
    """
    if seed < 0:
        raise ValueError("seed must be non-negative")
    spawn_key = tuple(_tag_id(k) for k in key)
    ss = np.random.SeedSequence(int(seed), spawn_key=spawn_key)
    return np.random.Generator(np.random.Philox(ss))
