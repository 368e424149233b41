"""Seeded random streams.

Every stream is a Philox (counter-based) generator keyed by a tuple of
integers, so a feature's or replication's stream depends only on its key and
never on execution order or worker count.
"""

import numpy as np

# stream tags, kept distinct so keys never collide across uses
FEATURE = 1
INITIALS = 2
DATASET = 3
REPLICATION = 4
LIMIT_LAW = 5
KMEANS = 6
DOWNSAMPLE = 7
CONE = 8


def make_rng(*key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) for k in key])))


def as_key(seed) -> tuple:
    """Normalize an int seed or a tuple of ints to a key tuple."""
    if isinstance(seed, (tuple, list)):
        return tuple(int(s) for s in seed)
    return (int(seed),)
