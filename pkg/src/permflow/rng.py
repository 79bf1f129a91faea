"""Keyed random number streams.

Every random draw in the package flows from one top-level seed through
`stream(seed, *path)`, where the path identifies the consumer (scale,
bridging step, particle id, ...).  Streams are independent and
reproducible regardless of evaluation order or worker count.
"""

import numpy as np

# fixed numeric tags for the non-particle consumers of randomness
TAG_INIT = 0xA0
TAG_RESAMPLE = 0xB0
TAG_MOVE = 0xC0
TAG_NOISE = 0xD0
TAG_TRUTH = 0xE0


def stream(seed, *path):
    """Return a Generator for the stream identified by (seed, *path)."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(p) for p in path))
    return np.random.default_rng(ss)
