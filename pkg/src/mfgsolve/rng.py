"""Counter-based random streams.

All stochastic pieces of the package draw from Philox streams keyed by
``(seed, stream)``.  Philox is counter-based, so a stream's output depends
only on its key, never on how many draws other streams made: particle
batches, challenger draws and scenario samplers stay bitwise reproducible
no matter the execution order.
"""

import numpy as np


def rng_stream(seed, stream=0):
    """Return a ``numpy.random.Generator`` for the given (seed, stream) key."""
    key = np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64(stream)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
