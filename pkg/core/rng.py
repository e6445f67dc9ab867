from typing import Union

import numpy as np

Key = Union[int, np.integer]


def stream(*keys: Key) -> np.random.Generator:
    """
    Returns an independent PCG64 generator for the given key path.

    Keys are typically (seed, rep, tag, arm). Two different key paths give
    statistically independent streams, and the same path always gives the same
    stream, regardless of which worker draws from it.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(k) for k in keys])))


def derive_seed(*keys: Key) -> int:
    """Collapses a key path into a single 32-bit seed."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])
