"""Counter-based random streams keyed by ``(seed, stream)``.

Every trajectory draws from its own Philox stream, so a batch gives the same
per-trajectory results whether it runs whole, split or in another order.
"""

import numpy as np

MAX_SEED = 2**64 - 1


def check_seed(seed) -> int:
    if seed is None:
        raise ValueError("an explicit integer seed is required")
    seed = int(seed)
    if not 0 <= seed <= MAX_SEED:
        raise ValueError(f"seed must fit in 64 unsigned bits, got {seed}")
    return seed


def stream_generator(seed: int, stream: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(check_seed(seed), spawn_key=(int(stream),))
    return np.random.Generator(np.random.Philox(ss))


def stream_uniforms(seed: int, streams, length: int) -> np.ndarray:
    """Uniform draws of shape ``(len(streams), length)``, one row per stream."""
    streams = list(streams)
    out = np.empty((len(streams), length))
    for i, s in enumerate(streams):
        out[i] = stream_generator(seed, s).random(length)
    return out
