"""Counter-based random streams.

Every random draw in the engine comes from a Philox generator keyed by the
master seed plus a tuple of counters (step, particle, purpose). Draws are
therefore independent of scheduling and of how many threads evaluate the
particles, and a resumed run regenerates exactly the same noise.
"""
import numpy as np

# purpose identifiers (last element of the key)
INIT = 0
THETA = 1
Z_LIKELIHOOD = 2
Z_PRIOR = 3
RETRY = 100

# step slot used for initialization draws
INIT_STEP = 2 ** 32 - 1


def stream(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def seed_from(rng) -> int:
    """Accept an int seed or a Generator (one draw is consumed)."""
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(0, 2 ** 63 - 1))
    return int(rng)
