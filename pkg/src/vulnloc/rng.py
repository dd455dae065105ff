"""Named random streams derived from one root seed."""

import numpy as np

STREAMS = {
    "embedding": 1,
    "init": 2,
    "dropout": 3,
    "shuffle": 4,
    "synthetic": 5,
    "split": 6,
}


def stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for `name`; the same (seed, name) always gives the same draws."""
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(STREAMS[name],)))
