import numpy as np


def point_generator(seed: int, index: int) -> np.random.Generator:
    """Independent, reproducible stream for sweep point `index` of a run seeded with `seed`."""
    sequence = np.random.SeedSequence(seed, spawn_key=(index,))
    return np.random.Generator(np.random.Philox(sequence))
