import numpy as np


def substream(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for ``(seed, keys...)``.

    Streams are keyed by counter, so adding repetitions never perturbs the
    streams of earlier ones.
    """
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys)))


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)
