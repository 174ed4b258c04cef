"""
rng.py

Manages the random number generators.

Every random draw goes through a counter-based Philox generator. Parallel
replications use child streams keyed by (master_seed, index) so that their
results do not depend on scheduling.
"""

import typing

import numpy as np

SeedType = typing.Union[None, int, typing.Sequence[int], np.random.SeedSequence, np.random.Generator]


def generator(seed: SeedType = None) -> np.random.Generator:
    """
    Returns a Philox generator

    Parameters
    ----------
    seed: int | sequence of int | SeedSequence | Generator, default=None
        A Generator is returned unchanged, anything else seeds a new one.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(seed))


def child_generator(master_seed: int, index: int) -> np.random.Generator:
    """
    Returns the generator of the `index`-th replication of an experiment

    Parameters
    ----------
    master_seed: int
        The experiment seed
    index: int
        The replication index
    """
    return generator(np.random.SeedSequence([int(master_seed), int(index)]))
