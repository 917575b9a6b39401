"""
Various utilities shared across jerkgrpo.
"""
import numpy as np

__all__ = ["seed_sequence", "derive_rng", "episode_seeds"]

# SeedSequence only accepts non-negative entropy words
_WORD = 2**64


def seed_sequence(*keys: int) -> np.random.SeedSequence:
    """
    Build a SeedSequence from a tuple of integer keys.

    Negative keys are folded into [0, 2^64) so that any integer is a
    valid key; equal key tuples always give equal streams.

    Parameters
    ----------
    *keys: int
        The keys identifying the stream, e.g. (seed, batch, member).

    Returns
    -------
    seq: np.random.SeedSequence
    """
    return np.random.SeedSequence([int(k) % _WORD for k in keys])


def derive_rng(*keys: int) -> np.random.Generator:
    """
    An independent, reproducible Generator for the stream named by `keys`.
    """
    return np.random.Generator(np.random.PCG64(seed_sequence(*keys)))


def episode_seeds(seed: int, count: int) -> np.ndarray:
    """
    `count` reproducible episode seeds drawn from the stream of `seed`.
    """
    return derive_rng(seed).integers(0, 2**31 - 1, size=count)
