"""Deterministic seed derivation.

Child seeds come from splitmix64 applied to ``master + index`` — the
usual way to hand independent, reproducible streams to parallel runs
without sharing RNG state.  All randomness in the package flows through
``numpy.random.default_rng`` seeded with these values.
"""

from __future__ import annotations

_MASK = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One splitmix64 step (Steele, Lea & Flood 2014): a bijective mix
    of a 64-bit state."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return (z ^ (z >> 31)) & _MASK


def derive_seed(master: int, index: int) -> int:
    """The ``index``-th child seed of ``master``."""
    return splitmix64((int(master) & _MASK) + 0x1000 * (int(index) + 1))


def derive_seeds(master: int, count: int):
    """``count`` independent child seeds of ``master``."""
    return [derive_seed(master, i) for i in range(count)]
