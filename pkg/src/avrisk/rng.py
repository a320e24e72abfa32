"""Deterministic seed derivation and counter-based random streams.

Every stochastic component in this package draws from a stream that is a
pure function of an integer key.  Keys are derived with a splitmix-style
64-bit mixer, so independent runs, frames and channels never share state
and results do not depend on evaluation order or worker count.
"""

from __future__ import annotations

import numpy as np

__all__ = ["split_seed", "uniform_stream", "normal_stream", "generator"]

_MASK64 = (1 << 64) - 1
# Weyl increment and mixing multipliers of the splitmix64 finalizer.
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def _mix64(z: int) -> int:
    z = (z ^ (z >> 30)) * _MIX1 & _MASK64
    z = (z ^ (z >> 27)) * _MIX2 & _MASK64
    return z ^ (z >> 31)


def split_seed(seed: int, *indices: int) -> int:
    """Derive a child seed from ``seed`` and one or more stream indices.

    ``split_seed(s, i, j)`` is equivalent to nesting
    ``split_seed(split_seed(s, i), j)``; chains of splits form a tree of
    decorrelated 64-bit keys.
    """
    key = seed & _MASK64
    for index in indices:
        key = _mix64((key + (index + 1) * _GOLDEN) & _MASK64)
    return key


def generator(key: int) -> np.random.Generator:
    """Counter-based generator for the given key (Philox under the hood)."""
    return np.random.Generator(np.random.Philox(key=key & _MASK64))


def uniform_stream(key: int, n: int) -> np.ndarray:
    """n uniforms in [0, 1); element i is fixed for a given (key, i).

    Philox consumes one 64-bit block per double, so a prefix of a longer
    stream equals the shorter stream.  Consumers that index by frame number
    therefore see draws that do not shift when a trace ends early.
    """
    return generator(key).random(n)


def normal_stream(key: int, n: int) -> np.ndarray:
    """n standard normal draws for the given key.

    Unlike :func:`uniform_stream` the block consumption is not one-per-value,
    so callers must always request the same ``n`` for a given key (the
    simulators request the full horizon every run).
    """
    return generator(key).standard_normal(n)
