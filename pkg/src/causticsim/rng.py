"""Counter-based random streams.

Every random draw in the toolkit is a pure function of ``(key, counter)``
where the key is derived by hashing a seed together with purpose tags and
indices.  Two consequences matter downstream: streams for different
purposes never interact, and results do not depend on evaluation order or
worker count.

The mixing function is SplitMix64's finalizer.  A numba version lives
alongside the pure-Python one so render kernels and scene generation agree
bit for bit.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np
from numba import njit

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB


def mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def tag_hash(tag: str) -> int:
    """Stable 64-bit hash of a purpose tag (never Python's salted ``hash``)."""
    return int.from_bytes(hashlib.blake2b(tag.encode("utf-8"), digest_size=8).digest(), "little")


def derive_key(*parts: int | str) -> int:
    """Fold integers and string tags into a single 64-bit stream key."""
    key = 0
    for part in parts:
        value = tag_hash(part) if isinstance(part, str) else int(part) & MASK64
        key = mix64(key ^ mix64((value + GOLDEN) & MASK64))
    return key


def uniform_at(key: int, counter: int) -> float:
    """The ``counter``-th uniform draw in ``[0, 1)`` of stream ``key``."""
    bits = mix64((key + (counter + 1) * GOLDEN) & MASK64)
    return (bits >> 11) * (1.0 / 9007199254740992.0)


class Stream:
    """A seeded counter-based stream with named child streams.

    >>> s = Stream(7).child("objects", 3)
    >>> 0.0 <= s.uniform() < 1.0
    True
    """

    __slots__ = ("key", "counter")

    def __init__(self, seed: int, *tags: int | str):
        self.key = derive_key(seed, *tags)
        self.counter = 0

    @classmethod
    def _from_key(cls, key: int) -> "Stream":
        s = cls.__new__(cls)
        s.key = key
        s.counter = 0
        return s

    def child(self, *tags: int | str) -> "Stream":
        return Stream._from_key(derive_key(self.key, *tags))

    def bits(self) -> int:
        out = mix64((self.key + (self.counter + 1) * GOLDEN) & MASK64)
        self.counter += 1
        return out

    def uniform(self, low: float = 0.0, high: float = 1.0) -> float:
        u = (self.bits() >> 11) * (1.0 / 9007199254740992.0)
        return low + (high - low) * u

    def integers(self, low: int, high: int) -> int:
        """Uniform integer in the closed range ``[low, high]``."""
        if high < low:
            raise ValueError("empty integer range")
        span = high - low + 1
        # multiply-shift; bias is below 2**-40 for any span we use
        return low + ((self.bits() * span) >> 64)

    def choice_weighted(self, weights) -> int:
        total = float(sum(weights))
        if not total > 0.0:
            raise ValueError("weights must have a positive sum")
        target = self.uniform() * total
        acc = 0.0
        for i, w in enumerate(weights):
            acc += w
            if target < acc:
                return i
        return len(weights) - 1

    def angle(self) -> float:
        return self.uniform(0.0, 2.0 * math.pi)


# numba side -----------------------------------------------------------------

_NB_M1 = np.uint64(_M1)
_NB_M2 = np.uint64(_M2)
_NB_GOLDEN = np.uint64(GOLDEN)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)


@njit(nogil=True, cache=True)
def nb_mix64(z):
    z = (z ^ (z >> _S30)) * _NB_M1
    z = (z ^ (z >> _S27)) * _NB_M2
    return z ^ (z >> _S31)


@njit(nogil=True, cache=True)
def nb_fold(key, value):
    """Numba twin of one :func:`derive_key` folding step for an integer part."""
    return nb_mix64(key ^ nb_mix64(value + _NB_GOLDEN))


@njit(nogil=True, cache=True)
def nb_uniform(key, counter):
    bits = nb_mix64(key + (np.uint64(counter) + _ONE) * _NB_GOLDEN)
    return np.float64(bits >> _S11) * (1.0 / 9007199254740992.0)
