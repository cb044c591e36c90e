"""Counter-based hashing used for environments, walk streams and seed trees.

The same 64-bit mixer is implemented twice: in plain Python (arbitrary ints
masked to 64 bits) and as numba functions operating on ``uint64``.  Both must
agree bit for bit; ``tests/test_hash.py`` checks this.
"""

from __future__ import annotations

import hashlib

import numpy as np
from numba import njit

MASK = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB

# tags separating independent streams
TAG_ENV = 0x454E56
TAG_WALK = 0x57414C4B
TAG_ANNEALED = 0x414E4E


def mix64(z: int) -> int:
    """splitmix64 finalizer on a Python int."""
    z &= MASK
    z = ((z ^ (z >> 30)) * _M1) & MASK
    z = ((z ^ (z >> 27)) * _M2) & MASK
    return z ^ (z >> 31)


def combine(key: int, value: int) -> int:
    """Fold a (possibly negative) integer into a 64-bit key."""
    return mix64((key ^ mix64((value + GOLDEN) & MASK)) & MASK)


def _part_to_int(part) -> int:
    if isinstance(part, (bool, np.bool_)):
        return int(part)
    if isinstance(part, (int, np.integer)):
        return int(part) & MASK
    if isinstance(part, str):
        digest = hashlib.blake2b(part.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little")
    raise TypeError(f"cannot derive a seed from {type(part).__name__}")


def derive_seed(*parts) -> int:
    """Hierarchical seed derivation: ``derive_seed(root, "exp-3", 17)``."""
    h = mix64(0x5EED)
    for p in parts:
        h = combine(h, _part_to_int(p))
    return h


def env_key(env_seed: int) -> int:
    return combine(mix64(env_seed & MASK), TAG_ENV)


def walk_key(walk_seed: int) -> int:
    return combine(mix64(walk_seed & MASK), TAG_WALK)


def replicate_seed(root: int, index: int) -> int:
    """Seed of replicate ``index`` under ``root``; matches the numba batch loops."""
    return combine(root, index)


def to_unit(h: int) -> float:
    return (h >> 11) * (1.0 / 9007199254740992.0)


# ---------------------------------------------------------------- numba side

_U30 = np.uint64(30)
_U27 = np.uint64(27)
_U31 = np.uint64(31)
_U11 = np.uint64(11)
_UM1 = np.uint64(_M1)
_UM2 = np.uint64(_M2)
_UGOLD = np.uint64(GOLDEN)
_INV53 = 1.0 / 9007199254740992.0


@njit(cache=True, inline="always")
def nb_mix64(z):
    z = (z ^ (z >> _U30)) * _UM1
    z = (z ^ (z >> _U27)) * _UM2
    return z ^ (z >> _U31)


@njit(cache=True, inline="always")
def nb_combine(key, value):
    v = np.uint64(np.int64(value)) + _UGOLD
    return nb_mix64(key ^ nb_mix64(v))


@njit(cache=True, inline="always")
def nb_unit(h):
    return np.float64(h >> _U11) * _INV53
