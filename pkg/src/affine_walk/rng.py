"""Reproducible per-replica random streams.

Replica ``i`` of batch ``b`` owns a xoshiro256++ generator whose state is
derived by SplitMix64 hashing of ``(master_seed, tag, b, i)``. Nothing about a
replica's stream depends on which thread runs it or in what order batches are
scheduled.

Draw protocol for one (a, b) pair, shared by the kernels and by ``Stream``:

* if the law needs a discrete pick, one 64-bit word is drawn; its high 32 bits
  give the uniform for the a-pick (or the joint atom) and its low 32 bits the
  uniform for a discrete b-pick;
* a uniform b takes one further word (53-bit uniform);
* a Gaussian b takes two further words (Box-Muller).

The arithmetic exists twice, in Python and in numba; tests check bit equality.
"""

from __future__ import annotations

import zlib

import numpy as np
from numba import njit

MASK64 = (1 << 64) - 1
GOLDEN_INT = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB

GOLDEN = np.uint64(GOLDEN_INT)
M1 = np.uint64(_M1)
M2 = np.uint64(_M2)
_S30, _S27, _S31 = np.uint64(30), np.uint64(27), np.uint64(31)
_S11, _S17, _S23, _S41, _S45, _S19, _S32 = (np.uint64(k) for k in (11, 17, 23, 41, 45, 19, 32))
_LO32 = np.uint64(0xFFFFFFFF)
INV53 = 1.0 / 9007199254740992.0
INV32 = 1.0 / 4294967296.0

# replicas per batch; part of the reproducibility contract, never tie to threads
BATCH_SIZE = 1 << 16


def mix64_py(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def tag_id(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


def batch_key(seed: int, tag: str, batch_id: int) -> int:
    k = mix64_py((int(seed) & MASK64) + GOLDEN_INT)
    k = mix64_py(k ^ tag_id(tag))
    return mix64_py(k + (int(batch_id) + 1) * GOLDEN_INT)


def replica_key_py(bkey: int, index: int) -> int:
    return mix64_py(bkey + (int(index) + 1) * GOLDEN_INT)


def state_from_key_py(key: int) -> list[int]:
    return [mix64_py(key + (q + 1) * GOLDEN_INT) for q in range(4)]


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


class Stream:
    """Pure-Python xoshiro256++ stream for one replica.

    Meant for single samples and tests; bulk work uses the numba kernels,
    which produce the same words.
    """

    def __init__(self, seed: int = 0, tag: str = "sample", batch_id: int = 0, index: int = 0):
        self.key = replica_key_py(batch_key(seed, tag, batch_id), index)
        self.state = state_from_key_py(self.key)
        self.words = 0

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self.state
        out = (_rotl((s0 + s3) & MASK64, 23) + s0) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self.state = [s0, s1, s2, s3]
        self.words += 1
        return out

    def uniform(self) -> float:
        """53-bit uniform on [0, 1)."""
        return (self.next_u64() >> 11) * INV53

    def split32(self) -> tuple[float, float]:
        """Two 32-bit uniforms on [0, 1) from one word: (high, low)."""
        w = self.next_u64()
        return (w >> 32) * INV32, (w & 0xFFFFFFFF) * INV32

    def state_array(self) -> np.ndarray:
        return np.array(self.state, dtype=np.uint64).reshape(1, 4)

    def set_state_array(self, arr: np.ndarray, words: int) -> None:
        self.state = [int(v) for v in arr.reshape(4)]
        self.words += words


@njit(inline="always")
def mix64(z):
    z = (z ^ (z >> _S30)) * M1
    z = (z ^ (z >> _S27)) * M2
    return z ^ (z >> _S31)


@njit(inline="always")
def next_word(t0, t1, t2, t3):
    q = t0 + t3
    out = ((q << _S23) | (q >> _S41)) + t0
    t = t1 << _S17
    t2 ^= t0
    t3 ^= t1
    t1 ^= t2
    t0 ^= t3
    t2 ^= t
    t3 = (t3 << _S45) | (t3 >> _S19)
    return out, t0, t1, t2, t3


@njit(inline="always")
def u53(w):
    return (w >> _S11) * INV53


@njit(inline="always")
def hi32(w):
    return (w >> _S32) * INV32


@njit(inline="always")
def lo32(w):
    return (w & _LO32) * INV32


@njit(nogil=True, cache=True)
def batch_states(bkey, start, count):
    """xoshiro states for replicas ``start .. start+count-1`` of a batch."""
    out = np.empty((count, 4), dtype=np.uint64)
    for i in range(count):
        key = mix64(bkey + np.uint64(start + i + 1) * GOLDEN)
        for q in range(4):
            out[i, q] = mix64(key + np.uint64(q + 1) * GOLDEN)
    return out
