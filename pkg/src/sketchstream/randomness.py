"""Seeded hash families: signs, buckets and per-row uniform scales.

Every value is a pure function of ``(seed, tag, key)`` computed with a
splitmix64-style finalizer applied twice, so families can be rebuilt anywhere
from their seed and never need to be stored.  All functions accept numpy
arrays and broadcast a leading seed axis against the key axis, which is how
stacked sketch instances share one code path with a single instance.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

_U64 = np.uint64
_GOLDEN = _U64(0x9E3779B97F4A7C15)
_M1 = _U64(0xBF58476D1CE4E5B9)
_M2 = _U64(0x94D049BB133111EB)
_TAG_MUL = _U64(0xD6E8FEB86659FD93)

UNIFORM_BITS = 30
UNIFORM_FLOOR = 2.0 ** -UNIFORM_BITS

ArrayLike = Union[int, np.ndarray]


def _as_u64(x: ArrayLike) -> np.ndarray:
    # Python ints may exceed int64; route them through uint64 explicitly.
    if isinstance(x, (int, np.integer)):
        return np.array([int(x) & 0xFFFFFFFFFFFFFFFF], dtype=_U64)
    arr = np.asarray(x)
    if arr.dtype != _U64:
        arr = arr.astype(np.int64).astype(_U64)
    return np.atleast_1d(arr)


def _fmix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> _U64(30))) * _M1
    z = (z ^ (z >> _U64(27))) * _M2
    return z ^ (z >> _U64(31))


def mix64(x: ArrayLike) -> np.ndarray:
    """Bijective 64-bit avalanche mixer (splitmix64 finalizer)."""
    return _fmix(_as_u64(x) + _GOLDEN)


def derive_seed(seed: ArrayLike, *path: ArrayLike) -> np.ndarray:
    """Child seed(s) for a path of integer labels below ``seed``.

    Broadcasts like numpy: ``derive_seed(seeds[:, None], np.arange(m))`` gives
    an ``(len(seeds), m)`` grid of instance seeds.
    """
    h = _as_u64(seed)
    for label in path:
        h = _fmix(h ^ _fmix(_as_u64(label) * _TAG_MUL + _GOLDEN))
    return h


def hash64(seed: ArrayLike, tag: int, keys: ArrayLike) -> np.ndarray:
    """64-bit hash of ``keys`` under the family identified by ``(seed, tag)``.

    ``seed`` of shape ``S`` and ``keys`` of shape ``K`` must broadcast; the
    usual layout is seeds ``(m, 1)`` against keys ``(m, q)`` or ``(q,)``.
    """
    base = _fmix(_fmix(_as_u64(seed) + _GOLDEN) ^ (_as_u64(tag) * _TAG_MUL))
    k = _fmix(_as_u64(keys) * _M1 + _GOLDEN)
    return _fmix(base ^ k)


def signs_from_hash(h: np.ndarray) -> np.ndarray:
    """Top bit of each hash mapped to -1.0 / +1.0."""
    return 1.0 - 2.0 * (h >> _U64(63)).astype(np.float64)


def buckets_from_hash(h: np.ndarray, b: int) -> np.ndarray:
    """Multiply-shift range reduction of the low 32 bits into ``[0, b)``."""
    low = h & _U64(0xFFFFFFFF)
    return ((low * _U64(b)) >> _U64(32)).astype(np.int64)


def uniform_from_hash(h: np.ndarray) -> np.ndarray:
    """30-bit fixed-point value ``(raw + 1) / 2**30`` in ``(0, 1]``."""
    raw = (h >> _U64(64 - UNIFORM_BITS)).astype(np.float64)
    return (raw + 1.0) * UNIFORM_FLOOR


def sign_block(seed: ArrayLike, tag: int, keys: ArrayLike, copies: int) -> np.ndarray:
    """``copies`` independent signs per key, packed 64 to a hash word.

    Returns float64 of shape ``broadcast(seed, keys) + (copies,)``.  Copy ``c``
    is bit ``c % 64`` of the hash under tag ``tag + c // 64``.
    """
    words = -(-copies // 64)
    seed = _as_u64(seed)
    keys = _as_u64(keys)
    shape = np.broadcast_shapes(seed.shape, keys.shape)
    h = np.empty(shape + (words,), dtype=_U64)
    for w in range(words):
        h[..., w] = hash64(seed, tag + w, keys)
    bits = np.unpackbits(h.view(np.uint8), axis=-1, bitorder="little")[..., :copies]
    return 1.0 - 2.0 * bits.astype(np.float64)


def parse_seed(text: str) -> int:
    """Accept a decimal or ``0x``-prefixed hex 64-bit seed."""
    text = text.strip()
    value = int(text, 16) if text.lower().startswith("0x") else int(text, 10)
    if not 0 <= value < 2 ** 64:
        raise ValueError(f"seed out of 64-bit range: {text}")
    return value


_KINDS = ("sign", "bucket", "uniform")


@dataclass(frozen=True)
class HashFamily:
    """One seeded family of hash values.

    ``independence`` is informational only: the mixer behaves like a fully
    random function for every purpose at desk scale.
    """

    seed: int
    kind: str
    buckets: int = 0
    tag: int = 0
    independence: int = 4

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown hash kind {self.kind!r}")
        if self.kind == "bucket" and self.buckets < 1:
            raise ValueError("bucket family needs buckets >= 1")

    def _raw(self, key: ArrayLike) -> np.ndarray:
        out = hash64(self.seed, self.tag, key)
        return out if np.ndim(key) else out[0]

    def _check(self, kind: str) -> None:
        if self.kind != kind:
            raise TypeError(f"{kind} requested from a {self.kind} family")

    def sign(self, key: ArrayLike):
        self._check("sign")
        out = signs_from_hash(np.atleast_1d(self._raw(key))).astype(np.int64)
        return out if np.ndim(key) else int(out[0])

    def bucket(self, key: ArrayLike):
        self._check("bucket")
        out = buckets_from_hash(np.atleast_1d(self._raw(key)), self.buckets)
        return out if np.ndim(key) else int(out[0])

    def uniform_scale(self, key: ArrayLike):
        self._check("uniform")
        out = uniform_from_hash(np.atleast_1d(self._raw(key)))
        return out if np.ndim(key) else float(out[0])
