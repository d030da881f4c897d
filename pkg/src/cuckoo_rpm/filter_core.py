"""Cuckoo filter with partial-key hashing.

Fingerprints live in ``bucket_count`` buckets of ``entries_per_bucket`` slots.
Each item has two candidate buckets ``i = H1(x) mod m`` and
``j = (i XOR hash(F(x))) mod m``; because ``m`` is a power of two the map
``b -> b XOR hash(fp)`` is an involution, so a stored fingerprint can always be
moved to its other bucket without knowing the original item.

Empty slots hold ``0``; fingerprints that truncate to zero are remapped to 1.
"""

from __future__ import annotations

import copy
import functools
import hashlib
import random
import struct
from dataclasses import dataclass, replace
from typing import Iterable, Protocol

import numpy as np

from .errors import FilterFull, MalformedSnapshot, NotFound

__all__ = [
    "FilterParams",
    "KeyedHasher",
    "CuckooFilter",
    "fingerprint_of",
    "candidate_buckets",
    "alt_bucket",
    "SNAPSHOT_MAGIC",
    "HEADER_SIZE",
]

SNAPSHOT_MAGIC = b"CKF1"
SNAPSHOT_VERSION = 1
# magic | version u8 | f u8 | n u8 | log2(m) u8 | hash_seed u64 | item_count u32
_HEADER = struct.Struct("<4sBBBBQI")
HEADER_SIZE = _HEADER.size

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class FilterParams:
    bucket_count: int
    entries_per_bucket: int = 4
    fingerprint_bits: int = 16
    max_evictions: int = 500
    hash_seed: int = 0

    def __post_init__(self):
        m = self.bucket_count
        if m < 1 or m & (m - 1):
            raise ValueError(f"bucket_count must be a power of two, got {m}")
        if self.entries_per_bucket < 1 or self.entries_per_bucket > 255:
            raise ValueError("entries_per_bucket must be in [1, 255]")
        if not 4 <= self.fingerprint_bits <= 32:
            raise ValueError("fingerprint_bits must be in [4, 32]")
        if self.max_evictions < 1:
            raise ValueError("max_evictions must be positive")
        if not 0 <= self.hash_seed <= _MASK64:
            raise ValueError("hash_seed must fit in 64 bits")

    @property
    def capacity(self) -> int:
        return self.bucket_count * self.entries_per_bucket

    @property
    def slot_bytes(self) -> int:
        return (self.fingerprint_bits + 7) // 8

    def with_seed(self, hash_seed: int) -> "FilterParams":
        return replace(self, hash_seed=hash_seed & _MASK64)

    def doubled(self) -> "FilterParams":
        return replace(self, bucket_count=self.bucket_count * 2)


class Hasher(Protocol):
    def fingerprint(self, item: bytes) -> int: ...

    def index_hash(self, item: bytes) -> int: ...

    def fp_hash(self, fp: int) -> int: ...


class KeyedHasher:
    """Three independent 64-bit keyed BLAKE2b invocations sharing one seed.

    The ``person`` tag domain-separates the item-index hash, the fingerprint
    and the fingerprint hash used for the alternate bucket.
    """

    def __init__(self, seed: int, fingerprint_bits: int):
        self.seed = seed
        self.fingerprint_bits = fingerprint_bits
        self._key = seed.to_bytes(8, "little")
        self._fp_mask = (1 << fingerprint_bits) - 1
        self._fp_hash_cache: dict[int, int] = {}

    def _h64(self, data: bytes, person: bytes) -> int:
        digest = hashlib.blake2b(data, digest_size=8, key=self._key, person=person).digest()
        return int.from_bytes(digest, "little")

    def fingerprint(self, item: bytes) -> int:
        fp = self._h64(item, b"ckf-fprint") & self._fp_mask
        return fp or 1

    def index_hash(self, item: bytes) -> int:
        return self._h64(item, b"ckf-index")

    def fp_hash(self, fp: int) -> int:
        h = self._fp_hash_cache.get(fp)
        if h is None:
            h = self._h64(fp.to_bytes(4, "little"), b"ckf-alt")
            if len(self._fp_hash_cache) < 1 << 16:
                self._fp_hash_cache[fp] = h
        return h


def _as_bytes(item) -> bytes:
    if isinstance(item, str):
        return item.encode("utf-8")
    return bytes(item)


class CuckooFilter:
    """Bucketed fingerprint table.

    ``rng`` drives eviction choices and must be a seeded ``random.Random`` (or
    anything with ``randrange``) for reproducible runs. ``hasher`` defaults to
    :class:`KeyedHasher` keyed by ``params.hash_seed``; tests can substitute a
    table-driven hasher to pin bucket assignments.
    """

    def __init__(self, params: FilterParams, rng=None, hasher: Hasher | None = None):
        self.params = params
        self.rng = rng if rng is not None else random.Random(params.hash_seed)
        self.hasher = hasher if hasher is not None else KeyedHasher(
            params.hash_seed, params.fingerprint_bits
        )
        self._m_mask = params.bucket_count - 1
        self._n = params.entries_per_bucket
        self.slots = [0] * params.capacity
        self.item_count = 0

    # -- hashing ---------------------------------------------------------

    def fingerprint_of(self, item) -> int:
        return self.hasher.fingerprint(_as_bytes(item))

    def alt_bucket(self, b: int, fp: int) -> int:
        return (b ^ self.hasher.fp_hash(fp)) & self._m_mask

    def _locate(self, item) -> tuple[int, int, int]:
        data = _as_bytes(item)
        fp = self.hasher.fingerprint(data)
        i = self.hasher.index_hash(data) & self._m_mask
        return fp, i, self.alt_bucket(i, fp)

    def candidate_buckets(self, item) -> tuple[int, int]:
        _, i, j = self._locate(item)
        return i, j

    # -- slot helpers ----------------------------------------------------

    def bucket(self, b: int) -> list[int]:
        """Contents of bucket ``b`` (0 marks an empty slot)."""
        start = b * self._n
        return self.slots[start:start + self._n]

    def _find(self, b: int, fp: int) -> int:
        start = b * self._n
        for k in range(start, start + self._n):
            if self.slots[k] == fp:
                return k
        return -1

    def _put(self, b: int, fp: int) -> bool:
        k = self._find(b, 0)
        if k < 0:
            return False
        self.slots[k] = fp
        return True

    # -- operations ------------------------------------------------------

    def insert(self, item) -> None:
        """Insert ``item``; raise :class:`FilterFull` if the eviction chain runs out.

        A failed insert leaves every slot exactly as it was.
        """
        fp, i, j = self._locate(item)
        if self._put(i, fp) or self._put(j, fp):
            self.item_count += 1
            return

        b = (i, j)[self.rng.randrange(2)]
        chain: list[tuple[int, int]] = []  # (slot index, fingerprint it held)
        for _ in range(self.params.max_evictions):
            k = b * self._n + self.rng.randrange(self._n)
            chain.append((k, self.slots[k]))
            fp, self.slots[k] = self.slots[k], fp
            b = self.alt_bucket(b, fp)
            if self._put(b, fp):
                self.item_count += 1
                return

        for k, old in reversed(chain):
            self.slots[k] = old
        raise FilterFull(
            f"no room after {self.params.max_evictions} evictions "
            f"(load {self.load_factor:.3f}, m={self.params.bucket_count})"
        )

    def lookup(self, item) -> bool:
        fp, i, j = self._locate(item)
        return self._find(i, fp) >= 0 or self._find(j, fp) >= 0

    __contains__ = lookup

    def delete(self, item) -> None:
        fp, i, j = self._locate(item)
        for b in (i, j):
            k = self._find(b, fp)
            if k >= 0:
                self.slots[k] = 0
                self.item_count -= 1
                return
        raise NotFound(item)

    @property
    def load_factor(self) -> float:
        return self.item_count / self.params.capacity

    def __len__(self) -> int:
        return self.item_count

    def __eq__(self, other) -> bool:
        if not isinstance(other, CuckooFilter):
            return NotImplemented
        return (
            self.params == other.params
            and self.item_count == other.item_count
            and self.slots == other.slots
        )

    def __repr__(self) -> str:
        p = self.params
        return (
            f"CuckooFilter(m={p.bucket_count}, n={p.entries_per_bucket}, "
            f"f={p.fingerprint_bits}, items={self.item_count})"
        )

    def copy(self) -> "CuckooFilter":
        clone = CuckooFilter(self.params, rng=copy.deepcopy(self.rng), hasher=self.hasher)
        clone.slots = list(self.slots)
        clone.item_count = self.item_count
        return clone

    def check_placement(self) -> bool:
        """Full scan: every stored fingerprint sits in a bucket its alternate maps back to."""
        for b in range(self.params.bucket_count):
            for fp in self.bucket(b):
                if fp and self.alt_bucket(self.alt_bucket(b, fp), fp) != b:
                    return False
        return self.item_count == sum(1 for s in self.slots if s)

    @classmethod
    def build(cls, params: FilterParams, items: Iterable, rng=None) -> "CuckooFilter":
        cf = cls(params, rng=rng)
        for item in items:
            cf.insert(item)
        return cf

    # -- snapshot --------------------------------------------------------

    def to_bytes(self) -> bytes:
        p = self.params
        header = _HEADER.pack(
            SNAPSHOT_MAGIC,
            SNAPSHOT_VERSION,
            p.fingerprint_bits,
            p.entries_per_bucket,
            p.bucket_count.bit_length() - 1,
            p.hash_seed,
            self.item_count,
        )
        width = p.slot_bytes
        raw = np.asarray(self.slots, dtype="<u4").view(np.uint8).reshape(-1, 4)
        return header + raw[:, :width].tobytes()

    @classmethod
    def from_bytes(cls, data: bytes, rng=None, max_evictions: int = 500) -> "CuckooFilter":
        if len(data) < HEADER_SIZE:
            raise MalformedSnapshot(f"snapshot shorter than header ({len(data)} bytes)")
        magic, version, f, n, log_m, seed, count = _HEADER.unpack_from(data)
        if magic != SNAPSHOT_MAGIC:
            raise MalformedSnapshot(f"bad magic {magic!r}")
        if version != SNAPSHOT_VERSION:
            raise MalformedSnapshot(f"unsupported version {version}")
        if log_m > 40:
            raise MalformedSnapshot(f"implausible bucket exponent {log_m}")
        try:
            params = FilterParams(1 << log_m, n, f, max_evictions, seed)
        except ValueError as exc:
            raise MalformedSnapshot(str(exc)) from exc
        width = params.slot_bytes
        body = data[HEADER_SIZE:]
        if len(body) != params.capacity * width:
            raise MalformedSnapshot(
                f"expected {params.capacity * width} slot bytes, got {len(body)}"
            )
        padded = np.zeros((params.capacity, 4), dtype=np.uint8)
        padded[:, :width] = np.frombuffer(body, dtype=np.uint8).reshape(-1, width)
        slots = padded.view("<u4").ravel()
        if int(np.count_nonzero(slots)) != count:
            raise MalformedSnapshot("item_count disagrees with occupied slots")
        if int(slots.max(initial=0)) >> f:
            raise MalformedSnapshot("slot value wider than fingerprint_bits")
        cf = cls(params, rng=rng)
        cf.slots = slots.tolist()
        cf.item_count = count
        return cf

    serialize = to_bytes
    deserialize = from_bytes


@functools.lru_cache(maxsize=256)
def _keyed_hasher(seed: int, fingerprint_bits: int) -> KeyedHasher:
    return KeyedHasher(seed, fingerprint_bits)


def _hasher_for(params: FilterParams) -> KeyedHasher:
    return _keyed_hasher(params.hash_seed, params.fingerprint_bits)


def fingerprint_of(item, params: FilterParams) -> int:
    data = _as_bytes(item)
    if not data:
        raise ValueError("item must be non-empty")
    return _hasher_for(params).fingerprint(data)


def alt_bucket(b: int, fp: int, params: FilterParams) -> int:
    if not 0 <= b < params.bucket_count:
        raise ValueError(f"bucket {b} out of range")
    return (b ^ _hasher_for(params).fp_hash(fp)) & (params.bucket_count - 1)


def candidate_buckets(item, params: FilterParams) -> tuple[int, int]:
    data = _as_bytes(item)
    h = _hasher_for(params)
    i = h.index_hash(data) & (params.bucket_count - 1)
    return i, alt_bucket(i, h.fingerprint(data), params)
