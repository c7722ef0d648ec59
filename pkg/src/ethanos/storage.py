"""Content-addressed key-value store with per-category byte accounting.

Every trie node, header, body and receipt blob lives in a :class:`KvStore`
keyed by the hash of its bytes. The store keeps a running byte tally per
:class:`DataCategory` so that sync modes can be compared by exact storage
size rather than by wall-clock time.
"""
from __future__ import annotations

import enum
import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterator

HASH_LEN = 32


def keccak(data: bytes) -> bytes:
    """The artifact-wide 256-bit hash (SHA3-256, a Keccak-family sponge)."""
    return hashlib.sha3_256(data).digest()


EMPTY_HASH = keccak(b"")
ZERO_HASH = bytes(HASH_LEN)


class DataCategory(enum.IntEnum):
    HEADERS = 0
    BODIES = 1
    RECEIPTS = 2
    TRIE_NODES = 3
    TX_INDEX = 4
    OTHER = 5

    @property
    def label(self) -> str:
        return _LABELS[self]


_LABELS = {
    DataCategory.HEADERS: "headers",
    DataCategory.BODIES: "bodies",
    DataCategory.RECEIPTS: "receipts",
    DataCategory.TRIE_NODES: "trie_nodes",
    DataCategory.TX_INDEX: "tx_index",
    DataCategory.OTHER: "other",
}


@dataclass(frozen=True)
class StorageStats:
    """Byte counts per category; ``total`` is always their sum."""

    by_category: dict[DataCategory, int] = field(default_factory=dict)

    def __getitem__(self, category: DataCategory) -> int:
        return self.by_category.get(category, 0)

    @property
    def total(self) -> int:
        return sum(self.by_category.values())

    def as_dict(self) -> dict[str, int]:
        out = {c.label: self[c] for c in DataCategory}
        out["total"] = self.total
        return out

    def __add__(self, other: StorageStats) -> StorageStats:
        return StorageStats({c: self[c] + other[c] for c in DataCategory})

    def __sub__(self, other: StorageStats) -> StorageStats:
        return StorageStats({c: self[c] - other[c] for c in DataCategory})

    @classmethod
    def zero(cls) -> StorageStats:
        return cls({c: 0 for c in DataCategory})


class HashCollision(Exception):
    """Two distinct values produced the same key."""


class KvStore:
    """In-memory content-addressed store.

    Re-putting an existing value is a no-op for accounting. Deleting removes
    the entry and subtracts its bytes from the category it was written under.
    """

    def __init__(self) -> None:
        self._entries: dict[bytes, bytes] = {}
        self._category: dict[bytes, DataCategory] = {}
        self._bytes = {c: 0 for c in DataCategory}

    def put(self, category: DataCategory, value: bytes) -> bytes:
        key = keccak(value)
        existing = self._entries.get(key)
        if existing is not None:
            if existing != value:
                raise HashCollision(key.hex())
            return key
        self._entries[key] = value
        self._category[key] = category
        self._bytes[category] += HASH_LEN + len(value)
        return key

    def put_verified(self, category: DataCategory, key: bytes, value: bytes) -> None:
        """Insert a (key, value) pair received from elsewhere, checking the key."""
        if keccak(value) != key:
            raise ValueError(f"value does not hash to {key.hex()}")
        self.put(category, value)

    def get(self, key: bytes) -> bytes | None:
        return self._entries.get(key)

    def __contains__(self, key: bytes) -> bool:
        return key in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def delete(self, key: bytes) -> bool:
        value = self._entries.pop(key, None)
        if value is None:
            return False
        category = self._category.pop(key)
        self._bytes[category] -= HASH_LEN + len(value)
        return True

    def category_of(self, key: bytes) -> DataCategory | None:
        return self._category.get(key)

    def stats(self) -> StorageStats:
        return StorageStats(dict(self._bytes))

    def items(self) -> Iterator[tuple[DataCategory, bytes, bytes]]:
        for key, value in self._entries.items():
            yield self._category[key], key, value

    # persistence -----------------------------------------------------------

    def dump(self, path: str | Path) -> None:
        with open(path, "wb") as fh:
            for category, key, value in self.items():
                write_record(fh, category, key, value)

    @classmethod
    def load(cls, path: str | Path) -> KvStore:
        store = cls()
        with open(path, "rb") as fh:
            for category, key, value in read_records(fh):
                store.put_verified(category, key, value)
        return store


# Record framing shared by the dump format and the simulated sync wire:
#   u8 category | u32le key length | key | u32le value length | value

_LEN = struct.Struct("<I")


def encode_record(category: DataCategory, key: bytes, value: bytes) -> bytes:
    return bytes([category]) + _LEN.pack(len(key)) + key + _LEN.pack(len(value)) + value


def write_record(fh: BinaryIO, category: DataCategory, key: bytes, value: bytes) -> None:
    fh.write(encode_record(category, key, value))


def decode_records(data: bytes) -> list[tuple[DataCategory, bytes, bytes]]:
    out = []
    pos = 0
    while pos < len(data):
        if pos + 5 > len(data):
            raise ValueError("truncated record header")
        category = DataCategory(data[pos])
        (klen,) = _LEN.unpack_from(data, pos + 1)
        pos += 5
        key = data[pos : pos + klen]
        pos += klen
        if pos + 4 > len(data):
            raise ValueError("truncated record")
        (vlen,) = _LEN.unpack_from(data, pos)
        pos += 4
        value = data[pos : pos + vlen]
        if len(key) != klen or len(value) != vlen:
            raise ValueError("truncated record body")
        pos += vlen
        out.append((category, key, value))
    return out


def read_records(fh: BinaryIO) -> Iterator[tuple[DataCategory, bytes, bytes]]:
    yield from decode_records(fh.read())


class Overlay:
    """Write buffer over a store; nothing reaches the base until :meth:`flush`."""

    def __init__(self, base: KvStore | Overlay):
        self.base = base
        self._pending: dict[bytes, tuple[DataCategory, bytes]] = {}

    def put(self, category: DataCategory, value: bytes) -> bytes:
        key = keccak(value)
        if key not in self._pending and self.base.get(key) is None:
            self._pending[key] = (category, value)
        return key

    def get(self, key: bytes) -> bytes | None:
        hit = self._pending.get(key)
        if hit is not None:
            return hit[1]
        return self.base.get(key)

    def __contains__(self, key: bytes) -> bool:
        return self.get(key) is not None

    def flush(self) -> None:
        for category, value in self._pending.values():
            self.base.put(category, value)
        self._pending.clear()
