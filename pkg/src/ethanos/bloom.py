"""Per-checkpoint bloom filter over account addresses.

Bit positions come from the secure key (``keccak(address)``) by double
hashing, so a filter can be rebuilt from the leaf paths of a state trie
without knowing the raw addresses.
"""
from __future__ import annotations

import math

from .storage import keccak


class Bloom:
    __slots__ = ("bits", "num_hashes", "_array")

    def __init__(self, bits: int = 1 << 20, num_hashes: int = 4, data: bytes | None = None):
        if bits < 8 or bits % 8:
            raise ValueError("bloom size must be a positive multiple of 8 bits")
        if num_hashes < 1:
            raise ValueError("need at least one hash function")
        self.bits = bits
        self.num_hashes = num_hashes
        if data is None:
            self._array = bytearray(bits // 8)
        else:
            if len(data) != bits // 8:
                raise ValueError("bloom data length does not match size")
            self._array = bytearray(data)

    def _positions(self, key_hash: bytes) -> list[int]:
        h1 = int.from_bytes(key_hash[:8], "big")
        h2 = int.from_bytes(key_hash[8:16], "big") | 1
        m = self.bits
        return [(h1 + i * h2) % m for i in range(self.num_hashes)]

    def add_key_hash(self, key_hash: bytes) -> None:
        arr = self._array
        for p in self._positions(key_hash):
            arr[p >> 3] |= 1 << (p & 7)

    def contains_key_hash(self, key_hash: bytes) -> bool:
        arr = self._array
        return all(arr[p >> 3] >> (p & 7) & 1 for p in self._positions(key_hash))

    def add(self, address: bytes) -> None:
        self.add_key_hash(keccak(address))

    def __contains__(self, address: bytes) -> bool:
        return self.contains_key_hash(keccak(address))

    def to_bytes(self) -> bytes:
        """Self-describing encoding: u32 bits | u8 hashes | bit array."""
        return self.bits.to_bytes(4, "big") + bytes([self.num_hashes]) + bytes(self._array)

    @classmethod
    def from_bytes(cls, data: bytes) -> Bloom:
        bits = int.from_bytes(data[:4], "big")
        return cls(bits, data[4], data[5:])

    def digest(self) -> bytes:
        return keccak(self.to_bytes())

    def popcount(self) -> int:
        return sum(bin(b).count("1") for b in self._array)

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, Bloom)
            and self.bits == other.bits
            and self.num_hashes == other.num_hashes
            and self._array == other._array
        )


def bloom_insert(bloom: Bloom, address: bytes) -> None:
    bloom.add(address)


def bloom_query(bloom: Bloom, address: bytes) -> bool:
    return address in bloom


def expected_fp_rate(n: int, bits: int, num_hashes: int) -> float:
    return (1.0 - math.exp(-num_hashes * n / bits)) ** num_hashes
