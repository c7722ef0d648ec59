"""Account state and its frozen byte encoding."""
from __future__ import annotations

import struct
from dataclasses import dataclass

ADDRESS_LEN = 20
UNIT = 10**9  # base units per whole coin

MAX_NONCE = 2**64 - 1
MAX_BALANCE = 2**128 - 1

_FLAG_RESTORED = 0x01
_FLAG_STORAGE_ROOT = 0x02
_FLAG_CODE_HASH = 0x04

_HEAD = struct.Struct(">Q16sB")


class BalanceOverflow(ArithmeticError):
    pass


@dataclass(frozen=True)
class Account:
    nonce: int = 0
    balance: int = 0
    restored: bool = False
    # Contract accounts are treated as plain accounts; these stay None.
    storage_root: bytes | None = None
    code_hash: bytes | None = None

    def __post_init__(self) -> None:
        if not 0 <= self.nonce <= MAX_NONCE:
            raise ValueError(f"nonce out of range: {self.nonce}")
        if self.balance < 0:
            raise ValueError(f"negative balance: {self.balance}")
        if self.balance > MAX_BALANCE:
            raise BalanceOverflow(self.balance)

    def encode(self) -> bytes:
        flags = 0
        tail = b""
        if self.restored:
            flags |= _FLAG_RESTORED
        if self.storage_root is not None:
            flags |= _FLAG_STORAGE_ROOT
            tail += self.storage_root
        if self.code_hash is not None:
            flags |= _FLAG_CODE_HASH
            tail += self.code_hash
        return _HEAD.pack(self.nonce, self.balance.to_bytes(16, "big"), flags) + tail

    @classmethod
    def decode(cls, data: bytes) -> Account:
        if len(data) < _HEAD.size:
            raise ValueError("account encoding too short")
        nonce, balance, flags = _HEAD.unpack_from(data)
        pos = _HEAD.size
        storage_root = code_hash = None
        if flags & _FLAG_STORAGE_ROOT:
            storage_root = data[pos : pos + 32]
            pos += 32
        if flags & _FLAG_CODE_HASH:
            code_hash = data[pos : pos + 32]
            pos += 32
        if pos != len(data) or flags & ~0x07:
            raise ValueError("malformed account encoding")
        return cls(
            nonce=nonce,
            balance=int.from_bytes(balance, "big"),
            restored=bool(flags & _FLAG_RESTORED),
            storage_root=storage_root,
            code_hash=code_hash,
        )


def merge(a: Account, b: Account) -> Account:
    """Combine two incarnations of one address: balances and nonces add up."""
    balance = a.balance + b.balance
    nonce = a.nonce + b.nonce
    if balance > MAX_BALANCE:
        raise BalanceOverflow(f"merged balance {balance} exceeds 128 bits")
    if nonce > MAX_NONCE:
        raise OverflowError(f"merged nonce {nonce} exceeds 64 bits")
    return Account(nonce=nonce, balance=balance, restored=True)


def respawn(block_number: int, value: int, max_txs_per_block: int) -> Account:
    """Fresh account created at ``block_number``.

    The starting nonce is ``block_number * max_txs_per_block`` so that no
    transaction signed for an earlier incarnation can be replayed.
    """
    return Account(nonce=block_number * max_txs_per_block, balance=value)


def address_from_int(i: int) -> bytes:
    return i.to_bytes(ADDRESS_LEN, "big")
