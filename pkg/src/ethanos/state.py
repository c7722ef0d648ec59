"""Transactions and the state-transition function.

A :class:`WorldState` is the mutable view of one block in progress. Reads go
through an account resolver: the dirty cache, then the working trie, then
(for a sweeping chain) the last checkpoint trie. Nothing reaches the store
until :meth:`WorldState.commit`, which writes all dirty accounts in one
batch and returns the new state root.
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from typing import Iterable

from .account import ADDRESS_LEN, Account, respawn
from .storage import KvStore, keccak
from .trie import EMPTY_ROOT, Trie

RESTORE_ADDRESS = (0x1234).to_bytes(ADDRESS_LEN, "big")


class Reject(str, enum.Enum):
    UNKNOWN_SENDER = "unknown-sender"
    NONCE_MISMATCH = "nonce-mismatch"
    INSUFFICIENT_BALANCE = "insufficient-balance"
    ZERO_FEE = "zero-fee"
    BLOCK_CAP = "per-block-cap"
    BAD_RESTORE = "bad-restore"
    RESTORE_DISABLED = "restore-disabled"


class TxRejected(Exception):
    def __init__(self, reason: Reject, detail: str = ""):
        super().__init__(f"{reason.value}: {detail}" if detail else reason.value)
        self.reason = reason
        self.detail = detail


_TX_HEAD = struct.Struct(">20s20s16s16sQI")


@dataclass(frozen=True)
class Transaction:
    sender: bytes
    to: bytes
    value: int
    fee: int
    nonce: int
    payload: bytes = b""

    @property
    def is_restore(self) -> bool:
        return self.to == RESTORE_ADDRESS

    def encode(self) -> bytes:
        return (
            _TX_HEAD.pack(
                self.sender,
                self.to,
                self.value.to_bytes(16, "big"),
                self.fee.to_bytes(16, "big"),
                self.nonce,
                len(self.payload),
            )
            + self.payload
        )

    @classmethod
    def decode(cls, data: bytes) -> Transaction:
        sender, to, value, fee, nonce, plen = _TX_HEAD.unpack_from(data)
        payload = data[_TX_HEAD.size :]
        if len(payload) != plen:
            raise ValueError("transaction payload length mismatch")
        return cls(sender, to, int.from_bytes(value, "big"), int.from_bytes(fee, "big"), nonce, payload)

    @property
    def hash(self) -> bytes:
        return keccak(self.encode())

    @property
    def size(self) -> int:
        return len(self.encode())

    def to_json(self) -> dict:
        out = {
            "from": "0x" + self.sender.hex(),
            "to": "0x" + self.to.hex(),
            "value": str(self.value),
            "fee": str(self.fee),
            "nonce": self.nonce,
        }
        if self.payload:
            out["payload"] = self.payload.hex()
        return out

    @classmethod
    def from_json(cls, obj: dict) -> Transaction:
        return cls(
            sender=_hex(obj["from"]),
            to=_hex(obj["to"]),
            value=int(obj["value"]),
            fee=int(obj["fee"]),
            nonce=int(obj["nonce"]),
            payload=bytes.fromhex(obj.get("payload", "")),
        )


def _hex(s: str) -> bytes:
    return bytes.fromhex(s[2:] if s.startswith("0x") else s)


def encode_tx_list(txs: Iterable[Transaction]) -> bytes:
    parts = []
    count = 0
    for tx in txs:
        enc = tx.encode()
        parts.append(len(enc).to_bytes(4, "big") + enc)
        count += 1
    return count.to_bytes(4, "big") + b"".join(parts)


def decode_tx_list(data: bytes) -> list[Transaction]:
    count = int.from_bytes(data[:4], "big")
    pos = 4
    out = []
    for _ in range(count):
        n = int.from_bytes(data[pos : pos + 4], "big")
        out.append(Transaction.decode(data[pos + 4 : pos + 4 + n]))
        pos += 4 + n
    if pos != len(data):
        raise ValueError("trailing bytes in transaction list")
    return out


def tx_root(txs: list[Transaction]) -> bytes:
    """Root of the index -> transaction trie (built in a scratch store)."""
    if not txs:
        return EMPTY_ROOT
    return Trie(KvStore()).put_many(EMPTY_ROOT, {i.to_bytes(8, "big"): tx.encode() for i, tx in enumerate(txs)})


class WorldState:
    """Account view for one block under construction."""

    def __init__(
        self,
        store: KvStore,
        working_root: bytes,
        block_number: int,
        *,
        checkpoint_root: bytes | None = None,
        max_txs_per_block: int = 1024,
        respawn_nonces: bool = True,
    ):
        self.trie = Trie(store)
        self.working_root = working_root
        self.checkpoint_root = checkpoint_root
        self.block_number = block_number
        self.max_txs_per_block = max_txs_per_block
        self.respawn_nonces = respawn_nonces
        self.dirty: dict[bytes, Account] = {}

    def resolve(self, address: bytes) -> Account | None:
        acc = self.dirty.get(address)
        if acc is not None:
            return acc
        raw = self.trie.get(self.working_root, address)
        if raw is None and self.checkpoint_root is not None:
            raw = self.trie.get(self.checkpoint_root, address)
        return None if raw is None else Account.decode(raw)

    def in_working(self, address: bytes) -> bool:
        return address in self.dirty or self.trie.get(self.working_root, address) is not None

    def set(self, address: bytes, account: Account) -> None:
        self.dirty[address] = account

    def new_account(self, value: int) -> Account:
        if self.respawn_nonces:
            return respawn(self.block_number, value, self.max_txs_per_block)
        return Account(nonce=0, balance=value)

    def credit(self, address: bytes, amount: int) -> None:
        acc = self.resolve(address)
        if acc is None:
            self.set(address, self.new_account(amount))
        else:
            self.set(address, Account(acc.nonce, acc.balance + amount, acc.restored))

    def commit(self) -> bytes:
        if self.dirty:
            self.working_root = self.trie.put_many(
                self.working_root, {a: acc.encode() for a, acc in self.dirty.items()}
            )
            self.dirty = {}
        return self.working_root


def validate_transaction(state: WorldState, tx: Transaction) -> Reject | None:
    """None if ``tx`` may be applied to ``state``, else the rejection reason."""
    if tx.fee <= 0:
        return Reject.ZERO_FEE
    sender = state.resolve(tx.sender)
    if sender is None:
        return Reject.UNKNOWN_SENDER
    if sender.nonce != tx.nonce:
        return Reject.NONCE_MISMATCH
    if sender.balance < tx.value + tx.fee:
        return Reject.INSUFFICIENT_BALANCE
    return None


def apply_transaction(state: WorldState, tx: Transaction, miner: bytes) -> None:
    """Debit sender, credit recipient, pay the fee to ``miner``.

    The fee is credited immediately, so later transactions in the same block
    see it. Restore transactions are handled by the chain, not here.
    """
    reason = validate_transaction(state, tx)
    if reason is not None:
        raise TxRejected(reason)
    sender = state.resolve(tx.sender)
    state.set(tx.sender, Account(sender.nonce + 1, sender.balance - tx.value - tx.fee, sender.restored))
    state.credit(tx.to, tx.value)
    state.credit(miner, tx.fee)


def charge_fee(state: WorldState, tx: Transaction, miner: bytes) -> None:
    """Fee-and-nonce part of a transaction whose value goes nowhere (restores)."""
    reason = validate_transaction(state, tx)
    if reason is not None:
        raise TxRejected(reason)
    sender = state.resolve(tx.sender)
    state.set(tx.sender, Account(sender.nonce + 1, sender.balance - tx.value - tx.fee, sender.restored))
    state.credit(miner, tx.fee)


def apply_block_reward(state: WorldState, miner: bytes, reward: int) -> None:
    state.credit(miner, reward)
