"""Block production and verification with epoch sweeping.

A sweeping chain starts every epoch from an empty state trie. The last block
of each epoch is a checkpoint: its state root commits exactly the accounts
touched during that epoch and its header carries the digest of a bloom
filter over those accounts. While building block ``b`` the account resolver
consults the working trie of the current epoch, then the last checkpoint,
and nothing older. Block 0 (genesis) is checkpoint 0.

With ``sweeping=False`` the same class is the baseline engine: one
persistent trie, no blooms, new accounts start at nonce 0, no restores.
"""
from __future__ import annotations

import json
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping

from . import restoration
from .account import UNIT, Account, merge
from .bloom import Bloom
from .state import (
    Reject,
    Transaction,
    TxRejected,
    WorldState,
    apply_block_reward,
    apply_transaction,
    charge_fee,
    decode_tx_list,
    encode_tx_list,
    tx_root,
    validate_transaction,
)
from .storage import ZERO_HASH, DataCategory, KvStore, Overlay, keccak
from .trie import EMPTY_ROOT, Trie, trie_put_accounts

ZERO_ADDRESS = bytes(20)


@dataclass(frozen=True)
class EpochConfig:
    epoch_length: int = 100
    max_txs_per_acct_per_block: int = 1024
    block_reward: int = 2 * UNIT
    bloom_bits: int = 1 << 20
    bloom_hashes: int = 4

    def __post_init__(self) -> None:
        if self.epoch_length < 1:
            raise ValueError("epoch length must be at least 1")
        if self.max_txs_per_acct_per_block < 1:
            raise ValueError("per-account block cap must be at least 1")

    def new_bloom(self) -> Bloom:
        return Bloom(self.bloom_bits, self.bloom_hashes)


_HEADER = struct.Struct(">Q32s32s32s20sB")


@dataclass(frozen=True)
class Header:
    number: int
    prev_hash: bytes
    tx_root: bytes
    state_root: bytes
    bloom_digest: bytes | None  # None on the baseline engine (no such field)
    miner: bytes

    def encode(self) -> bytes:
        head = _HEADER.pack(
            self.number, self.prev_hash, self.tx_root, self.state_root, self.miner, self.bloom_digest is not None
        )
        return head + (self.bloom_digest or b"")

    @classmethod
    def decode(cls, data: bytes) -> Header:
        number, prev, txr, sr, miner, has_bloom = _HEADER.unpack_from(data)
        rest = data[_HEADER.size :]
        if len(rest) != (32 if has_bloom else 0):
            raise ValueError("bad header length")
        return cls(number, prev, txr, sr, rest if has_bloom else None, miner)

    @property
    def hash(self) -> bytes:
        return keccak(self.encode())

    def to_json(self) -> dict:
        return {
            "number": self.number,
            "prev_hash": self.prev_hash.hex(),
            "tx_root": self.tx_root.hex(),
            "state_root": self.state_root.hex(),
            "bloom_digest": None if self.bloom_digest is None else self.bloom_digest.hex(),
            "miner": self.miner.hex(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> Header:
        bd = obj["bloom_digest"]
        return cls(
            obj["number"],
            bytes.fromhex(obj["prev_hash"]),
            bytes.fromhex(obj["tx_root"]),
            bytes.fromhex(obj["state_root"]),
            None if bd is None else bytes.fromhex(bd),
            bytes.fromhex(obj["miner"]),
        )


@dataclass(frozen=True)
class Block:
    header: Header
    txs: tuple[Transaction, ...] = ()

    @property
    def number(self) -> int:
        return self.header.number

    def body(self) -> bytes:
        return encode_tx_list(self.txs)


class BlockRejected(Exception):
    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason


def receipts_blob(txs: Iterable[Transaction]) -> bytes:
    """Receipt stubs: tx hash and a success status byte per transaction."""
    return b"".join(tx.hash + b"\x01" for tx in txs)


def bloom_from_trie(store, root: bytes, config: EpochConfig) -> Bloom:
    bloom = config.new_bloom()
    for key_hash, _ in Trie(store).iter_leaves(root):
        bloom.add_key_hash(key_hash)
    return bloom


def genesis_state(store, alloc: Mapping[bytes, int]) -> bytes:
    return trie_put_accounts(store, EMPTY_ROOT, {a: Account(0, bal) for a, bal in alloc.items()})


@dataclass
class SealedBlock:
    block: Block
    bloom: Bloom | None
    restores: list[restoration.RestoredState] = field(default_factory=list)
    rejected: list[tuple[Transaction, Reject]] = field(default_factory=list)


class BlockBuilder:
    """Applies transactions one at a time on top of the chain head."""

    def __init__(self, chain: Chain, miner: bytes, store):
        self.chain = chain
        self.number = chain.height + 1
        self.miner = miner
        self.store = store
        cfg = chain.config
        working, checkpoint = chain.roots_for(self.number)
        self.state = WorldState(
            store,
            working,
            self.number,
            checkpoint_root=checkpoint,
            max_txs_per_block=cfg.max_txs_per_acct_per_block,
            respawn_nonces=chain.sweeping,
        )
        self.txs: list[Transaction] = []
        self.sends: Counter[bytes] = Counter()
        self.restores: list[restoration.RestoredState] = []
        self.rejected: list[tuple[Transaction, Reject]] = []
        self.last_detail = ""

    def resolve(self, address: bytes) -> Account | None:
        return self.state.resolve(address)

    def add(self, tx: Transaction) -> Reject | None:
        """Apply ``tx`` if valid; return the rejection reason otherwise."""
        self.last_detail = ""
        if self.sends[tx.sender] >= self.chain.config.max_txs_per_acct_per_block:
            reason = Reject.BLOCK_CAP
        else:
            try:
                if tx.is_restore:
                    self._restore(tx)
                else:
                    apply_transaction(self.state, tx, self.miner)
                reason = None
            except TxRejected as exc:
                reason = exc.reason
                self.last_detail = exc.detail
        if reason is None:
            self.sends[tx.sender] += 1
            self.txs.append(tx)
        else:
            self.rejected.append((tx, reason))
        return reason

    def _restore(self, tx: Transaction) -> None:
        chain = self.chain
        if not chain.sweeping:
            raise TxRejected(Reject.RESTORE_DISABLED)
        if tx.value != 0:
            raise TxRejected(Reject.BAD_RESTORE, "restore transactions carry no value")
        try:
            bundle = restoration.RestoreBundle.decode(tx.payload)
        except (ValueError, struct.error) as exc:
            raise TxRejected(Reject.BAD_RESTORE, f"undecodable bundle: {exc}") from exc
        if bundle.target in (tx.sender, tx.to):
            raise TxRejected(Reject.BAD_RESTORE, "target must differ from the fee payer")
        reason = validate_transaction(self.state, tx)
        if reason is not None:
            raise TxRejected(reason)
        try:
            restored = restoration.verify_restore(chain, bundle, chain.checkpoint_index_for(self.number))
        except restoration.RestoreRejected as exc:
            raise TxRejected(Reject.BAD_RESTORE, exc.code) from exc
        charge_fee(self.state, tx, self.miner)
        live = self.state.resolve(bundle.target)
        merged = restored.merged
        if live is not None:
            if live.restored:
                raise TxRejected(Reject.BAD_RESTORE, "target's live state is already restored")
            merged = merge(merged, live)
        self.state.set(bundle.target, merged)
        self.restores.append(restored)

    def seal(self) -> SealedBlock:
        chain = self.chain
        apply_block_reward(self.state, self.miner, chain.config.block_reward)
        root = self.state.commit()
        bloom = None
        digest = None
        if chain.sweeping:
            digest = ZERO_HASH
            if chain.is_checkpoint(self.number):
                bloom = bloom_from_trie(self.store, root, chain.config)
                digest = bloom.digest()
        txs = tuple(self.txs)
        header = Header(self.number, chain.head.hash, tx_root(list(txs)), root, digest, self.miner)
        return SealedBlock(Block(header, txs), bloom, self.restores, self.rejected)


class Chain:
    def __init__(
        self,
        config: EpochConfig,
        genesis_alloc: Mapping[bytes, int],
        *,
        sweeping: bool = True,
        miners: Iterable[bytes] = (),
        store: KvStore | None = None,
    ):
        self.config = config
        self.sweeping = sweeping
        self.store = store if store is not None else KvStore()
        self.genesis_alloc = dict(genesis_alloc)
        self.miners = tuple(miners) or (ZERO_ADDRESS,)
        self.headers: list[Header] = []
        self.bodies: dict[int, tuple[Transaction, ...]] = {}
        self.blooms: dict[int, Bloom] = {}
        self.bloom_source: Callable[[int], Bloom] | None = None
        genesis, bloom = self.make_genesis(config, self.genesis_alloc, sweeping, self.store)
        self._append(genesis, bloom)

    @staticmethod
    def make_genesis(config, alloc, sweeping, store) -> tuple[Block, Bloom | None]:
        root = genesis_state(store, alloc)
        bloom = bloom_from_trie(store, root, config) if sweeping else None
        digest = bloom.digest() if bloom is not None else None
        header = Header(0, ZERO_HASH, EMPTY_ROOT, root, digest, ZERO_ADDRESS)
        return Block(header, ()), bloom

    @classmethod
    def from_snapshot(
        cls,
        config: EpochConfig,
        headers: list[Header],
        *,
        sweeping: bool,
        store: KvStore,
        miners: Iterable[bytes] = (),
        genesis_alloc: Mapping[bytes, int] | None = None,
    ) -> Chain:
        """A chain whose history is known only by headers (synced clients)."""
        self = cls.__new__(cls)
        self.config = config
        self.sweeping = sweeping
        self.store = store
        self.genesis_alloc = dict(genesis_alloc or {})
        self.miners = tuple(miners) or (ZERO_ADDRESS,)
        self.headers = list(headers)
        self.bodies = {}
        self.blooms = {}
        self.bloom_source = None
        return self

    # geometry

    @property
    def head(self) -> Header:
        return self.headers[-1]

    @property
    def height(self) -> int:
        return self.head.number

    def is_checkpoint(self, number: int) -> bool:
        return self.sweeping and number % self.config.epoch_length == 0

    def checkpoint_index_for(self, number: int) -> int:
        """Index of the last checkpoint strictly before block ``number``."""
        return (number - 1) // self.config.epoch_length

    def latest_checkpoint(self) -> int:
        return self.checkpoint_index_for(self.height + 1)

    def checkpoint_root(self, index: int) -> bytes:
        return self.headers[index * self.config.epoch_length].state_root

    def checkpoint_bloom(self, index: int) -> Bloom:
        bloom = self.blooms.get(index)
        if bloom is None:
            if self.bloom_source is None:
                raise KeyError(f"no bloom for checkpoint {index}")
            bloom = self.bloom_source(index)
            if bloom.digest() != self.headers[index * self.config.epoch_length].bloom_digest:
                raise BlockRejected("bloom-mismatch", f"fetched bloom for checkpoint {index} fails its digest")
            self.blooms[index] = bloom
        return bloom

    def roots_for(self, number: int) -> tuple[bytes, bytes | None]:
        """(working root, cached checkpoint root) seen while building ``number``."""
        prev = self.headers[number - 1].state_root
        if not self.sweeping:
            return prev, None
        eps = self.config.epoch_length
        working = EMPTY_ROOT if (number - 1) % eps == 0 else prev
        return working, self.checkpoint_root(self.checkpoint_index_for(number))

    def miner_for(self, number: int) -> bytes:
        return self.miners[(number - 1) % len(self.miners)]

    # state access

    def resolve(self, address: bytes) -> Account | None:
        """Account as the next block would see it."""
        working, cp = self.roots_for(self.height + 1)
        trie = Trie(self.store)
        raw = trie.get(working, address)
        if raw is None and cp is not None:
            raw = trie.get(cp, address)
        return None if raw is None else Account.decode(raw)

    def validate_transaction(self, tx: Transaction) -> Reject | None:
        """Check ``tx`` against the head state without changing anything."""
        builder = self.begin_block(store=Overlay(self.store))
        return builder.add(tx)

    # production / import

    def begin_block(self, miner: bytes | None = None, store=None) -> BlockBuilder:
        number = self.height + 1
        return BlockBuilder(self, miner or self.miner_for(number), store if store is not None else self.store)

    def produce_block(self, txs: Iterable[Transaction], miner: bytes | None = None) -> SealedBlock:
        builder = self.begin_block(miner)
        for tx in txs:
            builder.add(tx)
        sealed = builder.seal()
        self._append(sealed.block, sealed.bloom)
        return sealed

    def commit_builder(self, builder: BlockBuilder) -> SealedBlock:
        sealed = builder.seal()
        if isinstance(builder.store, Overlay):
            builder.store.flush()
        self._append(sealed.block, sealed.bloom)
        return sealed

    def verify_block(self, block: Block) -> tuple[SealedBlock, Overlay]:
        """Re-execute ``block`` on top of the head; raise BlockRejected on any mismatch."""
        h = block.header
        if h.number != self.height + 1:
            raise BlockRejected("number-mismatch", f"expected {self.height + 1}, got {h.number}")
        if h.prev_hash != self.head.hash:
            raise BlockRejected("prev-hash-mismatch")
        if tx_root(list(block.txs)) != h.tx_root:
            raise BlockRejected("tx-root-mismatch")
        overlay = Overlay(self.store)
        builder = BlockBuilder(self, h.miner, overlay)
        for tx in block.txs:
            reason = builder.add(tx)
            if reason is not None:
                raise BlockRejected("invalid-tx", f"{tx.hash.hex()}: {reason.value}")
        sealed = builder.seal()
        mine = sealed.block.header
        if mine.state_root != h.state_root:
            raise BlockRejected("state-root-mismatch")
        if mine.bloom_digest != h.bloom_digest:
            raise BlockRejected("bloom-mismatch")
        if mine != h:
            raise BlockRejected("header-mismatch")
        return sealed, overlay

    def import_block(self, block: Block) -> SealedBlock:
        sealed, overlay = self.verify_block(block)
        overlay.flush()
        self._append(sealed.block, sealed.bloom)
        return sealed

    def _append(self, block: Block, bloom: Bloom | None) -> None:
        store = self.store
        h = block.header
        store.put(DataCategory.HEADERS, h.encode())
        if h.number > 0:
            store.put(DataCategory.BODIES, block.body())
            store.put(DataCategory.RECEIPTS, h.number.to_bytes(8, "big") + receipts_blob(block.txs))
            for i, tx in enumerate(block.txs):
                store.put(DataCategory.TX_INDEX, tx.hash + h.number.to_bytes(8, "big") + i.to_bytes(4, "big"))
        if bloom is not None:
            store.put(DataCategory.HEADERS, bloom.to_bytes())
            self.blooms[h.number // self.config.epoch_length] = bloom
        self.headers.append(h)
        self.bodies[h.number] = block.txs

    def block(self, number: int) -> Block:
        return Block(self.headers[number], self.bodies[number])

    # export / replay

    def export_jsonl(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for h in self.headers:
                obj = h.to_json()
                obj["txs"] = [tx.to_json() for tx in self.bodies.get(h.number, ())]
                fh.write(json.dumps(obj, sort_keys=True) + "\n")


def read_blocks_jsonl(path: str | Path) -> list[Block]:
    out = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                txs = tuple(Transaction.from_json(t) for t in obj.pop("txs"))
                out.append(Block(Header.from_json(obj), txs))
    return out


def replay_jsonl(
    path: str | Path,
    config: EpochConfig,
    genesis_alloc: Mapping[bytes, int],
    *,
    sweeping: bool = True,
    miners: Iterable[bytes] = (),
) -> Chain:
    """Rebuild a chain from an export, verifying every block."""
    blocks = read_blocks_jsonl(path)
    chain = Chain(config, genesis_alloc, sweeping=sweeping, miners=miners)
    if not blocks or blocks[0].header != chain.head:
        raise BlockRejected("genesis-mismatch")
    for block in blocks[1:]:
        chain.import_block(block)
    return chain


__all__ = [
    "Block",
    "BlockBuilder",
    "BlockRejected",
    "Chain",
    "EpochConfig",
    "Header",
    "SealedBlock",
    "decode_tx_list",
    "read_blocks_jsonl",
    "replay_jsonl",
]
