"""Host/client bootstrapping over an in-process, byte-counted channel.

Three modes:

* full archive: download every header and body, replay from genesis;
* fast: every header and body, receipts up to the pivot, the pivot state
  trie(s), then replay pivot+1..head;
* compact: like fast, but bodies and receipts only from the pivot on.

On a sweeping chain the pivot state alone cannot validate transactions
unless the pivot is a checkpoint, so the last checkpoint trie is fetched as
well. Every payload is checked against an earlier commitment before it is
stored: headers against the hash chain from a trusted genesis, bodies
against ``tx_root``, receipts against body transaction hashes, trie nodes
against the hash that referenced them.

Sizes are reported twice: ``downloaded`` counts wire frames per category,
``stored`` is the client's store after sync. Mode comparisons use
``stored``, the quantity the storage tables measure.
"""
from __future__ import annotations

import json
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

from .bloom import Bloom
from .chain import Block, BlockRejected, Chain, EpochConfig, Header, bloom_from_trie, receipts_blob
from .state import decode_tx_list, tx_root
from .storage import DataCategory, KvStore, StorageStats, decode_records, encode_record, keccak
from .trie import EMPTY_ROOT, child_refs, decode_node

PIVOT_DISTANCE = 64
HEADER_BATCH = 192
BODY_BATCH = 128
TRIE_BATCH = 384

FULL_ARCHIVE = "full-archive"
FAST = "fast"
COMPACT = "compact"
MODES = (FULL_ARCHIVE, FAST, COMPACT)

LAST_CHECKPOINT = "last-checkpoint"
HEAD_MINUS_64 = "head-minus-64"
POLICIES = (LAST_CHECKPOINT, HEAD_MINUS_64)


# messages ------------------------------------------------------------------


@dataclass(frozen=True)
class HeadersRange:
    lo: int
    hi: int  # inclusive


@dataclass(frozen=True)
class Bodies:
    numbers: tuple[int, ...]


@dataclass(frozen=True)
class Receipts:
    numbers: tuple[int, ...]


@dataclass(frozen=True)
class TrieNodes:
    hashes: tuple[bytes, ...]


@dataclass(frozen=True)
class CheckpointState:
    """The bloom of checkpoint ``index``; its trie comes via TrieNodes."""

    index: int


Request = HeadersRange | Bodies | Receipts | TrieNodes | CheckpointState
Record = tuple[DataCategory, bytes, bytes]


def request_size(req: Request) -> int:
    if isinstance(req, HeadersRange):
        return 1 + 16
    if isinstance(req, (Bodies, Receipts)):
        return 1 + 4 + 8 * len(req.numbers)
    if isinstance(req, TrieNodes):
        return 1 + 4 + 32 * len(req.hashes)
    return 1 + 8


class Host:
    """Serves a chain's data, optionally as of an earlier height."""

    def __init__(self, chain: Chain, head: int | None = None):
        self.chain = chain
        self.head = chain.height if head is None else head
        if not 0 <= self.head <= chain.height:
            raise ValueError(f"head {self.head} outside chain")

    def serve(self, req: Request) -> list[Record]:
        chain = self.chain
        if isinstance(req, HeadersRange):
            out = []
            for n in range(req.lo, min(req.hi, self.head) + 1):
                enc = chain.headers[n].encode()
                out.append((DataCategory.HEADERS, keccak(enc), enc))
            return out
        if isinstance(req, Bodies):
            out = []
            for n in req.numbers:
                if n <= self.head:
                    body = Block(chain.headers[n], chain.bodies[n]).body()
                    out.append((DataCategory.BODIES, keccak(body), body))
            return out
        if isinstance(req, Receipts):
            out = []
            for n in req.numbers:
                if n <= self.head:
                    blob = n.to_bytes(8, "big") + receipts_blob(chain.bodies[n])
                    out.append((DataCategory.RECEIPTS, keccak(blob), blob))
            return out
        if isinstance(req, TrieNodes):
            out = []
            for h in req.hashes:
                data = chain.store.get(h)
                if data is not None:
                    out.append((DataCategory.TRIE_NODES, h, data))
            return out
        if isinstance(req, CheckpointState):
            if req.index * chain.config.epoch_length > self.head:
                return []
            enc = chain.checkpoint_bloom(req.index).to_bytes()
            return [(DataCategory.HEADERS, keccak(enc), enc)]
        raise TypeError(f"unknown request {req!r}")


Tamper = Callable[[Request, list[Record]], list[Record]]


class Channel:
    """Point-to-point link; every response crosses as length-prefixed frames."""

    def __init__(self, host: Host, tamper: Tamper | None = None):
        self.host = host
        self.tamper = tamper
        self.downloaded = {c: 0 for c in DataCategory}
        self.request_bytes = 0
        self.requests = 0

    def request(self, req: Request) -> list[Record]:
        self.requests += 1
        self.request_bytes += request_size(req)
        records = self.host.serve(req)
        if self.tamper is not None:
            records = self.tamper(req, records)
        wire = b"".join(encode_record(c, k, v) for c, k, v in records)
        decoded = decode_records(wire)
        for c, k, v in decoded:
            self.downloaded[c] += len(encode_record(c, k, v))
        return decoded

    def stats(self) -> StorageStats:
        return StorageStats(dict(self.downloaded))


class SyncError(Exception):
    def __init__(self, message: str, block: int | None = None):
        super().__init__(message if block is None else f"block {block}: {message}")
        self.block = block


@dataclass
class SyncReport:
    mode: str
    engine: str
    head: int
    pivot: int
    pivot_policy: str | None
    downloaded: StorageStats
    stored: StorageStats
    trie_nodes_downloaded: int
    download_seconds: float
    replay_seconds: float
    state_root: bytes
    verified: bool
    requests: int = 0
    extra_checkpoint: int | None = None
    client: Chain | None = field(default=None, repr=False, compare=False)

    @property
    def total_bytes(self) -> int:
        return self.stored.total

    def to_json(self, timings: bool = True) -> dict:
        out = {
            "mode": self.mode,
            "engine": self.engine,
            "head": self.head,
            "pivot": self.pivot,
            "pivot_policy": self.pivot_policy,
            "extra_checkpoint": self.extra_checkpoint,
            "downloaded": self.downloaded.as_dict(),
            "stored": self.stored.as_dict(),
            "trie_nodes_downloaded": self.trie_nodes_downloaded,
            "requests": self.requests,
            "state_root": self.state_root.hex(),
            "verified": self.verified,
        }
        if timings:
            out["download_seconds"] = round(self.download_seconds, 6)
            out["replay_seconds"] = round(self.replay_seconds, 6)
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)


# pivot ---------------------------------------------------------------------


@dataclass(frozen=True)
class Pivot:
    number: int
    extra_checkpoint: int | None  # checkpoint whose trie is fetched in addition


def select_pivot(head: int, epoch_length: int, policy: str, sweeping: bool = True) -> Pivot:
    if policy == LAST_CHECKPOINT:
        number = (head // epoch_length) * epoch_length
    elif policy == HEAD_MINUS_64:
        number = max(0, head - PIVOT_DISTANCE)
    else:
        raise ValueError(f"unknown pivot policy {policy!r}")
    extra = None
    if sweeping and number % epoch_length != 0:
        extra = (number - 1) // epoch_length
    return Pivot(number, extra)


# client --------------------------------------------------------------------


class _Client:
    def __init__(self, channel: Channel, config: EpochConfig, alloc, sweeping: bool, miners: Sequence[bytes]):
        self.channel = channel
        self.config = config
        self.alloc = dict(alloc)
        self.sweeping = sweeping
        self.miners = tuple(miners)
        self.store = KvStore()
        self.trie_nodes = 0

    def trusted_genesis(self) -> Header:
        block, _ = Chain.make_genesis(self.config, self.alloc, self.sweeping, KvStore())
        return block.header

    def fetch_headers(self, head: int) -> list[Header]:
        genesis = self.trusted_genesis()
        got = self.channel.request(HeadersRange(0, 0))
        if len(got) != 1 or got[0][2] != genesis.encode():
            raise SyncError("host genesis does not match the trusted genesis", 0)
        headers = [genesis]
        n = 1
        while n <= head:
            hi = min(head, n + HEADER_BATCH - 1)
            records = self.channel.request(HeadersRange(n, hi))
            if len(records) != hi - n + 1:
                raise SyncError("short header response", n)
            for _, key, value in records:
                try:
                    h = Header.decode(value)
                except ValueError as exc:
                    raise SyncError(f"undecodable header: {exc}", n) from exc
                if keccak(value) != key or h.number != n or h.prev_hash != headers[-1].hash:
                    raise SyncError("header does not extend the verified chain", n)
                headers.append(h)
                n += 1
        return headers

    def fetch_bodies(self, headers: list[Header], numbers: list[int]) -> dict[int, tuple]:
        out = {}
        for i in range(0, len(numbers), BODY_BATCH):
            batch = numbers[i : i + BODY_BATCH]
            records = self.channel.request(Bodies(tuple(batch)))
            if len(records) != len(batch):
                raise SyncError("short body response", batch[0])
            for n, (_, key, value) in zip(batch, records):
                try:
                    txs = tuple(decode_tx_list(value))
                except (ValueError, Exception) as exc:
                    raise SyncError(f"undecodable body: {exc}", n) from exc
                if keccak(value) != key or tx_root(list(txs)) != headers[n].tx_root:
                    raise SyncError("body does not match tx_root", n)
                out[n] = txs
        return out

    def fetch_receipts(self, bodies: Mapping[int, tuple], numbers: list[int]) -> None:
        for i in range(0, len(numbers), BODY_BATCH):
            batch = numbers[i : i + BODY_BATCH]
            records = self.channel.request(Receipts(tuple(batch)))
            if len(records) != len(batch):
                raise SyncError("short receipt response", batch[0])
            for n, (_, key, value) in zip(batch, records):
                expected = n.to_bytes(8, "big") + receipts_blob(bodies[n])
                if keccak(value) != key or value != expected:
                    raise SyncError("receipts do not match the body", n)
                self.store.put(DataCategory.RECEIPTS, value)

    def store_bodies(self, bodies: Mapping[int, tuple]) -> None:
        for n, txs in bodies.items():
            self.store.put(DataCategory.BODIES, Block(None, txs).body())
            for i, tx in enumerate(txs):
                self.store.put(DataCategory.TX_INDEX, tx.hash + n.to_bytes(8, "big") + i.to_bytes(4, "big"))

    def fetch_trie(self, root: bytes) -> None:
        if root == EMPTY_ROOT:
            return
        queue = deque([root] if root not in self.store else [])
        while queue:
            batch = [queue.popleft() for _ in range(min(TRIE_BATCH, len(queue)))]
            records = self.channel.request(TrieNodes(tuple(batch)))
            got = {k: v for _, k, v in records}
            for h in batch:
                data = got.get(h)
                if data is None:
                    raise SyncError(f"host is missing trie node {h.hex()}")
                if keccak(data) != h:
                    raise SyncError(f"trie node {h.hex()} fails its hash")
                try:
                    node = decode_node(data)
                except ValueError as exc:
                    raise SyncError(f"corrupt trie node {h.hex()}: {exc}") from exc
                self.store.put(DataCategory.TRIE_NODES, data)
                self.trie_nodes += 1
                for child in child_refs(node):
                    if child not in self.store and child not in queue:
                        queue.append(child)

    def fetch_bloom(self, headers: list[Header], index: int) -> Bloom:
        records = self.channel.request(CheckpointState(index))
        if len(records) != 1:
            raise SyncError(f"no bloom served for checkpoint {index}")
        bloom = Bloom.from_bytes(records[0][2])
        if bloom.digest() != headers[index * self.config.epoch_length].bloom_digest:
            raise SyncError(f"bloom of checkpoint {index} fails its digest")
        self.store.put(DataCategory.HEADERS, bloom.to_bytes())
        return bloom


def _engine_name(chain: Chain) -> str:
    return "ethanos" if chain.sweeping else "vanilla"


def full_archive_sync(host: Host, tamper: Tamper | None = None) -> SyncReport:
    """Download everything and replay from genesis."""
    chain = host.chain
    channel = Channel(host, tamper)
    client = _Client(channel, chain.config, chain.genesis_alloc, chain.sweeping, chain.miners)
    t0 = time.perf_counter()
    headers = client.fetch_headers(host.head)
    bodies = client.fetch_bodies(headers, list(range(1, host.head + 1)))
    t1 = time.perf_counter()
    replica = Chain(chain.config, chain.genesis_alloc, sweeping=chain.sweeping, miners=chain.miners, store=client.store)
    for n in range(1, host.head + 1):
        try:
            replica.import_block(Block(headers[n], bodies[n]))
        except BlockRejected as exc:
            raise SyncError(f"replay diverged: {exc}", n) from exc
    t2 = time.perf_counter()
    return _report(FULL_ARCHIVE, host, replica, client, 0, None, None, t1 - t0, t2 - t1)


def fast_sync(host: Host, policy: str = HEAD_MINUS_64, tamper: Tamper | None = None) -> SyncReport:
    return _pivot_sync(FAST, host, policy, tamper)


def compact_sync(host: Host, policy: str | None = None, tamper: Tamper | None = None) -> SyncReport:
    if policy is None:
        policy = LAST_CHECKPOINT if host.chain.sweeping else HEAD_MINUS_64
    return _pivot_sync(COMPACT, host, policy, tamper)


def _pivot_sync(mode: str, host: Host, policy: str, tamper: Tamper | None) -> SyncReport:
    chain = host.chain
    cfg = chain.config
    channel = Channel(host, tamper)
    client = _Client(channel, cfg, chain.genesis_alloc, chain.sweeping, chain.miners)
    pivot = select_pivot(host.head, cfg.epoch_length, policy, chain.sweeping)
    p = pivot.number

    t0 = time.perf_counter()
    headers = client.fetch_headers(host.head)
    client.store.put(DataCategory.HEADERS, headers[0].encode())
    for h in headers[1:]:
        client.store.put(DataCategory.HEADERS, h.encode())
    first_body = 1 if mode == FAST else max(1, p)
    body_numbers = list(range(first_body, host.head + 1))
    bodies = client.fetch_bodies(headers, body_numbers)
    client.store_bodies(bodies)
    receipt_numbers = list(range(1, p + 1)) if mode == FAST else ([p] if p >= 1 else [])
    client.fetch_receipts(bodies, receipt_numbers)

    client.fetch_trie(headers[p].state_root)
    if pivot.extra_checkpoint is not None:
        client.fetch_trie(headers[pivot.extra_checkpoint * cfg.epoch_length].state_root)
    t1 = time.perf_counter()

    synced = Chain.from_snapshot(
        cfg, headers[: p + 1], sweeping=chain.sweeping, store=client.store, miners=chain.miners,
        genesis_alloc=chain.genesis_alloc,
    )
    for n in range(p, host.head + 1):
        if n in bodies:
            synced.bodies[n] = bodies[n]
    if chain.sweeping:
        # blooms of checkpoints whose trie we hold are rebuilt locally; older ones on demand
        for idx in {i for i in (pivot.extra_checkpoint, p // cfg.epoch_length if p % cfg.epoch_length == 0 else None) if i is not None}:
            bloom = bloom_from_trie(client.store, headers[idx * cfg.epoch_length].state_root, cfg)
            if bloom.digest() != headers[idx * cfg.epoch_length].bloom_digest:
                raise SyncError(f"rebuilt bloom of checkpoint {idx} fails its digest", idx * cfg.epoch_length)
            client.store.put(DataCategory.HEADERS, bloom.to_bytes())
            synced.blooms[idx] = bloom
        synced.bloom_source = lambda i: client.fetch_bloom(headers, i)

    t2 = time.perf_counter()
    for n in range(p + 1, host.head + 1):
        try:
            sealed = synced.import_block(Block(headers[n], bodies[n]))
        except BlockRejected as exc:
            raise SyncError(f"replay diverged: {exc}", n) from exc
        del sealed
    t3 = time.perf_counter()
    return _report(mode, host, synced, client, p, policy, pivot.extra_checkpoint, t1 - t0, t3 - t2)


def _report(mode, host, client_chain, client, pivot, policy, extra, t_dl, t_replay) -> SyncReport:
    expected = host.chain.headers[host.head]
    verified = client_chain.head.hash == expected.hash and client_chain.head.state_root == expected.state_root
    if not verified:
        raise SyncError("client head does not match host", host.head)
    return SyncReport(
        mode=mode,
        engine=_engine_name(host.chain),
        head=host.head,
        pivot=pivot,
        pivot_policy=policy,
        downloaded=client.channel.stats(),
        stored=client.store.stats(),
        trie_nodes_downloaded=client.trie_nodes,
        download_seconds=t_dl,
        replay_seconds=t_replay,
        state_root=client_chain.head.state_root,
        verified=verified,
        requests=client.channel.requests,
        extra_checkpoint=extra,
        client=client_chain,
    )


def sync(host: Host, mode: str, policy: str | None = None, tamper: Tamper | None = None) -> SyncReport:
    if mode == FULL_ARCHIVE:
        return full_archive_sync(host, tamper)
    if mode == FAST:
        return fast_sync(host, policy or HEAD_MINUS_64, tamper)
    if mode == COMPACT:
        return compact_sync(host, policy, tamper)
    raise ValueError(f"unknown sync mode {mode!r}")
