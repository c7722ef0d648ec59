"""Replay a trace on the baseline and the sweeping engine, checked by an oracle.

The oracle is a flat ledger: a dict from address to balance updated by the
same transfers, fees and rewards, with no tries, sweeps or restores. At
every checkpoint each engine's view of every address must agree with it.
For the sweeping engine the view is the lineage merge (what a restore
issued now would yield), so dormant balances are counted, not lost.
"""
from __future__ import annotations

import time
from collections import Counter, defaultdict
from dataclasses import dataclass, field

from ..chain import Chain, EpochConfig
from ..restoration import build_restore, effective_account, lineage
from ..state import RESTORE_ADDRESS, Transaction
from ..trie import Trie
from .. import sync as syncmod
from .workload import FEE, Trace

ENGINES = ("vanilla", "ethanos")


class OracleDivergence(AssertionError):
    def __init__(self, engine: str, block: int, address: bytes, expected: int, got: int):
        super().__init__(
            f"{engine} diverges at block {block}: {address.hex()} has {got}, oracle says {expected}"
        )
        self.engine = engine
        self.block = block
        self.address = address
        self.expected = expected
        self.got = got


class TraceRejected(RuntimeError):
    pass


@dataclass(frozen=True)
class RunConfig:
    epoch_length: int | None = None  # None: take it from the trace
    bloom_bits: int = 1 << 20
    bloom_hashes: int = 4
    max_txs_per_acct_per_block: int = 1024
    pivot_policy: str | None = None  # None: last-checkpoint for ethanos compact, head-minus-64 otherwise
    restore_fee: int = FEE
    check_oracle: bool = True
    sync: bool = False  # run the three sync modes at each checkpoint
    engines: tuple[str, ...] = ENGINES

    def epoch_config(self, trace: Trace) -> EpochConfig:
        return EpochConfig(
            epoch_length=self.epoch_length or trace.spec.epoch_length,
            max_txs_per_acct_per_block=self.max_txs_per_acct_per_block,
            bloom_bits=self.bloom_bits,
            bloom_hashes=self.bloom_hashes,
        )


class FlatLedger:
    def __init__(self, alloc):
        self.balance: dict[bytes, int] = defaultdict(int, alloc)

    def transfer(self, tx: Transaction, miner: bytes) -> None:
        self.balance[tx.sender] -= tx.value + tx.fee
        self.balance[tx.to] += tx.value
        self.balance[miner] += tx.fee

    def reward(self, miner: bytes, amount: int) -> None:
        self.balance[miner] += amount


@dataclass(frozen=True)
class RestoreRecord:
    block: int
    target: bytes
    last_active: int
    as_of: int
    voids: int
    pawns: int
    size: int  # encoded bundle bytes

    @property
    def proof_count(self) -> int:
        return 1 + self.voids + self.pawns


@dataclass
class MetricsRow:
    checkpoint: int
    block: int
    active_accounts: int
    total_accounts: int
    trie_bytes: dict[str, int] = field(default_factory=dict)  # checkpoint trie (ethanos) / full trie (vanilla)
    trie_nodes: dict[str, int] = field(default_factory=dict)
    archive_trie_bytes: dict[str, int] = field(default_factory=dict)  # TrieNodes category of the whole store
    normal_txs: int = 0
    restore_txs: int = 0
    restore_bytes: int = 0
    sync: dict[tuple[str, str], syncmod.SyncReport] = field(default_factory=dict)  # (engine, mode)


@dataclass
class EngineRun:
    engine: str
    chain: Chain
    restores: list[RestoreRecord]
    normal_txs: int
    oracle_checks: int
    seconds: float


@dataclass
class RunResult:
    rows: list[MetricsRow]
    runs: dict[str, EngineRun]
    config: RunConfig

    def roots(self) -> dict[str, str]:
        return {e: r.chain.head.state_root.hex() for e, r in self.runs.items()}


def replay_engine(trace: Trace, engine: str, config: RunConfig = RunConfig(), on_checkpoint=None) -> EngineRun:
    """Build one engine's chain from ``trace``, inserting restores as needed."""
    sweeping = engine == "ethanos"
    cfg = config.epoch_config(trace)
    t0 = time.perf_counter()
    chain = Chain(cfg, trace.alloc, sweeping=sweeping, miners=trace.miners)
    ledger = FlatLedger(trace.alloc)
    known = sorted(set(trace.alloc) | set(trace.accounts) | set(trace.miners))
    blocks = trace.by_block()
    restores: list[RestoreRecord] = []
    normal = 0
    checks = 0
    for b in range(1, trace.spec.blocks + 1):
        builder = chain.begin_block()
        miner = builder.miner
        for ttx in blocks.get(b, ()):
            if sweeping:
                lin = lineage(chain, ttx.sender, builder.resolve)
                if lin.needs_restore:
                    restores.append(_insert_restore(chain, builder, ttx.sender, config.restore_fee))
            acc = builder.resolve(ttx.sender)
            if acc is None:
                raise TraceRejected(f"block {b}: sender {ttx.sender.hex()} unknown to {engine}")
            tx = Transaction(ttx.sender, ttx.to, ttx.value, ttx.fee, acc.nonce)
            reason = builder.add(tx)
            if reason is not None:
                raise TraceRejected(f"block {b}: {engine} rejected {tx}: {reason.value} {builder.last_detail}")
            ledger.transfer(tx, miner)
            normal += 1
        chain.commit_builder(builder)
        ledger.reward(miner, cfg.block_reward)
        if b % cfg.epoch_length == 0 or b == trace.spec.blocks:
            if config.check_oracle:
                checks += check_oracle(chain, ledger, known, engine)
            if on_checkpoint is not None:
                on_checkpoint(chain, b)
    return EngineRun(engine, chain, restores, normal, checks, time.perf_counter() - t0)


def _insert_restore(chain: Chain, builder, target: bytes, fee: int) -> RestoreRecord:
    # the block's miner pays; the fee comes straight back to it, so balances are untouched
    bundle = build_restore(chain, target)
    payer = builder.miner
    payload = bundle.encode()
    tx = Transaction(payer, RESTORE_ADDRESS, 0, fee, builder.resolve(payer).nonce, payload)
    reason = builder.add(tx)
    if reason is not None:
        raise TraceRejected(f"block {builder.number}: restore of {target.hex()} rejected: {reason.value} {builder.last_detail}")
    return RestoreRecord(
        builder.number, target, bundle.last_active, bundle.as_of, len(bundle.voids), len(bundle.pawns), len(payload)
    )


def engine_balance(chain: Chain, address: bytes) -> int:
    acc = effective_account(chain, address) if chain.sweeping else chain.resolve(address)
    return 0 if acc is None else acc.balance


def check_oracle(chain: Chain, ledger: FlatLedger, addresses, engine: str) -> int:
    for a in addresses:
        got = engine_balance(chain, a)
        expected = ledger.balance.get(a, 0)
        if got != expected:
            raise OracleDivergence(engine, chain.height, a, expected, got)
    return len(addresses)


def run_dual(trace: Trace, config: RunConfig = RunConfig()) -> RunResult:
    """Replay ``trace`` on each configured engine and collect per-checkpoint rows."""
    cfg = config.epoch_config(trace)
    eps = cfg.epoch_length
    checkpoints = [b for b in range(1, trace.spec.blocks + 1) if b % eps == 0 or b == trace.spec.blocks]
    active, total = _activity(trace, eps)
    rows = {
        b: MetricsRow(checkpoint=-(-b // eps), block=b, active_accounts=active[b], total_accounts=total[b])
        for b in checkpoints
    }

    runs: dict[str, EngineRun] = {}
    for engine in config.engines:

        def snapshot(chain: Chain, b: int, engine=engine) -> None:
            row = rows[b]
            nodes, size = Trie(chain.store).size(chain.head.state_root)
            row.trie_bytes[engine] = size
            row.trie_nodes[engine] = nodes
            row.archive_trie_bytes[engine] = chain.store.stats()[syncmod.DataCategory.TRIE_NODES]

        runs[engine] = replay_engine(trace, engine, config, snapshot)

    if "ethanos" in runs:
        per_block = Counter()
        size_by_block = Counter()
        for r in runs["ethanos"].restores:
            per_block[r.block] += 1
            size_by_block[r.block] += r.size
    normal_by_block = Counter(tx.block for tx in trace.txs)
    prev = 0
    for b in checkpoints:
        row = rows[b]
        row.normal_txs = sum(normal_by_block[x] for x in range(prev + 1, b + 1))
        if "ethanos" in runs:
            row.restore_txs = sum(per_block[x] for x in range(prev + 1, b + 1))
            row.restore_bytes = sum(size_by_block[x] for x in range(prev + 1, b + 1))
        prev = b
        if config.sync:
            for engine, run in runs.items():
                host = syncmod.Host(run.chain, head=b)
                for mode in syncmod.MODES:
                    row.sync[(engine, mode)] = syncmod.sync(host, mode, sync_policy(engine, mode, config))
    return RunResult([rows[b] for b in checkpoints], runs, config)


def sync_policy(engine: str, mode: str, config: RunConfig) -> str | None:
    if mode == syncmod.FULL_ARCHIVE:
        return None
    if config.pivot_policy is not None:
        return config.pivot_policy
    if mode == syncmod.COMPACT and engine == "ethanos":
        return syncmod.LAST_CHECKPOINT
    return syncmod.HEAD_MINUS_64


def _activity(trace: Trace, eps: int) -> tuple[dict[int, int], dict[int, int]]:
    """Per checkpoint block: trace accounts active in its epoch, and seen so far."""
    idx = set(trace.accounts)
    seen = {a for a in trace.alloc if a in idx}
    by_epoch: dict[int, set[bytes]] = defaultdict(set)
    for tx in trace.txs:
        for a in (tx.sender, tx.to):
            if a in idx:
                by_epoch[(tx.block - 1) // eps].add(a)
    active, total = {}, {}
    for b in range(1, trace.spec.blocks + 1):
        if b % eps == 0 or b == trace.spec.blocks:
            e = (b - 1) // eps
            seen |= by_epoch[e]
            active[b] = len(by_epoch[e])
            total[b] = len(seen)
    return active, total
