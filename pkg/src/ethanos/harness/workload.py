"""Synthetic transaction traces.

Two activity models:

``fig4``
    Accounts are born over the run by a faucet transfer from a miner, then
    send a handful of transactions spaced by a per-account gap drawn from
    one of six bands. Band shares follow the measured mainnet distribution
    of average transaction distance; calendar days are mapped onto blocks
    with one epoch standing for 30 days.
``uniform``
    Every account is funded at genesis; each epoch a fresh random subset of
    ``active_ratio * accounts`` sends and receives, nobody else does.

Traces carry no nonces. Each engine assigns them when it builds blocks,
because a swept chain respawns accounts at a different nonce than the
baseline does.
"""
from __future__ import annotations

import json
import math
import random
from collections import defaultdict
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterator

from ..account import UNIT, address_from_int

FEE = 10**6
ACCOUNT_FUNDS = 10 * UNIT
MINER_FUNDS = 10**6 * UNIT
MINER_BASE = 0xF000_0000

# (low, high] average gap in days, share in percent
FIG4_BANDS = (
    (0, 1, 62.34),
    (1, 7, 13.66),
    (7, 14, 6.38),
    (14, 30, 6.57),
    (30, 180, 9.45),
    (180, 360, 1.60),
)
DAYS_PER_EPOCH = 30
PAWN_RECIPIENT_SHARE = 0.05


class InfeasibleSpec(ValueError):
    pass


@dataclass(frozen=True)
class WorkloadSpec:
    accounts: int = 2000
    blocks: int = 500
    epoch_length: int = 100
    txs_per_block: int = 20
    activity: str = "fig4"  # fig4 | uniform
    active_ratio: float = 0.10
    value_mode: str = "funded"  # funded | zero
    miners: int = 4
    max_txs_per_acct_per_block: int = 1024
    seed: int = 0

    def validate(self) -> None:
        if self.accounts < 1 or self.blocks < 1 or self.epoch_length < 1 or self.miners < 1:
            raise InfeasibleSpec("accounts, blocks, epoch_length and miners must be positive")
        if self.txs_per_block < 0:
            raise InfeasibleSpec("txs_per_block must be non-negative")
        if self.activity not in ("fig4", "uniform"):
            raise InfeasibleSpec(f"unknown activity model {self.activity!r}")
        if self.value_mode not in ("funded", "zero"):
            raise InfeasibleSpec(f"unknown value mode {self.value_mode!r}")
        if not 0 < self.active_ratio <= 1:
            raise InfeasibleSpec("active_ratio must be in (0, 1]")
        if self.activity == "uniform":
            active = max(1, round(self.active_ratio * self.accounts))
            if self.txs_per_block > active * self.max_txs_per_acct_per_block:
                raise InfeasibleSpec(
                    f"{self.txs_per_block} txs per block exceed {active} active accounts x cap "
                    f"{self.max_txs_per_acct_per_block}"
                )

    @classmethod
    def from_dict(cls, obj: dict) -> WorkloadSpec:
        names = {f.name: f.type for f in fields(cls)}
        kw = {}
        for k, v in obj.items():
            if k not in names:
                raise KeyError(f"unknown workload field {k!r}")
            kw[k] = v
        return cls(**kw)


@dataclass(frozen=True)
class TraceTx:
    block: int
    sender: bytes
    to: bytes
    value: int
    fee: int = FEE

    def to_json(self) -> dict:
        return {
            "kind": "tx",
            "block": self.block,
            "from": self.sender.hex(),
            "to": self.to.hex(),
            "value": str(self.value),
            "fee": str(self.fee),
        }

    @classmethod
    def from_json(cls, obj: dict) -> TraceTx:
        return cls(int(obj["block"]), bytes.fromhex(obj["from"]), bytes.fromhex(obj["to"]), int(obj["value"]), int(obj["fee"]))


@dataclass
class Trace:
    spec: WorkloadSpec
    accounts: tuple[bytes, ...]
    miners: tuple[bytes, ...]
    alloc: dict[bytes, int]
    txs: list[TraceTx]

    def by_block(self) -> dict[int, list[TraceTx]]:
        out: dict[int, list[TraceTx]] = defaultdict(list)
        for tx in self.txs:
            out[tx.block].append(tx)
        return out

    def lines(self) -> Iterator[str]:
        meta = {
            "kind": "meta",
            "spec": asdict(self.spec),
            "accounts": len(self.accounts),
            "miners": [m.hex() for m in self.miners],
            "alloc": {a.hex(): str(v) for a, v in sorted(self.alloc.items())},
            "band_mapping": f"1 epoch = {DAYS_PER_EPOCH} days (modeling choice)",
        }
        yield json.dumps(meta, sort_keys=True)
        for tx in self.txs:
            yield json.dumps(tx.to_json(), sort_keys=True)

    def dumps(self) -> str:
        return "\n".join(self.lines()) + "\n"

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def loads(cls, text: str) -> Trace:
        rows = [json.loads(line) for line in text.splitlines() if line.strip()]
        if not rows or rows[0].get("kind") != "meta":
            raise ValueError("trace must start with a meta line")
        meta = rows[0]
        spec = WorkloadSpec.from_dict(meta["spec"])
        txs = [TraceTx.from_json(r) for r in rows[1:]]
        return cls(
            spec,
            account_addresses(spec.accounts),
            tuple(bytes.fromhex(m) for m in meta["miners"]),
            {bytes.fromhex(a): int(v) for a, v in meta["alloc"].items()},
            txs,
        )

    @classmethod
    def read(cls, path: str | Path) -> Trace:
        return cls.loads(Path(path).read_text())


def account_addresses(n: int) -> tuple[bytes, ...]:
    return tuple(address_from_int(i + 1) for i in range(n))


def miner_addresses(n: int) -> tuple[bytes, ...]:
    return tuple(address_from_int(MINER_BASE + i) for i in range(n))


def band_blocks(epoch_length: int) -> list[tuple[float, float, float]]:
    day = epoch_length / DAYS_PER_EPOCH
    return [(lo * day, hi * day, share) for lo, hi, share in FIG4_BANDS]


def generate_workload(spec: WorkloadSpec) -> Trace:
    spec.validate()
    accounts = account_addresses(spec.accounts)
    miners = miner_addresses(spec.miners)
    alloc = {m: MINER_FUNDS for m in miners}
    if spec.activity == "uniform" or spec.value_mode == "zero":
        alloc.update({a: ACCOUNT_FUNDS for a in accounts})
    rng = random.Random(spec.seed)
    if spec.activity == "uniform":
        txs = _uniform(spec, rng, accounts, miners, alloc)
    else:
        txs = _fig4(spec, rng, accounts, miners, alloc)
    return Trace(spec, accounts, miners, alloc, txs)


def _pick_value(rng: random.Random, spec: WorkloadSpec, balance: int) -> int:
    if spec.value_mode == "zero":
        return 0
    room = balance - FEE
    return rng.randint(0, room // 4) if room > 0 else 0


def _uniform(spec, rng, accounts, miners, alloc) -> list[TraceTx]:
    eps = spec.epoch_length
    size = max(1, round(spec.active_ratio * spec.accounts))
    balance = dict(alloc)
    txs = []
    for first in range(1, spec.blocks + 1, eps):
        active = rng.sample(range(spec.accounts), size)
        order = active[:]
        rng.shuffle(order)
        i = 0
        for b in range(first, min(first + eps, spec.blocks + 1)):
            for _ in range(spec.txs_per_block):
                s = order[i % len(order)]
                i += 1
                if len(active) > 1:
                    r = rng.choice(active)
                    while r == s:
                        r = rng.choice(active)
                    to = accounts[r]
                else:
                    to = miners[0]
                sender = accounts[s]
                value = _pick_value(rng, spec, balance[sender])
                if balance[sender] < value + FEE:
                    continue
                balance[sender] -= value + FEE
                balance[to] = balance.get(to, 0) + value
                txs.append(TraceTx(b, sender, to, value))
    return txs


def _fig4(spec, rng, accounts, miners, alloc) -> list[TraceTx]:
    eps = spec.epoch_length
    bands = band_blocks(eps)
    weights = [share for _, _, share in bands]
    mean_sends = max(1.0, spec.blocks * spec.txs_per_block / spec.accounts - 1)

    # (block, order, kind, account): births sort before sends in one block
    events: list[tuple[int, int, int, int]] = []
    for a in range(spec.accounts):
        lo, hi, _ = rng.choices(bands, weights)[0]
        born = rng.randint(1, spec.blocks)
        events.append((born, 0, 0, a))
        sends = 1 + int(rng.expovariate(1 / mean_sends)) if mean_sends > 1 else 1
        t = born
        for _ in range(sends):
            t += max(1, math.ceil(rng.uniform(lo, hi)))
            if t > spec.blocks:
                break
            events.append((t, 1, 1, a))
    events.sort(key=lambda e: (e[0], e[1], e[3]))

    balance = dict(alloc)
    born_set: list[int] = []
    epoch_active: dict[int, set[int]] = defaultdict(set)
    txs = []
    for b, _, kind, a in events:
        epoch = (b - 1) // eps
        addr = accounts[a]
        if kind == 0:
            miner = miners[a % len(miners)]
            value = 0 if spec.value_mode == "zero" else ACCOUNT_FUNDS
            balance[miner] -= value + FEE
            balance[addr] = balance.get(addr, 0) + value
            txs.append(TraceTx(b, miner, addr, value))
            born_set.append(a)
            epoch_active[epoch].add(a)
            continue
        pool = [x for x in sorted(epoch_active[epoch]) if x != a]
        if pool and rng.random() >= PAWN_RECIPIENT_SHARE:
            r = rng.choice(pool)
        else:
            r = rng.choice(born_set)
        to = accounts[r] if r != a else miners[a % len(miners)]
        value = _pick_value(rng, spec, balance.get(addr, 0))
        if balance.get(addr, 0) < value + FEE:
            continue
        balance[addr] -= value + FEE
        balance[to] = balance.get(to, 0) + value
        txs.append(TraceTx(b, addr, to, value))
        epoch_active[epoch].add(a)
        if r != a:
            epoch_active[epoch].add(r)
    return txs


def active_ratios(trace: Trace) -> list[tuple[int, int, int]]:
    """(epoch, active trace accounts, accounts seen so far) per epoch."""
    eps = trace.spec.epoch_length
    idx = {a: i for i, a in enumerate(trace.accounts)}
    seen: set[int] = {idx[a] for a in trace.alloc if a in idx}
    out = []
    by_epoch: dict[int, set[int]] = defaultdict(set)
    for tx in trace.txs:
        e = (tx.block - 1) // eps
        for addr in (tx.sender, tx.to):
            if addr in idx:
                by_epoch[e].add(idx[addr])
    for e in range((trace.spec.blocks - 1) // eps + 1):
        seen |= by_epoch[e]
        out.append((e + 1, len(by_epoch[e]), len(seen)))
    return out
