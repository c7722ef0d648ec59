"""Restore bundles, their verification, and account lineage across sweeps.

Vocabulary used below:

* a *run* is a maximal stretch of consecutive checkpoints in which an address
  is present; its *end state* is the account at the run's last checkpoint;
* the *base* run holds the state being brought back. It is the latest run
  whose end state carries the restored flag, or else the earliest run;
* every later run is a *pawn*: the address was re-created by a plain
  transfer while its older state sat in the archive.

A bundle built against checkpoint ``n`` carries a membership proof at the
base's last checkpoint ``k`` and, for each checkpoint in ``(k, n]`` whose
bloom answers positive, either a void proof or a pawn membership proof.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Callable, Protocol

from .account import ADDRESS_LEN, Account, merge, respawn  # noqa: F401  (re-exported)
from .bloom import Bloom
from .storage import KvStore
from .trie import (
    MembershipProof,
    ProofError,
    VoidProof,
    prove_membership,
    prove_void,
    trie_get,
    verify_membership,
    verify_void,
)


class CheckpointSource(Protocol):
    def checkpoint_root(self, index: int) -> bytes: ...

    def checkpoint_bloom(self, index: int) -> Bloom: ...


class ArchiveSource(CheckpointSource, Protocol):
    store: KvStore

    def latest_checkpoint(self) -> int: ...

    def resolve(self, address: bytes) -> Account | None: ...


class NoHistory(Exception):
    """The target never appears in any checkpoint."""


class NotDormant(Exception):
    """The target's base state is still live; nothing to restore."""


class RestoreRejected(Exception):
    def __init__(self, code: str, detail: str = ""):
        super().__init__(f"{code}: {detail}" if detail else code)
        self.code = code


# bundle --------------------------------------------------------------------

_BUNDLE_HEAD = struct.Struct(">20sII")


@dataclass(frozen=True)
class RestoreBundle:
    target: bytes
    last_active: int
    as_of: int
    membership: MembershipProof
    voids: dict[int, VoidProof] = field(default_factory=dict)
    pawns: dict[int, MembershipProof] = field(default_factory=dict)

    @property
    def proof_count(self) -> int:
        return 1 + len(self.voids) + len(self.pawns)

    def encode(self) -> bytes:
        out = [_BUNDLE_HEAD.pack(self.target, self.last_active, self.as_of), self.membership.encode()]
        for group in (self.voids, self.pawns):
            out.append(len(group).to_bytes(2, "big"))
            for j in sorted(group):
                out.append(j.to_bytes(4, "big"))
                out.append(group[j].encode())
        return b"".join(out)

    @classmethod
    def decode(cls, data: bytes) -> RestoreBundle:
        target, k, n = _BUNDLE_HEAD.unpack_from(data)
        pos = _BUNDLE_HEAD.size
        membership, pos = MembershipProof.decode_from(data, pos)
        groups: list[dict] = []
        for proof_cls in (VoidProof, MembershipProof):
            count = int.from_bytes(data[pos : pos + 2], "big")
            pos += 2
            group = {}
            prev = -1
            for _ in range(count):
                j = int.from_bytes(data[pos : pos + 4], "big")
                if j <= prev:
                    raise ValueError("checkpoint indices must strictly increase")
                prev = j
                group[j], pos = proof_cls.decode_from(data, pos + 4)
            groups.append(group)
        if pos != len(data):
            raise ValueError("trailing bytes after bundle")
        return cls(target, k, n, membership, groups[0], groups[1])

    def to_json(self) -> str:
        return json.dumps(
            {
                "target": "0x" + self.target.hex(),
                "k": self.last_active,
                "as_of": self.as_of,
                "membership_proof": self.membership.to_hex(),
                "void_proofs": {str(j): p.to_hex() for j, p in sorted(self.voids.items())},
                "pawn_proofs": {str(j): p.to_hex() for j, p in sorted(self.pawns.items())},
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> RestoreBundle:
        obj = json.loads(text)
        target = obj["target"]
        return cls(
            target=bytes.fromhex(target[2:] if target.startswith("0x") else target),
            last_active=int(obj["k"]),
            as_of=int(obj["as_of"]),
            membership=MembershipProof.from_hex(obj["membership_proof"]),
            voids={int(j): VoidProof.from_hex(p) for j, p in obj["void_proofs"].items()},
            pawns={int(j): MembershipProof.from_hex(p) for j, p in obj["pawn_proofs"].items()},
        )


@dataclass(frozen=True)
class RestoredState:
    target: bytes
    base: Account
    pawn_states: tuple[tuple[int, Account], ...]
    merged: Account


# lineage -------------------------------------------------------------------


@dataclass(frozen=True)
class Run:
    start: int
    end: int
    state: Account  # end state; for the live run, the resolved account


@dataclass(frozen=True)
class Lineage:
    runs: tuple[Run, ...]
    live: Account | None
    live_in_checkpoint: bool  # the last run ends at the latest checkpoint
    base_index: int | None

    @property
    def needs_restore(self) -> bool:
        """True when the resolved account does not already carry the whole history."""
        if self.base_index is None:
            return False
        return self.live is None or self.base_index != len(self.runs) - 1

    def effective(self) -> Account | None:
        """The account as it would stand after a restore right now."""
        if not self.needs_restore:
            return self.live
        base = self.runs[self.base_index].state
        acc = Account(base.nonce, base.balance, True)
        for run in self.runs[self.base_index + 1 :]:
            acc = merge(acc, run.state)
        return acc


def checkpoint_runs(source: CheckpointSource, store: KvStore, target: bytes, latest: int) -> list[Run]:
    runs: list[Run] = []
    current: tuple[int, int, Account] | None = None
    for j in range(latest + 1):
        acc = trie_get(store, source.checkpoint_root(j), target)
        if acc is None:
            if current is not None:
                runs.append(Run(*current))
                current = None
        elif current is None:
            current = (j, j, acc)
        else:
            current = (current[0], j, acc)
    if current is not None:
        runs.append(Run(*current))
    return runs


def _pick_base(runs: list[Run]) -> int | None:
    if not runs:
        return None
    for i in range(len(runs) - 1, -1, -1):
        if runs[i].state.restored:
            return i
    return 0


def lineage(
    archive: ArchiveSource, target: bytes, resolve: Callable[[bytes], Account | None] | None = None
) -> Lineage:
    """Runs of ``target`` over all checkpoints plus its live (resolved) state.

    The live state replaces the end state of the run that reaches the latest
    checkpoint, or forms a run of its own if it exists only in the working
    trie. Pass a block builder's ``resolve`` to see uncommitted changes.
    """
    n = archive.latest_checkpoint()
    runs = checkpoint_runs(archive, archive.store, target, n)
    live = (resolve or archive.resolve)(target)
    live_in_cp = bool(runs) and runs[-1].end == n
    if live is not None:
        if live_in_cp:
            runs[-1] = Run(runs[-1].start, n, live)
        else:
            runs.append(Run(n + 1, n + 1, live))
    return Lineage(tuple(runs), live, live_in_cp, _pick_base(runs))


def effective_account(archive: ArchiveSource, target: bytes) -> Account | None:
    return lineage(archive, target).effective()


# build / verify ------------------------------------------------------------


def build_restore(archive: ArchiveSource, target: bytes, as_of: int | None = None) -> RestoreBundle:
    """Assemble the proofs needed to restore ``target`` against checkpoint ``as_of``."""
    n = archive.latest_checkpoint() if as_of is None else as_of
    runs = checkpoint_runs(archive, archive.store, target, n)
    base_i = _pick_base(runs)
    if base_i is None:
        raise NoHistory(f"{target.hex()} has no state in checkpoints 0..{n}")
    k = runs[base_i].end
    if k == n:
        raise NotDormant(f"{target.hex()} is present in the latest checkpoint {n}")
    store = archive.store
    membership = prove_membership(store, archive.checkpoint_root(k), target)
    present = set()
    for run in runs[base_i + 1 :]:
        present.update(range(run.start, run.end + 1))
    voids: dict[int, VoidProof] = {}
    pawns: dict[int, MembershipProof] = {}
    for j in range(k + 1, n + 1):
        if target not in archive.checkpoint_bloom(j):
            continue
        root = archive.checkpoint_root(j)
        if j in present:
            pawns[j] = prove_membership(store, root, target)
        else:
            voids[j] = prove_void(store, root, target)
    return RestoreBundle(target, k, n, membership, voids, pawns)


def verify_restore(source: CheckpointSource, bundle: RestoreBundle, latest: int) -> RestoredState:
    """Check ``bundle`` against checkpoint roots and blooms up to ``latest``.

    Returns the merge of the base state with the end state of every pawn run
    that closed before ``latest``. A pawn run reaching ``latest`` is still
    live; the caller merges the resolved account instead.
    """
    target = bundle.target
    n = latest
    k = bundle.last_active
    if bundle.as_of != n:
        raise RestoreRejected("stale-bundle", f"built for checkpoint {bundle.as_of}, latest is {n}")
    if not 0 <= k < n:
        raise RestoreRejected("bad-index", f"last active checkpoint {k} not below {n}")
    for group in (bundle.voids, bundle.pawns):
        for j in group:
            if not k < j <= n:
                raise RestoreRejected("bad-index", f"proof for checkpoint {j} outside ({k}, {n}]")
    try:
        base = verify_membership(source.checkpoint_root(k), target, bundle.membership)
    except ProofError as exc:
        raise RestoreRejected("invalid-proof", f"membership at {k}: {exc.code}") from exc

    pawn_states: list[tuple[int, Account]] = []
    prev_present = True  # checkpoint k
    run_last: tuple[int, Account] | None = None
    for j in range(k + 1, n + 1):
        has_void = j in bundle.voids
        has_pawn = j in bundle.pawns
        if has_void and has_pawn:
            raise RestoreRejected("ambiguous-proof", f"checkpoint {j} has both void and pawn proofs")
        positive = target in source.checkpoint_bloom(j)
        if not positive:
            if has_void or has_pawn:
                raise RestoreRejected("unexpected-proof", f"checkpoint {j} bloom is negative")
            present = False
        elif has_void:
            try:
                verify_void(source.checkpoint_root(j), target, bundle.voids[j])
            except ProofError as exc:
                raise RestoreRejected("invalid-proof", f"void at {j}: {exc.code}") from exc
            present = False
        elif has_pawn:
            if j == k + 1:
                raise RestoreRejected("stale-checkpoint", f"target still present at {j}; {k} is not its last active checkpoint")
            try:
                acc = verify_membership(source.checkpoint_root(j), target, bundle.pawns[j])
            except ProofError as exc:
                raise RestoreRejected("invalid-proof", f"pawn at {j}: {exc.code}") from exc
            if acc.restored:
                raise RestoreRejected("restored-pawn", f"state at {j} was itself restored; use it as the base")
            present = True
            run_last = (j, acc)
        else:
            raise RestoreRejected(
                "stale-checkpoint" if j == k + 1 else "incomplete-coverage",
                f"bloom of checkpoint {j} is positive and unexplained",
            )
        if prev_present and not present and run_last is not None:
            pawn_states.append(run_last)
            run_last = None
        prev_present = present
    # a run still open at n is the live pawn; the caller merges the resolved account
    merged = Account(base.nonce, base.balance, True)
    for _, acc in pawn_states:
        merged = merge(merged, acc)
    return RestoredState(target, base, tuple(pawn_states), merged)
