"""Hexary Merkle Patricia trie over a :class:`~ethanos.storage.KvStore`.

Keys are secured: the path of a key is the 64 nibbles of ``keccak(key)``,
so every leaf sits under a fixed-length path and branch nodes never carry a
value in practice. Children are always referenced by hash (no inlining).

Node encoding (frozen; roots depend on it)::

    leaf       00 | u8 n | packed nibbles | u16 len | value
    extension  01 | u8 n | packed nibbles | child hash (32)
    branch     02 | u16 bitmap | child hash (32) per set bit, slot order
                  | 00                    (no value)
                  | 01 | u16 len | value  (with value)

Packed nibbles: ceil(n/2) bytes, high nibble first, odd tail padded with a
zero low nibble. Integers are big-endian. The empty trie's root is
``keccak(b"")``.
"""
from __future__ import annotations

import functools
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping, NamedTuple

from .account import Account
from .storage import EMPTY_HASH, DataCategory, KvStore, keccak

EMPTY_ROOT = EMPTY_HASH

LEAF, EXTENSION, BRANCH = 0, 1, 2


class Leaf(NamedTuple):
    path: tuple[int, ...]
    value: bytes


class Extension(NamedTuple):
    path: tuple[int, ...]
    child: bytes


class Branch(NamedTuple):
    children: tuple[bytes | None, ...]
    value: bytes | None = None


Node = Leaf | Extension | Branch


class TrieIntegrityError(Exception):
    """A node reachable from a root is missing or undecodable."""


class ProofError(Exception):
    code = "proof-error"


class RootMismatch(ProofError):
    code = "root-mismatch"


class BrokenChain(ProofError):
    code = "broken-chain"


class PathMismatch(ProofError):
    code = "path-mismatch"


class FakeVoid(ProofError):
    code = "fake-void"


class MalformedProof(ProofError):
    code = "malformed-proof"


class KeyPresent(Exception):
    """Void proof requested for a key that is bound under the root."""


class KeyAbsent(Exception):
    """Membership proof requested for an unbound key; use a void proof."""


# encoding ------------------------------------------------------------------


def pack_nibbles(path: tuple[int, ...]) -> bytes:
    out = bytearray([len(path)])
    for i in range(0, len(path) - 1, 2):
        out.append(path[i] << 4 | path[i + 1])
    if len(path) % 2:
        out.append(path[-1] << 4)
    return bytes(out)


def _unpack_nibbles(data: bytes, pos: int) -> tuple[tuple[int, ...], int]:
    if pos >= len(data):
        raise ValueError("missing nibble count")
    n = data[pos]
    nbytes = (n + 1) // 2
    raw = data[pos + 1 : pos + 1 + nbytes]
    if len(raw) != nbytes or n > 64:
        raise ValueError("bad nibble run")
    nibs: list[int] = []
    for b in raw:
        nibs.append(b >> 4)
        nibs.append(b & 0x0F)
    if n % 2:
        if nibs.pop() != 0:
            raise ValueError("non-canonical nibble padding")
    return tuple(nibs), pos + 1 + nbytes


def encode_node(node: Node) -> bytes:
    if isinstance(node, Leaf):
        v = node.value
        return b"\x00" + pack_nibbles(node.path) + len(v).to_bytes(2, "big") + v
    if isinstance(node, Extension):
        return b"\x01" + pack_nibbles(node.path) + node.child
    bitmap = 0
    refs = []
    for i, child in enumerate(node.children):
        if child is not None:
            bitmap |= 1 << i
            refs.append(child)
    tail = b"\x00" if node.value is None else b"\x01" + len(node.value).to_bytes(2, "big") + node.value
    return b"\x02" + bitmap.to_bytes(2, "big") + b"".join(refs) + tail


@functools.lru_cache(maxsize=1 << 17)
def decode_node(data: bytes) -> Node:
    """Strict inverse of :func:`encode_node`; raises ValueError otherwise."""
    if not data:
        raise ValueError("empty node")
    tag = data[0]
    if tag == LEAF:
        path, pos = _unpack_nibbles(data, 1)
        vlen = int.from_bytes(data[pos : pos + 2], "big")
        value = data[pos + 2 :]
        if pos + 2 > len(data) or len(value) != vlen:
            raise ValueError("bad leaf value length")
        return Leaf(path, value)
    if tag == EXTENSION:
        path, pos = _unpack_nibbles(data, 1)
        child = data[pos:]
        if not path or len(child) != 32:
            raise ValueError("bad extension")
        return Extension(path, child)
    if tag == BRANCH:
        if len(data) < 4:
            raise ValueError("short branch")
        bitmap = int.from_bytes(data[1:3], "big")
        pos = 3
        children: list[bytes | None] = []
        for i in range(16):
            if bitmap >> i & 1:
                ref = data[pos : pos + 32]
                if len(ref) != 32:
                    raise ValueError("short branch child")
                children.append(ref)
                pos += 32
            else:
                children.append(None)
        if pos >= len(data):
            raise ValueError("missing branch value marker")
        marker = data[pos]
        if marker == 0:
            value = None
            pos += 1
        elif marker == 1:
            vlen = int.from_bytes(data[pos + 1 : pos + 3], "big")
            value = data[pos + 3 : pos + 3 + vlen]
            if len(value) != vlen:
                raise ValueError("short branch value")
            pos += 3 + vlen
        else:
            raise ValueError("bad branch value marker")
        if pos != len(data):
            raise ValueError("trailing bytes in branch")
        return Branch(tuple(children), value)
    raise ValueError(f"unknown node tag {tag}")


@functools.lru_cache(maxsize=1 << 16)
def key_path(key: bytes) -> tuple[int, ...]:
    """64-nibble secure path of a raw key."""
    nibs = []
    for b in keccak(key):
        nibs.append(b >> 4)
        nibs.append(b & 0x0F)
    return tuple(nibs)


def path_to_bytes(path: tuple[int, ...]) -> bytes:
    return bytes(path[i] << 4 | path[i + 1] for i in range(0, len(path), 2))


def _common_prefix(a: tuple[int, ...], b: tuple[int, ...]) -> int:
    n = min(len(a), len(b))
    i = 0
    while i < n and a[i] == b[i]:
        i += 1
    return i


# the trie ------------------------------------------------------------------


class Trie:
    """Persistent trie view: every update returns a new root, old roots stay valid."""

    def __init__(self, store: KvStore, category: DataCategory = DataCategory.TRIE_NODES):
        self.store = store
        self.category = category

    def load(self, ref: bytes) -> Node:
        data = self.store.get(ref)
        if data is None:
            raise TrieIntegrityError(f"missing node {ref.hex()}")
        try:
            return decode_node(data)
        except ValueError as exc:
            raise TrieIntegrityError(f"corrupt node {ref.hex()}: {exc}") from exc

    def _save(self, node: Node) -> bytes:
        return self.store.put(self.category, encode_node(node))

    # reads

    def get(self, root: bytes, key: bytes) -> bytes | None:
        if root == EMPTY_ROOT:
            return None
        path = key_path(key)
        pos = 0
        ref = root
        while True:
            node = self.load(ref)
            if isinstance(node, Leaf):
                return node.value if node.path == path[pos:] else None
            if isinstance(node, Extension):
                n = len(node.path)
                if path[pos : pos + n] != node.path:
                    return None
                pos += n
                ref = node.child
            else:
                if pos == len(path):
                    return node.value
                child = node.children[path[pos]]
                if child is None:
                    return None
                pos += 1
                ref = child

    def path_nodes(self, root: bytes, key: bytes) -> tuple[list[bytes], bool]:
        """Encoded nodes from the root along ``key``'s path, and whether it is bound."""
        if root == EMPTY_ROOT:
            return [], False
        path = key_path(key)
        pos = 0
        ref = root
        out: list[bytes] = []
        while True:
            data = self.store.get(ref)
            if data is None:
                raise TrieIntegrityError(f"missing node {ref.hex()}")
            out.append(data)
            node = self.load(ref)
            if isinstance(node, Leaf):
                return out, node.path == path[pos:]
            if isinstance(node, Extension):
                n = len(node.path)
                if path[pos : pos + n] != node.path:
                    return out, False
                pos += n
                ref = node.child
            else:
                child = node.children[path[pos]]
                if child is None:
                    return out, False
                pos += 1
                ref = child

    def iter_nodes(self, root: bytes) -> Iterator[tuple[bytes, bytes]]:
        """Breadth-first (hash, encoding) pairs of every node under ``root``."""
        if root == EMPTY_ROOT:
            return
        queue = deque([root])
        while queue:
            ref = queue.popleft()
            data = self.store.get(ref)
            if data is None:
                raise TrieIntegrityError(f"missing node {ref.hex()}")
            yield ref, data
            queue.extend(child_refs(self.load(ref)))

    def iter_leaves(self, root: bytes) -> Iterator[tuple[bytes, bytes]]:
        """(secure key hash, value) for every binding under ``root``."""
        if root == EMPTY_ROOT:
            return
        stack: list[tuple[bytes, tuple[int, ...]]] = [(root, ())]
        while stack:
            ref, prefix = stack.pop()
            node = self.load(ref)
            if isinstance(node, Leaf):
                yield path_to_bytes(prefix + node.path), node.value
            elif isinstance(node, Extension):
                stack.append((node.child, prefix + node.path))
            else:
                for i in range(15, -1, -1):
                    child = node.children[i]
                    if child is not None:
                        stack.append((child, prefix + (i,)))

    def size(self, root: bytes) -> tuple[int, int]:
        """(node count, stored bytes incl. 32-byte keys) of the trie at ``root``."""
        count = nbytes = 0
        for _, data in self.iter_nodes(root):
            count += 1
            nbytes += 32 + len(data)
        return count, nbytes

    # writes

    def put(self, root: bytes, key: bytes, value: bytes) -> bytes:
        return self.put_many(root, {key: value})

    def put_many(self, root: bytes, items: Mapping[bytes, bytes]) -> bytes:
        """Bind every ``key -> value`` in ``items`` and return the new root.

        Only the final nodes of the batch are written; intermediate shapes
        never reach the store.
        """
        if not items:
            return root
        entries = sorted((key_path(k), v) for k, v in items.items())
        base = None if root == EMPTY_ROOT else self.load(root)
        return self._insert(base, entries)

    def _insert(self, node: Node | None, entries: list[tuple[tuple[int, ...], bytes]]) -> bytes:
        if node is None:
            return self._fresh(entries)
        if isinstance(node, Leaf):
            if not any(p == node.path for p, _ in entries):
                entries = sorted(entries + [(node.path, node.value)])
            return self._fresh(entries)
        if isinstance(node, Branch):
            children = list(node.children)
            for nib, group in _group(entries, 0):
                base = None if children[nib] is None else self.load(children[nib])
                children[nib] = self._insert(base, group)
            return self._save(Branch(tuple(children), node.value))
        ep = node.path
        c = min(_common_prefix(ep, p) for p, _ in entries)
        if c == len(ep):
            child = self._insert(self.load(node.child), [(p[c:], v) for p, v in entries])
            return self._save(Extension(ep, child))
        # split the extension at nibble c
        rest = ep[c + 1 :]
        children: list[bytes | None] = [None] * 16
        groups = dict(_group(entries, c))
        for nib, group in groups.items():
            if nib == ep[c]:
                base = Extension(rest, node.child) if rest else self.load(node.child)
                children[nib] = self._insert(base, group)
            else:
                children[nib] = self._fresh(group)
        if ep[c] not in groups:
            children[ep[c]] = self._save(Extension(rest, node.child)) if rest else node.child
        branch = self._save(Branch(tuple(children)))
        return self._save(Extension(ep[:c], branch)) if c else branch

    def _fresh(self, entries: list[tuple[tuple[int, ...], bytes]]) -> bytes:
        if len(entries) == 1:
            path, value = entries[0]
            return self._save(Leaf(path, value))
        first, last = entries[0][0], entries[-1][0]
        c = _common_prefix(first, last)  # entries are sorted
        if c == len(first) or c == len(last):
            raise ValueError("keys of unequal depth under one prefix")
        children: list[bytes | None] = [None] * 16
        for nib, group in _group(entries, c):
            children[nib] = self._fresh(group)
        branch = self._save(Branch(tuple(children)))
        if c:
            return self._save(Extension(first[:c], branch))
        return branch


def _group(entries, depth):
    """Split sorted entries by the nibble at ``depth``; strip through it."""
    out: list[tuple[int, list]] = []
    for path, value in entries:
        nib = path[depth]
        if not out or out[-1][0] != nib:
            out.append((nib, []))
        out[-1][1].append((path[depth + 1 :], value))
    return out


def child_refs(node: Node) -> list[bytes]:
    if isinstance(node, Leaf):
        return []
    if isinstance(node, Extension):
        return [node.child]
    return [c for c in node.children if c is not None]


# proofs --------------------------------------------------------------------


@dataclass(frozen=True)
class _Proof:
    nodes: tuple[bytes, ...]

    def encode(self) -> bytes:
        out = [len(self.nodes).to_bytes(2, "big")]
        for n in self.nodes:
            out.append(len(n).to_bytes(4, "big"))
            out.append(n)
        return b"".join(out)

    @classmethod
    def decode_from(cls, data: bytes, pos: int = 0):
        if pos + 2 > len(data):
            raise ValueError("truncated proof")
        count = int.from_bytes(data[pos : pos + 2], "big")
        pos += 2
        nodes = []
        for _ in range(count):
            n = int.from_bytes(data[pos : pos + 4], "big")
            node = data[pos + 4 : pos + 4 + n]
            if pos + 4 > len(data) or len(node) != n:
                raise ValueError("truncated proof node")
            nodes.append(node)
            pos += 4 + n
        return cls(tuple(nodes)), pos

    @classmethod
    def decode(cls, data: bytes):
        proof, pos = cls.decode_from(data)
        if pos != len(data):
            raise ValueError("trailing bytes after proof")
        return proof

    def to_hex(self) -> list[str]:
        return [n.hex() for n in self.nodes]

    @classmethod
    def from_hex(cls, items: Iterable[str]):
        return cls(tuple(bytes.fromhex(x) for x in items))

    def __len__(self) -> int:
        return len(self.nodes)


class MembershipProof(_Proof):
    pass


class VoidProof(_Proof):
    pass


def prove_key(store: KvStore, root: bytes, key: bytes) -> MembershipProof:
    nodes, present = Trie(store).path_nodes(root, key)
    if not present:
        raise KeyAbsent(f"key {key.hex()} is not bound under {root.hex()}; prove_void instead")
    return MembershipProof(tuple(nodes))


def prove_key_void(store: KvStore, root: bytes, key: bytes) -> VoidProof:
    nodes, present = Trie(store).path_nodes(root, key)
    if present:
        raise KeyPresent(f"key {key.hex()} is bound under {root.hex()}")
    return VoidProof(tuple(nodes))


def _walk(root: bytes, path: tuple[int, ...], nodes: tuple[bytes, ...]):
    """Check the hash chain and yield (index, node, remaining path) per step."""
    expected = root
    pos = 0
    for i, data in enumerate(nodes):
        if keccak(data) != expected:
            raise (RootMismatch if i == 0 else BrokenChain)(f"node {i} does not hash to its reference")
        try:
            node = decode_node(data)
        except ValueError as exc:
            raise MalformedProof(f"node {i}: {exc}") from exc
        rest = path[pos:]
        yield i, node, rest
        if isinstance(node, Extension):
            pos += len(node.path)
            expected = node.child
        elif isinstance(node, Branch):
            if not rest:
                raise MalformedProof("branch at full path depth")
            expected = node.children[rest[0]]
            pos += 1
            if expected is None:
                # divergence; the caller has already stopped here
                return


def verify_key(root: bytes, key: bytes, proof: MembershipProof) -> bytes:
    """Return the value bound to ``key`` under ``root`` as proven by ``proof``."""
    nodes = proof.nodes
    if not nodes:
        raise RootMismatch("empty membership proof") if root != EMPTY_ROOT else PathMismatch("empty trie")
    path = key_path(key)
    last = len(nodes) - 1
    for i, node, rest in _walk(root, path, nodes):
        if isinstance(node, Leaf):
            if node.path != rest:
                raise PathMismatch("leaf does not hold the requested key")
            if i != last:
                raise MalformedProof("nodes after leaf")
            return node.value
        if isinstance(node, Extension):
            if rest[: len(node.path)] != node.path:
                raise PathMismatch("extension diverges from key path")
        elif node.children[rest[0]] is None:
            raise PathMismatch("branch slot for key path is empty")
        if i == last:
            raise PathMismatch("proof ends before reaching a leaf")
    raise PathMismatch("proof ends before reaching a leaf")


def verify_key_void(root: bytes, key: bytes, proof: VoidProof) -> None:
    """Accept iff ``proof`` shows ``key`` is unbound under ``root``."""
    nodes = proof.nodes
    if not nodes:
        if root == EMPTY_ROOT:
            return
        raise FakeVoid("empty void proof against a non-empty root")
    path = key_path(key)
    last = len(nodes) - 1
    for i, node, rest in _walk(root, path, nodes):
        if isinstance(node, Leaf):
            diverged = node.path != rest
            if not diverged:
                raise FakeVoid("terminal leaf holds the key")
        elif isinstance(node, Extension):
            diverged = rest[: len(node.path)] != node.path
        else:
            diverged = node.children[rest[0]] is None
        if diverged:
            if i != last:
                raise MalformedProof("nodes after divergence point")
            return
        if i == last:
            raise FakeVoid("terminal node continues along the key path")
    raise FakeVoid("terminal node continues along the key path")


# account-level helpers -----------------------------------------------------


def trie_put(store: KvStore, root: bytes, address: bytes, account: Account) -> bytes:
    return Trie(store).put(root, address, account.encode())


def trie_put_accounts(store: KvStore, root: bytes, accounts: Mapping[bytes, Account]) -> bytes:
    return Trie(store).put_many(root, {a: acc.encode() for a, acc in accounts.items()})


def trie_get(store: KvStore, root: bytes, address: bytes) -> Account | None:
    raw = Trie(store).get(root, address)
    return None if raw is None else Account.decode(raw)


def prove_membership(store: KvStore, root: bytes, address: bytes) -> MembershipProof:
    return prove_key(store, root, address)


def prove_void(store: KvStore, root: bytes, address: bytes) -> VoidProof:
    return prove_key_void(store, root, address)


def verify_membership(root: bytes, address: bytes, proof: MembershipProof) -> Account:
    raw = verify_key(root, address, proof)
    try:
        return Account.decode(raw)
    except ValueError as exc:
        raise MalformedProof(f"leaf value is not an account: {exc}") from exc


def verify_void(root: bytes, address: bytes, proof: VoidProof) -> None:
    verify_key_void(root, address, proof)
