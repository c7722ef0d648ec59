import hashlib
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ethanos.account import Account
from ethanos.storage import DataCategory, KvStore
from ethanos.trie import (
    EMPTY_ROOT,
    Branch,
    Extension,
    FakeVoid,
    KeyAbsent,
    KeyPresent,
    Leaf,
    MembershipProof,
    ProofError,
    Trie,
    VoidProof,
    decode_node,
    encode_node,
    prove_key,
    prove_key_void,
    prove_membership,
    prove_void,
    trie_get,
    trie_put_accounts,
    verify_key,
    verify_key_void,
    verify_membership,
    verify_void,
)


# Reference root: built from scratch over the full key set, encoding written
# out by hand from the documented node layout.

def _h(b):
    return hashlib.sha3_256(b).digest()


def _nibbles(key):
    d = _h(key)
    return [n for byte in d for n in (byte >> 4, byte & 15)]


def _pack(path):
    p = list(path) + ([0] if len(path) % 2 else [])
    return bytes([len(path)]) + bytes(p[i] << 4 | p[i + 1] for i in range(0, len(p), 2))


def _ref(entries, depth):
    if len(entries) == 1:
        path, value = entries[0]
        return _h(b"\x00" + _pack(path[depth:]) + len(value).to_bytes(2, "big") + value)
    first = entries[0][0]
    common = 0
    while all(p[depth + common] == first[depth + common] for p, _ in entries):
        common += 1
    if common:
        child = _ref(entries, depth + common)
        return _h(b"\x01" + _pack(first[depth : depth + common]) + child)
    bitmap = 0
    refs = b""
    for nib in range(16):
        group = [e for e in entries if e[0][depth] == nib]
        if group:
            bitmap |= 1 << nib
            refs += _ref(group, depth + 1)
    return _h(b"\x02" + bitmap.to_bytes(2, "big") + refs + b"\x00")


def reference_root(mapping):
    if not mapping:
        return _h(b"")
    return _ref(sorted((_nibbles(k), v) for k, v in mapping.items()), 0)


keys = st.binary(min_size=1, max_size=8)
values = st.binary(min_size=1, max_size=40)
mappings = st.dictionaries(keys, values, max_size=40)


@given(mappings, st.randoms(use_true_random=False))
def test_root_matches_reference_in_any_insert_order(mapping, rnd):
    store = KvStore()
    trie = Trie(store)
    items = list(mapping.items())
    rnd.shuffle(items)
    root = EMPTY_ROOT
    i = 0
    while i < len(items):
        n = rnd.randint(1, 5)
        batch = dict(items[i : i + n])
        root = trie.put_many(root, batch) if n > 1 else trie.put(root, *items[i])
        i += n
    assert root == reference_root(mapping)
    for k, v in mapping.items():
        assert trie.get(root, k) == v


@given(mappings, mappings)
def test_overwrites_and_history(first, second):
    store = Trie(KvStore())
    r1 = store.put_many(EMPTY_ROOT, first)
    r2 = store.put_many(r1, second)
    assert r2 == reference_root({**first, **second})
    for k, v in first.items():
        assert store.get(r1, k) == v  # old roots stay readable


@given(mappings, keys)
def test_proofs_for_members_and_absentees(mapping, probe):
    store = KvStore()
    root = Trie(store).put_many(EMPTY_ROOT, mapping)
    for k, v in mapping.items():
        assert verify_key(root, k, prove_key(store, root, k)) == v
    if probe in mapping:
        with pytest.raises(KeyPresent):
            prove_key_void(store, root, probe)
    else:
        verify_key_void(root, probe, prove_key_void(store, root, probe))
        with pytest.raises(KeyAbsent):
            prove_key(store, root, probe)


@given(st.dictionaries(keys, values, min_size=2, max_size=30), st.data())
def test_proof_of_one_key_never_proves_another(mapping, data):
    store = KvStore()
    root = Trie(store).put_many(EMPTY_ROOT, mapping)
    a, b = data.draw(st.lists(st.sampled_from(sorted(mapping)), min_size=2, max_size=2, unique=True))
    with pytest.raises(ProofError):
        verify_key(root, a, prove_key(store, root, b))
    with pytest.raises(FakeVoid):
        verify_key_void(root, a, VoidProof(prove_key(store, root, a).nodes))


def test_empty_trie():
    store = KvStore()
    verify_key_void(EMPTY_ROOT, b"x", prove_key_void(store, EMPTY_ROOT, b"x"))
    with pytest.raises(FakeVoid):
        verify_key_void(_h(b"nonempty"), b"x", VoidProof(()))
    with pytest.raises(ProofError):
        verify_key(EMPTY_ROOT, b"x", MembershipProof(()))
    assert Trie(store).size(EMPTY_ROOT) == (0, 0)


@given(st.one_of(
    st.builds(Leaf, st.lists(st.integers(0, 15), max_size=64).map(tuple), values),
    st.builds(Extension, st.lists(st.integers(0, 15), min_size=1, max_size=63).map(tuple), st.binary(min_size=32, max_size=32)),
    st.builds(
        Branch,
        st.lists(st.none() | st.binary(min_size=32, max_size=32), min_size=16, max_size=16).map(tuple),
        st.none() | values,
    ),
))
def test_node_codec_roundtrip(node):
    assert decode_node(encode_node(node)) == node


@given(st.binary(max_size=80))
def test_decode_node_never_crashes_unexpectedly(data):
    try:
        node = decode_node(data)
    except ValueError:
        return
    assert encode_node(node) == data  # strict: only canonical encodings decode


def test_size_and_iteration_agree():
    store = KvStore()
    mapping = {i.to_bytes(4, "big"): bytes([i % 251]) * 3 for i in range(300)}
    root = Trie(store).put_many(EMPTY_ROOT, mapping)
    trie = Trie(store)
    nodes = list(trie.iter_nodes(root))
    count, size = trie.size(root)
    assert count == len(nodes) and size == sum(32 + len(v) for _, v in nodes)
    leaves = dict(trie.iter_leaves(root))
    assert leaves == {_h(k): v for k, v in mapping.items()}
    # batch insertion writes only the final nodes
    assert store.stats()[DataCategory.TRIE_NODES] == size


def test_account_helpers():
    store = KvStore()
    accs = {bytes([i]) * 20: Account(i, i * 10) for i in range(1, 50)}
    root = trie_put_accounts(store, EMPTY_ROOT, accs)
    a = bytes([7]) * 20
    assert trie_get(store, root, a) == accs[a]
    assert verify_membership(root, a, prove_membership(store, root, a)) == accs[a]
    ghost = bytes([200]) * 20
    assert trie_get(store, root, ghost) is None
    verify_void(root, ghost, prove_void(store, root, ghost))


@settings(max_examples=20)
@given(st.integers(0, 2**32))
def test_proof_serialization(seed):
    rnd = random.Random(seed)
    store = KvStore()
    mapping = {rnd.randbytes(6): rnd.randbytes(rnd.randint(1, 30)) for _ in range(rnd.randint(1, 60))}
    root = Trie(store).put_many(EMPTY_ROOT, mapping)
    k = rnd.choice(sorted(mapping))
    p = prove_key(store, root, k)
    assert MembershipProof.decode(p.encode()) == p
    assert MembershipProof.from_hex(p.to_hex()) == p
    with pytest.raises(ValueError):
        MembershipProof.decode(p.encode() + b"\x00")
    with pytest.raises(ValueError):
        MembershipProof.decode(p.encode()[:-1])
