import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ethanos.account import UNIT, Account
from ethanos.state import (
    Reject,
    Transaction,
    TxRejected,
    WorldState,
    apply_block_reward,
    apply_transaction,
    decode_tx_list,
    encode_tx_list,
    tx_root,
    validate_transaction,
)
from ethanos.storage import KvStore
from ethanos.trie import EMPTY_ROOT, trie_get, trie_put_accounts

from helpers import A


def world(accounts, **kw):
    store = KvStore()
    root = trie_put_accounts(store, EMPTY_ROOT, accounts)
    return WorldState(store, root, 1, **kw)


def test_two_transfer_block_roots():
    # sigma_i has five accounts; a2 sends 5 to a4 with fee 0.01, a5 mines
    a1, a2, a3, a4, a5 = (A(i) for i in range(1, 6))
    cent = UNIT // 100
    st_ = world({
        a1: Account(7, 3 * UNIT),
        a2: Account(0, 45 * UNIT + cent),
        a3: Account(2, 1 * UNIT),
        a4: Account(4, 12 * cent),
        a5: Account(0, 10 * UNIT),
    })
    apply_transaction(st_, Transaction(a2, a4, 5 * UNIT, cent, 0), a5)
    apply_block_reward(st_, a5, 2 * UNIT)
    root = st_.commit()
    store = st_.trie.store
    assert trie_get(store, root, a2) == Account(1, 40 * UNIT)
    assert trie_get(store, root, a4) == Account(4, 5 * UNIT + 12 * cent)
    assert trie_get(store, root, a5) == Account(0, 10 * UNIT + 2 * UNIT + cent)
    assert trie_get(store, root, a1) == Account(7, 3 * UNIT)


def test_self_transfer_costs_only_the_fee():
    s = world({A(1): Account(0, 100)})
    apply_transaction(s, Transaction(A(1), A(1), 60, 3, 0), A(9))
    assert s.resolve(A(1)) == Account(1, 97)


@pytest.mark.parametrize(
    "tx,reason",
    [
        (Transaction(A(1), A(2), 1, 1, 1), Reject.NONCE_MISMATCH),
        (Transaction(A(1), A(2), 100, 1, 0), Reject.INSUFFICIENT_BALANCE),
        (Transaction(A(3), A(2), 1, 1, 0), Reject.UNKNOWN_SENDER),
        (Transaction(A(1), A(2), 1, 0, 0), Reject.ZERO_FEE),
    ],
)
def test_rejections(tx, reason):
    s = world({A(1): Account(0, 100)})
    assert validate_transaction(s, tx) is reason
    with pytest.raises(TxRejected) as exc:
        apply_transaction(s, tx, A(9))
    assert exc.value.reason is reason


def test_exact_balance_boundary_and_replay():
    s = world({A(1): Account(0, 100)})
    tx = Transaction(A(1), A(2), 99, 1, 0)
    assert validate_transaction(s, tx) is None
    apply_transaction(s, tx, A(9))
    assert validate_transaction(s, tx) is Reject.NONCE_MISMATCH


def test_new_accounts_respawn_only_when_sweeping():
    for respawn_nonces, nonce in [(True, 7 * 1024), (False, 0)]:
        s = WorldState(KvStore(), EMPTY_ROOT, 7, respawn_nonces=respawn_nonces)
        apply_block_reward(s, A(5), 0)
        assert s.resolve(A(5)) == Account(nonce, 0)


def test_checkpoint_fallback_resolution():
    store = KvStore()
    cp = trie_put_accounts(store, EMPTY_ROOT, {A(1): Account(3, 50)})
    s = WorldState(store, EMPTY_ROOT, 10, checkpoint_root=cp)
    assert s.resolve(A(1)) == Account(3, 50)
    assert not s.in_working(A(1))
    apply_transaction(s, Transaction(A(1), A(2), 10, 1, 3), A(9))
    root = s.commit()
    assert trie_get(store, root, A(1)) == Account(4, 39)
    assert trie_get(store, cp, A(1)) == Account(3, 50)


@settings(max_examples=15)
@given(st.integers(0, 2**32))
def test_random_txs_match_flat_ledger(seed):
    rnd = random.Random(seed)
    n = 12
    alloc = {A(i): rnd.randint(0, 10_000) for i in range(1, n + 1)}
    s = world({a: Account(0, b) for a, b in alloc.items()})
    ledger = dict(alloc)
    nonces = {a: 0 for a in alloc}
    miner = A(99)
    ledger[miner] = 0
    for _ in range(1000):
        frm = A(rnd.randint(1, n))
        to = A(rnd.randint(1, n + 2))
        value, fee = rnd.randint(0, 300), rnd.randint(1, 5)
        tx = Transaction(frm, to, value, fee, nonces[frm])
        if ledger[frm] < value + fee:
            assert validate_transaction(s, tx) is Reject.INSUFFICIENT_BALANCE
            continue
        apply_transaction(s, tx, miner)
        ledger[frm] -= value + fee
        ledger[to] = ledger.get(to, 0) + value
        ledger[miner] += fee
        nonces[frm] += 1
    apply_block_reward(s, miner, 2)
    ledger[miner] += 2
    root = s.commit()
    got = {}
    for a in ledger:
        acc = trie_get(s.trie.store, root, a)
        got[a] = acc.balance if acc else 0
    assert got == ledger
    assert sum(got.values()) == sum(alloc.values()) + 2  # fees move, only the reward mints


@given(st.lists(st.builds(
    Transaction,
    st.binary(min_size=20, max_size=20),
    st.binary(min_size=20, max_size=20),
    st.integers(0, 2**128 - 1),
    st.integers(0, 2**128 - 1),
    st.integers(0, 2**64 - 1),
    st.binary(max_size=50),
), max_size=8))
def test_tx_codecs(txs):
    assert decode_tx_list(encode_tx_list(txs)) == txs
    for tx in txs:
        assert Transaction.decode(tx.encode()) == tx
        assert Transaction.from_json(tx.to_json()) == tx
    assert tx_root(txs) == tx_root(list(txs))
    if len(txs) >= 2 and txs[0] != txs[1]:
        swapped = [txs[1], txs[0], *txs[2:]]
        assert tx_root(swapped) != tx_root(txs)
