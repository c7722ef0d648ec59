import pytest
from hypothesis import given
from hypothesis import strategies as st

from ethanos.account import MAX_BALANCE, UNIT, Account, BalanceOverflow, merge, respawn

accounts = st.builds(
    Account,
    nonce=st.integers(0, 2**64 - 1),
    balance=st.integers(0, MAX_BALANCE),
    restored=st.booleans(),
    storage_root=st.none() | st.binary(min_size=32, max_size=32),
    code_hash=st.none() | st.binary(min_size=32, max_size=32),
)


@given(accounts)
def test_encoding_roundtrip(acc):
    assert Account.decode(acc.encode()) == acc


def test_encoding_layout():
    enc = Account(nonce=3, balance=40 * UNIT, restored=True).encode()
    assert enc[:8] == (3).to_bytes(8, "big")
    assert int.from_bytes(enc[8:24], "big") == 40 * UNIT
    assert enc[24] == 1 and len(enc) == 25


@pytest.mark.parametrize("bad", [b"", b"\x00" * 24, b"\x00" * 24 + b"\x08", b"\x00" * 26])
def test_malformed_encodings(bad):
    with pytest.raises(ValueError):
        Account.decode(bad)


def test_range_checks():
    with pytest.raises(ValueError):
        Account(nonce=-1)
    with pytest.raises(ValueError):
        Account(balance=-1)
    with pytest.raises(BalanceOverflow):
        Account(balance=MAX_BALANCE + 1)


def test_respawn_nonce():
    # k = 50, C = 1024
    assert respawn(50, 7, 1024) == Account(nonce=51200, balance=7)


def test_merge_sums_and_flags():
    k = 50
    a = Account(nonce=3, balance=40 * UNIT)
    b = respawn(k, 5_120_000_000, 1024)
    m = merge(a, b)
    assert m == Account(nonce=3 + k * 1024, balance=40 * UNIT + 5_120_000_000, restored=True)


def test_merge_overflow():
    with pytest.raises(BalanceOverflow):
        merge(Account(balance=MAX_BALANCE), Account(balance=1))


@given(accounts, accounts)
def test_merge_commutes(a, b):
    if a.balance + b.balance > MAX_BALANCE or a.nonce + b.nonce >= 2**64:
        return
    assert merge(a, b) == merge(b, a)
