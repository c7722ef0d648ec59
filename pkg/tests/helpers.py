"""Small chain-building utilities shared by the tests."""
from __future__ import annotations

from ethanos.account import UNIT, address_from_int
from ethanos.chain import Chain, EpochConfig
from ethanos.restoration import build_restore
from ethanos.state import RESTORE_ADDRESS, Transaction

FEE = UNIT // 100
MINER = address_from_int(0xAAAA)


def A(i: int) -> bytes:
    return address_from_int(i)


def make_chain(alloc, eps=4, sweeping=True, miners=(MINER,), **cfg) -> Chain:
    return Chain(EpochConfig(epoch_length=eps, **cfg), alloc, sweeping=sweeping, miners=miners)


def tx(chain_or_builder, sender, to, value, fee=FEE, nonce=None, payload=b"") -> Transaction:
    if nonce is None:
        nonce = chain_or_builder.resolve(sender).nonce
    return Transaction(sender, to, value, fee, nonce, payload)


def block(chain: Chain, *transfers):
    """Produce one block from (sender, to, value) triples; every tx must be accepted."""
    builder = chain.begin_block()
    for sender, to, value in transfers:
        reason = builder.add(tx(builder, sender, to, value))
        assert reason is None, (reason, builder.last_detail)
    return chain.commit_builder(builder)


def idle(chain: Chain, n: int, keeper: bytes | None = None) -> None:
    """Advance ``n`` blocks; ``keeper`` (if given) self-transfers each block to stay live."""
    for _ in range(n):
        block(chain, *([(keeper, keeper, 0)] if keeper else []))


def restore_tx(chain_or_builder, payer: bytes, bundle, fee=FEE) -> Transaction:
    return tx(chain_or_builder, payer, RESTORE_ADDRESS, 0, fee=fee, payload=bundle.encode())


def restore(chain: Chain, payer: bytes, target: bytes):
    bundle = build_restore(chain, target)
    builder = chain.begin_block()
    reason = builder.add(restore_tx(builder, payer, bundle))
    sealed = chain.commit_builder(builder)
    return bundle, reason, sealed
