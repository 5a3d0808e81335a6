from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deskchain.account import (
    DEPLOY,
    AccountBlock,
    AccountBlockError,
    AccountChain,
    AccountTx,
    InsufficientBalanceForFee,
    IntrinsicGasTooLow,
    Malformed,
    WorldState,
    call_data,
    deploy_contract,
    invoke,
    make_tx,
    state_transition,
    tx_root,
)
from deskchain.crypto import KeyPair

ALICE = KeyPair.from_name("acct-alice")
BOB = KeyPair.from_name("acct-bob")
MINER = KeyPair.from_name("acct-miner").address


def fresh(**extra):
    alloc = {ALICE.address: 1_000_000, BOB.address: 1_000_000}
    alloc.update(extra)
    return WorldState.from_alloc(alloc)


def test_plain_transfer_charges_gas():
    s = fresh()
    tx = make_tx(ALICE, BOB.address, 500, nonce=0, startgas=1000, gasprice=2)
    after, r = state_transition(s, tx, MINER)
    assert r.success
    used = len(tx.raw)
    assert r.gas_used == used and r.fee_paid == 2 * used
    assert after.balance(BOB.address) == 1_000_500
    assert after.balance(ALICE.address) == 1_000_000 - 500 - 2 * used
    assert after.balance(MINER) == 2 * used
    assert after.total_balance() == s.total_balance()
    assert after.nonce(ALICE.address) == 1


@pytest.mark.parametrize("mutate,err", [
    (lambda tx: replace(tx, nonce=5), Malformed),
    (lambda tx: replace(tx, value=tx.value + 1), Malformed),
    (lambda tx: replace(tx, signature=b""), Malformed),
])
def test_malformed(mutate, err):
    tx = make_tx(ALICE, BOB.address, 1, nonce=0)
    with pytest.raises(err):
        state_transition(fresh(), mutate(tx), MINER)


def test_fee_and_intrinsic_gas():
    poor = KeyPair.from_name("acct-poor")
    s = fresh(**{})
    s.accounts.setdefault(poor.address, type(s.accounts[ALICE.address])()).balance = 10
    with pytest.raises(InsufficientBalanceForFee):
        state_transition(s, make_tx(poor, BOB.address, 1, nonce=0, startgas=100), MINER)
    with pytest.raises(IntrinsicGasTooLow):
        state_transition(fresh(), make_tx(ALICE, BOB.address, 1, nonce=0, startgas=20), MINER)


def test_failed_execution_keeps_fee_only():
    s, token, _ = deploy_contract(fresh(), ALICE, "token", MINER, supply=100)
    before = s.copy()
    after, r = invoke(s, BOB, token, "transfer", MINER, recipient=ALICE.address.encoded, amount=5)
    assert not r.success
    assert after.balance(BOB.address) == before.balance(BOB.address) - r.fee_paid
    assert after.nonce(BOB.address) == 1
    assert after.storage_value(token, f"bal:{ALICE.address.encoded}") == 100


def test_out_of_gas_reverts():
    s, token, _ = deploy_contract(fresh(), ALICE, "token", MINER, supply=100)
    data = call_data("transfer", recipient=BOB.address.encoded, amount=1)
    size = len(make_tx(ALICE, token, 0, data, nonce=1).raw)
    # enough for the bytes and the call, not for the storage traffic
    tx = make_tx(ALICE, token, 0, data, nonce=1, startgas=size + 12)
    after, r = state_transition(s, tx, MINER)
    assert not r.success and "OutOfGas" in r.error
    assert r.fee_paid == size + 12


def test_token_flow():
    s, token, r = deploy_contract(fresh(), ALICE, "token", MINER, supply=1000)
    assert r.success and r.events[0].topic == "Transfer"
    s, r = invoke(s, ALICE, token, "approve", MINER, spender=BOB.address.encoded, amount=300)
    s, r = invoke(s, BOB, token, "transferFrom", MINER, sender=ALICE.address.encoded,
                  recipient=BOB.address.encoded, amount=200)
    assert r.success
    s, r = invoke(s, BOB, token, "balanceOf", MINER, account=BOB.address.encoded)
    assert r.result == 200
    s, r = invoke(s, BOB, token, "allowance", MINER, owner=ALICE.address.encoded, spender=BOB.address.encoded)
    assert r.result == 100
    s, r = invoke(s, BOB, token, "transferFrom", MINER, sender=ALICE.address.encoded,
                  recipient=BOB.address.encoded, amount=101)
    assert not r.success


def test_unknown_program_and_function():
    tx = make_tx(ALICE, DEPLOY, 0, b'{"deploy":"nothing","args":{}}', nonce=0)
    _, r = state_transition(fresh(), tx, MINER)
    assert not r.success and "UnknownProgram" in r.error
    s, token, _ = deploy_contract(fresh(), ALICE, "token", MINER)
    _, r = invoke(s, ALICE, token, "selfdestruct", MINER)
    assert not r.success


def _booking_world(train_cap, hotel_cap):
    s = fresh()
    s, train, _ = deploy_contract(s, ALICE, "train", MINER, capacity=train_cap)
    s, hotel, _ = deploy_contract(s, ALICE, "hotel", MINER, capacity=hotel_cap)
    s, booking, _ = deploy_contract(s, ALICE, "booking", MINER, train=train.encoded, hotel=hotel.encoded)
    return s, train, hotel, booking


def test_booking_is_all_or_nothing():
    s, train, hotel, booking = _booking_world(2, 1)
    s, r1 = invoke(s, BOB, booking, "order", MINER, id=1, startgas=20_000)
    s, r2 = invoke(s, BOB, booking, "order", MINER, id=2, startgas=20_000)
    assert r1.success and not r2.success
    assert s.storage_value(train, "booker:2") is None
    assert s.storage_value(train, "booked") == 1


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 4), st.integers(0, 4), st.lists(st.integers(0, 6), min_size=1, max_size=8))
def test_booking_atomic_property(train_cap, hotel_cap, ids):
    s, train, hotel, booking = _booking_world(train_cap, hotel_cap)
    nonce_key = BOB
    for oid in ids:
        s, _ = invoke(s, nonce_key, booking, "order", MINER, id=oid, startgas=20_000)
    for oid in set(ids):
        assert (s.storage_value(train, f"booker:{oid}") is None) == (s.storage_value(hotel, f"booker:{oid}") is None)


def test_tx_parse_roundtrip():
    tx = make_tx(ALICE, BOB.address, 7, b"hi", nonce=3)
    assert AccountTx.parse(tx.raw) == tx


def test_block_validation_steps():
    chain = AccountChain({ALICE.address: 10 ** 9})
    txs = [make_tx(ALICE, BOB.address, 1, nonce=i, startgas=500) for i in range(3)]
    good = chain.build_block(txs, MINER)
    chain.append(good)
    assert chain.state.balance(BOB.address) == 3
    nxt = chain.build_block([make_tx(ALICE, BOB.address, 1, nonce=3, startgas=500)], MINER)
    with pytest.raises(AccountBlockError) as e:
        validate = chain.append
        validate(AccountBlock(replace(nxt.header, prev_hash=b"\x00" * 32), nxt.transactions))
    assert e.value.step == 1
    with pytest.raises(AccountBlockError) as e:
        chain.append(nxt, now=nxt.header.timestamp - 3600)
    assert e.value.step == 2
    with pytest.raises(AccountBlockError) as e:
        chain.append(AccountBlock(nxt.header, ()))
    assert e.value.step == 3
    chain.append(nxt)
    assert chain.height == 2


def test_build_block_skips_unpayable():
    chain = AccountChain({ALICE.address: 10 ** 6})
    ok = make_tx(ALICE, BOB.address, 1, nonce=0, startgas=500)
    stale = make_tx(ALICE, BOB.address, 1, nonce=0, startgas=500, gasprice=2)
    b = chain.build_block([ok, stale], MINER)
    assert b.transactions == (ok,)
    assert b.header.tx_root == tx_root([ok])
