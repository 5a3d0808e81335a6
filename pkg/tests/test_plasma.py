import json
from pathlib import Path

import pytest

from deskchain.crypto import KeyPair
from deskchain.plasma import (
    BOND,
    DISPUTE_PERIOD,
    BadProof,
    InsufficientBond,
    InsufficientLayer1Funds,
    NotPending,
    PlasmaChain,
    ProofMismatch,
    RootContract,
    UnauthorizedCommitter,
    WindowClosed,
    run_fraud_scenario,
    run_paper_example,
    run_script,
    transcript_json,
)

GOLDEN = Path(__file__).parent / "fixtures" / "plasma_demo.json"
OP = KeyPair.from_name("t-operator")
ALICE = KeyPair.from_name("t-alice")
BOB = KeyPair.from_name("t-bob")


@pytest.fixture
def world():
    root = RootContract(OP.address, {ALICE.address: 20, BOB.address: 5})
    chain = PlasmaChain(OP, root)
    root.deposit(ALICE.address, 10)
    return root, chain


def test_golden_transcript():
    assert transcript_json(run_paper_example()) == GOLDEN.read_text()


def test_demo_milestones():
    steps = {s["step"]: s for s in run_paper_example()["steps"]}
    assert steps[5]["plasma_balances"] == {"alice": 7, "bob": 2, "charlie": 1}
    assert steps[6]["withdrawal"]["status"] == "finalized"
    assert steps[6]["payouts"] == [{"to": "bob", "amount": 2, "bond_returned": 1}]
    assert steps[7]["withdrawal"]["status"] == "reverted"
    assert steps[7]["withdrawal"]["bond_to"] == "charlie"


def test_only_operator_commits(world):
    root, _ = world
    with pytest.raises(UnauthorizedCommitter):
        root.submit_block(ALICE.address, b"\x00" * 32)


def test_deposit_needs_funds(world):
    root, _ = world
    with pytest.raises(InsufficientLayer1Funds):
        root.deposit(BOB.address, 6)


def test_unchallenged_exit_pays_after_window(world):
    root, chain = world
    pos, raw, proof = chain.prove(chain.outpoint_of(1))
    wid = root.request_withdrawal(ALICE.address, pos, raw, proof, BOND)
    assert root.finalize_withdrawals() == []
    root.advance(DISPUTE_PERIOD)
    paid = root.finalize_withdrawals()
    assert [p["amount"] for p in paid] == [10]
    assert root.l1[ALICE.address] == 20
    assert root.locked == 0
    with pytest.raises(NotPending):
        root.challenge_owner(BOB.address, wid)


def test_spent_output_exit_is_challenged(world):
    root, chain = world
    chain.transfer(ALICE, BOB.address, 4)
    pos, raw, proof = chain.prove(chain.outpoint_of(1))
    wid = root.request_withdrawal(ALICE.address, pos, raw, proof, BOND)
    spend = chain.prove_spend(chain.outpoint_of(1))
    assert root.challenge(BOB.address, wid, *spend) == "reverted"
    assert root.l1[BOB.address] == 5 + BOND
    root.advance(DISPUTE_PERIOD)
    assert root.finalize_withdrawals() == []


def test_unrelated_tx_is_not_a_fraud_proof(world):
    root, chain = world
    chain.transfer(ALICE, BOB.address, 4)
    pos, raw, proof = chain.prove(chain.outpoint_of(3))
    wid = root.request_withdrawal(BOB.address, pos, raw, proof, BOND)
    other = chain.prove(chain.outpoint_of(2))
    with pytest.raises(ProofMismatch):
        root.challenge(ALICE.address, wid, *other)


def test_challenge_after_window(world):
    root, chain = world
    chain.transfer(ALICE, BOB.address, 4)
    pos, raw, proof = chain.prove(chain.outpoint_of(1))
    wid = root.request_withdrawal(ALICE.address, pos, raw, proof, BOND)
    root.advance(DISPUTE_PERIOD)
    with pytest.raises(WindowClosed):
        root.challenge(BOB.address, wid, *chain.prove_spend(chain.outpoint_of(1)))


def test_bad_proof_and_bond(world):
    root, chain = world
    pos, raw, proof = chain.prove(chain.outpoint_of(1))
    with pytest.raises(BadProof):
        root.request_withdrawal(ALICE.address, pos, raw + b"\x00", proof, BOND)
    with pytest.raises(InsufficientBond):
        root.request_withdrawal(ALICE.address, pos, raw, proof, 0)


def test_fraud_scenario():
    r = run_fraud_scenario()
    assert all(r["statuses"][w] == "reverted" for w in r["operator_exits"])
    assert all(r["statuses"][w] == "finalized" for w in r["honest_exits"])
    assert sorted(p["amount"] for p in r["payouts"]) == [5, 10]
    assert r["locked"] == 0


def test_script_records_failures():
    out = run_script([
        {"op": "deposit", "user": "a", "amount": 3},
        {"op": "transfer", "from": "a", "to": "b", "amount": 5},
        {"op": "transfer", "from": "a", "to": "b", "amount": 2},
        {"op": "withdraw", "user": "b", "utxo": 3},
        {"op": "advance", "rounds": DISPUTE_PERIOD},
        {"op": "finalize"},
        {"op": "fly"},
    ], {"a": 3, "b": 1})
    ok = [e["ok"] for e in out["log"]]
    assert ok == [True, False, True, True, True, True, False]
    assert out["layer1_balances"] == {"a": 0, "b": 3}
    json.dumps(out)
