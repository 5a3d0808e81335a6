"""Scripted UTXO walkthroughs with named parties.

Outputs are numbered #1, #2, ... in creation order across the whole script,
so "Tx2 #3" reads as "the third output ever created, made by Tx2".
"""

from dataclasses import dataclass, field
from typing import Dict, List

from .crypto import KeyPair
from .ledger import (
    COIN,
    OutPoint,
    TxOutput,
    UtxoSet,
    UtxoTransaction,
    apply_tx,
    balance_of,
    build_consolidation,
    build_joint_payment,
    build_transfer,
)

PARTIES = ("alice", "bob", "charlie", "dave")


def party_keys(names=PARTIES) -> Dict[str, KeyPair]:
    return {n: KeyPair.from_name(f"utxo-{n}") for n in names}


@dataclass
class Walkthrough:
    keys: Dict[str, KeyPair]
    state: UtxoSet = field(default_factory=UtxoSet)
    txs: Dict[str, UtxoTransaction] = field(default_factory=dict)
    labels: Dict[OutPoint, int] = field(default_factory=dict)
    rows: List[dict] = field(default_factory=list)

    def owner(self, addr) -> str:
        for n, k in self.keys.items():
            if k.address == addr:
                return n
        return addr.encoded

    def record(self, name: str, tx: UtxoTransaction):
        if tx.is_coinbase:
            self.state = self.state._evolve((), zip(tx.outpoints(), tx.outputs))
        else:
            self.state = apply_tx(tx, self.state)
            for tin in tx.inputs:
                self.rows[self.labels[tin.outpoint] - 1]["spent"] = True
        self.txs[name] = tx
        for op, out in zip(tx.outpoints(), tx.outputs):
            self.labels[op] = len(self.rows) + 1
            self.rows.append({"label": len(self.rows) + 1, "tx": name, "owner": self.owner(out.recipient),
                              "amount": out.amount // COIN, "spent": False})

    def balances(self) -> Dict[str, int]:
        return {n: balance_of(k.address, self.state) // COIN for n, k in self.keys.items()}

    def unspent(self) -> List[dict]:
        return [r for r in self.rows if not r["spent"]]


def utxo_walkthrough() -> Walkthrough:
    """Genesis pays Alice 25; Alice pays Bob 17; Bob pays Charlie 8; Alice pays Dave 3."""
    w = Walkthrough(party_keys())
    k = w.keys
    w.record("Tx1", UtxoTransaction((), (TxOutput(25 * COIN, k["alice"].address),)))
    w.record("Tx2", build_transfer(k["alice"], [(k["bob"].address, 17 * COIN)], w.state))
    w.record("Tx3", build_transfer(k["bob"], [(k["charlie"].address, 8 * COIN)], w.state))
    w.record("Tx4", build_transfer(k["alice"], [(k["dave"].address, 3 * COIN)], w.state))
    return w


def consolidation_example() -> Walkthrough:
    """Alice holds 17 and 8 in two outputs and merges them into one 25."""
    w = Walkthrough(party_keys(("alice",)))
    a = w.keys["alice"].address
    w.record("TxA", UtxoTransaction((), (TxOutput(17 * COIN, a),), coinbase_nonce=1))
    w.record("TxB", UtxoTransaction((), (TxOutput(8 * COIN, a),), coinbase_nonce=2))
    w.record("TxC", build_consolidation(w.keys["alice"], w.state))
    return w


def joint_payment_example() -> Walkthrough:
    """Alice (17) and Bob (8) co-sign one transaction paying Charlie 25."""
    w = Walkthrough(party_keys(("alice", "bob", "charlie")))
    k = w.keys
    w.record("TxA", UtxoTransaction((), (TxOutput(17 * COIN, k["alice"].address),), coinbase_nonce=1))
    w.record("TxB", UtxoTransaction((), (TxOutput(8 * COIN, k["bob"].address),), coinbase_nonce=2))
    contributions = [w.txs["TxA"].outpoints()[0], w.txs["TxB"].outpoints()[0]]
    w.record("TxC", build_joint_payment([k["alice"], k["bob"]], contributions, k["charlie"].address,
                                        25 * COIN, w.state))
    return w
