"""A minimal Plasma: UTXO child chain, operator and layer-1 root contract.

Amounts are whole ETH. Every child-chain transaction (deposits included) is
sealed in its own block, and the operator commits each block's Merkle root
to the root contract straight away. Output labels 1, 2, ... number outputs
in creation order so scenario transcripts can speak of "UTXO 3".

The root contract never sees child-chain state. It checks Merkle proofs
against committed roots and leaves everything else to challengers:

* a spend proof shows a committed, validly signed transaction consuming the
  exited output;
* an origin proof shows the exited output's transaction is itself invalid
  (unbacked mint, bad signature, or value created from nothing);
* an owner proof points out that the exited output pays someone else.
"""

import json
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

from .crypto import SECP256K1 as _CURVE
from .crypto import Address, KeyPair, Signature, decode_point, derive_address, merkle_prove, merkle_root, merkle_verify
from .crypto import verify as ec_verify
from .crypto.curve import CurveError
from .encoding import DecodeError
from .ledger import (
    OutPoint,
    TxError,
    TxInput,
    TxOutput,
    UtxoSet,
    UtxoTransaction,
    apply_tx,
    build_transfer,
    sign_inputs,
)

DISPUTE_PERIOD = 7
BOND = 1

PENDING, FINALIZED, REVERTED = "pending", "finalized", "reverted"

Position = Tuple[int, int, int]   # (block index, tx index, output index)


class PlasmaError(Exception):
    pass


class UnauthorizedCommitter(PlasmaError):
    pass


class InsufficientLayer1Funds(PlasmaError):
    pass


class BadProof(PlasmaError):
    pass


class UnknownBlock(PlasmaError):
    pass


class InsufficientBond(PlasmaError):
    pass


class WindowClosed(PlasmaError):
    pass


class ProofMismatch(PlasmaError):
    pass


class NotPending(PlasmaError):
    pass


@dataclass
class WithdrawalRequest:
    id: int
    requester: Address
    utxo_position: Position
    amount: int
    owner: Address
    outpoint: OutPoint
    tx: bytes
    merkle_proof: list
    submitted_at: int
    bond: int
    status: str = PENDING
    challenger: Optional[Address] = None

    @property
    def deadline(self) -> int:
        return self.submitted_at + DISPUTE_PERIOD


class RootContract:
    """Layer-1 state: committed headers, locked deposits, exits and bonds."""

    def __init__(self, operator: Address, l1_balances: Dict[Address, int],
                 dispute_period: int = DISPUTE_PERIOD, bond: int = BOND):
        self.operator = operator
        self.l1 = dict(l1_balances)
        self.dispute_period = dispute_period
        self.bond = bond
        self.now = 0
        self.locked = 0
        self.committed_headers: List[Tuple[bytes, int]] = []
        self.deposits: List[Tuple[Address, int]] = []
        self.withdrawals: Dict[int, WithdrawalRequest] = {}
        self.bonds: Dict[int, int] = {}
        self.exited: set = set()
        self.events: List[dict] = []
        self.listeners = []

    def advance(self, rounds: int = 1):
        self.now += rounds

    # --- block submission and deposits ---------------------------------

    def submit_block(self, caller: Address, root: bytes) -> int:
        if caller != self.operator:
            raise UnauthorizedCommitter(f"{caller} may not commit blocks")
        self.committed_headers.append((root, self.now))
        return len(self.committed_headers) - 1

    def deposit(self, user: Address, amount: int) -> int:
        if amount <= 0:
            raise PlasmaError("deposit must be positive")
        if self.l1.get(user, 0) < amount:
            raise InsufficientLayer1Funds(f"{user} holds {self.l1.get(user, 0)} on layer 1")
        self.l1[user] -= amount
        self.locked += amount
        self.deposits.append((user, amount))
        dep_id = len(self.deposits) - 1
        event = {"event": "Deposit", "id": dep_id, "user": user.encoded, "amount": amount}
        self.events.append(event)
        for listener in self.listeners:
            listener(dep_id, user, amount)
        return dep_id

    # --- exits ---------------------------------------------------------

    def _verify_inclusion(self, position: Position, tx_bytes: bytes, proof) -> UtxoTransaction:
        blk, txi, _ = position
        if not 0 <= blk < len(self.committed_headers):
            raise UnknownBlock(f"no committed block {blk}")
        try:
            tx = UtxoTransaction.parse(tx_bytes)
        except DecodeError as exc:
            raise BadProof(f"undecodable transaction: {exc}") from None
        if not merkle_verify(self.committed_headers[blk][0], tx.txid, txi, proof):
            raise BadProof(f"Merkle proof does not match committed block {blk}")
        return tx

    def request_withdrawal(self, user: Address, utxo_position: Position, tx_bytes: bytes,
                           merkle_proof, bond: int) -> int:
        """Open an exit. Spentness and ownership cannot be known here; both are left to challengers."""
        tx = self._verify_inclusion(utxo_position, tx_bytes, merkle_proof)
        out_index = utxo_position[2]
        if not 0 <= out_index < len(tx.outputs):
            raise BadProof("output index out of range")
        if bond < self.bond:
            raise InsufficientBond(f"bond {bond} < required {self.bond}")
        if self.l1.get(user, 0) < bond:
            raise InsufficientLayer1Funds("cannot post the bond")
        outpoint = OutPoint(tx.txid, out_index)
        if outpoint in self.exited:
            raise PlasmaError("output already exited")
        self.l1[user] -= bond
        wid = len(self.withdrawals)
        out = tx.outputs[out_index]
        self.withdrawals[wid] = WithdrawalRequest(wid, user, tuple(utxo_position), out.amount, out.recipient,
                                                  outpoint, tx_bytes, list(merkle_proof), self.now, bond)
        self.bonds[wid] = bond
        self.events.append({"event": "ExitRequested", "id": wid, "user": user.encoded, "amount": out.amount})
        return wid

    def _open(self, wid: int) -> WithdrawalRequest:
        w = self.withdrawals.get(wid)
        if w is None or w.status != PENDING:
            raise NotPending(f"withdrawal {wid} is not pending")
        if self.now >= w.submitted_at + self.dispute_period:
            raise WindowClosed(f"dispute window for withdrawal {wid} has closed")
        return w

    def _revert(self, w: WithdrawalRequest, challenger: Address, reason: str) -> str:
        w.status = REVERTED
        w.challenger = challenger
        self.l1[challenger] = self.l1.get(challenger, 0) + self.bonds.pop(w.id)
        self.events.append({"event": "ExitReverted", "id": w.id, "challenger": challenger.encoded, "reason": reason})
        return REVERTED

    def challenge(self, challenger: Address, wid: int, spend_position: Position, spend_tx: bytes, spend_proof) -> str:
        """Revert an exit by proving a committed, validly signed spend of its output."""
        w = self._open(wid)
        spend = self._verify_inclusion(spend_position, spend_tx, spend_proof)
        for i, tin in enumerate(spend.inputs):
            if tin.outpoint == w.outpoint:
                if not _input_signed_by(spend, i, w.owner):
                    raise ProofMismatch("spending input is not signed by the output's owner")
                return self._revert(w, challenger, "spent")
        raise ProofMismatch("transaction does not spend the exited output")

    def challenge_owner(self, challenger: Address, wid: int) -> str:
        w = self._open(wid)
        if w.owner == w.requester:
            raise ProofMismatch("requester owns the exited output")
        return self._revert(w, challenger, "not owner")

    def challenge_invalid_origin(self, challenger: Address, wid: int,
                                 sources: Sequence[Tuple[Position, bytes, list]] = ()) -> str:
        """Revert an exit whose creating transaction is invalid.

        An input-less transaction must mirror a recorded deposit. Otherwise
        ``sources`` carries, per input, the committed transaction that created
        the spent output; the contract then checks signatures and value.
        """
        w = self._open(wid)
        tx = UtxoTransaction.parse(w.tx)
        if tx.is_coinbase:
            dep = tx.coinbase_nonce
            ok = (0 <= dep < len(self.deposits) and len(tx.outputs) == 1
                  and (tx.outputs[0].recipient, tx.outputs[0].amount) == self.deposits[dep])
            if ok:
                raise ProofMismatch("mint matches a recorded deposit")
            return self._revert(w, challenger, "unbacked mint")
        if len(sources) != len(tx.inputs):
            raise ProofMismatch("one source proof per input is required")
        total_in = 0
        for i, (tin, (pos, src_bytes, proof)) in enumerate(zip(tx.inputs, sources)):
            src = self._verify_inclusion(pos, src_bytes, proof)
            if src.txid != tin.outpoint.txid or pos[2] != tin.outpoint.index or pos[2] >= len(src.outputs):
                raise ProofMismatch(f"source {i} is not the output spent by input {i}")
            prev = src.outputs[pos[2]]
            if not _input_signed_by(tx, i, prev.recipient):
                return self._revert(w, challenger, f"input {i} not signed by owner")
            total_in += prev.amount
        if total_in < tx.total_out():
            return self._revert(w, challenger, "outputs exceed inputs")
        raise ProofMismatch("origin transaction is valid")

    def finalize_withdrawals(self, now: Optional[int] = None) -> List[dict]:
        """Pay every unchallenged exit whose window has passed, oldest request first."""
        if now is not None:
            self.now = now
        payouts = []
        for wid in sorted(self.withdrawals):
            w = self.withdrawals[wid]
            if w.status != PENDING or self.now < w.submitted_at + self.dispute_period:
                continue
            if w.outpoint in self.exited or self.locked < w.amount:
                continue
            w.status = FINALIZED
            self.exited.add(w.outpoint)
            self.locked -= w.amount
            self.l1[w.requester] = self.l1.get(w.requester, 0) + w.amount + self.bonds.pop(wid)
            payouts.append({"id": wid, "to": w.requester.encoded, "amount": w.amount, "bond_returned": w.bond})
            self.events.append({"event": "ExitFinalized", "id": wid, "amount": w.amount})
        return payouts

    def pending_amount(self) -> int:
        return sum(w.amount for w in self.withdrawals.values() if w.status == PENDING)


def _input_signed_by(tx: UtxoTransaction, i: int, owner: Address) -> bool:
    tin = tx.inputs[i]
    try:
        pub = decode_point(tin.pubkey, _CURVE)
        sig = Signature.from_bytes(tin.signature, _CURVE)
    except (CurveError, ValueError):
        return False
    return derive_address(pub, _CURVE) == owner and ec_verify(pub, tx.signing_digest, sig, _CURVE)


class PlasmaChain:
    """Operator-run child chain; one committed block per transaction."""

    def __init__(self, operator: KeyPair, root: RootContract):
        self.operator = operator
        self.root = root
        self.blocks: List[List[UtxoTransaction]] = []
        self.utxo = UtxoSet()
        self.labels: Dict[OutPoint, int] = {}
        self.records: List[dict] = []
        self.positions: Dict[bytes, Tuple[int, int]] = {}
        root.listeners.append(self._on_deposit)

    def _on_deposit(self, dep_id: int, user: Address, amount: int):
        mint = UtxoTransaction((), (TxOutput(amount, user),), coinbase_nonce=dep_id)
        self.utxo = self.utxo._evolve((), zip(mint.outpoints(), mint.outputs))
        self._seal(mint, None)

    def _seal(self, tx: UtxoTransaction, sender: Optional[Address]):
        blk = len(self.blocks)
        self.blocks.append([tx])
        self.positions[tx.txid] = (blk, 0)
        for tin in tx.inputs:
            label = self.labels.get(tin.outpoint)
            if label is not None:
                self.records[label - 1]["spent"] = True
        for op, out in zip(tx.outpoints(), tx.outputs):
            self.labels[op] = len(self.records) + 1
            self.records.append({"utxo": len(self.records) + 1, "from": sender, "to": out.recipient,
                                 "amount": out.amount, "spent": False, "outpoint": op})
        committed = self.root.submit_block(self.operator.address, merkle_root([t.txid for t in self.blocks[blk]]))
        assert committed == blk

    def submit(self, tx: UtxoTransaction) -> int:
        self.utxo = apply_tx(tx, self.utxo)
        sender = self.utxo_owner_before(tx)
        self._seal(tx, sender)
        return len(self.blocks) - 1

    def utxo_owner_before(self, tx: UtxoTransaction) -> Optional[Address]:
        for tin in tx.inputs:
            label = self.labels.get(tin.outpoint)
            if label is not None:
                return self.records[label - 1]["to"]
        return None

    def transfer(self, key: KeyPair, to: Address, amount: int) -> int:
        tx = build_transfer(key, [(to, amount)], self.utxo, change_first=True)
        return self.submit(tx)

    def commit_raw(self, tx: UtxoTransaction, sender: Optional[Address] = None) -> int:
        """Seal a transaction without validating it (a dishonest operator)."""
        try:
            self.utxo = self.utxo._evolve([t.outpoint for t in tx.inputs if t.outpoint in self.utxo],
                                          zip(tx.outpoints(), tx.outputs))
        except KeyError:
            pass
        self._seal(tx, sender)
        return len(self.blocks) - 1

    def outpoint_of(self, label: int) -> OutPoint:
        return self.records[label - 1]["outpoint"]

    def prove(self, outpoint: OutPoint):
        """(position, tx bytes, Merkle proof) for the output or the transaction creating it."""
        blk, txi = self.positions[outpoint.txid]
        txs = self.blocks[blk]
        proof = merkle_prove([t.txid for t in txs], txi)
        return (blk, txi, outpoint.index), txs[txi].raw, proof

    def prove_spend(self, outpoint: OutPoint):
        for blk, txs in enumerate(self.blocks):
            for txi, tx in enumerate(txs):
                if any(t.outpoint == outpoint for t in tx.inputs):
                    return (blk, txi, 0), tx.raw, merkle_prove([t.txid for t in txs], txi)
        return None

    def balances(self) -> Dict[Address, int]:
        out: Dict[Address, int] = {}
        for o in self.utxo.values():
            out[o.recipient] = out.get(o.recipient, 0) + o.amount
        return out

    def circulating(self) -> int:
        return self.utxo.total()


# --- the worked example ---------------------------------------------------

DEMO_NAMES = ("alice", "bob", "charlie")


def _demo_keys():
    return {n: KeyPair.from_name(f"plasma-{n}") for n in DEMO_NAMES}, KeyPair.from_name("plasma-operator")


def run_paper_example() -> dict:
    """Scripted deposit, three transfers and two exits; returns a transcript."""
    keys, operator = _demo_keys()
    names = {k.address: n for n, k in keys.items()}
    A, B, C = (keys[n] for n in DEMO_NAMES)
    root = RootContract(operator.address, {A.address: 11, B.address: 1, C.address: 0})
    chain = PlasmaChain(operator, root)
    steps = []

    def listing():
        return [
            {"utxo": r["utxo"], "from": names.get(r["from"]) if r["from"] else None,
             "to": names[r["to"]], "amount": r["amount"], "spent": r["spent"]}
            for r in chain.records
        ]

    def snap(step, action, **extra):
        entry = {
            "step": step,
            "action": action,
            "utxos": listing(),
            "plasma_balances": {names[a]: v for a, v in sorted(chain.balances().items(), key=lambda kv: names[kv[0]])},
            "layer1_balances": {names[a]: v for a, v in sorted(root.l1.items(), key=lambda kv: names[kv[0]])},
            "root_locked": root.locked,
            "committed_blocks": len(root.committed_headers),
            "day": root.now,
        }
        entry.update(extra)
        steps.append(entry)

    root.deposit(A.address, 10)
    snap(1, "alice deposits 10")
    chain.transfer(A, B.address, 5)
    snap(2, "alice sends 5 to bob")
    chain.transfer(B, C.address, 3)
    snap(3, "bob sends 3 to charlie")
    chain.transfer(C, A.address, 2)
    snap(4, "charlie sends 2 to alice")
    snap(5, "balances")

    pos, raw, proof = chain.prove(chain.outpoint_of(4))
    bob_exit = root.request_withdrawal(B.address, pos, raw, proof, BOND)
    root.advance(DISPUTE_PERIOD)
    payouts = root.finalize_withdrawals()
    snap(6, "bob exits utxo 4", withdrawal={"id": bob_exit, "status": root.withdrawals[bob_exit].status},
         payouts=[{"to": "bob", "amount": p["amount"], "bond_returned": p["bond_returned"]} for p in payouts])

    pos, raw, proof = chain.prove(chain.outpoint_of(3))
    alice_exit = root.request_withdrawal(A.address, pos, raw, proof, BOND)
    root.advance(2)
    spos, sraw, sproof = chain.prove_spend(chain.outpoint_of(3))
    outcome = root.challenge(C.address, alice_exit, spos, sraw, sproof)
    root.advance(DISPUTE_PERIOD)
    late = root.finalize_withdrawals()
    snap(7, "alice exits utxo 3; charlie proves its spend",
         withdrawal={"id": alice_exit, "status": root.withdrawals[alice_exit].status, "challenge": outcome,
                     "bond_to": names[root.withdrawals[alice_exit].challenger]},
         payouts=[{"to": names[Address.decode(p["to"])], "amount": p["amount"]} for p in late])
    return {"scenario": "plasma-demo", "dispute_period": DISPUTE_PERIOD, "bond": BOND, "steps": steps}


def transcript_json(transcript: dict) -> str:
    return json.dumps(transcript, indent=2, sort_keys=True) + "\n"


# --- scripted runs ----------------------------------------------------------

ACTIONS = ("deposit", "transfer", "withdraw", "challenge", "advance", "finalize")


def run_script(actions: Sequence[dict], l1_balances: Dict[str, int]) -> dict:
    """Execute a list of {"op": ...} actions; failures are recorded, not raised."""
    keys = {n: KeyPair.from_name(f"plasma-{n}") for n in l1_balances}
    operator = KeyPair.from_name("plasma-operator")
    names = {k.address: n for n, k in keys.items()}
    root = RootContract(operator.address, {keys[n].address: v for n, v in l1_balances.items()})
    chain = PlasmaChain(operator, root)
    log = []
    for i, act in enumerate(actions):
        op = act.get("op")
        entry = {"index": i, "op": op}
        try:
            if op == "deposit":
                root.deposit(keys[act["user"]].address, act["amount"])
            elif op == "transfer":
                chain.transfer(keys[act["from"]], keys[act["to"]].address, act["amount"])
            elif op == "withdraw":
                pos, raw, proof = chain.prove(chain.outpoint_of(act["utxo"]))
                entry["withdrawal"] = root.request_withdrawal(keys[act["user"]].address, pos, raw, proof,
                                                              act.get("bond", BOND))
            elif op == "challenge":
                w = root.withdrawals[act["withdrawal"]]
                spend = chain.prove_spend(w.outpoint)
                if spend is None:
                    raise ProofMismatch("no committed spend of the exited output")
                entry["result"] = root.challenge(keys[act["by"]].address, w.id, *spend)
            elif op == "advance":
                root.advance(act.get("rounds", 1))
            elif op == "finalize":
                entry["payouts"] = root.finalize_withdrawals()
            else:
                raise PlasmaError(f"unknown op {op!r}; expected one of {ACTIONS}")
            entry["ok"] = True
        except (PlasmaError, TxError, KeyError) as exc:
            entry["ok"] = False
            entry["error"] = f"{type(exc).__name__}: {exc}"
        log.append(entry)
    return {
        "log": log,
        "plasma_balances": {names[a]: v for a, v in sorted(chain.balances().items(), key=lambda kv: names.get(kv[0], ""))
                            if a in names},
        "layer1_balances": {names[a]: v for a, v in root.l1.items() if a in names},
        "root_locked": root.locked,
    }


def run_fraud_scenario() -> dict:
    """A dishonest operator commits a theft; watchers exit and challenge.

    Alice and Bob deposit, then the operator commits a transaction moving
    Bob's output to itself with its own (wrong) signature, plus an unbacked
    mint. Honest users notice the invalid block, exit their last valid
    outputs, and challenge the operator's exits inside the window.
    """
    keys, operator = _demo_keys()
    A, B = keys["alice"], keys["bob"]
    root = RootContract(operator.address, {A.address: 11, B.address: 6, operator.address: 2})
    chain = PlasmaChain(operator, root)
    root.deposit(A.address, 10)
    root.deposit(B.address, 5)
    bob_op = chain.outpoint_of(2)
    theft = sign_inputs(UtxoTransaction((TxInput(bob_op),), (TxOutput(5, operator.address),)), [operator])
    chain.commit_raw(theft, operator.address)
    mint = UtxoTransaction((), (TxOutput(7, operator.address),), coinbase_nonce=99)
    chain.commit_raw(mint, operator.address)

    # operator races to exit the stolen and minted outputs
    op_exits = []
    for label in (3, 4):
        pos, raw, proof = chain.prove(chain.outpoint_of(label))
        op_exits.append(root.request_withdrawal(operator.address, pos, raw, proof, BOND))

    # watchers: exit honest funds from the last valid state, challenge the rest
    honest_exits = []
    for key, label in ((A, 1), (B, 2)):
        pos, raw, proof = chain.prove(chain.outpoint_of(label))
        honest_exits.append(root.request_withdrawal(key.address, pos, raw, proof, BOND))
    src = chain.prove(bob_op)
    root.challenge_invalid_origin(A.address, op_exits[0], [src])
    root.challenge_invalid_origin(B.address, op_exits[1])
    root.advance(DISPUTE_PERIOD)
    payouts = root.finalize_withdrawals()
    return {
        "payouts": payouts,
        "statuses": {wid: w.status for wid, w in root.withdrawals.items()},
        "operator_exits": op_exits,
        "honest_exits": honest_exits,
        "l1": {"alice": root.l1[A.address], "bob": root.l1[B.address], "operator": root.l1[operator.address]},
        "locked": root.locked,
    }
