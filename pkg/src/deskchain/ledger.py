"""UTXO ledger: transactions, validation, fees, coin selection and coinbase.

Amounts are integers in 1e-8 coin units. A :class:`UtxoSet` is treated as an
immutable value; ``apply_tx`` returns a new set and never touches its input.

Canonical transaction layout (little-endian)::

    u32 version
    u32 n_inputs,  then per input:  txid[32] u32 index  varbytes pubkey  varbytes signature
    u32 n_outputs, then per output: u64 amount  recipient[20]
    u64 coinbase_nonce
    u32 height                      (coinbase only; 0 otherwise)

``varbytes`` is a u32 length followed by the bytes. The signing digest is
sha256d of this layout with every signature field emptied.
"""

from dataclasses import dataclass, replace
from functools import cached_property
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple

from .crypto import SECP256K1, Address, CurveParams, KeyPair, Signature, decode_point, derive_address, sha256d
from .crypto import sign as ec_sign
from .crypto import verify as ec_verify
from .crypto.curve import CurveError
from .encoding import DecodeError, Reader, u32, u64, varbytes

COIN = 10 ** 8
INITIAL_SUBSIDY = 50 * COIN
HALVING_INTERVAL = 210_000
TX_VERSION = 1
MAX_MONEY = 21_000_000 * COIN


class TxError(Exception):
    """Base for transaction validation failures; ``index`` names the offending input."""

    def __init__(self, msg: str, index: Optional[int] = None):
        super().__init__(msg if index is None else f"input {index}: {msg}")
        self.index = index


class MissingInput(TxError):
    pass


class DuplicateInput(TxError):
    pass


class BadSignature(TxError):
    pass


class InsufficientFunds(TxError):
    pass


class MalformedTx(TxError):
    pass


class NothingToConsolidate(TxError):
    pass


class MissingCosigner(TxError):
    pass


@dataclass(frozen=True, order=True)
class OutPoint:
    txid: bytes
    index: int

    def __str__(self):
        return f"{self.txid.hex()[:16]}:{self.index}"


@dataclass(frozen=True)
class TxOutput:
    amount: int
    recipient: Address


@dataclass(frozen=True)
class TxInput:
    outpoint: OutPoint
    pubkey: bytes = b""
    signature: bytes = b""


@dataclass(frozen=True)
class UtxoTransaction:
    inputs: Tuple[TxInput, ...] = ()
    outputs: Tuple[TxOutput, ...] = ()
    coinbase_nonce: int = 0
    height: int = 0

    @property
    def is_coinbase(self) -> bool:
        return not self.inputs

    def serialize(self, *, strip_signatures: bool = False) -> bytes:
        parts = [u32(TX_VERSION), u32(len(self.inputs))]
        for tin in self.inputs:
            parts += [
                tin.outpoint.txid,
                u32(tin.outpoint.index),
                varbytes(tin.pubkey),
                varbytes(b"" if strip_signatures else tin.signature),
            ]
        parts.append(u32(len(self.outputs)))
        for out in self.outputs:
            parts += [u64(out.amount), out.recipient.payload]
        parts += [u64(self.coinbase_nonce), u32(self.height)]
        return b"".join(parts)

    @cached_property
    def raw(self) -> bytes:
        return self.serialize()

    @cached_property
    def txid(self) -> bytes:
        return sha256d(self.raw)

    @cached_property
    def signing_digest(self) -> bytes:
        return sha256d(self.serialize(strip_signatures=True))

    @property
    def size(self) -> int:
        return len(self.raw)

    def total_out(self) -> int:
        return sum(o.amount for o in self.outputs)

    def outpoints(self) -> List[OutPoint]:
        return [OutPoint(self.txid, i) for i in range(len(self.outputs))]

    @classmethod
    def parse(cls, data: bytes) -> "UtxoTransaction":
        r = Reader(data)
        tx = cls.read(r)
        r.expect_end()
        return tx

    @classmethod
    def read(cls, r: Reader) -> "UtxoTransaction":
        version = r.u32()
        if version != TX_VERSION:
            raise DecodeError(f"unknown transaction version {version}")
        inputs = []
        for _ in range(r.u32()):
            txid = r.take(32)
            index = r.u32()
            inputs.append(TxInput(OutPoint(txid, index), r.varbytes(1024), r.varbytes(1024)))
        outputs = []
        n_out = r.u32()
        if n_out > 1 << 20:
            raise DecodeError("implausible output count")
        for _ in range(n_out):
            amount = r.u64()
            outputs.append(TxOutput(amount, Address(r.take(20))))
        return cls(tuple(inputs), tuple(outputs), r.u64(), r.u32())


class UtxoSet(Mapping):
    """Unspent outputs keyed by OutPoint. Never mutated after construction."""

    def __init__(self, entries: Optional[Dict[OutPoint, TxOutput]] = None, curve: CurveParams = SECP256K1):
        self._entries: Dict[OutPoint, TxOutput] = dict(entries or {})
        self.curve = curve

    @classmethod
    def genesis(cls, txs: Iterable[UtxoTransaction] = (), curve: CurveParams = SECP256K1) -> "UtxoSet":
        """State after input-less bootstrap transactions (genesis transfers, coinbases)."""
        entries = {}
        for tx in txs:
            if not tx.is_coinbase:
                raise MalformedTx("genesis transactions must not have inputs")
            for op, out in zip(tx.outpoints(), tx.outputs):
                entries[op] = out
        return cls(entries, curve)

    def __getitem__(self, key: OutPoint) -> TxOutput:
        return self._entries[key]

    def __iter__(self) -> Iterator[OutPoint]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __eq__(self, other):
        if isinstance(other, UtxoSet):
            return self._entries == other._entries
        return NotImplemented

    def __repr__(self):
        return f"UtxoSet({len(self)} outputs, total={self.total()})"

    def total(self) -> int:
        return sum(o.amount for o in self._entries.values())

    def owned_by(self, addr: Address) -> List[Tuple[OutPoint, TxOutput]]:
        return [(op, o) for op, o in self._entries.items() if o.recipient == addr]

    def _evolve(self, spent: Iterable[OutPoint], created: Iterable[Tuple[OutPoint, TxOutput]]) -> "UtxoSet":
        entries = dict(self._entries)
        for op in spent:
            del entries[op]
        for op, out in created:
            entries[op] = out
        return UtxoSet(entries, self.curve)


def validate_tx(tx: UtxoTransaction, state: UtxoSet) -> int:
    """Check a non-coinbase transaction against ``state``; returns its fee.

    Coinbase transactions only get a shape check here; their amount is
    bounded at block level where subsidy and fees are known.
    """
    if not tx.outputs:
        raise MalformedTx("transaction has no outputs")
    if tx.is_coinbase:
        return 0
    for i, out in enumerate(tx.outputs):
        if not 0 < out.amount <= MAX_MONEY:
            raise MalformedTx(f"output {i} amount {out.amount} out of range")
    seen = set()
    for i, tin in enumerate(tx.inputs):
        if tin.outpoint in seen:
            raise DuplicateInput("outpoint spent twice in one transaction", i)
        seen.add(tin.outpoint)
    total_in = 0
    for i, tin in enumerate(tx.inputs):
        prev = state.get(tin.outpoint)
        if prev is None:
            raise MissingInput(f"{tin.outpoint} is not unspent", i)
        _check_input_signature(tx, i, prev, state.curve)
        total_in += prev.amount
    total_out = tx.total_out()
    if total_in < total_out:
        raise InsufficientFunds(f"inputs {total_in} < outputs {total_out}", len(tx.inputs) - 1)
    return total_in - total_out


def _check_input_signature(tx: UtxoTransaction, i: int, prev: TxOutput, curve: CurveParams):
    tin = tx.inputs[i]
    try:
        pub = decode_point(tin.pubkey, curve)
    except CurveError as exc:
        raise BadSignature(f"unusable public key ({exc})", i) from None
    if derive_address(pub, curve) != prev.recipient:
        raise BadSignature("public key does not own the referenced output", i)
    try:
        sig = Signature.from_bytes(tin.signature, curve)
    except ValueError:
        raise BadSignature("missing or malformed signature", i) from None
    if not ec_verify(pub, tx.signing_digest, sig, curve):
        raise BadSignature("signature does not verify", i)


def apply_tx(tx: UtxoTransaction, state: UtxoSet) -> UtxoSet:
    validate_tx(tx, state)
    return state._evolve((tin.outpoint for tin in tx.inputs), zip(tx.outpoints(), tx.outputs))


def tx_fee(tx: UtxoTransaction, state: UtxoSet) -> int:
    if tx.is_coinbase:
        return 0
    total_in = 0
    for i, tin in enumerate(tx.inputs):
        prev = state.get(tin.outpoint)
        if prev is None:
            raise MissingInput(f"{tin.outpoint} is not unspent", i)
        total_in += prev.amount
    return total_in - tx.total_out()


def fee_rate(tx: UtxoTransaction, state: UtxoSet) -> float:
    """Fee per serialized byte, the key miners sort their mempool by."""
    return tx_fee(tx, state) / tx.size


def balance_of(addr: Address, state: UtxoSet) -> int:
    return sum(o.amount for _, o in state.owned_by(addr))


def block_subsidy(height: int) -> int:
    halvings = height // HALVING_INTERVAL
    if halvings >= 64:
        return 0
    return INITIAL_SUBSIDY >> halvings


def build_coinbase(miner: Address, height: int, fees: int = 0, coinbase_nonce: int = 0) -> UtxoTransaction:
    return UtxoTransaction(
        inputs=(),
        outputs=(TxOutput(block_subsidy(height) + fees, miner),),
        coinbase_nonce=coinbase_nonce,
        height=height,
    )


def sign_inputs(tx: UtxoTransaction, signers: Sequence[Optional[KeyPair]]) -> UtxoTransaction:
    """Fill pubkey and signature of input i with signers[i] (None leaves it unsigned)."""
    if len(signers) != len(tx.inputs):
        raise ValueError("one signer slot per input")
    unsigned = replace(tx, inputs=tuple(
        TxInput(tin.outpoint, key.pubkey_bytes if key else tin.pubkey, b"")
        for tin, key in zip(tx.inputs, signers)
    ))
    digest = unsigned.signing_digest
    inputs = []
    for tin, key in zip(unsigned.inputs, signers):
        sig = ec_sign(key, digest).to_bytes(key.params) if key else b""
        inputs.append(TxInput(tin.outpoint, tin.pubkey, sig))
    return replace(unsigned, inputs=tuple(inputs))


def select_largest_first(candidates: Sequence[Tuple[OutPoint, TxOutput]], target: int):
    """Take UTXOs in decreasing amount order until ``target`` is covered."""
    chosen, total = [], 0
    for op, out in sorted(candidates, key=lambda c: (-c[1].amount, c[0])):
        if total >= target:
            break
        chosen.append((op, out))
        total += out.amount
    if total < target:
        return None
    return chosen


def build_transfer(
    key: KeyPair,
    recipients: Sequence[Tuple[Address, int]],
    state: UtxoSet,
    fee: int = 0,
    *,
    change_first: bool = False,
) -> UtxoTransaction:
    sender = key.address
    amount = sum(a for _, a in recipients)
    if amount <= 0 or fee < 0 or any(a <= 0 for _, a in recipients):
        raise MalformedTx("amounts must be positive and fee non-negative")
    chosen = select_largest_first(state.owned_by(sender), amount + fee)
    if chosen is None:
        raise InsufficientFunds(f"{sender} holds {balance_of(sender, state)}, needs {amount + fee}")
    change = sum(o.amount for _, o in chosen) - amount - fee
    outputs = [TxOutput(a, addr) for addr, a in recipients]
    if change > 0:
        change_out = TxOutput(change, sender)
        outputs = [change_out] + outputs if change_first else outputs + [change_out]
    tx = UtxoTransaction(tuple(TxInput(op) for op, _ in chosen), tuple(outputs))
    return sign_inputs(tx, [key] * len(chosen))


def build_consolidation(key: KeyPair, state: UtxoSet, fee: int = 0) -> UtxoTransaction:
    owned = sorted(state.owned_by(key.address), key=lambda c: c[0])
    if len(owned) < 2:
        raise NothingToConsolidate(f"{key.address} owns {len(owned)} output(s)")
    total = sum(o.amount for _, o in owned)
    if total <= fee:
        raise InsufficientFunds("fee consumes the whole balance")
    tx = UtxoTransaction(tuple(TxInput(op) for op, _ in owned), (TxOutput(total - fee, key.address),))
    return sign_inputs(tx, [key] * len(owned))


def build_joint_payment(
    keys: Sequence[KeyPair],
    contributions: Sequence[OutPoint],
    recipient: Address,
    amount: int,
    state: UtxoSet,
) -> UtxoTransaction:
    """One transaction funded by several owners, each signing their own input.

    Any leftover beyond ``amount`` is left to the miner as fee.
    """
    by_addr = {k.address: k for k in keys}
    signers = []
    total = 0
    for i, op in enumerate(contributions):
        prev = state.get(op)
        if prev is None:
            raise MissingInput(f"{op} is not unspent", i)
        key = by_addr.get(prev.recipient)
        if key is None:
            raise MissingCosigner(f"no key for owner {prev.recipient}", i)
        signers.append(key)
        total += prev.amount
    if amount <= 0 or total < amount:
        raise InsufficientFunds(f"contributions {total} cannot pay {amount}")
    tx = UtxoTransaction(tuple(TxInput(op) for op in contributions), (TxOutput(amount, recipient),))
    return sign_inputs(tx, signers)
