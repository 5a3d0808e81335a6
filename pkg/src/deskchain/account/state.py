"""Accounts, world state, account transactions and the six-step transition.

Canonical account transaction layout::

    sender[20] receiver[20] u64 value  varbytes data  u64 startgas  u64 gasprice
    u64 nonce  varbytes pubkey  varbytes signature

The signing digest is sha256d of the layout with an empty signature. A
receiver of twenty zero bytes means "deploy": ``data`` then names a program.
"""

import json
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Dict, List, Optional, Tuple

from ..crypto import SECP256K1, Address, KeyPair, Signature, decode_point, derive_address, hash160, merkle_root, sha256d
from ..crypto import sign as ec_sign
from ..crypto import verify as ec_verify
from ..crypto.curve import CurveError
from ..encoding import Reader, u8, u32, u64, varbytes

EXTERNAL, CONTRACT = "external", "contract"
DEPLOY = Address(b"\x00" * 20)
EMPTY_ROOT = sha256d(b"")


class Malformed(Exception):
    """Step 1 (or step 3 underflow): the transaction is rejected outright."""


class IntrinsicGasTooLow(Malformed):
    pass


class InsufficientBalanceForFee(Exception):
    pass


class Revert(Exception):
    """Raised by a program to abort; every change except fees is undone."""


class OutOfGas(Revert):
    pass


class UnknownProgram(Revert):
    pass


@dataclass(frozen=True)
class GasSchedule:
    g_byte: int = 1
    g_call: int = 10
    g_storage: int = 1


@dataclass
class Account:
    kind: str = EXTERNAL
    balance: int = 0
    nonce: int = 0
    program_id: Optional[str] = None
    storage: Dict[bytes, bytes] = field(default_factory=dict)

    def serialize(self, addr: Address) -> bytes:
        parts = [
            addr.payload,
            u8(0 if self.kind == EXTERNAL else 1),
            u64(self.balance),
            u64(self.nonce),
            varbytes((self.program_id or "").encode()),
            u32(len(self.storage)),
        ]
        for k in sorted(self.storage):
            parts += [varbytes(k), varbytes(self.storage[k])]
        return b"".join(parts)


class WorldState:
    """Address -> Account. Treated as a value: transitions return new states."""

    def __init__(self, accounts: Optional[Dict[Address, Account]] = None):
        self.accounts: Dict[Address, Account] = accounts or {}

    @classmethod
    def from_alloc(cls, alloc: Dict[Address, int]) -> "WorldState":
        return cls({a: Account(balance=b) for a, b in alloc.items()})

    def copy(self) -> "WorldState":
        return WorldState({a: replace(acct, storage=dict(acct.storage)) for a, acct in self.accounts.items()})

    def get(self, addr: Address) -> Optional[Account]:
        return self.accounts.get(addr)

    def balance(self, addr: Address) -> int:
        acct = self.accounts.get(addr)
        return acct.balance if acct else 0

    def nonce(self, addr: Address) -> int:
        acct = self.accounts.get(addr)
        return acct.nonce if acct else 0

    def total_balance(self) -> int:
        return sum(a.balance for a in self.accounts.values())

    @property
    def state_root(self) -> bytes:
        if not self.accounts:
            return EMPTY_ROOT
        leaves = [self.accounts[a].serialize(a) for a in sorted(self.accounts, key=lambda a: a.payload)]
        return merkle_root(leaves)

    def storage_value(self, contract: Address, key: str, default=None):
        acct = self.accounts.get(contract)
        if acct is None:
            return default
        raw = acct.storage.get(key.encode())
        return default if raw is None else json.loads(raw)


@dataclass(frozen=True)
class AccountTx:
    sender: Address
    receiver: Address
    value: int
    data: bytes
    startgas: int
    gasprice: int
    nonce: int
    pubkey: bytes = b""
    signature: bytes = b""

    def serialize(self, *, with_signature: bool = True) -> bytes:
        return b"".join([
            self.sender.payload,
            self.receiver.payload,
            u64(self.value),
            varbytes(self.data),
            u64(self.startgas),
            u64(self.gasprice),
            u64(self.nonce),
            varbytes(self.pubkey),
            varbytes(self.signature if with_signature else b""),
        ])

    @cached_property
    def raw(self) -> bytes:
        return self.serialize()

    @cached_property
    def hash(self) -> bytes:
        return sha256d(self.raw)

    @property
    def signing_digest(self) -> bytes:
        return sha256d(self.serialize(with_signature=False))

    @classmethod
    def parse(cls, data: bytes) -> "AccountTx":
        r = Reader(data)
        tx = cls(Address(r.take(20)), Address(r.take(20)), r.u64(), r.varbytes(1 << 20), r.u64(), r.u64(),
                 r.u64(), r.varbytes(1024), r.varbytes(1024))
        r.expect_end()
        return tx


def call_data(fn: str, **args) -> bytes:
    return json.dumps({"fn": fn, "args": args}, sort_keys=True, separators=(",", ":")).encode()


def deploy_data(program_id: str, **args) -> bytes:
    return json.dumps({"deploy": program_id, "args": args}, sort_keys=True, separators=(",", ":")).encode()


def make_tx(key: KeyPair, receiver: Address, value: int = 0, data: bytes = b"", *,
            nonce: int, startgas: int = 10_000, gasprice: int = 1) -> AccountTx:
    tx = AccountTx(key.address, receiver, value, data, startgas, gasprice, nonce, key.pubkey_bytes)
    sig = ec_sign(key, tx.signing_digest).to_bytes(key.params)
    return replace(tx, signature=sig)


def contract_address(deployer: Address, nonce: int) -> Address:
    return Address(hash160(deployer.payload + u64(nonce)))


@dataclass
class Event:
    contract: Address
    topic: str
    payload: dict

    def as_dict(self):
        return {"contract": self.contract.encoded, "topic": self.topic, "payload": self.payload}


@dataclass
class Receipt:
    tx_hash: bytes
    success: bool
    gas_used: int
    fee_paid: int
    refund: int
    error: Optional[str] = None
    events: List[Event] = field(default_factory=list)
    result: object = None
    contract: Optional[Address] = None

    def as_dict(self):
        return {
            "tx": self.tx_hash.hex(),
            "success": self.success,
            "gas_used": self.gas_used,
            "fee_paid": self.fee_paid,
            "refund": self.refund,
            "error": self.error,
            "events": [e.as_dict() for e in self.events],
            "result": self.result,
            "contract": self.contract.encoded if self.contract else None,
        }


class Execution:
    """Gas-metered access to a working copy of the world state for programs."""

    def __init__(self, world: WorldState, gas: int, schedule: GasSchedule):
        self.world = world
        self.gas = gas
        self.schedule = schedule
        self.events: List[Event] = []
        self.depth = 0

    def charge(self, amount: int):
        if amount > self.gas:
            self.gas = 0
            raise OutOfGas("out of gas")
        self.gas -= amount

    def sload(self, contract: Address, key: str, default=None):
        self.charge(self.schedule.g_storage)
        raw = self.world.accounts[contract].storage.get(key.encode())
        return default if raw is None else json.loads(raw)

    def sstore(self, contract: Address, key: str, value):
        self.charge(self.schedule.g_storage)
        self.world.accounts[contract].storage[key.encode()] = json.dumps(value, sort_keys=True).encode()

    def emit(self, contract: Address, topic: str, **payload):
        self.events.append(Event(contract, topic, payload))

    def call(self, caller: Address, target: Address, fn: str, args: dict, value: int = 0):
        from .programs import REGISTRY
        acct = self.world.get(target)
        if acct is None or acct.kind != CONTRACT:
            raise Revert(f"{target} is not a contract")
        self.charge(self.schedule.g_call)
        if self.depth >= 64:
            raise Revert("call depth exceeded")
        if value:
            self._move(caller, target, value)
        self.depth += 1
        try:
            return REGISTRY[acct.program_id].dispatch(self, target, caller, value, fn, args)
        finally:
            self.depth -= 1

    def _move(self, src: Address, dst: Address, amount: int):
        if self.world.balance(src) < amount:
            raise Revert("insufficient balance for value transfer")
        self.world.accounts[src].balance -= amount
        self.world.accounts.setdefault(dst, Account()).balance += amount


def check_well_formed(state: WorldState, tx: AccountTx, curve=SECP256K1):
    if tx.startgas <= 0:
        raise Malformed("startgas must be positive")
    try:
        pub = decode_point(tx.pubkey, curve)
        sig = Signature.from_bytes(tx.signature, curve)
    except (CurveError, ValueError):
        raise Malformed("missing or undecodable signature") from None
    if derive_address(pub, curve) != tx.sender:
        raise Malformed("public key does not match sender")
    if not ec_verify(pub, tx.signing_digest, sig, curve):
        raise Malformed("signature does not verify")
    if tx.nonce != state.nonce(tx.sender):
        raise Malformed(f"nonce {tx.nonce}, expected {state.nonce(tx.sender)}")


def state_transition(state: WorldState, tx: AccountTx, miner: Address,
                     schedule: GasSchedule = GasSchedule()) -> Tuple[WorldState, Receipt]:
    """Apply one transaction; raises Malformed or InsufficientBalanceForFee
    without touching ``state``. Execution failures yield a failed receipt."""
    # 1. well-formed
    check_well_formed(state, tx)
    # 2. up-front fee
    fee = tx.startgas * tx.gasprice
    if state.balance(tx.sender) < fee:
        raise InsufficientBalanceForFee(f"balance {state.balance(tx.sender)} < fee {fee}")
    # 3. intrinsic gas
    gas = tx.startgas - schedule.g_byte * len(tx.raw)
    if gas < 0:
        raise IntrinsicGasTooLow(f"startgas {tx.startgas} below byte cost {len(tx.raw)}")
    paid = state.copy()
    paid.accounts[tx.sender].balance -= fee
    paid.accounts[tx.sender].nonce += 1
    # 4. value transfer and execution on a scratch copy
    work = paid.copy()
    ex = Execution(work, gas, schedule)
    result = None
    created = None
    try:
        if tx.receiver == DEPLOY:
            created, result = _deploy(ex, tx)
        else:
            ex._move(tx.sender, tx.receiver, tx.value)
            target = work.accounts[tx.receiver]
            if target.kind == CONTRACT:
                msg = _decode_call(tx.data)
                from .programs import REGISTRY
                ex.charge(schedule.g_call)
                result = REGISTRY[target.program_id].dispatch(ex, tx.receiver, tx.sender, tx.value,
                                                              msg["fn"], msg["args"])
    except Revert as exc:
        # 5. failure: keep the fee, undo everything else
        final = paid
        final.accounts.setdefault(miner, Account()).balance += fee
        return final, Receipt(tx.hash, False, tx.startgas, fee, 0, f"{type(exc).__name__}: {exc}")
    # 6. refund unused gas, pay the miner for what was consumed
    refund = ex.gas * tx.gasprice
    work.accounts[tx.sender].balance += refund
    work.accounts.setdefault(miner, Account()).balance += fee - refund
    return work, Receipt(tx.hash, True, tx.startgas - ex.gas, fee - refund, refund, None, ex.events, result, created)


def _decode_call(data: bytes) -> dict:
    try:
        msg = json.loads(data)
    except ValueError:
        raise Revert("call data is not JSON") from None
    if not isinstance(msg, dict) or not isinstance(msg.get("fn"), str) or not isinstance(msg.get("args", {}), dict):
        raise Revert("call data must be {fn, args}")
    msg.setdefault("args", {})
    return msg


def _deploy(ex: Execution, tx: AccountTx):
    from .programs import REGISTRY
    try:
        msg = json.loads(tx.data)
        program_id = msg["deploy"]
        args = msg.get("args", {})
    except (ValueError, KeyError, TypeError):
        raise Revert("deploy data must be {deploy, args}") from None
    if program_id not in REGISTRY:
        raise UnknownProgram(f"no program {program_id!r}")
    addr = contract_address(tx.sender, tx.nonce)
    if addr in ex.world.accounts:
        raise Revert("contract address already in use")
    ex.world.accounts[addr] = Account(CONTRACT, 0, 0, program_id, {})
    if tx.value:
        ex._move(tx.sender, addr, tx.value)
    ex.charge(ex.schedule.g_call)
    REGISTRY[program_id].init(ex, addr, tx.sender, args)
    return addr, addr.encoded


def deploy_contract(state: WorldState, deployer: KeyPair, program_id: str, miner: Address,
                    startgas: int = 10_000, gasprice: int = 1, **init_args):
    """Deploy through a transaction; returns (state, contract address, receipt)."""
    tx = make_tx(deployer, DEPLOY, 0, deploy_data(program_id, **init_args), nonce=state.nonce(deployer.address),
                 startgas=startgas, gasprice=gasprice)
    new, receipt = state_transition(state, tx, miner)
    if not receipt.success:
        raise Revert(receipt.error)
    return new, receipt.contract, receipt


def invoke(state: WorldState, key: KeyPair, contract: Address, fn: str, miner: Address, value: int = 0,
           startgas: int = 10_000, gasprice: int = 1, **args):
    tx = make_tx(key, contract, value, call_data(fn, **args), nonce=state.nonce(key.address),
                 startgas=startgas, gasprice=gasprice)
    return state_transition(state, tx, miner)
