"""Account-chain blocks and their five-step validation by replay.

The header is the 80-byte proof-of-work header followed by the 32-byte
post-state root and the 20-byte miner address (132 bytes in total).
"""

import struct
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, List, Optional, Sequence

from ..chain import ChainParams, decode_difficulty, encode_difficulty, id_value, target_from_difficulty
from ..crypto import Address, merkle_root, sha256d
from ..encoding import DecodeError, Reader, u32, varbytes
from .state import (
    AccountTx,
    GasSchedule,
    InsufficientBalanceForFee,
    Malformed,
    Receipt,
    WorldState,
    state_transition,
)

ACCOUNT_HEADER_SIZE = 132
MAX_FUTURE_DRIFT = 15 * 60
ACCOUNT_GENESIS_TIME = 1_438_269_973


class AccountBlockError(Exception):
    def __init__(self, step: int, msg: str):
        super().__init__(f"step {step}: {msg}")
        self.step = step


@dataclass(frozen=True)
class AccountHeader:
    version: int
    prev_hash: bytes
    tx_root: bytes
    timestamp: int
    bits: int
    nonce: int
    state_root: bytes
    miner: Address

    def serialize(self) -> bytes:
        return (struct.pack("<I", self.version) + self.prev_hash + self.tx_root
                + struct.pack("<III", self.timestamp, self.bits, self.nonce)
                + self.state_root + self.miner.payload)

    @classmethod
    def parse(cls, data: bytes) -> "AccountHeader":
        if len(data) != ACCOUNT_HEADER_SIZE:
            raise DecodeError("account header must be 132 bytes")
        version = struct.unpack("<I", data[:4])[0]
        ts, bits, nonce = struct.unpack("<III", data[68:80])
        return cls(version, data[4:36], data[36:68], ts, bits, nonce, data[80:112], Address(data[112:132]))

    @cached_property
    def id(self) -> bytes:
        return sha256d(self.serialize())


@dataclass(frozen=True)
class AccountBlock:
    header: AccountHeader
    transactions: tuple = ()

    @property
    def id(self) -> bytes:
        return self.header.id

    def serialize(self) -> bytes:
        return self.header.serialize() + u32(len(self.transactions)) + b"".join(
            varbytes(tx.raw) for tx in self.transactions)

    @classmethod
    def parse(cls, data: bytes) -> "AccountBlock":
        r = Reader(data)
        header = AccountHeader.parse(r.take(ACCOUNT_HEADER_SIZE))
        txs = tuple(AccountTx.parse(r.varbytes()) for _ in range(r.u32()))
        r.expect_end()
        return cls(header, txs)


def tx_root(txs: Sequence[AccountTx]) -> bytes:
    return merkle_root([tx.hash for tx in txs]) if txs else sha256d(b"")


def replay(state: WorldState, txs: Sequence[AccountTx], miner: Address,
           schedule: GasSchedule = GasSchedule()):
    receipts: List[Receipt] = []
    for tx in txs:
        state, receipt = state_transition(state, tx, miner, schedule)
        receipts.append(receipt)
    return state, receipts


def _mine_header(h: AccountHeader, target: int) -> AccountHeader:
    nonce = 0
    while True:
        cand = AccountHeader(h.version, h.prev_hash, h.tx_root, h.timestamp, h.bits, nonce, h.state_root, h.miner)
        if id_value(cand.id) < target:
            return cand
        nonce += 1
        if nonce >= 2 ** 32:
            raise RuntimeError("header nonce space exhausted")


class AccountChain:
    """Linear account chain; each block's post-state and receipts are kept."""

    def __init__(self, alloc: Dict[Address, int], params: ChainParams = ChainParams.regtest(4),
                 schedule: GasSchedule = GasSchedule()):
        self.params = params
        self.schedule = schedule
        state = WorldState.from_alloc(alloc)
        header = AccountHeader(1, b"\x00" * 32, tx_root(()), ACCOUNT_GENESIS_TIME,
                               encode_difficulty(params.initial_difficulty), 0, state.state_root,
                               Address(b"\x00" * 20))
        self.blocks: List[AccountBlock] = [AccountBlock(header, ())]
        self.states: List[WorldState] = [state]
        self.receipts: List[List[Receipt]] = [[]]

    @property
    def tip(self) -> AccountBlock:
        return self.blocks[-1]

    @property
    def state(self) -> WorldState:
        return self.states[-1]

    @property
    def height(self) -> int:
        return len(self.blocks) - 1

    @property
    def bits(self) -> int:
        return encode_difficulty(self.params.initial_difficulty)

    @property
    def target(self) -> int:
        return target_from_difficulty(decode_difficulty(self.bits), self.params.pow_limit)

    def build_block(self, txs: Sequence[AccountTx], miner: Address, timestamp: Optional[int] = None):
        """Execute ``txs`` on the tip state and mine a block.

        Transactions rejected at steps 1-3 are left out; ones that fail during
        execution are included with a failed receipt so their fees count.
        """
        state = self.state
        included = []
        for tx in txs:
            try:
                state, _ = state_transition(state, tx, miner, self.schedule)
            except (Malformed, InsufficientBalanceForFee):
                continue
            included.append(tx)
        ts = timestamp if timestamp is not None else self.tip.header.timestamp + 15
        header = AccountHeader(1, self.tip.id, tx_root(included), ts, self.bits, 0, state.state_root, miner)
        return AccountBlock(_mine_header(header, self.target), tuple(included))

    def append(self, b: AccountBlock, now: Optional[int] = None):
        state, receipts = validate_account_block(b, self, now)
        self.blocks.append(b)
        self.states.append(state)
        self.receipts.append(receipts)
        return receipts


def validate_account_block(b: AccountBlock, chain: AccountChain, now: Optional[int] = None):
    """Returns (post-state, receipts) or raises AccountBlockError naming the step."""
    h = b.header
    parent = chain.tip
    # 1. parent link
    if h.prev_hash != parent.id:
        raise AccountBlockError(1, "parent block is not the chain tip")
    # 2. timestamp window
    if now is None:
        now = h.timestamp
    if not h.timestamp > parent.header.timestamp:
        raise AccountBlockError(2, "timestamp not after parent")
    if not h.timestamp < now + MAX_FUTURE_DRIFT:
        raise AccountBlockError(2, "timestamp 15 minutes or more into the future")
    # 3. proof of work, difficulty and transaction root
    if h.bits != chain.bits:
        raise AccountBlockError(3, "difficulty is not the scheduled one")
    if id_value(h.id) >= chain.target:
        raise AccountBlockError(3, "block id is not below target")
    if h.tx_root != tx_root(b.transactions):
        raise AccountBlockError(3, "transaction root does not match the body")
    # 4. replay every transaction on the parent state
    try:
        state, receipts = replay(chain.state, b.transactions, h.miner, chain.schedule)
    except (Malformed, InsufficientBalanceForFee) as exc:
        raise AccountBlockError(4, f"{type(exc).__name__}: {exc}") from None
    # 5. final state root
    if state.state_root != h.state_root:
        raise AccountBlockError(5, "state root does not match replayed state")
    return state, receipts
