"""Blocks, proof-of-work, block validation, fork choice and retargeting.

Header layout (80 bytes)::

    version u32le | prev_hash[32] | merkle_root[32] | timestamp u32le | bits u32le | nonce u32le

A block id is sha256d(header) read as a little-endian 256-bit integer when
compared against the target.

``bits`` is a compact difficulty: the top byte is an exponent ``e`` and the
low 24 bits a mantissa ``m`` normalised to [2^23, 2^24), encoding the
rational difficulty ``m * 2^(e - 150)``. Encoding rounds down to 24
significant bits.
"""

import hashlib
import struct
from dataclasses import dataclass, replace
from fractions import Fraction
from functools import cached_property
from typing import List, Optional, Sequence, Union

from .crypto import KeyPair, merkle_root, sha256d
from .encoding import DecodeError, Reader, u32, varbytes
from .ledger import (
    TxError,
    UtxoSet,
    UtxoTransaction,
    block_subsidy,
    build_coinbase,
    validate_tx,
)

HEADER_SIZE = 80
MAX_BLOCK_SIZE = 4 * 2 ** 20
MAX_TARGET = 65535 << 208          # target at difficulty 1
EPOCH_LENGTH = 2016
TARGET_BLOCK_INTERVAL = 600        # seconds
TWO_WEEKS = 14 * 24 * 3600
GENESIS_TIMESTAMP = 1231006505
ZERO_HASH = b"\x00" * 32
SNAPSHOT_MAGIC = b"DSKC"
SNAPSHOT_VERSION = 1


class ChainError(Exception):
    pass


class BadPrevHash(ChainError):
    pass


class BadMerkleRoot(ChainError):
    pass


class BadPow(ChainError):
    pass


class BadDifficulty(ChainError):
    pass


class BadCoinbase(ChainError):
    pass


class BadTimestamp(ChainError):
    pass


class BadBlockSize(ChainError):
    pass


class BadTx(ChainError):
    def __init__(self, index: int, cause: Exception):
        super().__init__(f"transaction {index}: {type(cause).__name__}: {cause}")
        self.index = index
        self.cause = cause


class ChainAuditError(ChainError):
    """Full revalidation failed; ``height`` is the first block that did not check out."""

    def __init__(self, height: int, cause: Exception):
        super().__init__(f"height {height}: {type(cause).__name__}: {cause}")
        self.height = height
        self.cause = cause


class MiningExhausted(Exception):
    pass


# --- difficulty ---------------------------------------------------------

def encode_difficulty(d) -> int:
    d = Fraction(d)
    if d <= 0:
        raise ValueError("difficulty must be positive")
    e = d.numerator.bit_length() - d.denominator.bit_length()
    # choose e so that m = floor(d * 2^(23 - e)) lands in [2^23, 2^24)
    while True:
        m = (d * Fraction(2) ** (23 - e)).__floor__()
        if m >= 1 << 24:
            e += 1
        elif m < 1 << 23:
            e -= 1
        else:
            break
    exp = e + 127
    if not 0 <= exp <= 255:
        raise ValueError(f"difficulty {d} outside the compact range")
    return (exp << 24) | m


def decode_difficulty(bits: int) -> Fraction:
    exp, m = bits >> 24, bits & 0xFFFFFF
    if m < 1 << 23:
        raise ValueError(f"non-normalised compact difficulty {bits:#010x}")
    return Fraction(m) * Fraction(2) ** (exp - 150)


def target_from_difficulty(difficulty, pow_limit: int = MAX_TARGET) -> int:
    """floor(pow_limit / difficulty); with the default limit this is (65535 << 208) / difficulty."""
    d = Fraction(difficulty)
    if d <= 0:
        raise ValueError("difficulty must be positive")
    return (pow_limit * d.denominator) // d.numerator


@dataclass(frozen=True)
class DifficultyParams:
    difficulty: Fraction = Fraction(1)
    epoch_length: int = EPOCH_LENGTH
    target_block_interval: int = TARGET_BLOCK_INTERVAL

    @property
    def expected_epoch_seconds(self) -> int:
        return self.epoch_length * self.target_block_interval


def retarget(d: DifficultyParams, epoch_elapsed) -> Fraction:
    """New difficulty = D * expected / elapsed, never below 1.

    With the default 2016 x 600 s epoch, expected is exactly two weeks, so
    this is D(n+1) = 2 D(n) / T with T in weeks. No upper clamp is applied.
    """
    elapsed = Fraction(epoch_elapsed)
    if elapsed <= 0:
        raise ValueError("epoch duration must be positive")
    return max(Fraction(1), Fraction(d.difficulty) * d.expected_epoch_seconds / elapsed)


@dataclass(frozen=True)
class ChainParams:
    pow_limit: int = MAX_TARGET
    initial_difficulty: Fraction = Fraction(1)
    epoch_length: int = EPOCH_LENGTH
    target_block_interval: int = TARGET_BLOCK_INTERVAL
    max_block_size: int = MAX_BLOCK_SIZE

    @classmethod
    def regtest(cls, bits_of_work: int = 8, **kw) -> "ChainParams":
        """Easy chain where a block needs about 2**bits_of_work hash attempts."""
        return cls(pow_limit=1 << (256 - bits_of_work), **kw)

    @property
    def initial_bits(self) -> int:
        return encode_difficulty(self.initial_difficulty)


# --- blocks -------------------------------------------------------------

@dataclass(frozen=True)
class BlockHeader:
    version: int
    prev_hash: bytes
    merkle_root: bytes
    timestamp: int
    bits: int
    nonce: int

    def serialize(self) -> bytes:
        return (
            struct.pack("<I", self.version)
            + self.prev_hash
            + self.merkle_root
            + struct.pack("<III", self.timestamp, self.bits, self.nonce)
        )

    @classmethod
    def parse(cls, data: bytes) -> "BlockHeader":
        if len(data) != HEADER_SIZE:
            raise DecodeError(f"header must be {HEADER_SIZE} bytes")
        version = struct.unpack("<I", data[:4])[0]
        ts, bits, nonce = struct.unpack("<III", data[68:80])
        return cls(version, data[4:36], data[36:68], ts, bits, nonce)

    @cached_property
    def id(self) -> bytes:
        return sha256d(self.serialize())

    @property
    def difficulty(self) -> Fraction:
        return decode_difficulty(self.bits)


def block_id(header: BlockHeader) -> bytes:
    return sha256d(header.serialize())


def id_value(block_hash: bytes) -> int:
    return int.from_bytes(block_hash, "little")


@dataclass(frozen=True)
class Block:
    header: BlockHeader
    transactions: tuple = ()

    @property
    def id(self) -> bytes:
        return self.header.id

    @property
    def tx_count(self) -> int:
        return len(self.transactions)

    def computed_merkle_root(self) -> bytes:
        return merkle_root([tx.txid for tx in self.transactions])

    def serialize(self) -> bytes:
        return self.header.serialize() + u32(len(self.transactions)) + b"".join(
            varbytes(tx.raw) for tx in self.transactions
        )

    @cached_property
    def size(self) -> int:
        return len(self.serialize())

    @classmethod
    def parse(cls, data: bytes) -> "Block":
        r = Reader(data)
        header = BlockHeader.parse(r.take(HEADER_SIZE))
        n = r.u32()
        if n > MAX_BLOCK_SIZE // 16:
            raise DecodeError("implausible transaction count")
        txs = tuple(UtxoTransaction.parse(r.varbytes()) for _ in range(n))
        r.expect_end()
        return cls(header, txs)


def _genesis() -> Block:
    coinbase = build_coinbase(KeyPair.from_name("genesis").address, 0)
    header = BlockHeader(1, ZERO_HASH, merkle_root([coinbase.txid]), GENESIS_TIMESTAMP, encode_difficulty(1), 0)
    return Block(header, (coinbase,))


GENESIS = _genesis()


def genesis_block() -> Block:
    return GENESIS


# --- validation ---------------------------------------------------------

def validate_block(b: Block, chain: "Chain") -> UtxoSet:
    """Check ``b`` as the next block on ``chain``; returns the resulting UTXO set.

    ``chain`` only has to expose tip_id, tip_timestamp, height, utxo, params
    and scheduled_bits(height). Earlier blocks are assumed valid because a
    chain only ever holds validated blocks.
    """
    h = b.header
    height = chain.height + 1
    if h.prev_hash != chain.tip_id:
        raise BadPrevHash(f"prev {h.prev_hash.hex()[:16]} != tip {chain.tip_id.hex()[:16]}")
    expected_bits = chain.scheduled_bits(height)
    if h.bits != expected_bits:
        raise BadDifficulty(f"bits {h.bits:#010x}, scheduled {expected_bits:#010x}")
    target = target_from_difficulty(decode_difficulty(h.bits), chain.params.pow_limit)
    if id_value(h.id) >= target:
        raise BadPow("block id is not below target")
    if b.size > chain.params.max_block_size:
        raise BadBlockSize(f"{b.size} bytes exceeds {chain.params.max_block_size}")
    if not b.transactions:
        raise BadCoinbase("block has no coinbase")
    if h.merkle_root != b.computed_merkle_root():
        raise BadMerkleRoot("header Merkle root does not match the body")
    if h.timestamp < chain.tip_timestamp:
        raise BadTimestamp("timestamp earlier than parent")
    coinbase = b.transactions[0]
    if not coinbase.is_coinbase:
        raise BadCoinbase("first transaction is not a coinbase")
    if coinbase.height != height:
        raise BadCoinbase(f"coinbase height {coinbase.height} != block height {height}")
    utxo = chain.utxo
    fees = 0
    for i, tx in enumerate(b.transactions[1:], start=1):
        if tx.is_coinbase:
            raise BadTx(i, TxError("second coinbase in block"))
        try:
            fee = validate_tx(tx, utxo)
        except TxError as exc:
            raise BadTx(i, exc) from None
        fees += fee
        utxo = utxo._evolve((tin.outpoint for tin in tx.inputs), zip(tx.outpoints(), tx.outputs))
    allowed = block_subsidy(height) + fees
    if not coinbase.outputs or coinbase.total_out() > allowed:
        raise BadCoinbase(f"coinbase pays {coinbase.total_out()}, allowed {allowed}")
    return utxo._evolve((), zip(coinbase.outpoints(), coinbase.outputs))


class Chain:
    """A validated chain from genesis; appending is the only mutation."""

    def __init__(self, params: ChainParams = ChainParams(), genesis: Block = GENESIS):
        self.params = params
        self.blocks: List[Block] = [genesis]
        self.utxo = UtxoSet.genesis(genesis.transactions)

    @property
    def tip(self) -> Block:
        return self.blocks[-1]

    @property
    def tip_id(self) -> bytes:
        return self.tip.id

    @property
    def tip_timestamp(self) -> int:
        return self.tip.header.timestamp

    @property
    def height(self) -> int:
        return len(self.blocks) - 1

    def __len__(self):
        return len(self.blocks)

    def scheduled_bits(self, height: int) -> int:
        if height == 0:
            return self.blocks[0].header.bits
        prev_bits = self.blocks[height - 1].header.bits if height - 1 > 0 else self.params.initial_bits
        if height % self.params.epoch_length:
            return prev_bits
        first = self.blocks[height - self.params.epoch_length].header.timestamp
        last = self.blocks[height - 1].header.timestamp
        dp = DifficultyParams(decode_difficulty(prev_bits), self.params.epoch_length, self.params.target_block_interval)
        return encode_difficulty(retarget(dp, max(1, last - first)))

    def append(self, b: Block) -> None:
        self.utxo = validate_block(b, self)
        self.blocks.append(b)

    def template(self, miner, txs: Sequence[UtxoTransaction] = (), timestamp: Optional[int] = None,
                 coinbase_nonce: int = 0) -> Block:
        """Unmined next block: coinbase claims subsidy plus the fees of ``txs``."""
        height = self.height + 1
        utxo = self.utxo
        fees = 0
        for tx in txs:
            fees += validate_tx(tx, utxo)
            utxo = utxo._evolve((tin.outpoint for tin in tx.inputs), zip(tx.outpoints(), tx.outputs))
        coinbase = build_coinbase(miner, height, fees, coinbase_nonce)
        body = (coinbase,) + tuple(txs)
        if timestamp is None:
            timestamp = self.tip_timestamp + self.params.target_block_interval
        header = BlockHeader(1, self.tip_id, merkle_root([t.txid for t in body]), timestamp,
                             self.scheduled_bits(height), 0)
        return Block(header, body)

    def target(self, height: Optional[int] = None) -> int:
        height = self.height + 1 if height is None else height
        return target_from_difficulty(decode_difficulty(self.scheduled_bits(height)), self.params.pow_limit)

    def mine_next(self, miner, txs=(), timestamp=None) -> Block:
        block = mine_block(self.template(miner, txs, timestamp), self.target())
        self.append(block)
        return block


def audit_chain(blocks: Sequence[Block], params: ChainParams = ChainParams()) -> Chain:
    """Revalidate a foreign chain block by block from its genesis."""
    if not blocks:
        raise ChainAuditError(0, ChainError("empty chain"))
    if blocks[0].serialize() != GENESIS.serialize():
        raise ChainAuditError(0, ChainError("genesis does not match the hardcoded block"))
    chain = Chain(params)
    for height, b in enumerate(blocks[1:], start=1):
        try:
            chain.append(b)
        except ChainError as exc:
            raise ChainAuditError(height, exc) from None
    return chain


def select_chain(candidates: Sequence[Union[Chain, Sequence[Block]]], params: ChainParams = ChainParams()) -> Chain:
    """Longest valid candidate; the earliest one wins a tie. Invalid candidates are dropped."""
    best = None
    for cand in candidates:
        blocks = cand.blocks if isinstance(cand, Chain) else cand
        try:
            chain = audit_chain(blocks, params)
        except ChainAuditError:
            continue
        if best is None or chain.height > best.height:
            best = chain
    return best if best is not None else Chain(params)


# --- mining -------------------------------------------------------------

@dataclass
class MiningResult:
    block: Block
    tries: int
    coinbase_nonce: int
    header_nonce: int


def mine(template: Block, target: int, max_coinbase_nonce: Optional[int] = None,
         header_nonce_range: range = range(2 ** 32)) -> MiningResult:
    """Scan (coinbase_nonce, header_nonce) from (0, start) until id < target.

    The inner loop walks header nonces; each outer step bumps the coinbase
    nonce, which changes the coinbase txid and hence the Merkle root.
    """
    coinbase = template.transactions[0]
    if not coinbase.is_coinbase:
        raise ValueError("template must start with a coinbase")
    rest = template.transactions[1:]
    rest_ids = [tx.txid for tx in rest]
    h = template.header
    tries = 0
    cb_nonce = 0
    pack = struct.Struct("<I").pack
    while max_coinbase_nonce is None or cb_nonce <= max_coinbase_nonce:
        cb = replace(coinbase, coinbase_nonce=cb_nonce)
        root = merkle_root([cb.txid] + rest_ids)
        prefix = struct.pack("<I", h.version) + h.prev_hash + root + struct.pack("<II", h.timestamp, h.bits)
        base = hashlib.sha256(prefix)
        for nonce in header_nonce_range:
            tries += 1
            inner = base.copy()
            inner.update(pack(nonce))
            digest = hashlib.sha256(inner.digest()).digest()
            if int.from_bytes(digest, "little") < target:
                header = BlockHeader(h.version, h.prev_hash, root, h.timestamp, h.bits, nonce)
                return MiningResult(Block(header, (cb,) + tuple(rest)), tries, cb_nonce, nonce)
        cb_nonce += 1
    raise MiningExhausted(f"no solution after {tries} tries")


def mine_block(template: Block, target: int, max_coinbase_nonce: Optional[int] = None) -> Block:
    return mine(template, target, max_coinbase_nonce).block


# --- snapshots ----------------------------------------------------------

def save_chain(chain: Chain, path) -> None:
    p = chain.params
    parts = [
        SNAPSHOT_MAGIC,
        u32(SNAPSHOT_VERSION),
        varbytes(p.pow_limit.to_bytes(33, "big")),
        u32(encode_difficulty(p.initial_difficulty)),
        u32(p.epoch_length),
        u32(p.target_block_interval),
        u32(p.max_block_size),
        u32(len(chain.blocks)),
    ]
    parts += [varbytes(b.serialize()) for b in chain.blocks]
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def read_snapshot(path):
    """Parse a snapshot without validating it; returns (params, blocks)."""
    with open(path, "rb") as fh:
        r = Reader(fh.read())
    if r.take(4) != SNAPSHOT_MAGIC:
        raise DecodeError("not a chain snapshot")
    version = r.u32()
    if version != SNAPSHOT_VERSION:
        raise DecodeError(f"unsupported snapshot version {version}")
    pow_limit = int.from_bytes(r.varbytes(64), "big")
    params = ChainParams(pow_limit, decode_difficulty(r.u32()), r.u32(), r.u32(), r.u32())
    blocks = [Block.parse(r.varbytes()) for _ in range(r.u32())]
    r.expect_end()
    return params, blocks


def load_chain(path) -> Chain:
    params, blocks = read_snapshot(path)
    return audit_chain(blocks, params)
