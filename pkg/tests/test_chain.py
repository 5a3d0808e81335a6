from dataclasses import replace
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from deskchain.chain import (
    GENESIS,
    MAX_TARGET,
    TWO_WEEKS,
    BadCoinbase,
    BadDifficulty,
    BadMerkleRoot,
    BadPow,
    BadPrevHash,
    BadTimestamp,
    BadTx,
    Block,
    BlockHeader,
    Chain,
    ChainAuditError,
    ChainParams,
    DifficultyParams,
    MiningExhausted,
    audit_chain,
    decode_difficulty,
    encode_difficulty,
    id_value,
    load_chain,
    mine,
    mine_block,
    retarget,
    save_chain,
    select_chain,
    target_from_difficulty,
)
from deskchain.crypto import KeyPair
from deskchain.encoding import DecodeError
from deskchain.ledger import COIN, MissingInput, TxOutput, build_coinbase, build_transfer

ALICE = KeyPair.from_name("alice")
BOB = KeyPair.from_name("bob")


def test_genesis_is_frozen(genesis_id_hex):
    assert GENESIS.id.hex() == genesis_id_hex
    assert len(GENESIS.header.serialize()) == 80


def test_difficulty_one_target():
    assert target_from_difficulty(1) == MAX_TARGET == 65535 << 208
    assert encode_difficulty(1) == 0x7F800000
    assert encode_difficulty(2) == 0x80800000


@given(st.fractions(min_value=Fraction(1, 10**6), max_value=10**12))
def test_compact_difficulty_rounds_down(d):
    got = decode_difficulty(encode_difficulty(d))
    assert got <= d
    # 24 significant bits
    assert (d - got) / d < Fraction(1, 2**23)


@pytest.mark.parametrize("weeks,factor", [(1, 2), (2, 1), (4, Fraction(1, 2))])
def test_retarget_by_weeks(weeks, factor):
    d = DifficultyParams(Fraction(8))
    assert retarget(d, weeks * TWO_WEEKS // 2) == 8 * factor


def test_retarget_floor_and_bad_input():
    assert retarget(DifficultyParams(Fraction(1)), 10 * TWO_WEEKS) == 1
    with pytest.raises(ValueError):
        retarget(DifficultyParams(), 0)


def test_chain_retargets_at_epoch_boundary():
    params = ChainParams.regtest(4, epoch_length=4, target_block_interval=600)
    chain = Chain(params)
    # blocks arrive twice as fast as intended
    for i in range(4):
        chain.mine_next(ALICE.address, timestamp=GENESIS.header.timestamp + 300 * (i + 1))
    assert decode_difficulty(chain.blocks[3].header.bits) == 1
    # height 4 opens a new epoch: three 300 s gaps observed against 2400 s expected
    want = decode_difficulty(encode_difficulty(Fraction(2400, 900)))
    assert decode_difficulty(chain.blocks[4].header.bits) == want
    assert Fraction(8, 3) - want < Fraction(1, 2**20)


def test_mined_block_meets_target(short_chain):
    for b in short_chain.blocks[1:]:
        assert id_value(b.id) < short_chain.target()
    assert short_chain.height == 3
    assert short_chain.utxo.total() == 4 * 50 * COIN


def test_mining_gives_up():
    chain = Chain(ChainParams.regtest(8))
    tmpl = chain.template(ALICE.address)
    with pytest.raises(MiningExhausted):
        mine(tmpl, 1, max_coinbase_nonce=0, header_nonce_range=range(50))


def _next(chain, **hdr):
    b = mine_block(chain.template(ALICE.address), chain.target())
    return replace(b, header=replace(b.header, **hdr)) if hdr else b


@pytest.mark.parametrize("field,value,err", [
    ("prev_hash", b"\x01" * 32, BadPrevHash),
    ("bits", encode_difficulty(3), BadDifficulty),
    ("merkle_root", b"\x02" * 32, (BadMerkleRoot, BadPow)),
    ("timestamp", 5, (BadTimestamp, BadPow)),
])
def test_header_faults(short_chain, field, value, err):
    with pytest.raises(err):
        short_chain.append(_next(short_chain, **{field: value}))


def test_bad_pow(short_chain):
    b = _next(short_chain)
    # search for a nonce whose id misses the target
    for nonce in range(1000):
        h = replace(b.header, nonce=nonce)
        if id_value(h.id) >= short_chain.target():
            break
    with pytest.raises(BadPow):
        short_chain.append(Block(h, b.transactions))


def test_greedy_coinbase(short_chain):
    cb = build_coinbase(ALICE.address, short_chain.height + 1, fees=1)
    tmpl = short_chain.template(ALICE.address)
    from deskchain.crypto import merkle_root
    tmpl = Block(replace(tmpl.header, merkle_root=merkle_root([cb.txid])), (cb,))
    with pytest.raises(BadCoinbase):
        short_chain.append(mine_block(tmpl, short_chain.target(), max_coinbase_nonce=0))


def test_block_with_transfer_and_double_spend(short_chain):
    tx = build_transfer(ALICE, [(BOB.address, COIN)], short_chain.utxo, fee=500)
    b = short_chain.mine_next(BOB.address, [tx])
    assert b.transactions[0].total_out() == 50 * COIN + 500
    with pytest.raises(MissingInput):
        short_chain.template(ALICE.address, [tx])
    # a hand-built block carrying the spent tx is refused as a whole
    cb = build_coinbase(ALICE.address, short_chain.height + 1)
    from deskchain.crypto import merkle_root
    hdr = replace(short_chain.template(ALICE.address).header, merkle_root=merkle_root([cb.txid, tx.txid]))
    with pytest.raises(BadTx):
        short_chain.append(mine_block(Block(hdr, (cb, tx)), short_chain.target()))


def test_snapshot_roundtrip(tmp_path, short_chain):
    path = tmp_path / "c.bin"
    save_chain(short_chain, path)
    again = load_chain(path)
    assert [b.id for b in again.blocks] == [b.id for b in short_chain.blocks]
    data = path.read_bytes()
    path.write_bytes(b"XXXX" + data[4:])
    with pytest.raises(DecodeError):
        load_chain(path)


def test_audit_points_at_bad_height(short_chain):
    blocks = list(short_chain.blocks)
    b2 = blocks[2]
    cb = b2.transactions[0]
    forged = replace(cb, outputs=(TxOutput(cb.outputs[0].amount, BOB.address),))
    blocks[2] = Block(b2.header, (forged,))
    with pytest.raises(ChainAuditError) as exc:
        audit_chain(blocks, short_chain.params)
    assert exc.value.height == 2


def test_fork_choice_prefers_longest_then_first(regtest):
    a, b = Chain(regtest), Chain(regtest)
    a.mine_next(ALICE.address)
    b.mine_next(BOB.address)
    assert select_chain([a, b], regtest).tip_id == a.tip_id
    assert select_chain([b, a], regtest).tip_id == b.tip_id
    b.mine_next(BOB.address)
    assert select_chain([a, b], regtest).tip_id == b.tip_id
    broken = list(b.blocks)
    broken[1] = a.blocks[1]
    assert select_chain([broken, a], regtest).tip_id == a.tip_id


def test_header_parse_roundtrip():
    h = BlockHeader(1, b"\x01" * 32, b"\x02" * 32, 7, 0x7F800000, 42)
    assert BlockHeader.parse(h.serialize()) == h
    with pytest.raises(DecodeError):
        BlockHeader.parse(h.serialize()[:-1])
