"""One test per acceptance criterion; each records a PASS/FAIL line that is
repeated in the terminal summary."""

import hashlib
import math
import random
import subprocess
import sys
import time
from fractions import Fraction
from pathlib import Path


from deskchain.account import AccountBlock, AccountBlockError, AccountChain, WorldState, make_tx, replay
from deskchain.account.block import _mine_header
from deskchain.account.state import deploy_contract, invoke
from deskchain.analysis import (
    SecurityParams,
    finality_prob_beta,
    finality_prob_sum,
    max_mining_prob,
    security_holds,
    unfairness_bound,
)
from deskchain.chain import (
    TWO_WEEKS,
    Block,
    Chain,
    ChainParams,
    DifficultyParams,
    audit_chain,
    mine,
    retarget,
)
from deskchain.crypto import INFINITY, TOY17, KeyPair, enumerate_points, negate, point_add, scalar_mul
from deskchain.encoding import DecodeError
from deskchain.chain import ChainError
from deskchain.interop import Bridge, bridge_transfer, explore_swaps, random_bridge_run, run_atomic_swap
from deskchain.ledger import COIN, build_transfer
from deskchain.netsim import SimConfig, double_spend_rate, run
from deskchain.plasma import run_paper_example, transcript_json
from deskchain.scenarios import utxo_walkthrough

GOLDEN = Path(__file__).parent / "fixtures" / "plasma_demo.json"


def test_c01_finality(report):
    argv = [sys.executable, "-m", "deskchain.cli", "analyze", "finality", "--q", "0.1", "--k", "6"]
    subprocess.run(argv, capture_output=True)  # warm the bytecode cache
    t0 = time.perf_counter()
    p = subprocess.run(argv, capture_output=True, text=True)
    elapsed = time.perf_counter() - t0
    value = float(p.stdout)
    worst = max(abs(finality_prob_sum(k, q / 100) - finality_prob_beta(k, q / 100))
                for k in range(1, 51) for q in range(5, 50, 5))
    ok = p.returncode == 0 and abs(value - 0.0005914) < 1e-7 and elapsed < 1.0 and worst < 1e-9
    report(1, ok, f"P(6, q=0.1)={value:.11f} in {elapsed:.2f}s; max |sum-beta|={worst:.1e}")
    assert ok


def test_c02_unfairness(report):
    v = unfairness_bound(0.49)
    ok = abs(v - 0.0392) <= 1e-4
    report(2, ok, f"unfairness_bound(0.49)={v:.6f}")
    assert ok


def test_c03_utxo_replay(report):
    w = utxo_walkthrough()
    unspent = sorted((r["owner"], r["amount"]) for r in w.unspent())
    marks = [r["spent"] for r in w.rows]
    ok = (unspent == [("alice", 5), ("bob", 9), ("charlie", 8), ("dave", 3)]
          and w.state.total() == 25 * COIN
          and marks == [True, True, True, False, False, False, False])
    report(3, ok, f"unspent={unspent}, total={w.state.total() // COIN}")
    assert ok


def _seeded_chain(seed):
    rng = random.Random(seed)
    params = ChainParams.regtest(6)
    chain = Chain(params)
    keys = [KeyPair.from_name(f"tamper-{i}") for i in range(3)]
    length = rng.randint(2, 20)
    for h in range(length):
        txs = []
        if h >= 1 and rng.random() < 0.3:
            payer = keys[0]
            if chain.utxo.owned_by(payer.address):
                txs = [build_transfer(payer, [(keys[rng.randrange(1, 3)].address, COIN)], chain.utxo, fee=rng.randrange(100))]
        chain.mine_next(keys[0].address, txs)
    return chain


def _mutants(chain, rng, count):
    # flip one bit anywhere except the tip header: a tip header with a
    # different nonce can be another valid block, which no audit can tell apart
    blobs = [b.serialize() for b in chain.blocks]
    spots = [(i, j) for i, blob in enumerate(blobs) for j in range(len(blob) * 8)
             if not (i == len(blobs) - 1 and j < 80 * 8)]
    for i, bit in rng.sample(spots, count):
        blob = bytearray(blobs[i])
        blob[bit // 8] ^= 1 << (bit % 8)
        yield i, bytes(blob), blobs


def test_c04_tamper_evidence(report):
    total = detected = 0
    for seed in range(50):
        chain = _seeded_chain(seed)
        audit_chain(chain.blocks, chain.params)
        rng = random.Random(1000 + seed)
        for i, blob, blobs in _mutants(chain, rng, 12):
            total += 1
            try:
                blocks = [Block.parse(b) for b in blobs[:i]] + [Block.parse(blob)] + [Block.parse(b) for b in blobs[i + 1:]]
                audit_chain(blocks, chain.params)
            except (DecodeError, ChainError):
                detected += 1
    ok = total >= 500 and detected == total
    report(4, ok, f"{detected}/{total} single-bit mutations detected over 50 chains")
    assert ok


def test_c05_pow_statistics(report):
    p = 2.0 ** -12
    target = 1 << 244
    chain = Chain(ChainParams.regtest(8))
    miner = KeyPair.from_name("pow").address
    tries, reverified = [], 0
    for seed in range(200):
        res = mine(chain.template(miner, timestamp=chain.tip_timestamp + seed), target)
        tries.append(res.tries)
        digest = hashlib.sha256(hashlib.sha256(res.block.header.serialize()).digest()).digest()
        reverified += int.from_bytes(digest, "little") < target
    mean = sum(tries) / len(tries)
    se = math.sqrt((1 - p) / p ** 2 / len(tries))
    ok = abs(mean - 4096) <= 3 * se and reverified == 200
    report(5, ok, f"mean tries {mean:.0f} vs 4096 (3 SE = {3 * se:.0f}); {reverified}/200 re-verified")
    assert ok


def test_c06_retarget(report):
    d = DifficultyParams(Fraction(100))
    got = [retarget(d, w * TWO_WEEKS // 2) / 100 for w in (1, 2, 4)]
    ok = got == [2, 1, Fraction(1, 2)]
    report(6, ok, f"T=1,2,4 weeks -> x{', x'.join(str(g) for g in got)}")
    assert ok


def test_c07_difficulty_bound(report):
    n, flips, points = 100, 0, 0
    for q in (0.1, 0.15, 0.2, 0.25, 0.3):
        for eps in (0.05, 0.1, 0.2, 0.3, 0.5):
            for delta in (10, 20, 40, 80, 160):
                points += 1
                p_max = max_mining_prob(q, eps, delta, n)
                if not 0 < p_max < 1:
                    continue
                below = security_holds(SecurityParams(n=n, p=p_max * (1 - 1e-6), q=q, epsilon=eps, delta=delta))
                above = security_holds(SecurityParams(n=n, p=p_max * (1 + 1e-6), q=q, epsilon=eps, delta=delta))
                flips += below and not above
    ok = flips == points == 125
    report(7, ok, f"{flips}/{points} grid points flip at p_max +/- 1e-6")
    assert ok


def _max_fork_depth(res, prefix):
    on_prefix = set(prefix)
    depth = 0
    for bid, e in res.blocks.items():
        if bid in on_prefix:
            continue
        cur, d = bid, 0
        while cur not in on_prefix:
            cur = res.blocks[cur].parent
            d += 1
        depth = max(depth, d)
    return depth


def test_c08_simulation(report):
    from deskchain.netsim import common_prefix
    identical = [run(SimConfig(n=50, p=0.002, delta=0, rounds=500, seed=s)).metrics.honest_chains_identical
                 for s in range(3)]
    prefix_ok = []
    for s in range(3):
        res = run(SimConfig(n=50, p=0.004, delta=2, rounds=500, seed=s))
        chains = list(res.chains.values())
        prefix = common_prefix(chains)
        t = _max_fork_depth(res, prefix)
        chopped_ok = all(c[:max(1, len(c) - t)] == prefix[:max(1, len(c) - t)] for c in chains)
        prefix_ok.append(chopped_ok and res.metrics.consistency_depth <= t and len(prefix) > 20)
    mined = selfish = 0
    shares = []
    for s in range(6):
        m = run(SimConfig(n=50, p=0.004, delta=1, rounds=500, seed=s, honest_fraction=0.6)).metrics
        shares.append(m.revenue_share.get("selfish", 0.0))
        mined += m.consensus_height
        selfish += round(m.revenue_share.get("selfish", 0.0) * m.consensus_height)
    pooled = selfish / mined
    ok = all(identical) and all(prefix_ok) and pooled > 0.4
    report(8, ok, f"delta=0 identical {identical}; delta=2 common prefix {prefix_ok}; "
                  f"selfish revenue {pooled:.3f} > hashrate 0.4 (per seed {[round(x, 2) for x in shares]})")
    assert ok


def test_c09_double_spend(report):
    trials = 100_000
    parts, ok = [], True
    for k in (1, 2, 3):
        for q in (0.1, 0.3):
            got = double_spend_rate(k, q, trials, seed=k * 100 + int(q * 10))
            exact = finality_prob_sum(k, q)
            z = (got - exact) / math.sqrt(exact * (1 - exact) / trials)
            ok &= abs(z) <= 3
            parts.append(f"k={k},q={q}:z={z:+.2f}")
    report(9, ok, f"1e5 races each, {' '.join(parts)}")
    assert ok


def test_c10_plasma_golden(report):
    doc = run_paper_example()
    steps = {s["step"]: s for s in doc["steps"]}
    ok = (transcript_json(doc) == GOLDEN.read_text()
          and steps[5]["plasma_balances"] == {"alice": 7, "bob": 2, "charlie": 1}
          and steps[6]["withdrawal"]["status"] == "finalized"
          and steps[7]["withdrawal"]["status"] == "reverted"
          and steps[7]["withdrawal"]["bond_to"] == "charlie")
    report(10, ok, "steps 1-7 match the golden transcript byte for byte")
    assert ok


def test_c11_swap_atomicity(report):
    r = explore_swaps()
    outcomes = {s: run_atomic_swap(s)["outcome"] for s in ("honest", "bob_aborts", "alice_never_claims")}
    ok = (not r["truncated"] and r["paths"] <= 10_000 and r["outcomes"]["mixed"] == 0
          and outcomes == {"honest": "swapped", "bob_aborts": "refunded", "alice_never_claims": "refunded"})
    report(11, ok, f"{r['paths']} interleavings, outcomes {r['outcomes']}; scenarios {outcomes}")
    assert ok


def test_c12_bridge_conservation(report):
    r = random_bridge_run(1000, seed=7)
    b = Bridge(100, 100)
    b.x.balances["alice"] = 10
    bridge_transfer(b, "X", "alice", "bob", 10)
    example = (b.pool_x, b.pool_y, b.y.balance("bob")) == (110, 90, 10)
    ok = r["violations"] == 0 and r["pool_x"] + r["pool_y"] == 2000 and example
    report(12, ok, f"1000 pooled transfers, {r['violations']} invariant violations; example in 10 out 10: {example}")
    assert ok


def test_c13_account_chain(report):
    keys = [KeyPair.from_name(f"acc-{i}") for i in range(10)]
    miner = KeyPair.from_name("acc-miner").address
    chain = AccountChain({k.address: 10 ** 9 for k in keys})
    txs = [make_tx(keys[i % 10], keys[(i + 1) % 10].address, i + 1, nonce=i // 10, startgas=400) for i in range(100)]
    block = chain.build_block(txs, miner)
    ref = chain.state
    state, _ = replay(ref, block.transactions, miner)
    valid = len(block.transactions) == 100 and state.state_root == block.header.state_root

    # a header committing to the state without the last transaction
    short, _ = replay(ref, block.transactions[:-1], miner)
    from dataclasses import replace
    bad_header = _mine_header(replace(block.header, state_root=short.state_root), chain.target)
    try:
        chain.append(AccountBlock(bad_header, block.transactions))
        step = None
    except AccountBlockError as exc:
        step = exc.step
    chain.append(block)

    rng = random.Random(13)
    mixed = 0
    alice = KeyPair.from_name("acc-booker")
    for _ in range(10):
        s = WorldState.from_alloc({alice.address: 10 ** 9})
        s, train, _ = deploy_contract(s, alice, "train", miner, capacity=rng.randint(0, 5))
        s, hotel, _ = deploy_contract(s, alice, "hotel", miner, capacity=rng.randint(0, 5))
        s, booking, _ = deploy_contract(s, alice, "booking", miner, train=train.encoded, hotel=hotel.encoded)
        ids = [rng.randint(0, 9) for _ in range(rng.randint(1, 10))]
        for oid in ids:
            s, _ = invoke(s, alice, booking, "order", miner, id=oid, startgas=20_000)
        for oid in set(ids):
            mixed += (s.storage_value(train, f"booker:{oid}") is None) != (s.storage_value(hotel, f"booker:{oid}") is None)
    ok = valid and step == 5 and chain.height == 1 and mixed == 0
    report(13, ok, f"100-tx block valid={valid}; omitted-tx root rejected at step {step}; mixed bookings {mixed}")
    assert ok


def test_c14_toy_curve(report):
    c = TOY17
    pts = enumerate_points(c)
    group = set(pts) | {INFINITY}
    closed = all(point_add(P, Q, c) in group for P in group for Q in group)
    identity = all(point_add(P, INFINITY, c) == P for P in group)
    inverse = all(point_add(P, negate(P, c), c) is INFINITY for P in group)
    mul_ok = True
    for P in pts:
        acc = INFINITY
        for m in range(1, 51):
            acc = point_add(acc, P, c)
            mul_ok &= scalar_mul(m, P, c) == acc
    ok = closed and identity and inverse and mul_ok
    report(14, ok, f"{len(pts)} affine points; closure={closed} identity={identity} inverse={inverse} mul={mul_ok}")
    assert ok
