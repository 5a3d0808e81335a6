"""Round-based gossip simulation of a proof-of-work network.

Each round every node draws once from the run's RNG and mines with
probability ``p * weight``. Newly mined or released blocks are sent to
neighbours and arrive ``delta`` rounds later; with ``delta == 0`` they are
delivered within the same round through a FIFO queue. Honest nodes forward a
block on first receipt, validate it, and adopt the longest valid chain they
know (first-seen wins ties).

Selfish nodes form one pool sharing a private branch. Blocks they mine are
withheld. When an honest block reaches the pool, it either adopts the honest
chain (if that is now longer than its own) or releases everything it holds.
Honest blocks are never forwarded by pool members.

Blocks are real :class:`~deskchain.chain.Block` objects validated by
:func:`~deskchain.chain.validate_block`; proof-of-work is abstracted by a
vacuous target so that mining costs one hash.
"""

import random
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import networkx as nx
import numpy as np

from .chain import (
    GENESIS,
    GENESIS_TIMESTAMP,
    Block,
    ChainError,
    ChainParams,
    mine_block,
    validate_block,
)
from .crypto import KeyPair, merkle_root
from .chain import BlockHeader
from .ledger import COIN, TxError, build_coinbase, build_transfer, fee_rate, validate_tx

HONEST, SELFISH, SILENT = "honest", "selfish", "silent"
STRATEGIES = (HONEST, SELFISH, SILENT)

# No epoch ever completes and every id meets the target.
SIM_PARAMS = ChainParams(pow_limit=2 ** 256, epoch_length=2 ** 31)


class TopologyError(ValueError):
    pass


@dataclass
class SimConfig:
    n: int = 20
    p: float = 0.01
    delta: int = 0
    rounds: int = 500
    seed: int = 0
    degree: int = 4
    honest_fraction: float = 1.0
    strategies: Optional[List[str]] = None
    weights: Optional[List[float]] = None
    topology: Optional[List[List[int]]] = None
    tx_rate: float = 0.0
    max_block_txs: int = 20
    trace: bool = False

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be at least 1")
        if not 0 <= self.p <= 1:
            raise ValueError("p must lie in [0, 1]")
        if self.delta < 0 or self.rounds < 0:
            raise ValueError("delta and rounds must be non-negative")
        if not 0 < self.honest_fraction <= 1:
            raise ValueError("honest_fraction must lie in (0, 1]")
        if self.strategies is None:
            n_bad = round(self.n * (1 - self.honest_fraction))
            self.strategies = [HONEST] * (self.n - n_bad) + [SELFISH] * n_bad
        if len(self.strategies) != self.n or any(s not in STRATEGIES for s in self.strategies):
            raise ValueError(f"strategies must be {self.n} tags from {STRATEGIES}")
        if self.weights is None:
            self.weights = [1.0] * self.n
        if len(self.weights) != self.n or any(w < 0 or w * self.p > 1 for w in self.weights):
            raise ValueError("weights must be n non-negative values with p * weight <= 1")
        if HONEST not in self.strategies:
            raise ValueError("at least one honest node is required")


def build_topology(cfg: SimConfig) -> List[List[int]]:
    """Neighbour lists; a random connected ``degree``-regular graph unless given."""
    n = cfg.n
    if cfg.topology is not None:
        topo = [sorted(set(nb)) for nb in cfg.topology]
        if len(topo) != n:
            raise TopologyError("topology needs one neighbour list per node")
        g = nx.Graph()
        g.add_nodes_from(range(n))
        for i, nbs in enumerate(topo):
            for j in nbs:
                if not 0 <= j < n or j == i:
                    raise TopologyError(f"bad neighbour {j} for node {i}")
                if i not in topo[j]:
                    raise TopologyError(f"link {i}-{j} is not symmetric")
                g.add_edge(i, j)
        if not nx.is_connected(g):
            raise TopologyError("topology is not connected")
        return topo
    if n == 1:
        return [[]]
    if n <= cfg.degree + 1:
        return [[j for j in range(n) if j != i] for i in range(n)]
    d = cfg.degree if (cfg.degree * n) % 2 == 0 else cfg.degree + 1
    for attempt in range(100):
        g = nx.random_regular_graph(d, n, seed=cfg.seed * 1000 + attempt)
        if nx.is_connected(g):
            return [sorted(g.neighbors(i)) for i in range(n)]
    raise TopologyError("could not draw a connected regular graph")


@dataclass
class _Entry:
    block: Block
    parent: Optional[bytes]
    height: int
    miner: int
    utxo: object


class _Ctx:
    """Parent view in the shape validate_block expects."""

    def __init__(self, entry: _Entry):
        self.tip_id = entry.block.id
        self.tip_timestamp = entry.block.header.timestamp
        self.height = entry.height
        self.utxo = entry.utxo
        self.params = SIM_PARAMS
        self._bits = entry.block.header.bits

    def scheduled_bits(self, height):
        return self._bits


@dataclass
class NodeState:
    id: int
    strategy: str
    neighbors: List[int]
    tip: bytes
    seen: set = field(default_factory=set)
    valid: set = field(default_factory=set)
    orphans: Dict[bytes, list] = field(default_factory=dict)
    mempool: Dict[bytes, object] = field(default_factory=dict)


@dataclass
class _Pool:
    members: List[int]
    private_tip: bytes
    withheld: List[bytes] = field(default_factory=list)
    reacted: set = field(default_factory=set)


@dataclass
class SimMetrics:
    chain_quality: float
    efficiency_observed: float
    revenue: Dict[int, int]
    revenue_share: Dict[str, float]
    hashrate_share: Dict[str, float]
    blocks_mined: int
    consensus_height: int
    stale_blocks: int
    fork_count: int
    consistency_depth: int
    honest_chains_identical: bool
    invalid_adoptions: int = 0

    def as_dict(self):
        return {
            "chain_quality": self.chain_quality,
            "efficiency_observed": self.efficiency_observed,
            "revenue": {str(k): v for k, v in sorted(self.revenue.items())},
            "revenue_share": dict(sorted(self.revenue_share.items())),
            "hashrate_share": dict(sorted(self.hashrate_share.items())),
            "blocks_mined": self.blocks_mined,
            "consensus_height": self.consensus_height,
            "stale_blocks": self.stale_blocks,
            "fork_count": self.fork_count,
            "consistency_depth": self.consistency_depth,
            "honest_chains_identical": self.honest_chains_identical,
            "invalid_adoptions": self.invalid_adoptions,
        }


@dataclass
class SimResult:
    metrics: SimMetrics
    chains: Dict[int, List[bytes]]
    blocks: Dict[bytes, _Entry]
    trace: List[dict]


class Simulation:
    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        self.rng = random.Random(cfg.seed)
        self.topology = build_topology(cfg)
        self.keys = [KeyPair.from_name(f"sim-node-{i}") for i in range(cfg.n)]
        self.addr_owner = {k.address: i for i, k in enumerate(self.keys)}
        g = _Entry(GENESIS, None, 0, -1, _genesis_utxo())
        self.store: Dict[bytes, _Entry] = {GENESIS.id: g}
        self.verdicts: Dict[bytes, bool] = {GENESIS.id: True}
        self.nodes = [NodeState(i, s, self.topology[i], GENESIS.id) for i, s in enumerate(cfg.strategies)]
        for node in self.nodes:
            node.seen.add(GENESIS.id)
            node.valid.add(GENESIS.id)
        selfish = [i for i, s in enumerate(cfg.strategies) if s == SELFISH]
        self.pool = _Pool(selfish, GENESIS.id) if selfish else None
        self.queue: Dict[int, deque] = {}
        self.round = 0
        self.mined: List[bytes] = []
        self.invalid_adoptions = 0
        self.trace: List[dict] = []

    # --- messaging ------------------------------------------------------

    def _send(self, src: int, kind: str, payload, exclude: Optional[int] = None):
        due = self.round + self.cfg.delta
        q = self.queue.setdefault(due, deque())
        for dst in self.nodes[src].neighbors:
            if dst != exclude:
                q.append((dst, src, kind, payload))

    def _deliver(self):
        q = self.queue.get(self.round)
        while q:
            dst, src, kind, payload = q.popleft()
            if kind == "block":
                self._on_block(self.nodes[dst], payload, src)
            else:
                self._on_tx(self.nodes[dst], payload, src)
        self.queue.pop(self.round, None)

    # --- blocks ---------------------------------------------------------

    def _validate(self, bid: bytes, block: Block) -> bool:
        verdict = self.verdicts.get(bid)
        if verdict is None:
            parent = self.store[block.header.prev_hash]
            try:
                utxo = validate_block(block, _Ctx(parent))
            except ChainError:
                verdict = False
            else:
                verdict = True
                miner = self.addr_owner.get(block.transactions[0].outputs[0].recipient, -1)
                self.store[bid] = _Entry(block, parent.block.id, parent.height + 1, miner, utxo)
            self.verdicts[bid] = verdict
        return verdict

    def _create_block(self, node: NodeState, parent_id: bytes) -> bytes:
        parent = self.store[parent_id]
        txs = self._pick_txs(node, parent) if self.cfg.tx_rate else []
        height = parent.height + 1
        utxo = parent.utxo
        fees = 0
        for tx in txs:
            fees += validate_tx(tx, utxo)
            utxo = utxo._evolve((t.outpoint for t in tx.inputs), zip(tx.outpoints(), tx.outputs))
        coinbase = build_coinbase(self.keys[node.id].address, height, fees)
        body = (coinbase,) + tuple(txs)
        ts = max(GENESIS_TIMESTAMP + self.round, parent.block.header.timestamp)
        header = BlockHeader(1, parent_id, merkle_root([t.txid for t in body]), ts, parent.block.header.bits, 0)
        block = mine_block(Block(header, body), 2 ** 256)
        bid = block.id
        if not self._validate(bid, block):
            raise RuntimeError("locally mined block failed validation")
        self.mined.append(bid)
        return bid

    def _adopt_if_longer(self, node: NodeState, bid: bytes):
        if self.store[bid].height > self.store[node.tip].height:
            node.tip = bid
            self._check_safety(node)

    def _check_safety(self, node: NodeState):
        cur = node.tip
        while cur is not None:
            if not self.verdicts.get(cur):
                self.invalid_adoptions += 1
                return
            cur = self.store[cur].parent

    def _on_block(self, node: NodeState, block: Block, src: int):
        bid = block.id
        if bid in node.seen:
            return
        node.seen.add(bid)
        if node.strategy == HONEST:
            self._send(node.id, "block", block, exclude=src)
        self._accept(node, bid, block)

    def _accept(self, node: NodeState, bid: bytes, block: Block):
        pending = [(bid, block)]
        while pending:
            bid, block = pending.pop(0)
            prev = block.header.prev_hash
            if prev not in node.valid:
                node.orphans.setdefault(prev, []).append((bid, block))
                continue
            if not self._validate(bid, block):
                continue
            node.valid.add(bid)
            if node.strategy == SELFISH:
                if self.store[bid].miner not in self.pool.members:
                    # the pool withholds its own blocks but does not censor others
                    self._send(node.id, "block", block)
                self._pool_on_block(node, bid)
            else:
                self._adopt_if_longer(node, bid)
            pending.extend(node.orphans.pop(bid, []))

    # --- selfish pool ---------------------------------------------------

    def _pool_on_block(self, node: NodeState, bid: bytes):
        pool = self.pool
        entry = self.store[bid]
        if entry.miner in pool.members or bid in pool.reacted:
            return
        pool.reacted.add(bid)
        for m in pool.members:
            self.nodes[m].valid.add(bid)
        private_height = self.store[pool.private_tip].height
        if entry.height > private_height:
            pool.private_tip = bid
            pool.withheld.clear()
            self._sync_pool_tips()
        elif pool.withheld:
            self._release(node)

    def _release(self, node: NodeState):
        pool = self.pool
        for bid in pool.withheld:
            block = self.store[bid].block
            for m in pool.members:
                self._send(m, "block", block)
            if self.cfg.trace:
                self.trace.append({"round": self.round, "event": "release", "node": node.id, "block": bid.hex()})
        pool.withheld.clear()

    def _sync_pool_tips(self):
        for m in self.pool.members:
            self.nodes[m].tip = self.pool.private_tip

    # --- transactions ---------------------------------------------------

    def _on_tx(self, node: NodeState, tx, src: int):
        if tx.txid in node.mempool or tx.txid in node.seen:
            return
        node.seen.add(tx.txid)
        try:
            validate_tx(tx, self.store[node.tip].utxo)
        except TxError:
            return
        node.mempool[tx.txid] = tx
        if node.strategy == HONEST:
            self._send(node.id, "tx", tx, exclude=src)

    def _pick_txs(self, node: NodeState, parent: _Entry):
        utxo = parent.utxo
        ranked = sorted(node.mempool.values(), key=lambda t: (-_safe_rate(t, utxo), t.txid))
        chosen = []
        for tx in ranked:
            if len(chosen) >= self.cfg.max_block_txs:
                break
            try:
                validate_tx(tx, utxo)
            except TxError:
                continue
            chosen.append(tx)
            utxo = utxo._evolve((t.outpoint for t in tx.inputs), zip(tx.outpoints(), tx.outputs))
        for tx in chosen:
            node.mempool.pop(tx.txid, None)
        return chosen

    def _maybe_issue_tx(self):
        if self.rng.random() >= self.cfg.tx_rate:
            return
        sender = self.rng.randrange(self.cfg.n)
        receiver = self.rng.randrange(self.cfg.n)
        node = self.nodes[sender]
        state = self.store[node.tip].utxo
        try:
            tx = build_transfer(self.keys[sender], [(self.keys[receiver].address, COIN)], state, fee=1000)
        except TxError:
            return
        node.seen.add(tx.txid)
        node.mempool[tx.txid] = tx
        self._send(sender, "tx", tx)

    # --- main loop ------------------------------------------------------

    def step(self):
        cfg = self.cfg
        if cfg.tx_rate:
            self._maybe_issue_tx()
        draws = [self.rng.random() for _ in range(cfg.n)]
        for node, u, w in zip(self.nodes, draws, cfg.weights):
            if u >= cfg.p * w:
                continue
            if node.strategy == SELFISH:
                bid = self._create_block(node, self.pool.private_tip)
                self.pool.private_tip = bid
                self.pool.withheld.append(bid)
                for m in self.pool.members:
                    self.nodes[m].seen.add(bid)
                    self.nodes[m].valid.add(bid)
                self._sync_pool_tips()
            else:
                bid = self._create_block(node, node.tip)
                node.seen.add(bid)
                node.valid.add(bid)
                node.tip = bid
                if node.strategy == HONEST:
                    self._send(node.id, "block", self.store[bid].block)
            if cfg.trace:
                self.trace.append({"round": self.round, "event": "mined", "node": node.id, "block": bid.hex()})
        self._deliver()
        self.round += 1

    def run(self) -> SimResult:
        for _ in range(self.cfg.rounds):
            self.step()
        return SimResult(self.metrics(), self.chains(), self.store, self.trace)

    # --- metrics --------------------------------------------------------

    def chain_of(self, tip: bytes) -> List[bytes]:
        out = []
        while tip is not None:
            out.append(tip)
            tip = self.store[tip].parent
        return out[::-1]

    def chains(self) -> Dict[int, List[bytes]]:
        return {n.id: self.chain_of(n.tip) for n in self.nodes if n.strategy == HONEST}

    def metrics(self) -> SimMetrics:
        cfg = self.cfg
        chains = self.chains()
        prefix = common_prefix(list(chains.values()))
        labels = {bid: e.miner for bid, e in self.store.items()}
        honest_ids = {i for i, s in enumerate(cfg.strategies) if s == HONEST}
        quality = measure_chain_quality(prefix, labels, honest_ids)
        revenue = Counter(labels[b] for b in prefix[1:])
        body = len(prefix) - 1
        rev_share = {s: (sum(v for m, v in revenue.items() if cfg.strategies[m] == s) / body if body else 0.0)
                     for s in set(cfg.strategies)}
        total_w = sum(cfg.weights) or 1.0
        hash_share = {s: sum(w for w, t in zip(cfg.weights, cfg.strategies) if t == s) / total_w
                      for s in set(cfg.strategies)}
        children = Counter(e.parent for e in self.store.values() if e.parent is not None)
        forks = sum(c - 1 for c in children.values() if c > 1)
        mined = len(self.mined)
        depth = max(len(c) for c in chains.values()) - len(prefix)
        return SimMetrics(
            chain_quality=quality,
            efficiency_observed=body / mined if mined else 1.0,
            revenue=dict(revenue),
            revenue_share=rev_share,
            hashrate_share=hash_share,
            blocks_mined=mined,
            consensus_height=body,
            stale_blocks=mined - body - _tail_blocks(chains, prefix),
            fork_count=forks,
            consistency_depth=depth,
            honest_chains_identical=len({tuple(c) for c in chains.values()}) == 1,
            invalid_adoptions=self.invalid_adoptions,
        )


def _genesis_utxo():
    from .ledger import UtxoSet
    return UtxoSet.genesis(GENESIS.transactions)


def _safe_rate(tx, utxo):
    try:
        return fee_rate(tx, utxo)
    except TxError:
        return -1.0


def _tail_blocks(chains, prefix) -> int:
    # blocks beyond the common prefix that some honest node still holds
    tail = set()
    for c in chains.values():
        tail.update(c[len(prefix):])
    return len(tail)


def common_prefix(chains: List[List[bytes]]) -> List[bytes]:
    if not chains:
        return []
    out = []
    for column in zip(*chains):
        if any(b != column[0] for b in column):
            break
        out.append(column[0])
    return out


def measure_chain_quality(chain: List[bytes], labels: Dict[bytes, int], honest_ids) -> float:
    """Share of non-genesis blocks on ``chain`` mined by honest nodes (1.0 if empty)."""
    body = chain[1:]
    if not body:
        return 1.0
    return sum(1 for b in body if labels[b] in honest_ids) / len(body)


def run(cfg: SimConfig) -> SimResult:
    return Simulation(cfg).run()


# --- double spend race --------------------------------------------------

def double_spend_trial(k: int, q: float, rng: random.Random, max_steps: int = 100_000,
                       give_up_deficit: Optional[int] = None) -> bool:
    """One private-branch race: the merchant waits for k honest blocks.

    Each step one block is found, by the attacker with probability q. After
    acceptance the attacker wins on reaching a tie with the honest branch.
    A deficit beyond ``give_up_deficit`` counts as a loss; its probability
    of recovery is at most (q/p)^give_up_deficit.
    """
    if k < 0 or not 0 <= q <= 1:
        raise ValueError("need k >= 0 and 0 <= q <= 1")
    if give_up_deficit is None:
        give_up_deficit = _give_up_deficit(q)
    honest = attacker = 0
    for _ in range(max_steps):
        if honest >= k:
            if attacker >= honest:
                return True
            if honest - attacker > give_up_deficit:
                return False
        if rng.random() < q:
            attacker += 1
        else:
            honest += 1
    return honest >= k and attacker >= honest


def _give_up_deficit(q: float, eps: float = 1e-12) -> int:
    if q <= 0:
        return 0
    if q >= 0.5:
        return 10 ** 9
    return int(np.ceil(np.log(eps) / np.log(q / (1 - q)))) + 1


def double_spend_rate(k: int, q: float, trials: int, seed: int = 0, max_steps: int = 100_000) -> float:
    """Vectorised success frequency of double_spend_trial over many races."""
    rng = np.random.default_rng(seed)
    cap = _give_up_deficit(q)
    honest = np.zeros(trials, dtype=np.int64)
    attacker = np.zeros(trials, dtype=np.int64)
    active = np.arange(trials)
    wins = 0
    for _ in range(max_steps + 1):
        if active.size == 0:
            break
        h, a = honest[active], attacker[active]
        accepted = h >= k
        won = accepted & (a >= h)
        lost = accepted & (h - a > cap)
        wins += int(won.sum())
        keep = ~(won | lost)
        active = active[keep]
        step = rng.random(active.size) < q
        attacker[active] += step
        honest[active] += ~step
    return wins / trials
