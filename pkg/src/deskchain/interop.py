"""Cross-chain movement: hash-time-locked swaps and a two-pool bridge.

Time is a shared integer clock. Each :class:`AssetChain` holds one token and
a public log; an HTLC claim writes the preimage to that log, which is how
the counterparty learns it.
"""

import random
from dataclasses import dataclass
from typing import Dict, List, Optional

from .crypto import sha256

ACTIVE, CLAIMED, REFUNDED = "active", "claimed", "refunded"


class InteropError(Exception):
    pass


class InsufficientFunds(InteropError):
    pass


class PastExpiry(InteropError):
    pass


class BadKey(InteropError):
    pass


class Expired(InteropError):
    pass


class NotYetExpired(InteropError):
    pass


class AlreadyTerminal(InteropError):
    pass


class InsufficientReserve(InteropError):
    def __init__(self, msg, transcript=None):
        super().__init__(msg)
        self.transcript = transcript


@dataclass
class HTLC:
    id: int
    chain: str
    token: str
    amount: int
    hashlock: bytes
    expiry: int
    depositor: str
    recipient: str
    state: str = ACTIVE
    revealed_key: Optional[bytes] = None


class AssetChain:
    def __init__(self, name: str, token: str, balances: Optional[Dict[str, int]] = None):
        self.name = name
        self.token = token
        self.balances: Dict[str, int] = dict(balances or {})
        self.htlcs: Dict[int, HTLC] = {}
        self.log: List[dict] = []

    def balance(self, who: str) -> int:
        return self.balances.get(who, 0)

    def move(self, src: str, dst: str, amount: int):
        if amount <= 0:
            raise InteropError("amount must be positive")
        if self.balance(src) < amount:
            raise InsufficientFunds(f"{src} holds {self.balance(src)} {self.token}, needs {amount}")
        self.balances[src] -= amount
        self.balances[dst] = self.balance(dst) + amount

    def mint(self, dst: str, amount: int):
        self.balances[dst] = self.balance(dst) + amount
        self.log.append({"event": "mint", "to": dst, "amount": amount})

    def burn(self, src: str, amount: int):
        if self.balance(src) < amount:
            raise InsufficientFunds(f"{src} cannot burn {amount}")
        self.balances[src] -= amount
        self.log.append({"event": "burn", "from": src, "amount": amount})

    def escrowed(self) -> int:
        return sum(h.amount for h in self.htlcs.values() if h.state == ACTIVE)

    def supply(self) -> int:
        return sum(self.balances.values()) + self.escrowed()


def htlc_create(chain: AssetChain, depositor: str, recipient: str, amount: int, hashlock: bytes,
                expiry: int, now: int) -> int:
    if expiry <= now:
        raise PastExpiry(f"expiry {expiry} is not after now={now}")
    if chain.balance(depositor) < amount or amount <= 0:
        raise InsufficientFunds(f"{depositor} cannot lock {amount} {chain.token}")
    chain.balances[depositor] -= amount
    hid = len(chain.htlcs)
    chain.htlcs[hid] = HTLC(hid, chain.name, chain.token, amount, hashlock, expiry, depositor, recipient)
    chain.log.append({"event": "htlc_create", "id": hid, "by": depositor, "amount": amount,
                      "hashlock": hashlock.hex(), "expiry": expiry, "time": now})
    return hid


def htlc_claim(chain: AssetChain, hid: int, key: bytes, now: int, caller: Optional[str] = None) -> str:
    """Release the escrow to its named recipient and publish ``key``."""
    h = chain.htlcs[hid]
    if h.state != ACTIVE:
        raise AlreadyTerminal(f"htlc {hid} already {h.state}")
    if now >= h.expiry:
        raise Expired(f"htlc {hid} expired at {h.expiry}")
    if sha256(key) != h.hashlock:
        raise BadKey("H(k) does not match the hashlock")
    h.state = CLAIMED
    h.revealed_key = key
    chain.balances[h.recipient] = chain.balance(h.recipient) + h.amount
    chain.log.append({"event": "htlc_claim", "id": hid, "by": caller or h.recipient, "key": key.hex(), "time": now})
    return h.recipient


def htlc_refund(chain: AssetChain, hid: int, now: int) -> str:
    h = chain.htlcs[hid]
    if h.state != ACTIVE:
        raise AlreadyTerminal(f"htlc {hid} already {h.state}")
    if now < h.expiry:
        raise NotYetExpired(f"htlc {hid} expires at {h.expiry}")
    h.state = REFUNDED
    chain.balances[h.depositor] = chain.balance(h.depositor) + h.amount
    chain.log.append({"event": "htlc_refund", "id": hid, "to": h.depositor, "time": now})
    return h.depositor


def revealed_keys(chain: AssetChain) -> List[bytes]:
    return [bytes.fromhex(e["key"]) for e in chain.log if e["event"] == "htlc_claim"]


# --- atomic swap ------------------------------------------------------------

SCENARIOS = ("honest", "bob_aborts", "alice_never_claims", "alice_claims_late")


@dataclass
class SwapConfig:
    amount_x: int = 10
    amount_y: int = 10
    alice_expiry: int = 8
    bob_expiry: int = 5
    claim_latency: int = 1
    horizon: int = 10
    secret: bytes = b"alice-swap-secret"

    def __post_init__(self):
        if not self.bob_expiry + self.claim_latency < self.alice_expiry:
            raise InteropError("Bob's expiry plus claim latency must fall before Alice's expiry")


@dataclass
class SwapSession:
    x: AssetChain
    y: AssetChain
    alice_htlc: Optional[int] = None
    bob_htlc: Optional[int] = None
    phase: str = "setup"


def run_atomic_swap(scenario: str = "honest", cfg: Optional[SwapConfig] = None) -> dict:
    """Alice swaps X for Bob's Y; returns the event transcript and final holdings."""
    if scenario not in SCENARIOS:
        raise InteropError(f"unknown scenario {scenario!r}; choose from {SCENARIOS}")
    cfg = cfg or SwapConfig()
    s = SwapSession(AssetChain("X", "X", {"alice": cfg.amount_x}), AssetChain("Y", "Y", {"bob": cfg.amount_y}))
    events = []

    def note(t, who, what, **kw):
        events.append(dict(time=t, actor=who, action=what, **kw))

    k = cfg.secret                      # Alice 1: secret only she knows
    m = sha256(k)                       # Alice 2: its hash
    bob_knows_at = None
    for t in range(cfg.horizon + 1):
        if t == 0:
            s.alice_htlc = htlc_create(s.x, "alice", "bob", cfg.amount_x, m, cfg.alice_expiry, t)
            note(t, "alice", "lock X", expiry=cfg.alice_expiry)
            note(t, "alice", "send m to bob", m=m.hex())
        if t == 1 and scenario != "bob_aborts":
            s.bob_htlc = htlc_create(s.y, "bob", "alice", cfg.amount_y, m, cfg.bob_expiry, t)
            s.phase = "bob_funded"
            note(t, "bob", "lock Y", expiry=cfg.bob_expiry)
        claim_at = {"honest": 2, "alice_claims_late": cfg.bob_expiry}.get(scenario)
        if s.bob_htlc is not None and t == claim_at:
            try:
                htlc_claim(s.y, s.bob_htlc, k, t, "alice")
                note(t, "alice", "claim Y", key=k.hex())
                bob_knows_at = t + cfg.claim_latency
            except InteropError as exc:
                note(t, "alice", "claim Y failed", error=type(exc).__name__)
        # Bob watches chain Y and reuses the published key on chain X
        if bob_knows_at is not None and t >= bob_knows_at and s.x.htlcs[s.alice_htlc].state == ACTIVE:
            key = revealed_keys(s.y)[-1]
            htlc_claim(s.x, s.alice_htlc, key, t, "bob")
            note(t, "bob", "claim X with revealed key", key=key.hex())
            s.phase = "claimed"
        for chain, hid, who in ((s.x, s.alice_htlc, "alice"), (s.y, s.bob_htlc, "bob")):
            if hid is not None and chain.htlcs[hid].state == ACTIVE and t >= chain.htlcs[hid].expiry:
                htlc_refund(chain, hid, t)
                note(t, who, f"refund {chain.token}")
                s.phase = "refunded"
    final = {
        "alice": {"X": s.x.balance("alice"), "Y": s.y.balance("alice")},
        "bob": {"X": s.x.balance("bob"), "Y": s.y.balance("bob")},
    }
    return {"scenario": scenario, "events": events, "final": final, "outcome": swap_outcome(s), "phase": s.phase}


def swap_outcome(s: SwapSession) -> str:
    a = s.x.htlcs[s.alice_htlc].state if s.alice_htlc is not None else None
    b = s.y.htlcs[s.bob_htlc].state if s.bob_htlc is not None else None
    legs = {a, b} - {None}
    if legs == {CLAIMED}:
        return "swapped"
    if legs <= {REFUNDED}:
        return "refunded"
    if ACTIVE in legs:
        return "in_progress"
    return "mixed"


def explore_swaps(alice_expiry: int = 8, bob_expiry: int = 5, max_latency: int = 2, horizon: int = 10,
                  max_paths: int = 10_000) -> dict:
    """Exhaustively enumerate interleavings of the two-HTLC protocol.

    Alice may lock X at any time before her expiry, or never. Bob, once he
    sees her lock, may lock Y or abort. Alice may claim Y whenever it is
    open, or never; the key then reaches Bob after 1..max_latency ticks and
    Bob claims X at once. Depositors refund as soon as expiry allows.
    Returns path and outcome counts; "mixed" counts exactly-one-leg endings.
    """
    counts = {"swapped": 0, "refunded": 0, "nothing": 0, "mixed": 0}
    paths = 0
    mixed_examples = []

    # state: (t, a, b, knows_at, trace)
    def dfs(t, a, b, knows_at, trace):
        nonlocal paths
        if paths >= max_paths:
            return
        # forced moves first: refunds due and Bob's claim once he knows the key
        if a == ACTIVE and knows_at is not None and t >= knows_at and t < alice_expiry:
            a = CLAIMED
            trace = trace + [(t, "bob claims X")]
        if a == ACTIVE and t >= alice_expiry:
            a = REFUNDED
            trace = trace + [(t, "alice refunds X")]
        if b == ACTIVE and t >= bob_expiry:
            b = REFUNDED
            trace = trace + [(t, "bob refunds Y")]
        if t > horizon:
            paths += 1
            legs = {a, b} - {None}
            if not legs:
                counts["nothing"] += 1
            elif legs == {CLAIMED}:
                counts["swapped"] += 1
            elif legs <= {REFUNDED}:
                counts["refunded"] += 1
            else:
                counts["mixed"] += 1
                if len(mixed_examples) < 3:
                    mixed_examples.append(trace)
            return
        choices = [("wait", a, b, knows_at)]
        if a is None and t < alice_expiry:
            choices.append(("alice locks X", ACTIVE, b, knows_at))
        if a is not None and b is None and t < bob_expiry and not any(x[1] == "bob aborts" for x in trace):
            choices.append(("bob locks Y", a, ACTIVE, knows_at))
            choices.append(("bob aborts", a, b, knows_at))
        if b == ACTIVE and t < bob_expiry:
            for lat in range(1, max_latency + 1):
                choices.append((f"alice claims Y (key seen after {lat})", a, CLAIMED, t + lat))
        for label, na, nb, nk in choices:
            if label == "wait":
                dfs(t + 1, na, nb, nk, trace)
            else:
                dfs(t, na, nb, nk, trace + [(t, label)])

    dfs(0, None, None, None, [])
    return {"paths": paths, "outcomes": counts, "mixed_examples": mixed_examples, "truncated": paths >= max_paths}


# --- bridge -----------------------------------------------------------------

POOLED, BURN_MINT = "pooled", "burn-mint"


@dataclass
class JournalEntry:
    id: int
    kind: str
    from_chain: str
    sender: str
    receiver: str
    amount: int
    status: str = "deposited"


class Bridge:
    """Operator-run bridge between chain X (USDX) and chain Y (USDY), 1:1.

    pooled: a reserve on each side; value enters one pool and leaves the
    other. burn-mint: the operator owns X, so USDX is minted on the way in
    and burned on the way out; only the Y side keeps a pool.
    """

    def __init__(self, n_x: int, n_y: int, mode: str = POOLED,
                 x: Optional[AssetChain] = None, y: Optional[AssetChain] = None):
        if mode not in (POOLED, BURN_MINT):
            raise InteropError(f"unknown bridge mode {mode!r}")
        self.mode = mode
        self.x = x or AssetChain("X", "USDX")
        self.y = y or AssetChain("Y", "USDY")
        self.x.balances["pool"] = n_x if mode == POOLED else 0
        self.y.balances["pool"] = n_y
        self.minted_x = 0
        self.journal: List[JournalEntry] = []

    @property
    def pool_x(self) -> int:
        return self.x.balance("pool")

    @property
    def pool_y(self) -> int:
        return self.y.balance("pool")

    def _chains(self, from_chain: str):
        if from_chain == "X":
            return self.x, self.y
        if from_chain == "Y":
            return self.y, self.x
        raise InteropError(f"unknown chain {from_chain!r}")

    def transfer(self, from_chain: str, sender: str, receiver: str, amount: int,
                 crash_before_payout: bool = False) -> dict:
        if amount <= 0:
            raise InteropError("amount must be positive")
        src, _ = self._chains(from_chain)
        entry = JournalEntry(len(self.journal), self._kind(from_chain), from_chain, sender, receiver, amount)
        # leg 1 on the source chain
        if entry.kind == "burn":
            src.burn(sender, amount)
            self.minted_x -= amount
        else:
            src.move(sender, "pool", amount)
        self.journal.append(entry)
        if crash_before_payout:
            return self._record(entry)
        return self._complete(entry)

    def _kind(self, from_chain: str) -> str:
        if self.mode == BURN_MINT and from_chain == "X":
            return "burn"
        return "deposit"

    def _complete(self, entry: JournalEntry) -> dict:
        src, dst = self._chains(entry.from_chain)
        amount = entry.amount
        if self.mode == BURN_MINT and entry.from_chain == "Y":
            dst.mint(entry.receiver, amount)
            self.minted_x += amount
            entry.status = "paid"
            return self._record(entry)
        if dst.balance("pool") < amount:
            # refund the source leg; the transfer never happened
            if entry.kind == "burn":
                src.mint(entry.sender, amount)
                self.minted_x += amount
            else:
                src.move("pool", entry.sender, amount)
            entry.status = "refunded"
            raise InsufficientReserve(f"{dst.name} pool holds {dst.balance('pool')}, needs {amount}",
                                      self._record(entry))
        dst.move("pool", entry.receiver, amount)
        entry.status = "paid"
        return self._record(entry)

    def _record(self, entry: JournalEntry) -> dict:
        return {"id": entry.id, "kind": entry.kind, "from": entry.from_chain, "sender": entry.sender,
                "receiver": entry.receiver, "amount": entry.amount, "status": entry.status,
                "pool_x": self.pool_x, "pool_y": self.pool_y, "minted_x": self.minted_x}

    def restart(self) -> List[dict]:
        """Replay journal entries whose payout leg never ran."""
        out = []
        for entry in self.journal:
            if entry.status == "deposited":
                try:
                    out.append(self._complete(entry))
                except InsufficientReserve as exc:
                    out.append(exc.transcript)
        return out

    def wrap(self, sender: str, receiver: str, amount: int) -> dict:
        """Y -> X in burn-mint mode: deposit on Y, mint on X."""
        return self.transfer("Y", sender, receiver, amount)

    def unwrap(self, sender: str, receiver: str, amount: int) -> dict:
        """X -> Y in burn-mint mode: burn on X, pay from the Y pool."""
        return self.transfer("X", sender, receiver, amount)


def bridge_transfer(bridge: Bridge, from_chain: str, sender: str, receiver: str, amount: int) -> dict:
    return bridge.transfer(from_chain, sender, receiver, amount)


def bridge_burn_mint(bridge: Bridge, direction: str, sender: str, receiver: str, amount: int) -> dict:
    if bridge.mode != BURN_MINT:
        raise InteropError("bridge is not in burn-mint mode")
    if direction == "wrap":
        return bridge.wrap(sender, receiver, amount)
    if direction == "unwrap":
        return bridge.unwrap(sender, receiver, amount)
    raise InteropError("direction must be wrap or unwrap")


def random_bridge_run(n_transfers: int, seed: int, n_x: int = 1000, n_y: int = 1000, mode: str = POOLED) -> dict:
    """Random transfers between two users on each side; reports invariant checks."""
    rng = random.Random(seed)
    x = AssetChain("X", "USDX", {"alice": 500, "carol": 500})
    y = AssetChain("Y", "USDY", {"bob": 500, "dave": 500})
    bridge = Bridge(n_x, n_y, mode, x, y)
    start_pools = bridge.pool_x + bridge.pool_y
    start_gap = bridge.pool_y - bridge.minted_x
    paid = refunded = failed = 0
    violations = 0
    for _ in range(n_transfers):
        if rng.random() < 0.5:
            frm, sender, receiver = "X", rng.choice(["alice", "carol"]), rng.choice(["bob", "dave"])
        else:
            frm, sender, receiver = "Y", rng.choice(["bob", "dave"]), rng.choice(["alice", "carol"])
        amount = rng.randint(1, 120)
        try:
            bridge.transfer(frm, sender, receiver, amount)
            paid += 1
        except InsufficientReserve:
            refunded += 1
        except InsufficientFunds:
            failed += 1
        if mode == POOLED and bridge.pool_x + bridge.pool_y != start_pools:
            violations += 1
        if mode == BURN_MINT and bridge.pool_y - bridge.minted_x != start_gap:
            violations += 1
    return {"paid": paid, "refunded": refunded, "failed": failed, "violations": violations,
            "pool_x": bridge.pool_x, "pool_y": bridge.pool_y, "minted_x": bridge.minted_x,
            "user_total": sum(v for k, v in x.balances.items() if k != "pool")
            + sum(v for k, v in y.balances.items() if k != "pool")}
