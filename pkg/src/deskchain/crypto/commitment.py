"""Hash commitments c = H(r || x) and the coin-toss protocol built on them.

Messages are encoded as UTF-8 when given as str.
"""

import secrets
from dataclasses import dataclass, field
from typing import Iterable, Optional, Tuple, Union

from .hashing import sha256

DEFAULT_NONCE_BITS = 256
MIN_NONCE_BITS = 8


class NonceLengthError(ValueError):
    pass


@dataclass(frozen=True)
class Commitment:
    c: bytes
    nbits: int = DEFAULT_NONCE_BITS
    # prover-side opening; None on the verifier's copy
    r: Optional[int] = field(default=None, repr=False, compare=False)
    x: Optional[bytes] = field(default=None, repr=False, compare=False)

    def public(self) -> "Commitment":
        return Commitment(self.c, self.nbits)


def _msg(x: Union[str, bytes]) -> bytes:
    return x.encode("utf-8") if isinstance(x, str) else bytes(x)


def _nonce_bytes(r: int, nbits: int) -> bytes:
    if nbits < MIN_NONCE_BITS:
        raise NonceLengthError(f"nonce length {nbits} below minimum {MIN_NONCE_BITS}")
    if not 0 <= r < (1 << nbits):
        raise NonceLengthError(f"nonce does not fit in {nbits} bits")
    return r.to_bytes((nbits + 7) // 8, "big")


def new_nonce(nbits: int = DEFAULT_NONCE_BITS, rng=None) -> int:
    if rng is None:
        return secrets.randbits(nbits)
    return rng.getrandbits(nbits)


def commit(r: int, x: Union[str, bytes], nbits: int = DEFAULT_NONCE_BITS) -> Commitment:
    xb = _msg(x)
    return Commitment(sha256(_nonce_bytes(r, nbits) + xb), nbits, r, xb)


def verify_commit(c: Union[Commitment, bytes], r: int, x: Union[str, bytes], nbits: int = None) -> bool:
    if isinstance(c, Commitment):
        nbits = c.nbits if nbits is None else nbits
        c = c.c
    nbits = DEFAULT_NONCE_BITS if nbits is None else nbits
    try:
        rb = _nonce_bytes(r, nbits)
    except NonceLengthError:
        return False
    return sha256(rb + _msg(x)) == c


def brute_force_opening(c: Commitment, candidates: Iterable[Union[str, bytes]]) -> Optional[Tuple[int, bytes]]:
    """Search every nonce and candidate message; feasible only for tiny nonces."""
    if c.nbits > 24:
        raise NonceLengthError("brute force is only meant for toy nonce lengths")
    msgs = [_msg(x) for x in candidates]
    for r in range(1 << c.nbits):
        rb = r.to_bytes((c.nbits + 7) // 8, "big")
        for xb in msgs:
            if sha256(rb + xb) == c.c:
                return r, xb
    return None


def coin_toss(prediction: str, outcome: str, nbits: int = DEFAULT_NONCE_BITS, rng=None) -> dict:
    """Run the four-step commit/reveal bet and report what each side saw."""
    r = new_nonce(nbits, rng)
    alice = commit(r, prediction, nbits)
    sent = alice.public()                           # 1. Alice sends c only
    # 2. Bob announces the outcome without knowing the prediction
    alice_wins = prediction == outcome              # 3. Alice opens if she won
    opened = verify_commit(sent, r, outcome) if alice_wins else None   # 4. Bob checks
    return {
        "commitment": sent.c.hex(),
        "prediction": prediction,
        "outcome": outcome,
        "alice_wins": alice_wins,
        "bob_verified": opened,
    }
