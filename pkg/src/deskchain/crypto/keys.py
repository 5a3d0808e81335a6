"""Key pairs, addresses and ECDSA-style signatures over a configured curve.

Signing nonces are derived with HMAC-SHA256 from (private key, message), so
a given key signs a given message identically on every run.
"""

import hashlib
import hmac
import random
import secrets
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Tuple

from .curve import INFINITY, SECP256K1, CurveError, CurveParams, encode_point, scalar_mul, _add
from .hashing import b58check_decode, b58check_encode, hash160


class SignatureError(ValueError):
    pass


@dataclass(frozen=True)
class Address:
    payload: bytes

    def __post_init__(self):
        if len(self.payload) != 20:
            raise ValueError(f"address payload must be 20 bytes, got {len(self.payload)}")

    @property
    def encoded(self) -> str:
        return b58check_encode(self.payload)

    @classmethod
    def decode(cls, encoded: str) -> "Address":
        return cls(b58check_decode(encoded))

    def __str__(self):
        return self.encoded


@dataclass(frozen=True)
class Signature:
    r: int
    s: int

    def to_bytes(self, params: CurveParams) -> bytes:
        n = params.scalar_bytes
        return self.r.to_bytes(n, "big") + self.s.to_bytes(n, "big")

    @classmethod
    def from_bytes(cls, data: bytes, params: CurveParams) -> "Signature":
        n = params.scalar_bytes
        if len(data) != 2 * n:
            raise SignatureError("bad signature length")
        return cls(int.from_bytes(data[:n], "big"), int.from_bytes(data[n:], "big"))


@dataclass(frozen=True)
class KeyPair:
    private: int = field(repr=False)
    public: Tuple[int, int]
    params: CurveParams = SECP256K1

    @classmethod
    def from_private(cls, private: int, params: CurveParams = SECP256K1) -> "KeyPair":
        if not 1 <= private < params.order:
            raise CurveError("private scalar out of range")
        pub = scalar_mul(private, params.g, params)
        if pub is INFINITY:
            raise CurveError("private scalar maps to infinity")
        return cls(private, pub, params)

    @classmethod
    def from_name(cls, name: str, params: CurveParams = SECP256K1) -> "KeyPair":
        """Deterministic named key for scenarios and fixtures (not for real funds)."""
        seed = int.from_bytes(hashlib.sha256(b"deskchain-name:" + name.encode()).digest(), "big")
        return cls.from_private(seed % (params.order - 1) + 1, params)

    @property
    def pubkey_bytes(self) -> bytes:
        return encode_point(self.public, self.params)

    @property
    def address(self) -> Address:
        return derive_address(self.public, self.params)


def keygen(seed: Optional[int] = None, params: CurveParams = SECP256K1) -> KeyPair:
    """A fresh key pair; seeded runs are reproducible, unseeded use the OS RNG."""
    if seed is None:
        private = secrets.randbelow(params.order - 1) + 1
    else:
        private = random.Random(seed).randrange(1, params.order)
    return KeyPair.from_private(private, params)


def derive_address(pub, params: CurveParams = SECP256K1) -> Address:
    if pub is INFINITY:
        raise CurveError("the point at infinity has no address")
    if not params.contains(pub):
        raise CurveError("public key not on curve")
    return Address(hash160(encode_point(pub, params)))


def _digest_int(msg: bytes, order: int) -> int:
    e = int.from_bytes(hashlib.sha256(msg).digest(), "big")
    shift = 256 - order.bit_length()
    return e >> shift if shift > 0 else e


def _nonce(private: int, msg: bytes, params: CurveParams, counter: int) -> int:
    key = private.to_bytes(params.scalar_bytes, "big")
    mac = hmac.new(key, hashlib.sha256(msg).digest() + counter.to_bytes(4, "big"), hashlib.sha256)
    return int.from_bytes(mac.digest(), "big") % (params.order - 1) + 1


def sign(key: KeyPair, msg: bytes) -> Signature:
    params = key.params
    n = params.order
    e = _digest_int(msg, n)
    counter = 0
    while True:
        k = _nonce(key.private, msg, params, counter)
        counter += 1
        R = scalar_mul(k, params.g, params)
        if R is INFINITY:
            continue
        r = R[0] % n
        if r == 0:
            continue
        try:
            s = pow(k, -1, n) * (e + r * key.private) % n
        except ValueError:
            # k not invertible; only possible when the order is composite
            continue
        if s == 0:
            continue
        return Signature(r, s)


def verify(pub, msg: bytes, sig: Signature, params: CurveParams = SECP256K1) -> bool:
    if pub is INFINITY or not params.contains(pub):
        return False
    return _verify_cached(pub, bytes(msg), sig.r, sig.s, params)


@lru_cache(maxsize=1 << 16)
def _verify_cached(pub, msg: bytes, r: int, s: int, params: CurveParams) -> bool:
    n = params.order
    if not (1 <= r < n and 1 <= s < n):
        return False
    try:
        w = pow(s, -1, n)
    except ValueError:
        return False
    e = _digest_int(msg, n)
    X = _add(scalar_mul(e * w % n, params.g, params), scalar_mul(r * w % n, pub, params), params)
    if X is INFINITY:
        return False
    return X[0] % n == r
