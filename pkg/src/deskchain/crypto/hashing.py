import hashlib

import base58
from Crypto.Hash import RIPEMD160

VERSION_BYTE = b"\x00"


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def sha256d(data: bytes) -> bytes:
    """SHA256 applied twice; the digest used for block ids, txids and Merkle nodes."""
    return hashlib.sha256(hashlib.sha256(data).digest()).digest()


def ripemd160(data: bytes) -> bytes:
    return RIPEMD160.new(data).digest()


def hash160(data: bytes) -> bytes:
    return ripemd160(sha256(data))


def b58check_encode(payload: bytes, version: bytes = VERSION_BYTE) -> str:
    return base58.b58encode_check(version + payload).decode("ascii")


def b58check_decode(encoded: str, version: bytes = VERSION_BYTE) -> bytes:
    """Return the payload; raises ValueError on a bad checksum or version."""
    raw = base58.b58decode_check(encoded)
    if raw[:len(version)] != version:
        raise ValueError(f"unexpected version byte {raw[:1].hex()}")
    return raw[len(version):]
