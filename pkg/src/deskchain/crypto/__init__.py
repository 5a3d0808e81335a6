"""Hashing, addresses, curve arithmetic, signatures, commitments, Merkle trees."""

from .commitment import Commitment, brute_force_opening, coin_toss, commit, new_nonce, verify_commit
from .curve import (
    INFINITY,
    PROFILES,
    SECP256K1,
    TOY17,
    TOY10007,
    TOY10477,
    CurveError,
    CurveParams,
    decode_point,
    encode_point,
    enumerate_points,
    get_curve,
    negate,
    point_add,
    scalar_mul,
)
from .hashing import b58check_decode, b58check_encode, hash160, ripemd160, sha256, sha256d
from .keys import Address, KeyPair, Signature, derive_address, keygen, sign, verify
from .merkle import LEFT, RIGHT, MerkleError, merkle_levels, merkle_prove, merkle_root, merkle_verify
