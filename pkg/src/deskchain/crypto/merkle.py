"""Binary Merkle trees with Bitcoin's odd-node rule (the last node of an odd
level is paired with itself). Leaves are hashed before being combined.
"""

from typing import List, Sequence, Tuple

from .hashing import sha256d

LEFT = "L"
RIGHT = "R"

ProofStep = Tuple[bytes, str]


class MerkleError(ValueError):
    pass


def _parent(left: bytes, right: bytes) -> bytes:
    return sha256d(left + right)


def merkle_levels(leaves: Sequence[bytes]) -> List[List[bytes]]:
    if not leaves:
        raise MerkleError("a Merkle tree needs at least one leaf")
    level = [sha256d(bytes(d)) for d in leaves]
    levels = [level]
    while len(level) > 1:
        if len(level) % 2:
            level = level + [level[-1]]
        level = [_parent(level[i], level[i + 1]) for i in range(0, len(level), 2)]
        levels.append(level)
    return levels


def merkle_root(leaves: Sequence[bytes]) -> bytes:
    return merkle_levels(leaves)[-1][0]


def merkle_prove(leaves: Sequence[bytes], index: int) -> List[ProofStep]:
    """Sibling digests bottom-up, each flagged with the side the sibling sits on."""
    if not 0 <= index < len(leaves):
        raise MerkleError(f"leaf index {index} out of range for {len(leaves)} leaves")
    proof = []
    i = index
    for level in merkle_levels(leaves)[:-1]:
        if i % 2:
            proof.append((level[i - 1], LEFT))
        else:
            sibling = level[i + 1] if i + 1 < len(level) else level[i]
            proof.append((sibling, RIGHT))
        i //= 2
    return proof


def merkle_verify(root: bytes, leaf: bytes, index: int, proof: Sequence[ProofStep]) -> bool:
    """Fold the leaf hash through the proof; side flags must agree with index."""
    if index < 0 or index >> len(proof):
        return False
    h = sha256d(bytes(leaf))
    for depth, step in enumerate(proof):
        try:
            sibling, side = step
        except (TypeError, ValueError):
            return False
        expected = LEFT if (index >> depth) & 1 else RIGHT
        if side != expected or len(sibling) != 32:
            return False
        h = _parent(sibling, h) if side == LEFT else _parent(h, sibling)
    return h == root


def encode_proof(proof: Sequence[ProofStep]) -> list:
    return [[s.hex(), side] for s, side in proof]


def decode_proof(items) -> List[ProofStep]:
    return [(bytes.fromhex(s), side) for s, side in items]
