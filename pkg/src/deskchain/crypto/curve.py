"""Short-Weierstrass curves y^2 = x^3 + ax + b over a prime field.

Points are plain ``(x, y)`` tuples; ``INFINITY`` (``None``) is the identity.
Arithmetic is affine and not constant-time.
"""

from dataclasses import dataclass
from typing import Optional, Tuple

Point = Optional[Tuple[int, int]]
INFINITY: Point = None


class CurveError(ValueError):
    pass


@dataclass(frozen=True)
class CurveParams:
    name: str
    p: int
    a: int
    b: int
    g: Tuple[int, int]
    order: int

    def __post_init__(self):
        if (4 * self.a ** 3 + 27 * self.b ** 2) % self.p == 0:
            raise CurveError(f"{self.name}: singular curve")
        if not self.contains(self.g):
            raise CurveError(f"{self.name}: generator not on curve")

    def contains(self, P: Point) -> bool:
        if P is INFINITY:
            return True
        x, y = P
        if not (0 <= x < self.p and 0 <= y < self.p):
            return False
        return (y * y - (x * x * x + self.a * x + self.b)) % self.p == 0

    @property
    def coord_bytes(self) -> int:
        return (self.p.bit_length() + 7) // 8

    @property
    def scalar_bytes(self) -> int:
        return (self.order.bit_length() + 7) // 8


SECP256K1 = CurveParams(
    name="secp256k1",
    p=2**256 - 2**32 - 2**9 - 2**8 - 2**7 - 2**6 - 2**4 - 1,
    a=0,
    b=7,
    g=(
        0x79BE667EF9DCBBAC55A06295CE870B07029BFCDB2DCE28D959F2815B16F81798,
        0x483ADA7726A3C4655DA4FBFC0E1108A8FD17B448A68554199C47D08FFB10D4B8,
    ),
    order=0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEBAAEDCE6AF48A03BBFD25E8CD0364141,
)

# Small fields for exhaustive checks. Group orders were found by enumeration
# and are re-verified in the test suite.
TOY17 = CurveParams(name="toy17", p=17, a=0, b=7, g=(6, 6), order=18)
TOY10007 = CurveParams(name="toy10007", p=10007, a=0, b=7, g=(5, 566), order=10008)
# y^2 = x^3 + 7 over F_10477 has prime group order, so it supports signatures.
TOY10477 = CurveParams(name="toy10477", p=10477, a=0, b=7, g=(3, 731), order=10639)

PROFILES = {
    "large": SECP256K1,
    "secp256k1": SECP256K1,
    "toy": TOY10477,
    "toy17": TOY17,
    "toy10007": TOY10007,
    "toy10477": TOY10477,
}


def get_curve(name: str) -> CurveParams:
    try:
        return PROFILES[name]
    except KeyError:
        raise CurveError(f"unknown curve profile {name!r}; choose from {sorted(PROFILES)}") from None


def _check(P: Point, params: CurveParams):
    if not params.contains(P):
        raise CurveError(f"point {P} is not on {params.name}")


def negate(P: Point, params: CurveParams) -> Point:
    if P is INFINITY:
        return INFINITY
    return (P[0], (-P[1]) % params.p)


def _add(P: Point, Q: Point, params: CurveParams) -> Point:
    if P is INFINITY:
        return Q
    if Q is INFINITY:
        return P
    p = params.p
    x1, y1 = P
    x2, y2 = Q
    if x1 == x2:
        if (y1 + y2) % p == 0:
            return INFINITY
        # tangent rule
        lam = (3 * x1 * x1 + params.a) * pow(2 * y1, -1, p) % p
    else:
        # chord rule
        lam = (y2 - y1) * pow(x2 - x1, -1, p) % p
    x3 = (lam * lam - x1 - x2) % p
    y3 = (lam * (x1 - x3) - y1) % p
    return (x3, y3)


def point_add(P: Point, Q: Point, params: CurveParams) -> Point:
    _check(P, params)
    _check(Q, params)
    return _add(P, Q, params)


def scalar_mul(m: int, P: Point, params: CurveParams) -> Point:
    """Double-and-add: about log2(m) doublings plus one addition per set bit."""
    if m < 0:
        raise CurveError("scalar must be non-negative")
    _check(P, params)
    result = INFINITY
    addend = P
    while m:
        if m & 1:
            result = _add(result, addend, params)
        addend = _add(addend, addend, params)
        m >>= 1
    return result


def enumerate_points(params: CurveParams) -> list:
    """Every affine point by brute force (toy fields only)."""
    if params.p > 1 << 20:
        raise CurveError("enumeration is only feasible on toy fields")
    p = params.p
    roots: dict = {}
    for y in range(p):
        roots.setdefault(y * y % p, []).append(y)
    return [(x, y) for x in range(p) for y in roots.get((x ** 3 + params.a * x + params.b) % p, [])]


def encode_point(P: Point, params: CurveParams) -> bytes:
    """SEC-style compressed encoding: parity prefix then big-endian x."""
    if P is INFINITY:
        raise CurveError("cannot encode the point at infinity")
    return bytes([2 + (P[1] & 1)]) + P[0].to_bytes(params.coord_bytes, "big")


def decode_point(data: bytes, params: CurveParams) -> Point:
    if len(data) != 1 + params.coord_bytes or data[0] not in (2, 3):
        raise CurveError("bad compressed point encoding")
    p = params.p
    x = int.from_bytes(data[1:], "big")
    rhs = (x ** 3 + params.a * x + params.b) % p
    y = _sqrt_mod(rhs, p)
    if y is None:
        raise CurveError("x is not on the curve")
    if (y & 1) != (data[0] & 1):
        y = (-y) % p
    P = (x, y)
    _check(P, params)
    return P


def _sqrt_mod(n: int, p: int):
    n %= p
    if n == 0:
        return 0
    if pow(n, (p - 1) // 2, p) != 1:
        return None
    if p % 4 == 3:
        return pow(n, (p + 1) // 4, p)
    # Tonelli-Shanks for p = 1 mod 4 (toy fields such as 17)
    q, s = p - 1, 0
    while q % 2 == 0:
        q //= 2
        s += 1
    z = 2
    while pow(z, (p - 1) // 2, p) != p - 1:
        z += 1
    m, c, t, r = s, pow(z, q, p), pow(n, q, p), pow(n, (q + 1) // 2, p)
    while t != 1:
        i, t2 = 0, t
        while t2 != 1:
            t2 = t2 * t2 % p
            i += 1
        b = pow(c, 1 << (m - i - 1), p)
        m, c, t, r = i, b * b % p, t * b * b % p, r * b % p
    return r
