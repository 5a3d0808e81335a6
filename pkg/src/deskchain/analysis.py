"""Security arithmetic for proof-of-work chains.

Block-creation efficiency, the honest-majority inequality and the largest
safe per-round mining probability, the selfish-mining unfairness bound, and
the double-spend race: a negative-binomial count of attacker blocks followed
by a gambler's-ruin catch-up.
"""

import math
from dataclasses import dataclass
from fractions import Fraction

HONEST_THRESHOLD = 0.51


class InfeasibleSecurity(ValueError):
    """No mining probability satisfies the margin for this adversary share."""


class Unreachable(ValueError):
    pass


@dataclass(frozen=True)
class SecurityParams:
    n: int = 100
    p: float = 1e-3
    q: float = 0.25
    epsilon: float = 0.1
    delta: float = 2
    honest_threshold: float = HONEST_THRESHOLD
    m: int = 256

    def __post_init__(self):
        if not 0 <= self.q < 1:
            raise ValueError("q must lie in [0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if not 0 < self.p <= 1:
            raise ValueError("p must lie in (0, 1]")
        if self.delta < 0 or self.n < 1:
            raise ValueError("delta must be >= 0 and n >= 1")

    @property
    def target(self) -> int:
        """TARGET = p * 2^m."""
        return int(Fraction(self.p) * 2 ** self.m)


def _honest_success(p: float, n: int, honest_threshold: float) -> float:
    # probability that at least one honest node finds a block in a round
    return -math.expm1(honest_threshold * n * math.log1p(-p)) if p < 1 else 1.0


def rounds_per_block(p: float, n: int, honest_threshold: float = HONEST_THRESHOLD) -> float:
    """Lambda: expected rounds until some honest node creates a block."""
    return 1.0 / _honest_success(p, n, honest_threshold)


def efficiency(params: SecurityParams) -> float:
    return 1.0 / (1.0 + params.delta * _honest_success(params.p, params.n, params.honest_threshold))


def security_holds(params: SecurityParams) -> bool:
    """(1 - q) E / q > 1 + eps. With q = 0 there is no adversary and it holds."""
    if params.q == 0:
        return True
    return (1 - params.q) * efficiency(params) > params.q * (1 + params.epsilon)


def max_mining_prob(q: float, epsilon: float, delta: float, n: int,
                    honest_threshold: float = HONEST_THRESHOLD) -> float:
    """Largest p for which the honest-majority margin still holds."""
    if q == 0:
        return 1.0
    ratio = (1 - q) / (q * (1 + epsilon))
    if ratio <= 1:
        raise InfeasibleSecurity(f"(1-q) <= q(1+eps) for q={q}, eps={epsilon}")
    if delta == 0:
        return 1.0
    base = 1 - (ratio - 1) / delta
    if base <= 0:
        return 1.0
    return -math.expm1(math.log(base) / (honest_threshold * n))


def unfairness_bound(q: float) -> float:
    """Upper bound on the honest block share when a selfish pool holds q."""
    if not 0 <= q < 0.5:
        raise ValueError("q must lie in [0, 0.5)")
    return (1 - 2 * q) / (1 - q)


# --- double-spend race --------------------------------------------------

def nb_pmf(i: int, k: int, p: float) -> float:
    """P(X = i) for X ~ NB(k, p): attacker blocks while honest miners find k."""
    if i < 0 or k < 1 or not 0 <= p <= 1:
        raise ValueError("need i >= 0, k >= 1, 0 <= p <= 1")
    q = 1 - p
    if p == 0:
        return 0.0
    if q == 0:
        return 1.0 if i == 0 else 0.0
    log = math.lgamma(i + k) - math.lgamma(i + 1) - math.lgamma(k) + i * math.log(q) + k * math.log(p)
    return math.exp(log)


def finality_prob_sum(k: int, q: float) -> float:
    """Attacker success after k confirmations, via the closed finite sum.

    The terms alternate in size and cancel heavily for large k, so the sum is
    evaluated in exact rational arithmetic over the binary value of q.
    """
    if k < 0 or not 0 <= q <= 1:
        raise ValueError("need k >= 0 and 0 <= q <= 1")
    if k == 0 or q >= 0.5:
        return 1.0
    qf = Fraction(q)
    pf = 1 - qf
    total = Fraction(0)
    for i in range(k + 1):
        total += math.comb(i + k - 1, i) * (qf ** i * pf ** k - qf ** k * pf ** i)
    return float(1 - total)


def _betacf(a: float, b: float, x: float, eps: float = 1e-16, max_iter: int = 10_000) -> float:
    # modified Lentz evaluation of the incomplete-beta continued fraction
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1, a - 1
    c = 1.0
    d = 1 - qab * x / qap
    d = 1 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1 + aa * d
        d = 1 / (d if abs(d) > tiny else tiny)
        c = 1 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1 + aa * d
        d = 1 / (d if abs(d) > tiny else tiny)
        c = 1 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1) < eps:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def reg_inc_beta(x: float, a: float, b: float) -> float:
    """Regularised incomplete beta I_x(a, b)."""
    if not 0 <= x <= 1:
        raise ValueError("x must lie in [0, 1]")
    if x == 0 or x == 1:
        return float(x)
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    if x < (a + 1) / (a + b + 2):
        return front * _betacf(a, b, x) / a
    return 1 - front * _betacf(b, a, 1 - x) / b


def finality_prob_beta(k: int, q: float) -> float:
    """Same probability as finality_prob_sum, as I_{4pq}(k, 1/2) (for q <= 1/2)."""
    if k == 0:
        return finality_prob_sum(0, q)
    if k < 0 or not 0 <= q <= 1:
        raise ValueError("need k >= 0 and 0 <= q <= 1")
    if q >= 0.5:
        return 1.0
    return reg_inc_beta(4 * q * (1 - q), k, 0.5)


def confirmations_needed(q: float, risk_tolerance: float, k_max: int = 10_000) -> int:
    if q >= 0.5:
        raise Unreachable("an attacker with q >= 0.5 always catches up")
    for k in range(k_max + 1):
        if finality_prob_sum(k, q) <= risk_tolerance:
            return k
    raise Unreachable(f"tolerance {risk_tolerance} not met within {k_max} confirmations")


def finality_table(ks, qs):
    """Rows of (k, q, P(k)) for CSV/JSON output."""
    return [{"k": k, "q": q, "p_success": finality_prob_sum(k, q)} for k in ks for q in qs]
