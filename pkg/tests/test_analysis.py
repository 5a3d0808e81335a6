import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from deskchain.analysis import (
    InfeasibleSecurity,
    SecurityParams,
    Unreachable,
    confirmations_needed,
    efficiency,
    finality_prob_beta,
    finality_prob_sum,
    finality_table,
    max_mining_prob,
    nb_pmf,
    reg_inc_beta,
    rounds_per_block,
    security_holds,
    unfairness_bound,
)

# frozen from scipy.special.betainc(k, 0.5, 4q(1-q))
ORACLE = [
    (1, 0.1, 0.2),
    (3, 0.25, 0.20703125),
    (6, 0.1, 0.00059141216),
    (10, 0.3, 0.06510671376260191),
    (24, 0.45, 0.4895925517611792),
]


@pytest.mark.parametrize("k,q,expected", ORACLE)
@pytest.mark.parametrize("fn", [finality_prob_sum, finality_prob_beta], ids=["sum", "beta"])
def test_finality_against_oracle(fn, k, q, expected):
    assert fn(k, q) == pytest.approx(expected, rel=1e-10, abs=1e-15)


def test_finality_edges():
    assert finality_prob_sum(0, 0.2) == 1.0
    assert finality_prob_sum(5, 0.0) == 0.0
    assert finality_prob_sum(5, 0.6) == finality_prob_beta(5, 0.6) == 1.0
    with pytest.raises(ValueError):
        finality_prob_sum(-1, 0.1)


@given(st.integers(1, 40), st.floats(0.01, 0.49))
def test_finality_decreases_with_depth(k, q):
    assert finality_prob_sum(k + 1, q) <= finality_prob_sum(k, q) + 1e-12


def test_scipy_cross_check():
    scipy_special = pytest.importorskip("scipy.special")
    for x, a, b in [(0.3, 2, 0.5), (0.9, 7, 0.5), (0.05, 1, 3)]:
        assert reg_inc_beta(x, a, b) == pytest.approx(float(scipy_special.betainc(a, b, x)), rel=1e-12)


def test_nb_pmf_sums_to_one():
    total = sum(nb_pmf(i, 4, 0.7) for i in range(400))
    assert total == pytest.approx(1.0, abs=1e-12)


# k values checked against scipy betainc
@pytest.mark.parametrize("q,tol,k", [(0.1, 1e-3, 6), (0.3, 1e-3, 32)])
def test_confirmations_needed(q, tol, k):
    assert confirmations_needed(q, tol) == k


def test_confirmations_unreachable():
    with pytest.raises(Unreachable):
        confirmations_needed(0.5, 0.01)


def test_unfairness_bound():
    assert unfairness_bound(0.49) == pytest.approx(0.0392157, abs=1e-7)
    assert unfairness_bound(0.0) == 1.0
    with pytest.raises(ValueError):
        unfairness_bound(0.5)


def test_efficiency_and_rounds():
    p = SecurityParams(n=100, p=1e-3, delta=0)
    assert efficiency(p) == 1.0
    lam = rounds_per_block(1e-3, 100)
    assert lam == pytest.approx(1 / (1 - (1 - 1e-3) ** 51), rel=1e-12)
    assert efficiency(SecurityParams(n=100, p=1e-3, delta=5)) == pytest.approx(1 / (1 + 5 / lam))


def test_no_adversary_always_secure():
    assert security_holds(SecurityParams(q=0.0))
    assert max_mining_prob(0.0, 0.1, 10, 100) == 1.0


def test_infeasible_share():
    with pytest.raises(InfeasibleSecurity):
        max_mining_prob(0.49, 0.1, 10, 100)


@given(st.floats(0.05, 0.3), st.floats(0.05, 0.5), st.floats(1, 200))
def test_bound_is_tight(q, eps, delta):
    p_max = max_mining_prob(q, eps, delta, 100)
    if p_max >= 1:
        return
    below = SecurityParams(n=100, p=p_max * (1 - 1e-6), q=q, epsilon=eps, delta=delta)
    above = SecurityParams(n=100, p=min(1.0, p_max * (1 + 1e-6)), q=q, epsilon=eps, delta=delta)
    assert security_holds(below) and not security_holds(above)


def test_target_scales_with_p():
    assert SecurityParams(p=0.5).target == 2 ** 255


def test_table_rows():
    rows = finality_table([1, 2], [0.1])
    assert [r["k"] for r in rows] == [1, 2]
    assert math.isclose(rows[1]["p_success"], 0.056)
