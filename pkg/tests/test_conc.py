import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rwre.conc import azuma_bound, martingale_fixtures, martingale_tail_audit, taylor_check, zero_martingale
from rwre.errors import HypothesisViolated


def test_azuma_values():
    assert azuma_bound(100, 30) == pytest.approx(2 * math.exp(-4.5))
    assert azuma_bound(100, 30) == pytest.approx(0.02222, abs=1e-5)
    assert azuma_bound(5, 0) == 2.0


@given(st.floats(0.1, 1e4), st.floats(0, 100))
def test_azuma_monotone_in_variance(U, K):
    assert azuma_bound(2 * U, K) >= azuma_bound(U, K)


def test_heterogeneous_fixture_variance():
    assert martingale_fixtures(100)["heterogeneous"].essential_variance == sum(k * k for k in range(1, 101))


def test_fair_tail_well_below_bound():
    audit = martingale_tail_audit(martingale_fixtures(100)["fair"], [30], 20000, 1)
    assert audit.passed
    assert audit.rows[0].statistic < 0.01


def test_zero_martingale_has_no_tail():
    audit = martingale_tail_audit(zero_martingale(100), [5, 10], 1000, 1)
    assert all(r.statistic == 0 for r in audit.rows)


def test_taylor_linear_pair():
    mu = {(0, 0): 1.0, (1, 0): -1.0}
    assert taylor_check(mu, lambda x: 2.0 * x[0] + x[1], m=2.0, k=0.0, L=1.0, J=1.0, rho=(0, 0))


def test_taylor_quadratic_against_direct_sum():
    mu = {(1, 0): 0.5, (-1, 0): 0.5, (0, 0): -1.0}
    f = lambda x: float(np.dot(x, x))
    direct = sum(w * f(np.array(x)) for x, w in mu.items())
    m, k, L, J = 5.0, 2.0, 0.0, 1.0
    assert taylor_check(mu, f, m, k, L, J, (0, 0))
    assert abs(direct) <= L * m + J * k / 2


def test_taylor_rejects_unbalanced_measure():
    with pytest.raises(HypothesisViolated):
        taylor_check({(0,): 1.0}, lambda x: 0.0, 1.0, 1.0, 1.0, 1.0, (0,))


def test_taylor_zero_measure():
    assert taylor_check({}, lambda x: 1.0, 0.0, 0.0, 0.0, 0.0, (0,))
