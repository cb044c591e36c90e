import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rwre.env import (Environment, EnvironmentLaw, Nestling, classify_nestling, kernel_at, local_drift,
                      plant_naive_trap, trap_log_probability)
from rwre.errors import InvalidRadius, UnsupportedLaw

MIX = EnvironmentLaw.mixture([[0.4, 0.1, 0.25, 0.25], [0.1, 0.4, 0.25, 0.25]], [0.3, 0.7])
FLAT = EnvironmentLaw.fixed([0.25] * 4, eta=0.05)
sites = st.tuples(st.integers(-10**6, 10**6), st.integers(-10**6, 10**6))


def test_srw_and_fixed_kernels():
    assert np.allclose(kernel_at(Environment(EnvironmentLaw.srw(2), 3), (5, -2)).as_array(), 0.25)
    k = (0.4, 0.1, 0.25, 0.25)
    assert np.allclose(kernel_at(Environment(EnvironmentLaw.fixed(k), 3), (0, 9)).as_array(), k)


def test_local_drift_examples():
    assert np.allclose(local_drift([0.25] * 4), [0, 0])
    assert np.allclose(local_drift([0.4, 0.1, 0.25, 0.25]), [0.3, 0])
    assert np.allclose(local_drift([1, 0, 0, 0]), [1, 0])


def test_nestling_classes():
    a, b = 0.3, 0.1
    plain = EnvironmentLaw.mixture([[0.25 + a / 2, 0.25 - a / 2, 0.25, 0.25], [0.25 - a / 2, 0.25 + a / 2, 0.25, 0.25],
                                    [0.25, 0.25, 0.25 + a / 2, 0.25 - a / 2], [0.25, 0.25, 0.25 - a / 2, 0.25 + a / 2]],
                                   [0.25] * 4)
    marginal = EnvironmentLaw.mixture([[0.25 + a / 2, 0.25 - a / 2, 0.25, 0.25],
                                       [0.25, 0.25, 0.25 + a / 2, 0.25 - a / 2],
                                       [0.25, 0.25, 0.25 - a / 2, 0.25 + a / 2]], [0.4, 0.3, 0.3])
    assert classify_nestling(plain) is Nestling.PLAIN
    assert classify_nestling(marginal) is Nestling.MARGINAL
    assert classify_nestling(EnvironmentLaw.fixed([0.25 + a / 2, 0.25 - a / 2, 0.25, 0.25])) is Nestling.NON
    with pytest.raises(UnsupportedLaw):
        classify_nestling(EnvironmentLaw.dirichlet([0.25] * 4, 50.0, b / 10))


def test_mixture_frequency_within_three_sigma():
    env = Environment(MIX, 11)
    xs = np.arange(10**6)
    k = env.kernels_at(np.stack([xs, -xs], axis=1))
    freq = float(np.mean(k[:, 0] == 0.4))
    assert abs(freq - 0.3) <= 3 * math.sqrt(0.3 * 0.7 / 10**6)


@given(st.lists(sites, min_size=1, max_size=20), st.integers(0, 2**63))
def test_kernel_is_pure_function_of_seed_and_site(pts, seed):
    env = Environment(MIX, seed)
    a = env.kernels_at(np.array(pts))
    b = env.kernels_at(np.array(pts))
    assert np.array_equal(a, b)
    assert np.allclose(a.sum(axis=1), 1.0)
    assert a.min() >= MIX.eta - 1e-15


@given(st.lists(sites, min_size=1, max_size=20), st.integers(0, 2**32))
def test_dirichlet_draws_respect_ellipticity_and_hull(pts, seed):
    law = EnvironmentLaw.dirichlet([0.4, 0.1, 0.25, 0.25], 20.0, 0.02)
    k = Environment(law, seed).kernels_at(np.array(pts))
    assert k.min() >= 0.02 - 1e-15
    assert np.allclose(k.sum(axis=1), 1.0)


def test_planted_trap_geometry():
    env = plant_naive_trap(Environment(FLAT, 0), (0, 0), 1)
    assert len(env.overlay.items) == 9
    assert np.allclose(kernel_at(env, (0, 0)).as_array(), [0.05, 0.85, 0.05, 0.05])
    big = plant_naive_trap(Environment(FLAT, 0), (10, 10), 4)
    assert local_drift(kernel_at(big, (13, 11)).as_array())[0] < 0
    assert np.allclose(kernel_at(big, (30, 30)).as_array(), 0.25)
    with pytest.raises(InvalidRadius):
        plant_naive_trap(env, (0, 0), 0)


@given(st.integers(-4, 4), st.integers(-4, 4))
def test_trap_drift_points_inward(dx, dy):
    env = plant_naive_trap(Environment(FLAT, 0), (0, 0), 4)
    drift = local_drift(kernel_at(env, (dx, dy)).as_array())
    if (dx, dy) != (0, 0):
        assert float(np.dot(drift, [dx, dy])) < 0


def test_trap_log_probability_radius_five():
    assert trap_log_probability(0.1, 2, 5) == pytest.approx(121 * math.log(0.1))
    assert trap_log_probability(0.1, 2, 5) == pytest.approx(-278.6128, abs=1e-4)
