import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rwre.env import Environment, EnvironmentLaw, plant_naive_trap
from rwre.errors import EmptyFront, InfeasibleCoupling
from rwre.exitstats import (LatticeDist, Region, adversarial_summand, aligned, audit_certificate, check_closeness,
                            classify_block, companion_sampler, convolution_power, cube_discrepancy_bound,
                            derivative_profile, estimate_exit, grid_differences, exact_exit, exit_distribution, fourier_power,
                            llt_bounds, sum_ladder_check)
from rwre.geom import BlockSpec

RIGHT = EnvironmentLaw.fixed([1.0, 0.0, 0.0, 0.0], eta=0.0)
SRW1 = LatticeDist(np.array([[1], [-1]]), np.array([0.5, 0.5]))
SRW2 = LatticeDist(np.array([[1, 0], [-1, 0], [0, 1], [0, -1]]), np.full(4, 0.25))


def _binomial2(m=8):
    g = np.stack(np.meshgrid(np.arange(m + 1), np.arange(m + 1), indexing="ij"), -1).reshape(-1, 2)
    b = np.array([math.comb(m, i) for i in range(m + 1)], float)
    return LatticeDist(g, np.outer(b, b).ravel() / b.sum() ** 2)


def test_gambler_ruin_exact():
    law = exact_exit(Environment(EnvironmentLaw.srw(1), 0), Region.from_box([1], [4]), [2])
    got = dict(zip(law.dist.sites[:, 0].tolist(), law.dist.probs.tolist()))
    assert got[0] == pytest.approx(0.6, abs=1e-12)
    assert got[5] == pytest.approx(0.4, abs=1e-12)


def test_deterministic_right_unit_front_mass():
    ex = exit_distribution(Environment(RIGHT, 0), Region.from_box([-3, -3], [3, 3]), [0, 0])
    assert ex.dist.sites[ex.dist.probs > 0].tolist() == [[4, 0]]
    assert ex.dist.probs.max() == pytest.approx(1.0)
    blk = BlockSpec((0, 0), 3, None, 6.0)
    ex = exit_distribution(Environment(RIGHT, 0), Region.from_block(blk), [0, 0])
    assert ex.front_mass == pytest.approx(1.0)


@given(st.integers(0, 2**32))
def test_exact_exit_mass_sums_to_one(seed):
    law = EnvironmentLaw.mixture([[0.4, 0.1, 0.25, 0.25], [0.1, 0.4, 0.25, 0.25]], [0.5, 0.5])
    ex = exact_exit(Environment(law, seed), Region.from_box([-3, -3], [3, 3]), [0, 0])
    assert abs(ex.dist.probs.sum() - 1) < 1e-10
    assert ex.dist.probs.min() >= 0


def test_srw_histogram_symmetric():
    h = estimate_exit(EnvironmentLaw.srw(2), Region.from_box([-3, -3], [3, 3]), [0, 0], 40000, 2)
    d = dict(zip(map(tuple, h.sites.tolist()), h.counts.tolist()))
    n = h.total
    for (x, y), c in d.items():
        for img in [(-x, y), (x, -y), (y, x)]:
            c2 = d.get(img, 0)
            # difference of two counts of one multinomial, each p ~ c/n
            p = (c + c2) / (2 * n)
            assert abs(c - c2) <= 4 * math.sqrt(2 * n * p) + 1


def test_llt_closed_form_and_agreement():
    p10 = fourier_power(SRW1, 10)
    assert p10.prob([0]) == pytest.approx(252 / 1024, abs=1e-10)
    assert llt_bounds(SRW1, 1).exact[0] == pytest.approx(0.5)
    for step, n in [(SRW1, 64), (SRW2, 32)]:
        _, a, b = aligned(fourier_power(step, n), convolution_power(step, n))
        assert np.abs(a - b).max() < 1e-10


def test_derivative_profile_trivial_cases():
    unit = LatticeDist(np.array([[5, 0]]), np.array([1.0]))
    prof = derivative_profile(unit)
    assert prof.sup_mass == 1.0 and prof.max_first_diff == 1.0
    assert grid_differences(np.full((6, 6), 0.1))[1:] == (0.0, 0.0, 0.0)
    with pytest.raises(EmptyFront):
        derivative_profile(LatticeDist(np.zeros((0, 2), dtype=np.int64), np.zeros(0)))


def test_identity_coupling():
    mu = _binomial2()
    cert = check_closeness(mu, mu, 0.0, 0.0)
    assert cert.ok and cert.lambda_measured == pytest.approx(0.0, abs=1e-12) and cert.displacement == 0


def test_shift_coupling_within_two():
    mu = _binomial2()
    cert = check_closeness(mu.shift([1, 0]), mu, 0.5, 2)
    assert cert.ok and cert.displacement <= 2


def test_wide_variance_refused_on_clause_five():
    base = _binomial2(4)
    wide = LatticeDist(base.sites * 3 - 8, base.probs)
    res = check_closeness(wide, base, 0.01, 6)
    assert not res.ok and 5 in res.violated


def test_large_mean_shift_is_refused():
    mu = _binomial2(4)
    res = check_closeness(mu.shift([10, 0]), mu, 0.5, 1)
    assert not res.ok and 3 in res.violated


@given(st.integers(0, 2**32), st.sampled_from([0.05, 0.2, 0.5]), st.sampled_from([1, 2, 4]),
       st.integers(-1, 1), st.integers(-1, 1))
def test_issued_certificates_survive_independent_audit(seed, lam, K, sx, sy):
    rng = np.random.default_rng(seed)
    mu2 = _binomial2(6)
    mu1 = LatticeDist(mu2.sites + [sx, sy], mu2.probs * rng.uniform(0.7, 1.3, mu2.size)).normalized()
    try:
        cert = check_closeness(mu1, mu2, lam, K)
    except InfeasibleCoupling:
        return
    if not cert.ok:
        return
    a = audit_certificate(cert)
    assert a["displacement"] == cert.displacement
    assert abs(a["mean_gap"] - cert.mean_gap) <= 1e-9
    assert a["clause2"] and a["clause3"] and a["clause4"] and a["clause5"]


def test_companion_sampler_displacement():
    mu = _binomial2()
    same = companion_sampler(mu, mu, 0.0)
    rng = np.random.default_rng(0)
    x, z = same.sample(2000, rng)
    assert np.array_equal(x, z)
    shifted = companion_sampler(mu.shift([1, 0]), mu, 0.5)
    x, z = shifted.sample(20000, rng)
    assert np.abs(z - x).max() <= shifted.K <= 2


def test_sum_ladder_trivial_and_adversarial():
    base = _binomial2(6)
    rep = sum_ladder_check(base, base, 1, 0.2, 1, 10)
    assert rep.passed
    adv = adversarial_summand(base, 0.2, 1)
    assert check_closeness(adv, base, 0.2, 1).ok
    target = base.convolve(base)
    assert sum_ladder_check(base, target, 2, 0.2, 1, 10, summands=[base, adv]).passed


def test_classify_block_examples():
    blk = BlockSpec((0, 0), 5, None, 10.0)
    right = Environment(RIGHT, 0)
    assert classify_block(right, blk, 1.0, 200, 0).good
    law = EnvironmentLaw.fixed([0.4, 0.1, 0.25, 0.25], eta=0.05)
    trapped = plant_naive_trap(Environment(law, 0), (0, 0), 6)
    v = classify_block(trapped, blk, 1.0, 200, 0, step_budget=2000)
    assert not v.good and "exit" in v.reasons
    assert cube_discrepancy_bound(100, 0.5, 5) == pytest.approx(100 ** (-7 / 3), rel=1e-12)
