import math

import numpy as np
import pytest

from rwre.env import Environment, EnvironmentLaw
from rwre.experiments import (gambler_backtrack, return_probability, return_probability_exact, slowdown_direct,
                              tgamma_test, trap_ledger_fit)


def test_gambler_backtrack_closed_form():
    assert gambler_backtrack(0.6, 5) == pytest.approx(0.1163636, abs=1e-6)
    q = 0.4 / 0.6
    assert gambler_backtrack(0.6, 5) == pytest.approx(1 - (1 - q**5) / (1 - q**10))


def test_tgamma_biased_walk_matches_exact():
    rep = tgamma_test(EnvironmentLaw.fixed([0.6, 0.4]), [1], [2, 3], 40000, seed=4)
    for pe, pm in zip(rep.exact, rep.probs):
        assert abs(pm - pe) <= 4 * math.sqrt(pe * (1 - pe) / 40000)


def test_srw_is_not_ballistic():
    rep = tgamma_test(EnvironmentLaw.srw(2), [1, 0], [1, 2, 4], 4000, seed=1)
    assert not rep.ballistic


def test_deterministic_right_slowdown_is_certain():
    law = EnvironmentLaw.fixed([1.0, 0.0, 0.0, 0.0], eta=0.0)
    rep = slowdown_direct(law, [1.0, 0.0], 0.1, 50, 200, seed=0)
    assert rep.estimate == 1.0


def test_trap_ledger_fit_quality():
    fit = trap_ledger_fit(0.1, 2, range(3, 9))
    assert fit["r2"] > 0.99 and fit["c"] < 0


def test_return_probability_against_exact():
    env = Environment(EnvironmentLaw.fixed([0.4, 0.1, 0.25, 0.25]), 0)
    exact = return_probability_exact(env, (0, 0), 3)
    rep = return_probability(env, (0, 0), 3, 20000, seed=2)
    assert abs(rep.estimate - exact) <= 4 * math.sqrt(exact * (1 - exact) / 20000)
