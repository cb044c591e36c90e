import math

import numpy as np
from hypothesis import given, strategies as st

from rwre.env import Environment, EnvironmentLaw
from rwre.walk import (StopCause, StopRule, Trajectory, first_hit_time, kth_return_time, run_annealed,
                       run_quenched, sample_exits)

RIGHT = EnvironmentLaw.fixed([1.0, 0.0, 0.0, 0.0], eta=0.0)


def test_deterministic_right_hits_level_five():
    traj, cause = run_quenched(Environment(RIGHT, 0), (0, 0), StopRule.halfspace([1, 0], 5), 1)
    assert cause is StopCause.stopped
    assert traj.positions[:, 0].tolist() == [0, 1, 2, 3, 4, 5]


def test_zero_budget_returns_start():
    traj, _ = run_annealed(EnvironmentLaw.srw(2), (3, 4), StopRule.step_budget(0), 9)
    assert traj.positions.tolist() == [[3, 4]]


def test_gambler_ruin_srw():
    res = sample_exits(EnvironmentLaw.srw(1), [2], StopRule.sites([[0], [5]]), 3, 10**5)
    p = float(np.mean(res.ends[:, 0] == 5))
    assert abs(p - 0.4) <= 3 * math.sqrt(0.24 / 10**5)


def test_annealed_mean_displacement_is_linear_in_mean_drift():
    law = EnvironmentLaw.mixture([[0.4, 0.1, 0.25, 0.25], [0.2, 0.3, 0.25, 0.25]], [0.5, 0.5])
    n, reps = 1, 40000
    res = sample_exits(law, (0, 0), StopRule.step_budget(n), 5, reps)
    mean = res.ends[:, 0].mean()
    se = res.ends[:, 0].std() / math.sqrt(reps)
    assert abs(mean - n * law.mean_drift()[0]) <= 3 * se


@given(st.integers(0, 2**32), st.integers(1, 300))
def test_paths_are_nearest_neighbour(seed, n):
    traj, _ = run_annealed(EnvironmentLaw.srw(2), (0, 0), StopRule.step_budget(n), seed)
    assert traj.is_nearest_neighbor
    assert traj.length == n


def test_first_hit_examples():
    t = Trajectory.from_positions(np.array([[0], [1], [2], [1]]))
    assert first_hit_time(t, StopRule.halfspace([1], 2)) == 2
    assert first_hit_time(t, StopRule.sites([[7]])) is None


def test_kth_return_examples():
    t = Trajectory.from_positions(np.array([[0], [1], [0], [1], [0]]))
    assert kth_return_time(t, [0], 2) == 4
    assert kth_return_time(t, [0], 3) is None


@given(st.integers(0, 2**32), st.integers(1, 4), st.integers(-3, 3))
def test_hit_times_match_linear_scan(seed, k, site):
    traj, _ = run_annealed(EnvironmentLaw.srw(1), [0], StopRule.step_budget(200), seed)
    xs = traj.positions[:, 0]
    hit = next((i for i, x in enumerate(xs) if x >= 3), None)
    assert first_hit_time(traj, StopRule.halfspace([1], 3)) == hit
    visits = [i for i in range(1, xs.size) if xs[i] == site]
    assert kth_return_time(traj, [site], k) == (visits[k - 1] if len(visits) >= k else None)
