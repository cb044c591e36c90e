import numpy as np
import pytest
from hypothesis import given, strategies as st

from rwre.errors import InsufficientData
from rwre.regen import (RegenerationRecord, brute_regeneration_times, detect_regenerations, event_A_N,
                        regeneration_candidates, summarize)
from rwre.walk import Trajectory

steps = st.lists(st.sampled_from([-1, 1]), min_size=1, max_size=80)


def _path(moves):
    return np.concatenate([[0], np.cumsum(moves)]).astype(np.int64)


@given(steps)
def test_fast_detector_matches_quadratic_oracle(moves):
    proj = _path(moves)
    fast, margins = regeneration_candidates(proj)
    assert np.array_equal(fast, brute_regeneration_times(proj))
    assert np.all(margins >= 0)


def test_monotone_path():
    recs = detect_regenerations(Trajectory.from_positions(np.arange(5)[:, None]), [1.0])
    assert [r.tau for r in recs] == [0, 1, 2, 3]
    assert [r.tau for r in recs if r.certified_margin > 0] == [0, 1, 2]


def test_single_regeneration_after_backtrack():
    assert brute_regeneration_times([0, 1, 0, 1, 2, 3]).tolist() == [4]
    assert regeneration_candidates(np.array([0, 1, 0, 1, 2, 3]))[0].tolist() == [4]


def test_summary_of_deterministic_slabs():
    recs = [RegenerationRecord(2 * i, (2 * i, 0), 2, (2, 0), 1, 5.0) for i in range(6)]
    s = summarize(recs)
    assert np.allclose(s.velocity, [1, 0])
    with pytest.raises(InsufficientData):
        summarize(recs[:1])


def test_event_A_N():
    rec = [RegenerationRecord(i, (i,), 1, (1,), r, 1.0) for i, r in enumerate((1, 2, 3))]
    assert event_A_N(rec, 3) is False
    assert event_A_N([], 0) is True
    ones = [RegenerationRecord(i, (i,), 1, (1,), 1, 1.0) for i in range(20)]
    assert event_A_N(ones, 20, radius=987) is True
