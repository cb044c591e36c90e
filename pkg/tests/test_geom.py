import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rwre.errors import DegenerateLadder, InfeasibleConstants, NotOnLayer
from rwre.geom import (BlockSpec, Constants, Site, block_contains, boundary_classify, build_ladder, choose_constants,
                       classes_disjoint, constant_inequalities, lattice_cover, middle_third_contains,
                       sublattice_decomposition)
from rwre.scales import scale_R

B3 = BlockSpec((0, 0), 3, None, None)


def test_block_membership_small():
    assert block_contains(B3, (8, 2)) and not block_contains(B3, (9, 0))
    assert block_contains(B3, (0, 0)) and middle_third_contains(B3, (0, 0))
    assert boundary_classify(B3, (9, 0)) is Site.FRONT
    assert boundary_classify(B3, (0, 3)) is Site.BOUNDARY
    assert boundary_classify(B3, (0, 0)) is Site.INTERIOR


def test_tilted_axis_point():
    blk = BlockSpec((0, 0), 5, (2 / math.sqrt(5), 1 / math.sqrt(5)), None)
    assert block_contains(blk, (2, 1))


@given(st.integers(-30, 30), st.integers(-30, 30))
def test_classification_consistent_with_membership(x, y):
    blk = BlockSpec((0, 0), 4, None, 6.0)
    c = boundary_classify(blk, (x, y))
    inside = block_contains(blk, (x, y))
    if c is Site.INTERIOR:
        assert inside
    if c in (Site.FRONT, Site.BOUNDARY):
        assert not inside
        nbrs = [(x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)]
        assert any(block_contains(blk, n) for n in nbrs)
    if c is Site.FRONT:
        assert x == 16


def test_lattice_cover_examples():
    assert lattice_cover((0, 0), 3).tolist() == [0, 0]
    assert lattice_cover((9, 2), 3).tolist() == [9, 2]
    with pytest.raises(NotOnLayer):
        lattice_cover((4, 0), 3)


@given(st.integers(-5, 5), st.integers(-10**4, 10**4), st.sampled_from([3, 5, 10, 20]))
def test_cover_lands_in_middle_third(layer, y, N):
    x = (layer * N * N, y)
    z = lattice_cover(x, N)
    assert middle_third_contains(BlockSpec(tuple(z), N, None, None), x)


def test_sublattice_classes():
    assert len(sublattice_decomposition(10, 2)) == 81
    assert classes_disjoint(3, 2)
    assert classes_disjoint(10, 2, width=50.0)
    # the spacing floor at N=10 (width 10, spacing 2) makes transverse neighbours overlap
    assert not classes_disjoint(10, 2)
    blk = BlockSpec((0, 0), 10, None, None)
    assert not blk.moved((900, 0)).contains(blk.interior_sites()).any()


def test_constants_and_ladder():
    c = choose_constants(4.9, 5, 0.5)
    assert c.epsilon == pytest.approx(0.005)
    assert all(constant_inequalities(c, 4.9, 5, 0.5).values())
    r = choose_constants(1.0, 2, 1.0, mode="relaxed", psi=0.25, chi=0.2, epsilon=0.1)
    assert (r.psi, r.chi, r.relaxed) == (0.25, 0.2, True)
    with pytest.raises(InfeasibleConstants):
        choose_constants(5.0, 5, 0.5)
    lad = build_ladder(10**4, Constants(0.1, 0.25, 0.2, True), 2)
    assert lad.sizes == (10, 70)
    with pytest.raises(DegenerateLadder):
        build_ladder(10, Constants(0.1, 0.9, 0.2, True), 2)


@given(st.integers(100, 10**7), st.floats(0.15, 0.3), st.floats(0.05, 0.2))
def test_ladder_monotone(L, psi, chi):
    try:
        lad = build_ladder(L, Constants(0.1, psi, chi, True), 2)
    except DegenerateLadder:
        return
    s = lad.sizes
    assert all(a < b for a, b in zip(s, s[1:]))
    assert s[-1] ** 2 < 2 * L


def test_scale_R_values():
    assert scale_R(0, 10**6) == 13
    assert scale_R(1, 10**6) == 987
    assert scale_R(5, 3) == 1


@given(st.integers(3, 10**12))
def test_R0_is_floor_log(N):
    assert scale_R(0, N) == math.floor(math.log(N))
