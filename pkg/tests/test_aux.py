import math

import numpy as np
import pytest

from rwre.aux import (AuxConfig, AuxContext, conditioned_front_exit, estimate_w_probability, level_of,
                      likelihood_floor_value, ratio_audit, run_aux, run_aux_many, stop_count_bound)
from rwre.env import Environment, EnvironmentLaw, plant_naive_trap
from rwre.errors import ConditioningTooRare
from rwre.geom import BlockSpec, Constants, build_ladder

RIGHT = EnvironmentLaw.fixed([1.0, 0.0, 0.0, 0.0], eta=0.0)
DRIFT = EnvironmentLaw.fixed([0.85, 0.05, 0.05, 0.05], eta=0.05)
STRIP = {(x, y): (0.45, 0.05, 0.45, 0.05) for x in range(150, 155) for y in range(-40, 41)}


@pytest.fixture(scope="module")
def cfg():
    lad = build_ladder(300, Constants(0.1, 0.4, 0.2, True), 2)
    return AuxConfig(lad, lambda_cap=0.1, classifier_samples=300)


def test_level_of_with_constructed_classifier():
    lad = build_ladder(10**4, Constants(0.1, 0.25, 0.2, True), 2)
    assert level_of((5, 0), lad, lambda b: True) == 0
    assert level_of((4900, 0), lad, lambda b: True) == 2
    assert level_of((4900, 0), lad, lambda b: b.N != 70) == 1


def test_conditioned_exit_accepts_and_refuses():
    blk = BlockSpec((0, 0), 4, None, 8.0)
    _, attempts = conditioned_front_exit(Environment(RIGHT, 0), blk, (0, 0), 1)
    assert attempts == 1
    law = EnvironmentLaw.fixed([0.4, 0.1, 0.25, 0.25], eta=0.05)
    trapped = plant_naive_trap(Environment(law, 0), (0, 0), 8)
    with pytest.raises(ConditioningTooRare):
        conditioned_front_exit(trapped, blk, (0, 0), 1, max_retries=20, budget=500)


def test_deterministic_run_has_trivial_corrections(cfg):
    run = run_aux(Environment(RIGHT, 0), cfg, seed=1)
    assert run.nonzero_betas == {}
    assert run.Q == (0,)
    assert run.n_stops <= run.stop_bound


def test_bad_strip_triggers_one_family(cfg):
    env = Environment(DRIFT, 0).with_overlay(STRIP)
    ctx = AuxContext(env, cfg)
    cap = 300 ** (4 * 0.4)
    for s in range(6):
        run = run_aux(env, cfg, seed=s, ctx=ctx)
        assert set(run.nonzero_betas) - {(1, 1)} <= {(1, 2)}
        assert run.max_beta < cap
        assert ratio_audit(run, ctx).passed


def test_single_injected_bad_block_is_counted(cfg):
    env = Environment(RIGHT, 0).with_overlay({(200, 0): (1.0, 0.0, 0.0, 0.0)})
    ctx = AuxContext(env, cfg)
    ctx._verdict[(1, (200, 0))] = False
    run = run_aux(env, cfg, seed=3, ctx=ctx)
    assert run.Q == (1,)
    assert run.stop_bound == pytest.approx(stop_count_bound(1, 1, 300 ** 0.4))


def test_likelihood_floor_formula():
    assert stop_count_bound(2, 0, 4) == 16
    val, lg = likelihood_floor_value(2, 0, 4, 2, 0.05)
    assert lg == pytest.approx(math.log(0.5) + 64 * math.log(0.05))
    assert val == pytest.approx(0.5 * 0.05**64, rel=1e-12)


def test_run_many_is_worker_independent(cfg):
    env = Environment(DRIFT, 0).with_overlay(STRIP)
    a = run_aux_many(env, cfg, 6, seed=2, workers=1)
    b = run_aux_many(env, cfg, 6, seed=2, workers=2, chunk=3)
    assert [r.to_json() for r in a] == [r.to_json() for r in b]


def test_w_event_far_direction_not_flagged(cfg):
    env = Environment(DRIFT, 0)
    est = estimate_w_probability(env, cfg, [[0.0], [50.0]], 10, seed=1)
    assert est[1].p_hat == 0.0 and not est[1].flagged
    assert est[0].p_hat > 0
