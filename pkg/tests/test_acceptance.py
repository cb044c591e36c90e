"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``PASS``/``FAIL`` line (visible with ``pytest -v``
or ``-s``) before asserting, so the summary survives a failing assertion.
"""

import math
import time

import numpy as np
import pytest

from rwre.aux import AuxConfig, AuxContext, run_aux_many
from rwre.conc import martingale_fixtures, martingale_tail_audit
from rwre.env import Environment, EnvironmentLaw, directions
from rwre.exitstats import (LatticeDist, Region, aligned, convolution_power, derivative_profile, estimate_exit,
                            exact_exit, exit_distribution, fourier_power)
from rwre.experiments import gambler_backtrack, trap_ledger_fit, trap_lower_bound
from rwre.geom import BlockSpec, Constants, build_ladder
from rwre.regen import (brute_regeneration_times, detect_regenerations, lag1_autocorrelation,
                        regeneration_candidates)
from rwre.tasks import run_task
from rwre.walk import StopRule, run_annealed, sample_exits


@pytest.fixture
def verdict(capsys):
    def emit(number: int, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
    return emit


def _slope(x, y) -> float:
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


def test_c01_exit_oracle(verdict):
    law = EnvironmentLaw.mixture([[0.4, 0.1, 0.25, 0.25], [0.1, 0.4, 0.25, 0.25]], [0.5, 0.5])
    env = Environment(law, 20161016)
    region = Region.from_box([-4, -4], [4, 4])
    t0 = time.perf_counter()
    hist = estimate_exit(env, region, [0, 0], 10**6, 1)
    elapsed = time.perf_counter() - t0
    exact = exact_exit(env, region, [0, 0])
    tv = hist.to_dist().tv_distance(exact.dist)
    ok = tv <= 0.01 and elapsed < 60 and hist.budget_exhausted == 0
    verdict(1, ok, f"TV {tv:.5f} <= 0.01 at 1e6 samples in {elapsed:.1f}s (< 60s)")
    assert abs(exact.dist.probs.sum() - 1) < 1e-10
    assert ok


def test_c02_gamblers_ruin(verdict):
    n1 = 10**5
    res = sample_exits(EnvironmentLaw.srw(1), [2], StopRule.sites([[0], [5]]), 2, n1)
    p_right = float(np.mean(res.ends[:, 0] == 5))
    z1 = abs(p_right - 0.4) / math.sqrt(0.24 / n1)
    n2 = 10**6
    biased = EnvironmentLaw.fixed([0.6, 0.4])
    res = sample_exits(biased, [0], StopRule.sites([[-5], [5]]), 3, n2)
    p_back = float(np.mean(res.ends[:, 0] == -5))
    closed = gambler_backtrack(0.6, 5)
    solved = exact_exit(Environment(biased, 0), Region.from_box([-4], [4]), [0]).dist.prob([-5])
    z2 = abs(p_back - closed) / math.sqrt(closed * (1 - closed) / n2)
    ok = z1 <= 3 and z2 <= 3 and abs(closed - solved) < 1e-12
    verdict(2, ok, f"P(right) {p_right:.5f} (z {z1:.2f}); backtrack {p_back:.5f} vs {closed:.5f} (z {z2:.2f})")
    assert ok


def test_c03_local_clt(verdict):
    worst = 0.0
    for d in (1, 2):
        step = LatticeDist(directions(d), np.full(2 * d, 1 / (2 * d)))
        for n in (1, 2, 3, 7, 16, 31, 64, 128, 256):
            _, a, b = aligned(fourier_power(step, n), convolution_power(step, n))
            worst = max(worst, float(np.abs(a - b).max()))
    step2 = LatticeDist(directions(2), np.full(4, 0.25))
    ns = [16, 32, 64, 128, 256]
    slope = _slope(ns, [convolution_power(step2, n).probs.max() for n in ns])
    ok = worst <= 1e-10 and abs(slope + 1) <= 0.05
    verdict(3, ok, f"max |fourier - convolution| {worst:.2e} <= 1e-10; d=2 sup-mass exponent {slope:.4f}")
    assert ok


def test_c04_derivative_decay(verdict):
    law = EnvironmentLaw.fixed([0.5, 0.1, 0.2, 0.2])
    Ns, sup, first = [10, 20, 40], [], []
    for N in Ns:
        block = BlockSpec((0, 0), N, None, 5.0 * N)
        prof = derivative_profile(exit_distribution(law, Region.from_block(block), (0, 0)), N)
        sup.append(prof.sup_mass)
        first.append(prof.max_first_diff)
    s_sup, s_first = _slope(Ns, sup), _slope(Ns, first)
    ok = abs(s_sup + 1) <= 0.3 and abs(s_first + 2) <= 0.4
    verdict(4, ok, f"sup slope {s_sup:.3f} (target -1 +- 0.3), first-diff slope {s_first:.3f} (target -2 +- 0.4)")
    assert ok


def test_c05_regeneration(verdict):
    rng = np.random.default_rng(5)
    mismatches = 0
    for i in range(1000):
        n = 10**4 if i == 0 else int(rng.integers(10, 400))
        steps = rng.integers(0, 4, size=n)
        moves = directions(2)[steps]
        proj = np.concatenate([[0], np.cumsum(moves[:, 0])])
        mismatches += not np.array_equal(regeneration_candidates(proj)[0], brute_regeneration_times(proj))
    law = EnvironmentLaw.fixed([0.5, 0.1, 0.2, 0.2])
    e1 = np.array([1.0, 0.0])
    durs, disp, ends = [], [], []
    horizon = 20000
    i = 0
    while sum(d.size for d in durs) < 10**4:
        traj, _ = run_annealed(law, (0, 0), StopRule.step_budget(horizon), 55, i)
        taus = np.array([r.tau for r in detect_regenerations(traj, e1) if r.certified_margin >= 1])
        durs.append(np.diff(taus))
        disp.append(np.diff(traj.positions[taus, 0]))
        ends.append(traj.positions[-1, 0])
        i += 1
    dur, dx = np.concatenate(durs), np.concatenate(disp)
    r_dur, r_dx = lag1_autocorrelation(dur), lag1_autocorrelation(dx)
    v_slab = dx.sum() / dur.sum()
    v_long = float(np.mean(ends)) / horizon
    rel = abs(v_slab - v_long) / v_long
    ok = mismatches == 0 and abs(r_dur) < 0.02 and abs(r_dx) < 0.02 and rel < 0.01
    verdict(5, ok, f"{mismatches} oracle mismatches on 1000 paths; {dur.size} slabs, lag-1 r {r_dur:.4f}/{r_dx:.4f},"
                   f" velocity {v_slab:.4f} vs {v_long:.4f} ({100 * rel:.2f}%)")
    assert ok


def test_c06_azuma(verdict):
    Ks = list(range(5, 55, 5))
    fails = []
    for name, spec in martingale_fixtures(100).items():
        audit = martingale_tail_audit(spec, Ks, 10**5, 6)
        fails += [(name, r.K) for r in audit.rows if not r.passed]
    ok = not fails
    verdict(6, ok, f"3 fixtures x {len(Ks)} thresholds at 1e5 runs, violations: {fails or 'none'}")
    assert ok


def test_c07_coupling_certificates(verdict):
    res = run_task("closeness", EnvironmentLaw.fixed([0.5, 0.1, 0.2, 0.2]), None,
                   {"N": 10, "n_sum": 4, "lam": 0.2, "K": 1}, None, 7)
    s = res.summary
    lad = s["ladder"]
    ok = bool(res.passed and s["certificates"] > 0)
    verdict(7, ok, f"{s['certificates']} certificates, clauses 3-4 exact: {s['clauses_3_4_exact']},"
                   f" clauses 2,5: {s['clauses_2_5_ok']}; ladder lambda {lad['lambda_measured']:.3g}"
                   f" <= {lad['lambda_budget']:.3g}")
    assert ok


@pytest.mark.slow
def test_c08_auxiliary_invariants(verdict):
    law = EnvironmentLaw.fixed([0.85, 0.05, 0.05, 0.05], eta=0.05)
    strip = {(x, y): (0.45, 0.05, 0.45, 0.05) for x in range(2450, 2460) for y in range(-200, 201)}
    env = Environment(law, 0).with_overlay(strip)
    lad = build_ladder(10**4, Constants(0.1, 0.25, 0.2, True), 2)
    cfg = AuxConfig(lad, lambda_cap=0.1, classifier_samples=300)
    t0 = time.perf_counter()
    # run_aux enforces every invariant and raises on the first violation
    runs = run_aux_many(env, cfg, 10**4, seed=8)
    elapsed = time.perf_counter() - t0
    cap = lad.L ** (4 * lad.psi)
    beta_bad = sum(r.max_beta >= cap for r in runs)
    stop_bad = sum(r.n_stops > r.stop_bound for r in runs)
    corrected = sum(any(k != (1, 1) for k in r.nonzero_betas) for r in runs)
    ok = len(runs) == 10**4 and beta_bad == 0 and stop_bad == 0
    verdict(8, ok, f"{len(runs)} runs at L=1e4 (sizes {lad.sizes}) in {elapsed:.0f}s: 0 origin returns,"
                   f" max |beta| {max(r.max_beta for r in runs)} < {cap:.0f}, stop-bound violations {stop_bad},"
                   f" runs with bad-block corrections {corrected}")
    assert ok


def test_c09_trap_scaling(verdict):
    kernels = [[0.7, 0.1, 0.1, 0.1], [0.1, 0.7, 0.1, 0.1], [0.1, 0.1, 0.7, 0.1], [0.1, 0.1, 0.1, 0.7]]
    law = EnvironmentLaw.mixture(kernels, [0.4, 0.2, 0.2, 0.2])
    fit = trap_ledger_fit(law, 2, range(3, 9))
    rep = trap_lower_bound(law, 250, seed=9, n_samples=2000, eps=0.1, radius=5)
    freq = rep.extra["quenched"]
    ok = fit["r2"] > 0.99 and freq > 0.5
    verdict(9, ok, f"ledger fit c r^2 with c {fit['c']:.3f}, R^2 {fit['r2']:.4f}; slowdown frequency {freq:.3f}"
                   f" at n=250, r=5")
    assert ok


@pytest.mark.slow
def test_c10_determinism(verdict, tmp_path, capsys):
    from rwre.cli import main

    t0 = time.perf_counter()
    with capsys.disabled():
        code = main(["selftest", "--workers", "1", "--verify-workers", "8", "--out", str(tmp_path)])
    elapsed = time.perf_counter() - t0
    import json
    hashes = []
    for w in (1, 8):
        ledger = sorted((tmp_path / f"workers-{w}" / "ledger").glob("*.json"))
        hashes.append({k: v for f in ledger for k, v in json.loads(f.read_text())["outputs"].items()})
    same = hashes[0] == hashes[1] and len(hashes[0]) > 0
    ok = code == 0 and same and elapsed < 15 * 60
    verdict(10, ok, f"selftest exit {code}, {len(hashes[0])} output hashes identical at 1 and 8 workers: {same},"
                    f" wall time {elapsed:.0f}s (< 900s)")
    assert ok
