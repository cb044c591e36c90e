"""Experiment kinds runnable from a campaign.

Every kind is a pure function of ``(law, env spec, params, samples, seed)``
returning a :class:`TaskResult`; the campaign runner ships these calls to
worker processes, so results never depend on scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ._hash import derive_seed, replicate_seed
from .env import Environment, EnvironmentLaw, plant_naive_trap

DEFAULT_SAMPLES = 1000


@dataclass
class TaskResult:
    summary: dict
    rows: list = field(default_factory=list)
    passed: bool | None = None


@dataclass(frozen=True)
class Kind:
    name: str
    params: dict
    samples: int
    run: Callable
    doc: str = ""


KINDS: dict[str, Kind] = {}


def kind(name: str, samples: int = DEFAULT_SAMPLES, **params):
    def deco(fn):
        KINDS[name] = Kind(name, params, samples, fn, (fn.__doc__ or "").strip().splitlines()[0])
        return fn
    return deco


def jsonable(obj):
    """Plain JSON types; non-finite floats become the strings ``nan``/``inf``/``-inf``."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if obj is None or isinstance(obj, str):
        return obj
    if hasattr(obj, "to_json"):
        out = obj.to_json()
        return jsonable(out) if not isinstance(out, str) else out
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def build_env(law: EnvironmentLaw, env_spec, seed: int) -> Environment:
    """Quenched environment: seeded draw of ``law`` plus strip and trap overlays."""
    env_seed = derive_seed(seed, "env") if env_spec is None or env_spec.seed is None else env_spec.seed
    env = Environment(law, env_seed)
    if env_spec is None:
        return env
    items = {}
    for s in env_spec.strips:
        axes = [np.arange(a, b + 1) for a, b in zip(s.lo, s.hi)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, law.d)
        for site in grid.tolist():
            items[tuple(site)] = s.kernel
    if items:
        env = env.with_overlay(items)
    for t in env_spec.traps:
        env = plant_naive_trap(env, t.center, t.radius)
    return env


def _vec(v, d, default=0):
    if v is None:
        return np.full(d, default, dtype=np.int64)
    return np.asarray(v, dtype=np.int64).reshape(d)


def _slope(x, y) -> float:
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


# ------------------------------------------------------------------ walks

@kind("simulate", samples=100, steps=1000, start=None, quenched=False)
def _simulate(law, env_spec, p, samples, seed):
    """Endpoints of fixed-length walks (annealed, or quenched in one environment)."""
    from .walk import StopRule, sample_exits

    source = build_env(law, env_spec, seed) if p["quenched"] or env_spec is not None else law
    res = sample_exits(source, _vec(p["start"], law.d), StopRule.step_budget(int(p["steps"])), seed, samples)
    rows = [dict({"replicate": i, "steps": int(t)}, **{f"x_{j + 1}": int(v) for j, v in enumerate(e)})
            for i, (e, t) in enumerate(zip(res.ends.tolist(), res.times.tolist()))]
    v = res.ends.mean(axis=0) / p["steps"]
    return TaskResult({"velocity": v, "n": samples, "steps": p["steps"],
                       "mode": "annealed" if source is law else "quenched"}, rows)


@kind("regen", samples=20, steps=20000, min_margin=1.0, brute_paths=0, brute_length=60,
      max_autocorr=0.02, velocity_rtol=0.01, min_slabs=0)
def _regen(law, env_spec, p, samples, seed):
    """Regeneration slabs along e1: i.i.d. diagnostics and velocity consistency."""
    from .regen import brute_regeneration_times, detect_regenerations, lag1_autocorrelation, regeneration_candidates
    from .walk import StopRule, run_annealed

    d = law.d
    e1 = np.eye(d)[0]
    stop = StopRule.step_budget(int(p["steps"]))
    durs, projs, ends = [], [], []
    rows = []
    for i in range(samples):
        traj, _ = run_annealed(law, np.zeros(d, dtype=np.int64), stop, derive_seed(seed, "regen"), i)
        recs = [r for r in detect_regenerations(traj, e1) if r.certified_margin >= p["min_margin"]]
        taus = np.array([r.tau for r in recs], dtype=np.int64)
        if taus.size >= 2:
            durs.append(np.diff(taus))
            projs.append(np.diff(traj.positions[taus, 0]))
        ends.append(int(traj.positions[-1, 0]))
        rows.append({"replicate": i, "records": len(recs), "x1_end": ends[-1], "steps": int(traj.length)})
    dur = np.concatenate(durs) if durs else np.zeros(0)
    prj = np.concatenate(projs) if projs else np.zeros(0)
    v_slab = float(prj.sum() / dur.sum()) if dur.size else math.nan
    v_long = float(np.mean(ends) / p["steps"])
    r_dur = lag1_autocorrelation(dur) if dur.size else math.nan
    r_proj = lag1_autocorrelation(prj) if prj.size else math.nan
    mismatches = 0
    rng = np.random.default_rng(derive_seed(seed, "brute"))
    for _ in range(int(p["brute_paths"])):
        steps = rng.integers(0, 2 * d, size=int(p["brute_length"]))
        moves = np.zeros((steps.size, d), dtype=np.int64)
        moves[np.arange(steps.size), steps // 2] = np.where(steps % 2 == 0, 1, -1)
        pos = np.vstack([np.zeros((1, d), dtype=np.int64), np.cumsum(moves, axis=0)])
        fast, _ = regeneration_candidates(pos[:, 0])
        mismatches += not np.array_equal(fast, brute_regeneration_times(pos[:, 0]))
    rel = abs(v_slab - v_long) / abs(v_long) if v_long else math.inf
    passed = bool(dur.size >= p["min_slabs"] and abs(r_dur) < p["max_autocorr"] and abs(r_proj) < p["max_autocorr"]
                  and rel < p["velocity_rtol"] and mismatches == 0)
    summary = {"slabs": int(dur.size), "v_slab": v_slab, "v_long_run": v_long, "velocity_rel_err": rel,
               "autocorr_duration": r_dur, "autocorr_projection": r_proj,
               "brute_paths": int(p["brute_paths"]), "brute_mismatches": int(mismatches)}
    return TaskResult(summary, rows, passed)


# ------------------------------------------------------------------ exit laws

def _exit_setup(law, env_spec, p, seed):
    from .exitstats import Region
    from .geom import BlockSpec

    if p["box"] is not None:
        lo, hi = (np.asarray(v, dtype=np.int64).reshape(law.d) for v in p["box"])
        region = Region.from_box(lo, hi)
        start = _vec(p["start"], law.d) if p["start"] is not None else (lo + hi) // 2
    else:
        block = BlockSpec((0,) * law.d, int(p["N"]), None, p["width"])
        region = Region.from_block(block)
        start = _vec(p["start"], law.d)
    source = build_env(law, env_spec, seed) if p["quenched"] else law
    return region, start, source


_EXIT_PARAMS = dict(box=None, N=10, width=None, start=None, quenched=True, budget=10**6)


@kind("exit-hist", samples=10000, **_EXIT_PARAMS)
def _exit_hist(law, env_spec, p, samples, seed):
    """Monte Carlo histogram of the exit site of a box or block."""
    from .exitstats import estimate_exit

    region, start, source = _exit_setup(law, env_spec, p, seed)
    h = estimate_exit(source, region, start, samples, derive_seed(seed, "exit"), int(p["budget"]))
    mean, se = h.mean_and_stderr() if h.total else (np.full(law.d, np.nan), np.full(law.d, np.nan))
    rows = [dict({f"x_{j + 1}": v for j, v in enumerate(s)}, count=c, is_front=int(f))
            for s, c, f in zip(h.sites.tolist(), h.counts.tolist(), h.front_flags.tolist())]
    return TaskResult({"total": h.total, "budget_exhausted": h.budget_exhausted, "mean": mean, "stderr": se,
                       "front_fraction": h.front_total / max(h.total, 1), "mode": h.mode}, rows)


@kind("exit-compare", samples=100000, tol=0.01, **_EXIT_PARAMS)
def _exit_compare(law, env_spec, p, samples, seed):
    """Monte Carlo exit law against the exact absorption solve (TV and right-exit mass)."""
    from .exitstats import estimate_exit, exit_distribution

    region, start, source = _exit_setup(law, env_spec, p, seed)
    h = estimate_exit(source, region, start, samples, derive_seed(seed, "exit"), int(p["budget"]))
    exact = exit_distribution(source, region, start).dist
    tv = h.to_dist().tv_distance(exact)
    right = region.hi[0]
    p_mc = float(h.counts[h.sites[:, 0] > right].sum() / max(h.total, 1))
    p_ex = float(exact.probs[exact.sites[:, 0] > right].sum())
    sigma = math.sqrt(max(p_ex * (1 - p_ex), 0.0) / max(h.total, 1))
    z = abs(p_mc - p_ex) / sigma if sigma > 0 else (0.0 if p_mc == p_ex else math.inf)
    passed = bool(tv <= p["tol"] and z <= 3 and h.budget_exhausted == 0)
    rows = []
    mc = dict(zip(map(tuple, h.sites.tolist()), (h.counts / max(h.total, 1)).tolist()))
    ex = dict(zip(map(tuple, exact.sites.tolist()), exact.probs.tolist()))
    for s in sorted(set(mc) | set(ex)):
        rows.append(dict({f"x_{j + 1}": v for j, v in enumerate(s)}, mc=mc.get(s, 0.0), exact=ex.get(s, 0.0)))
    return TaskResult({"tv": tv, "tol": p["tol"], "p_right_mc": p_mc, "p_right_exact": p_ex, "z_right": z,
                       "sigma_right": sigma, "total": h.total, "budget_exhausted": h.budget_exhausted}, rows, passed)


@kind("llt", samples=1, n_grid=[16, 32, 64, 128, 256], tol=1e-10, slope=None, slope_tol=0.05, bounds=False)
def _llt(law, env_spec, p, samples, seed):
    """Fourier against direct convolution powers of the mean step, and the sup-mass exponent."""
    from .env import directions
    from .exitstats import LatticeDist, aligned, convolution_power, fourier_power, llt_bounds

    step = LatticeDist(directions(law.d), law.mean_kernel())
    rows, worst = [], 0.0
    for n in p["n_grid"]:
        a = fourier_power(step, int(n))
        b = convolution_power(step, int(n))
        _, pa, pb = aligned(a, b)
        diff = float(np.abs(pa - pb).max())
        worst = max(worst, diff)
        row = {"n": int(n), "max_abs_diff": diff, "sup_mass": float(b.probs.max())}
        if p["bounds"]:
            row["sup_bound"] = llt_bounds(step, int(n), exact=False).bounds[0]
        rows.append(row)
    target = -law.d / 2 if p["slope"] is None else float(p["slope"])
    slope = _slope([r["n"] for r in rows], [r["sup_mass"] for r in rows])
    passed = bool(worst <= p["tol"] and abs(slope - target) <= p["slope_tol"])
    return TaskResult({"max_abs_diff": worst, "slope": slope, "target_slope": target}, rows, passed)


@kind("profile", samples=1, N_grid=[10, 20, 40], width_factor=5.0, sup_tol=0.3, diff_tol=0.4)
def _profile(law, env_spec, p, samples, seed):
    """Exact front-exit profiles across block sizes and their log-log decay slopes."""
    from .exitstats import Region, derivative_profile, exit_distribution
    from .geom import BlockSpec

    rows = []
    for N in p["N_grid"]:
        block = BlockSpec((0,) * law.d, int(N), None, p["width_factor"] * N)
        ex = exit_distribution(law, Region.from_block(block), block.center)
        prof = derivative_profile(ex, int(N))
        rows.append({"N": int(N), "sup_mass": prof.sup_mass, "first_diff": prof.max_first_diff,
                     "second_diff": prof.max_second_diff, "front_mass": ex.front_mass})
    Ns = [r["N"] for r in rows]
    s_sup = _slope(Ns, [r["sup_mass"] for r in rows])
    s_diff = _slope(Ns, [r["first_diff"] for r in rows])
    d = law.d
    passed = bool(abs(s_sup + (d - 1)) <= p["sup_tol"] and abs(s_diff + d) <= p["diff_tol"])
    return TaskResult({"slope_sup": s_sup, "slope_first_diff": s_diff, "target_sup": -(d - 1),
                       "target_first_diff": -d}, rows, passed)


@kind("classify", samples=500, N=10, width=None, theta=1.0, centers=None)
def _classify(law, env_spec, p, samples, seed):
    """Good/bad verdicts for blocks of one size in a quenched environment."""
    from .exitstats import BlockClassifier
    from .geom import BlockSpec

    env = build_env(law, env_spec, seed)
    clf = BlockClassifier(env, p["theta"], samples, derive_seed(seed, "classify"))
    centers = p["centers"] if p["centers"] is not None else [[0] * law.d]
    rows = []
    for c in centers:
        v = clf.classify(BlockSpec(tuple(int(x) for x in c), int(p["N"]), None, p["width"]))
        rows.append(dict({f"z_{j + 1}": int(x) for j, x in enumerate(c)}, good=int(v.good),
                         reasons=";".join(v.reasons)))
    return TaskResult({"blocks": len(rows), "good": sum(r["good"] for r in rows)}, rows)


@kind("closeness", samples=1, N=10, n_sum=4, lam=0.2, K=1, width_factor=5.0, battery_lams=[0.05, 0.2, 0.5],
      battery_K=[1, 2, 4, 8])
def _closeness(law, env_spec, p, samples, seed):
    """Certificate audit over a fixture battery and the sum-ladder check for i.i.d. exact tables."""
    from .exitstats import LatticeDist, annealed_front_table, audit_certificate, check_closeness, sum_ladder_check
    from .errors import InfeasibleCoupling

    N, n = int(p["N"]), int(p["n_sum"])
    base = annealed_front_table(law, N, p["width_factor"] * N)
    M = int(round(N * math.sqrt(n)))
    target = annealed_front_table(law, M, p["width_factor"] * M)
    rng = np.random.default_rng(derive_seed(seed, "battery"))
    grid = np.stack(np.meshgrid(np.arange(13), np.arange(13), indexing="ij"), -1).reshape(-1, 2)
    binom = np.array([math.comb(12, int(i)) for i in range(13)], float)
    bin2 = LatticeDist(grid, np.outer(binom, binom).ravel() / binom.sum() ** 2)
    noisy = LatticeDist(grid, bin2.probs * rng.uniform(0.5, 1.5, bin2.size)).normalized()
    fixtures = {
        "binomial-shift": (bin2.shift([1, 0]), bin2),
        "binomial-noise": (noisy, bin2),
        "table-self": (base, base),
        "table-shift": (base.shift([0, 1]), base),
    }
    rows, cert_ok, exact_ok = [], True, True
    for name, (mu1, mu2) in fixtures.items():
        for lam in p["battery_lams"]:
            for K in p["battery_K"]:
                try:
                    res = check_closeness(mu1, mu2, float(lam), float(K))
                except InfeasibleCoupling:
                    rows.append({"fixture": name, "lam": lam, "K": K, "issued": 0})
                    continue
                row = {"fixture": name, "lam": lam, "K": K, "issued": int(res.ok)}
                if res.ok:
                    a = audit_certificate(res)
                    c3 = a["displacement"] == res.displacement and a["clause3"]
                    c4 = abs(a["mean_gap"] - res.mean_gap) <= 1e-9 and a["clause4"]
                    row.update(clause2=int(a["clause2"]), clause3=int(c3), clause4=int(c4),
                               clause5=int(a["clause5"]), lambda_measured=res.lambda_measured)
                    exact_ok &= bool(c3 and c4)
                    cert_ok &= bool(a["clause2"] and a["clause5"])
                rows.append(row)
    rep = sum_ladder_check(base, target, n, float(p["lam"]), float(p["K"]), N)
    issued = sum(r["issued"] for r in rows)
    passed = bool(exact_ok and cert_ok and rep.passed and issued > 0)
    return TaskResult({"certificates": issued, "clauses_3_4_exact": exact_ok, "clauses_2_5_ok": cert_ok,
                       "ladder": rep.to_json()}, rows, passed)


# ------------------------------------------------------------------ concentration

@kind("azuma", samples=100000, n=100, K_grid=[5, 10, 15, 20, 25, 30, 35, 40, 45, 50],
      fixtures=["fair", "lazy", "heterogeneous"])
def _azuma(law, env_spec, p, samples, seed):
    """Empirical martingale tails against the essential-variance Azuma bound plus 3 sigma."""
    from .conc import martingale_fixtures, martingale_tail_audit

    fx = martingale_fixtures(int(p["n"]))
    rows, ok = [], True
    for name in p["fixtures"]:
        audit = martingale_tail_audit(fx[name], p["K_grid"], samples, derive_seed(seed, name))
        ok &= audit.passed
        for r in audit.rows:
            rows.append({"fixture": name, "K": r.K, "empirical": r.statistic, "bound": r.bound,
                         "slack_sigma": r.slack_sigma, "pass": int(r.passed)})
    return TaskResult({"fixtures": list(p["fixtures"]), "all_pass": bool(ok)}, rows, bool(ok))


# ------------------------------------------------------------------ experiments

@kind("tgamma", samples=10000, ell=None, L_grid=[1, 2, 3, 4, 5])
def _tgamma(law, env_spec, p, samples, seed):
    """Annealed backtrack frequencies over a slab-width grid with a stretched-exponential fit."""
    from .experiments import tgamma_test

    ell = np.eye(law.d)[0] if p["ell"] is None else p["ell"]
    rep = tgamma_test(law, ell, p["L_grid"], samples, seed)
    rows = rep.rows()
    passed = None
    if rep.exact is not None:
        z = []
        for pe, pm in zip(rep.exact, rep.probs):
            s = math.sqrt(pe * (1 - pe) / samples)
            z.append(abs(pm - pe) / s if s > 0 else (0.0 if pm == pe else math.inf))
        for r, zz in zip(rows, z):
            r["z_exact"] = zz
        passed = bool(max(z) <= 3)
    return TaskResult(rep.to_json(), rows, passed)


@kind("slowdown", samples=2000, a=None, eps=0.1, n_grid=[50, 100, 200], velocity_steps=2000)
def _slowdown(law, env_spec, p, samples, seed):
    """Direct slowdown frequencies over an n grid (a defaults to the estimated velocity)."""
    from .experiments import slowdown_trend, velocity_estimate

    v = None
    a = p["a"]
    if a is None:
        v = velocity_estimate(law, int(p["velocity_steps"]), samples, derive_seed(seed, "velocity"))
        a = v
    reps = slowdown_trend(law, a, float(p["eps"]), p["n_grid"], samples, seed)
    rows = [{"n": r.n, "estimate": r.estimate, "stderr": r.stderr} for r in reps]
    passed = None
    if p["a"] is None:
        passed = all(b.estimate >= a_.estimate - 2 * math.hypot(a_.stderr, b.stderr) for a_, b in zip(reps, reps[1:]))
    return TaskResult({"a": list(np.asarray(a, float)), "velocity": v, "eps": p["eps"]}, rows, passed)


@kind("trap", samples=2000, n=250, radius=5, radii=[3, 4, 5, 6, 7, 8], eps=0.1, r2_min=0.99, freq_min=0.5)
def _trap(law, env_spec, p, samples, seed):
    """Trap ledger scaling fit and planted-trap slowdown frequency."""
    from .experiments import trap_ledger_fit, trap_lower_bound

    fit = trap_ledger_fit(law, law.d, p["radii"])
    rep = trap_lower_bound(law, int(p["n"]), seed=seed, n_samples=samples, eps=float(p["eps"]),
                           radius=int(p["radius"]))
    rows = [{"radius": r, "ledger": y, "ledger_over_r_d": y / r**law.d} for r, y in zip(fit["radii"], fit["ledger"])]
    passed = bool(fit["r2"] > p["r2_min"] and rep.extra["quenched"] > p["freq_min"])
    return TaskResult({"fit_c": fit["c"], "fit_r2": fit["r2"], "quenched_frequency": rep.extra["quenched"],
                       "ledger": rep.extra["ledger"], "log_lower_bound": rep.extra["log_lower_bound"],
                       "n": rep.n, "radius": rep.extra["radius"]}, rows, passed)


@kind("return", samples=20000, x=None, L=3, exact=True)
def _return(law, env_spec, p, samples, seed):
    """Escape-before-return frequency, optionally against the exact solve."""
    from .experiments import return_probability, return_probability_exact

    env = build_env(law, env_spec, seed)
    x = _vec(p["x"], law.d)
    rep = return_probability(env, x, int(p["L"]), samples, seed)
    out = rep.to_json()
    passed = None
    if p["exact"]:
        ex = return_probability_exact(env, x, int(p["L"]))
        s = math.sqrt(ex * (1 - ex) / samples)
        out["exact"] = ex
        out["z"] = abs(rep.estimate - ex) / s if s > 0 else (0.0 if rep.estimate == ex else math.inf)
        passed = bool(out["z"] <= 3)
    return TaskResult(out, [], passed)


@kind("reduction", samples=500, n=200, r=None, pilot=200)
def _reduction(law, env_spec, p, samples, seed):
    """Paired estimate of the regeneration reduction inequality."""
    from .experiments import reduction_diagnostics

    rep = reduction_diagnostics(law, int(p["n"]), seed, p["r"], samples, int(p["pilot"]))
    return TaskResult(rep.to_json(), [], bool(rep.holds and rep.sample_violations == 0))


# ------------------------------------------------------------------ auxiliary walk

_AUX_PARAMS = dict(L=300, epsilon=0.1, psi=0.4, chi=0.2, lambda_cap=0.1, width_factor=5.0,
                   classifier_samples=300, u=None, M=None)


def _aux_setup(law, env_spec, p, seed):
    from .aux import AuxConfig
    from .geom import Constants, build_ladder

    ladder = build_ladder(int(p["L"]), Constants(float(p["epsilon"]), float(p["psi"]), float(p["chi"]), True), law.d)
    cfg = AuxConfig(ladder, M=p["M"], lambda_cap=float(p["lambda_cap"]), width_factor=float(p["width_factor"]),
                    classifier_samples=int(p["classifier_samples"]), classifier_seed=derive_seed(seed, "aux-clf"))
    return build_env(law, env_spec, seed), cfg


@kind("aux-run", samples=20, audit=0, **_AUX_PARAMS)
def _aux_run(law, env_spec, p, samples, seed):
    """Auxiliary walks with hard invariant checks, stop counts and likelihood floors."""
    from .aux import AuxContext, likelihood_floor, ratio_audit, run_aux
    from .errors import InvariantViolation

    env, cfg = _aux_setup(law, env_spec, p, seed)
    ctx = AuxContext(env, cfg)
    rows, violations, audits_ok = [], 0, True
    for i in range(samples):
        s = replicate_seed(derive_seed(seed, "aux"), i)
        try:
            run = run_aux(env, cfg, p["u"], s, ctx)
        except InvariantViolation as exc:
            violations += 1
            rows.append({"run": i, "violation": str(exc)})
            continue
        _, lf = likelihood_floor(run, cfg, law.eta)
        row = {"run": i, "stops": run.n_stops, "stop_bound": run.stop_bound, "Q": ";".join(map(str, run.Q)),
               "nonzero_betas": len(run.nonzero_betas), "max_beta": run.max_beta, "log_floor": lf,
               "violation": ""}
        if i < p["audit"]:
            a = ratio_audit(run, ctx, law.eta)
            row["log_ratio"] = a.log_ratio
            audits_ok &= a.passed
        rows.append(row)
    lad = cfg.ladder
    summary = {"runs": samples, "violations": violations, "sizes": list(cfg.sizes), "L": lad.L,
               "beta_cap": lad.L ** (4 * lad.psi), "audits_pass": bool(audits_ok),
               "max_stops": max((r.get("stops", 0) for r in rows), default=0)}
    return TaskResult(summary, rows, bool(violations == 0 and audits_ok))


@kind("wevent", samples=50, w_grid=[[0.0]], **_AUX_PARAMS)
def _wevent(law, env_spec, p, samples, seed):
    """Frequency of the random-direction event on a grid of directions."""
    from .aux import estimate_w_probability

    env, cfg = _aux_setup(law, env_spec, p, seed)
    ests = estimate_w_probability(env, cfg, p["w_grid"], samples, derive_seed(seed, "wevent"), p["u"])
    rows = [{"w": ";".join(map(str, e.w)), "p_hat": e.p_hat, "stderr": e.stderr, "bound": e.bound,
             "in_cone": int(e.in_cone), "flagged": int(e.flagged), "chain_product": e.chain_product}
            for e in ests]
    return TaskResult({"n_runs": samples, "flagged": sum(r["flagged"] for r in rows)}, rows,
                      not any(e.flagged for e in ests))


def run_task(kind_name: str, law: EnvironmentLaw, env_spec, params: dict, samples: int | None, seed: int) -> TaskResult:
    k = KINDS[kind_name]
    p = dict(k.params)
    p.update(params)
    return k.run(law, env_spec, p, int(samples if samples is not None else k.samples), int(seed))
