"""End-to-end estimators built on the simulation core.

Backtracking frequencies and the stretched-exponential fit, direct slowdown
frequencies, the planted-trap lower bound, escape-before-return
probabilities and a paired check of the regeneration-based decomposition of
the slowdown event.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ._engine import CAUSE_STOPPED
from ._hash import derive_seed
from .env import (Environment, EnvironmentLaw, Nestling, classify_nestling, directions, inward_probability,
                  local_drift, plant_naive_trap, trap_kernel, trap_log_probability)
from .errors import AllZeroCounts, InsufficientData, NotNestling
from .exitstats.dist import Region
from .exitstats.exact import exit_distribution
from .regen import detect_regenerations
from .walk import StopRule, run_annealed, sample_exits


def _stderr(p: float, n: int) -> float:
    return math.sqrt(max(p * (1 - p), 0.0) / n) if n else math.nan


def zero_count_upper(n: int, level: float = 0.95) -> float:
    """One-sided upper confidence bound for a proportion with no successes."""
    return 1.0 - (1.0 - level) ** (1.0 / n)


# ------------------------------------------------------------------ (T_gamma)

def gambler_backtrack(p: float, L: int) -> float:
    """Exact probability that a d=1 walk with right-probability ``p`` hits ``-L`` before ``L``."""
    q = 1 - p
    if p == q:
        return 0.5
    if q == 0:
        return 0.0
    r = (q / p) ** L
    return r / (1 + r)


@dataclass(frozen=True)
class TGammaReport:
    direction: tuple[float, ...]
    L_grid: tuple[int, ...]
    probs: tuple[float, ...]
    stderr: tuple[float, ...]
    counts: tuple[int, ...]
    n_samples: int
    upper_bounds: tuple[float, ...]
    all_zero: bool
    ballistic: bool
    gamma: float | None = None
    C: float | None = None
    fit_residual: float | None = None
    exact: tuple[float, ...] | None = None

    def to_json(self) -> dict:
        return asdict(self)

    def rows(self) -> list[dict]:
        out = []
        for i, L in enumerate(self.L_grid):
            row = {"L": L, "p": self.probs[i], "stderr": self.stderr[i], "count": self.counts[i],
                   "upper": self.upper_bounds[i]}
            if self.exact is not None:
                row["exact"] = self.exact[i]
            out.append(row)
        return out


def fit_stretched_exponential(L, p, gammas=None) -> tuple[float, float, float]:
    """Fit ``p(L) = C exp(-L^gamma)`` by scanning ``gamma``.

    For each ``gamma`` the best ``log C`` is the mean of ``log p + L^gamma``;
    the ``gamma`` with the smallest residual sum of squares wins.
    Returns ``(gamma, C, rss)``.
    """
    L = np.asarray(L, dtype=float)
    lp = np.log(np.asarray(p, dtype=float))
    gammas = np.linspace(0.01, 1.5, 150) if gammas is None else np.asarray(gammas, dtype=float)
    best = None
    for g in gammas:
        resid = lp + L**g
        c = resid.mean()
        rss = float(np.sum((resid - c) ** 2))
        if best is None or rss < best[2]:
            best = (float(g), float(math.exp(c)), rss)
    return best


def tgamma_test(law: EnvironmentLaw, ell, L_grid, n_samples: int, seed: int = 0, strict: bool = False,
                gammas=None) -> TGammaReport:
    """Annealed frequency of leaving the slab ``|<X, ell>| < L`` on the negative side.

    The decay of the backtrack frequency is fitted to ``C exp(-L^gamma)``
    over the grid points with positive counts.  The law counts as ballistic
    in ``ell`` when the frequency at the largest ``L`` sits more than three
    standard errors below the one at the smallest ``L``.  With no
    backtracks at all only upper confidence bounds are reported (or
    :class:`AllZeroCounts` is raised when ``strict``).
    """
    L_grid = tuple(int(L) for L in L_grid)
    if any(b <= a for a, b in zip(L_grid, L_grid[1:])):
        raise ValueError("L grid must be increasing")
    ell = np.asarray(ell, dtype=float)
    ell = ell / np.linalg.norm(ell)
    start = np.zeros(law.d, dtype=np.int64)
    probs, errs, counts, uppers = [], [], [], []
    for L in L_grid:
        stop = StopRule.slab(ell, -L, L, budget=max(10**6, 1000 * L * L))
        res = sample_exits(law, start, stop, derive_seed(seed, "tgamma", L), n_samples)
        back = (res.ends @ ell <= -L + 1e-9) & res.stopped
        c = int(back.sum())
        p = c / n_samples
        counts.append(c)
        probs.append(p)
        errs.append(_stderr(p, n_samples))
        uppers.append(zero_count_upper(n_samples) if c == 0 else min(1.0, p + 3 * errs[-1]))
    all_zero = not any(counts)
    if all_zero and strict:
        raise AllZeroCounts("no backtrack observed at any L; only upper bounds are available")
    ballistic = bool(all_zero or probs[-1] + 3 * errs[-1] < probs[0] - 3 * errs[0]
                     or (counts[-1] == 0 and probs[0] > 0))
    gamma = C = rss = None
    pos = [i for i, c in enumerate(counts) if c > 0]
    if ballistic and len(pos) >= 2:
        gamma, C, rss = fit_stretched_exponential([L_grid[i] for i in pos], [probs[i] for i in pos], gammas)
    exact = None
    if law.d == 1 and law.single_kernel and abs(abs(ell[0]) - 1) < 1e-12:
        k = law.support()[0][0]
        p_right = k[0] if ell[0] > 0 else k[1]
        exact = tuple(gambler_backtrack(float(p_right), L) for L in L_grid)
    return TGammaReport(tuple(ell.tolist()), L_grid, tuple(probs), tuple(errs), tuple(counts), int(n_samples),
                        tuple(uppers), all_zero, ballistic, gamma, C, rss, exact)


# ------------------------------------------------------------------ slowdown

@dataclass(frozen=True)
class SlowdownReport:
    n: int
    a: tuple[float, ...]
    eps: float
    estimate: float
    stderr: float
    n_samples: int
    method: str
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return asdict(self)


def _slowdown_hits(ends: np.ndarray, n: int, a: np.ndarray, eps: float) -> np.ndarray:
    return np.abs(ends / n - a).max(axis=1) < eps


def slowdown_direct(law: EnvironmentLaw, a, eps: float, n: int, n_samples: int, seed: int = 0) -> SlowdownReport:
    """Annealed frequency of ``|X_n / n - a|_inf < eps``."""
    a = np.asarray(a, dtype=float).reshape(-1)
    res = sample_exits(law, np.zeros(law.d, dtype=np.int64), StopRule.step_budget(n),
                       derive_seed(seed, "slowdown", n), n_samples)
    hits = _slowdown_hits(res.ends, n, a, eps)
    p = float(hits.mean())
    return SlowdownReport(int(n), tuple(a.tolist()), float(eps), p, _stderr(p, n_samples), int(n_samples), "direct")


def slowdown_trend(law: EnvironmentLaw, a, eps: float, n_grid, n_samples: int, seed: int = 0) -> list[SlowdownReport]:
    return [slowdown_direct(law, a, eps, n, n_samples, seed) for n in n_grid]


def velocity_estimate(law: EnvironmentLaw, n: int = 2000, n_samples: int = 2000, seed: int = 0) -> np.ndarray:
    """Mean of ``X_n / n`` over annealed walks."""
    res = sample_exits(law, np.zeros(law.d, dtype=np.int64), StopRule.step_budget(n),
                       derive_seed(seed, "velocity"), n_samples)
    return res.ends.mean(axis=0) / n


# ------------------------------------------------------------------ traps

def trap_radius(n: int, c: float = 1.0) -> int:
    """``ceil(c log n)``, at least 1."""
    return max(1, int(math.ceil(c * math.log(n))))


def trap_kernels(law: EnvironmentLaw) -> dict[int, np.ndarray]:
    """For each direction, the support kernel with the strongest drift that way.

    Only kernels whose drift points strictly along the direction count,
    matching the per-site probabilities used for the ledger.
    """
    kernels, _ = law.support()
    drifts = local_drift(kernels)
    out = {}
    for j, e in enumerate(directions(law.d)):
        proj = drifts @ e
        if proj.max() <= 1e-15:
            raise NotNestling(f"no support kernel drifts along direction {j}")
        out[j] = kernels[int(np.argmax(proj))]
    return out


def trap_ledger_fit(law_or_prob, d: int, radii) -> dict:
    """Exact trap log-probabilities and the least-squares fit ``c r^d`` (no intercept)."""
    r = np.asarray(list(radii), dtype=float)
    y = np.array([trap_log_probability(law_or_prob, d, int(v)) for v in r])
    x = r**d
    c = float(np.dot(x, y) / np.dot(x, x))
    ss_res = float(np.sum((y - c * x) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    return {"radii": r.astype(int).tolist(), "ledger": y.tolist(), "c": c,
            "r2": 1 - ss_res / ss_tot if ss_tot > 0 else 1.0}


def trap_lower_bound(law: EnvironmentLaw, n: int, radius_rule: float | int = 1.0, seed: int = 0,
                     n_samples: int = 2000, a=None, eps: float = 0.1, radius: int | None = None,
                     extreme: bool = False) -> SlowdownReport:
    """Lower bound for the slowdown probability from a planted trap.

    A trap of radius ``r = ceil(radius_rule * log n)`` (or ``radius``) is
    planted at the origin of an environment drawn from ``law``: every site
    gets the support kernel drifting towards the centre.  The ledger is the
    exact log probability of that configuration under the product measure;
    the quenched frequency of the slowdown event inside the trap is
    estimated by Monte Carlo, and the bound is ``exp(ledger) * frequency``.
    ``extreme`` uses the extreme elliptic kernels instead (the ledger then
    still refers to the law's support kernels).
    """
    if not law.finite_support:
        raise NotNestling("trap bound needs a finite-support law")
    if classify_nestling(law) != Nestling.PLAIN:
        raise NotNestling("law is not plain nestling")
    r = int(radius) if radius is not None else trap_radius(n, float(radius_rule))
    d = law.d
    a = np.zeros(d) if a is None else np.asarray(a, dtype=float)
    ledger = trap_log_probability(law, d, r)
    kern = trap_kernels(law)
    env = Environment(law, derive_seed(seed, "trap-env"))
    env = plant_naive_trap(env, np.zeros(d, dtype=np.int64), r,
                           (lambda j: trap_kernel(d, law.eta, j)) if extreme else (lambda j: kern[j]))
    res = sample_exits(env, np.zeros(d, dtype=np.int64), StopRule.step_budget(n),
                       derive_seed(seed, "trap-walk"), n_samples)
    p = float(_slowdown_hits(res.ends, n, a, eps).mean())
    se = _stderr(p, n_samples)
    bound_log = ledger + (math.log(p) if p > 0 else -math.inf)
    extra = {"radius": r, "ledger": ledger, "quenched": p,
             "log_lower_bound": bound_log,
             "inward_probs": [inward_probability(law, j) for j in range(2 * d)]}
    return SlowdownReport(int(n), tuple(a.tolist()), float(eps), math.exp(bound_log) if p > 0 else 0.0, se,
                          int(n_samples), "trap", extra)


# ------------------------------------------------------------------ returns

@dataclass(frozen=True)
class ReturnReport:
    x: tuple[int, ...]
    L: int
    estimate: float
    stderr: float
    n_samples: int
    threshold: float | None
    exceeds: bool | None

    def to_json(self) -> dict:
        return asdict(self)


def _escape_region(x: np.ndarray, L: int) -> Region:
    return Region.from_box(x - 2 * L + 1, x + 2 * L - 1).without([x])


def return_probability(env: Environment, x, L: int, n_samples: int, seed: int = 0, u: float | None = None,
                       epsilon: float | None = None, budget: int = 10**7) -> ReturnReport:
    """Quenched frequency of reaching distance ``2L`` (sup norm) before returning to ``x``.

    With ``u`` and ``epsilon`` the estimate is compared with ``u^(epsilon-1)``.
    """
    x = np.asarray(x, dtype=np.int64)
    stop = StopRule.any_of(StopRule.box_exit(x - 2 * L + 1, x + 2 * L - 1, budget),
                           StopRule.sites([x], budget, strict=True), budget=budget)
    res = sample_exits(env, x, stop, derive_seed(seed, "return", *x.tolist(), L), n_samples)
    escaped = (np.abs(res.ends - x).max(axis=1) >= 2 * L) & (res.causes == CAUSE_STOPPED)
    p = float(escaped.mean())
    thr = u ** (epsilon - 1) if u is not None and epsilon is not None else None
    return ReturnReport(tuple(x.tolist()), int(L), p, _stderr(p, n_samples), int(n_samples), thr,
                        None if thr is None else p > thr)


def return_probability_exact(env: Environment, x, L: int) -> float:
    """Escape-before-return probability by first-step analysis and exact solves."""
    x = np.asarray(x, dtype=np.int64)
    region = _escape_region(x, L)
    kern = env.kernels_at(x.reshape(1, -1))[0]
    total = 0.0
    for j, e in enumerate(directions(env.d).astype(np.int64)):
        if kern[j] <= 0:
            continue
        y = x + e
        if np.abs(y - x).max() >= 2 * L:
            total += kern[j]
            continue
        law = exit_distribution(env, region, y)
        out = np.abs(law.dist.sites - x).max(axis=1) >= 2 * L
        total += kern[j] * float(law.dist.probs[out].sum())
    return total


# ------------------------------------------------------------------ reduction

@dataclass(frozen=True)
class ReductionReport:
    n: int
    r: float
    b: float
    m: int
    rho: float
    beta: float
    velocity: float
    n_samples: int
    lhs: float
    rhs_time: float
    rhs_position: float
    rhs: float
    slack: float
    holds: bool
    sample_violations: int
    p_A_complement: float
    p_time_given_A: float
    A_threshold: float

    def to_json(self) -> dict:
        return asdict(self)


def _regen_times(traj, min_margin: float = 1.0):
    recs = [rec for rec in detect_regenerations(traj, np.eye(traj.d)[0]) if rec.certified_margin >= min_margin]
    return np.array([rec.tau for rec in recs], dtype=np.int64)


def reduction_diagnostics(law: EnvironmentLaw, n: int, seed: int = 0, r: float | None = None,
                          n_samples: int = 500, pilot: int = 200, extra: int | None = None) -> ReductionReport:
    """Paired estimate of ``P(X_n < rn) <= P(tau_{m+1} > n) + P(X_{tau_{m+1}} < rn)``.

    ``X`` is the first coordinate, ``tau_k`` the certified regeneration times
    along ``e1``.  Slab means ``rho`` (duration) and ``beta`` (advance) come
    from a pilot sample; ``b`` is the midpoint of ``(r/v, 1)`` with
    ``v = beta/rho`` and ``m = floor(n b / rho)``.  By default ``r = v/2``.
    All three events are evaluated on the same walks, so every walk counted
    on the left is counted on the right; violations are reported.  The
    truncation event ``A`` (all of ``tau_1`` and the first ``m`` slab
    durations below ``n^(1/8)``) is estimated too.
    """
    extra = n if extra is None else int(extra)
    horizon = n + extra
    stop = StopRule.step_budget(horizon)
    d = law.d
    durs, advs = [], []
    proot = derive_seed(seed, "reduction-pilot", n)
    for i in range(pilot):
        traj, _ = run_annealed(law, np.zeros(d, dtype=np.int64), stop, proot, i)
        taus = _regen_times(traj)
        if taus.size >= 2:
            durs.extend(np.diff(taus).tolist())
            advs.extend(np.diff(traj.positions[taus, 0]).tolist())
    if not durs:
        raise InsufficientData("no regeneration slabs observed in the pilot")
    rho, beta = float(np.mean(durs)), float(np.mean(advs))
    v = beta / rho
    if v <= 0:
        raise InsufficientData("no positive drift along e1")
    r = v / 2 if r is None else float(r)
    b = 0.5 * (min(r / v, 1.0) + 1.0)
    m = int(math.floor(n * b / rho))
    cut = n ** 0.125
    lhs = t_ev = x_ev = viol = a_c = t_and_a = 0
    root = derive_seed(seed, "reduction", n)
    for i in range(n_samples):
        traj, _ = run_annealed(law, np.zeros(d, dtype=np.int64), stop, root, i)
        pos = traj.positions
        taus = _regen_times(traj)
        left = pos[n, 0] < r * n
        have = taus.size >= m + 1
        t_big = (not have) or taus[m] > n
        x_small = have and pos[taus[m], 0] < r * n
        lhs += left
        t_ev += t_big
        x_ev += x_small
        viol += left and not (t_big or x_small)
        gaps = np.diff(taus[: m + 1]) if have else np.array([])
        A = have and taus[0] < cut and bool(np.all(gaps < cut))
        a_c += not A
        t_and_a += A and t_big
    N = float(n_samples)
    n_A = n_samples - a_c
    rhs = float(t_ev + x_ev) / N
    lhs, t_ev, x_ev, a_c, t_and_a = (int(v) for v in (lhs, t_ev, x_ev, a_c, t_and_a))
    return ReductionReport(int(n), r, b, m, rho, beta, v, int(n_samples), lhs / N, t_ev / N, x_ev / N, rhs,
                           rhs - lhs / N, bool(lhs / N <= rhs), int(viol), a_c / N,
                           t_and_a / n_A if n_A else math.nan, cut)


__all__ = [
    "ReductionReport", "ReturnReport", "SlowdownReport", "TGammaReport", "fit_stretched_exponential",
    "gambler_backtrack", "reduction_diagnostics", "return_probability", "return_probability_exact",
    "slowdown_direct", "slowdown_trend", "tgamma_test", "trap_kernels", "trap_ledger_fit", "trap_lower_bound",
    "trap_radius", "velocity_estimate", "zero_count_upper",
]
