"""Concentration tools: essential-variance Azuma, two-walk intersections,
hitting fields and a second-order Taylor bound for signed measures."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from ._hash import derive_seed, replicate_seed
from .env import Environment, EnvironmentLaw
from .errors import DomainError, HypothesisViolated
from .geom import BlockSpec
from .regen import detect_regenerations
from .scales import scale_R
from .walk import StopRule, Trajectory, run_quenched


def azuma_bound(U: float, K: float) -> float:
    """``2 exp(-K^2 / (2U))`` for a martingale with essential variance ``U``."""
    if U <= 0:
        raise DomainError("essential variance must be positive")
    return 2.0 * math.exp(-K * K / (2.0 * U))


# ------------------------------------------------------------------ martingales

@dataclass(frozen=True)
class MartingaleSpec:
    """Martingale with increments ``D_k`` and sure bounds ``|D_k| <= U_k``.

    ``sampler(rng, k, M)`` returns the increments at step ``k`` (1-based)
    for all runs given their current values ``M``.
    """

    name: str
    horizon: int
    bounds: tuple[float, ...]
    sampler: Callable

    @property
    def essential_variance(self) -> float:
        return float(sum(u * u for u in self.bounds))

    def simulate(self, n_runs: int, seed: int) -> tuple[np.ndarray, dict]:
        """Final values ``M_n`` and an audit of the increment assumptions."""
        rng = np.random.default_rng(derive_seed(seed, "martingale", self.name))
        M = np.zeros(n_runs)
        worst_excess = 0.0
        worst_mean_z = 0.0
        for k in range(1, self.horizon + 1):
            D = np.asarray(self.sampler(rng, k, M), dtype=float)
            worst_excess = max(worst_excess, float(np.abs(D).max() - self.bounds[k - 1]) if n_runs else 0.0)
            # centring given the past: overall mean and correlation with sign(M)
            sd = D.std()
            if sd > 0:
                for stat in (D, D * np.sign(M)):
                    worst_mean_z = max(worst_mean_z, abs(stat.mean()) / (sd / math.sqrt(n_runs)))
            M = M + D
        return M, {"bound_excess": worst_excess, "centring_z": worst_mean_z}


def _fair(rng, k, M):
    return rng.choice(np.array([-1.0, 1.0]), size=M.shape[0])


def _lazy(rng, k, M):
    return rng.choice(np.array([-1.0, 0.0, 1.0]), size=M.shape[0], p=[0.25, 0.5, 0.25])


def _heterogeneous(rng, k, M):
    # step size k, but only half the time: still centred with |D_k| <= k
    return k * rng.choice(np.array([-1.0, 0.0, 1.0]), size=M.shape[0], p=[0.25, 0.5, 0.25])


def _zero(rng, k, M):
    return np.zeros(M.shape[0])


def martingale_fixtures(n: int = 100) -> dict[str, MartingaleSpec]:
    """The test battery: fair +-1, lazy +-1/0, heterogeneous bound ``U_k = k``."""
    return {
        "fair": MartingaleSpec("fair", n, (1.0,) * n, _fair),
        "lazy": MartingaleSpec("lazy", n, (1.0,) * n, _lazy),
        "heterogeneous": MartingaleSpec("heterogeneous", n, tuple(float(k) for k in range(1, n + 1)), _heterogeneous),
    }


def zero_martingale(n: int = 100) -> MartingaleSpec:
    return MartingaleSpec("zero", n, (0.0,) * n, _zero)


@dataclass(frozen=True)
class TailAuditRow:
    statistic: float
    bound: float
    slack_sigma: float
    passed: bool
    K: float

    def to_json(self) -> dict:
        return {"statistic": self.statistic, "bound": self.bound, "slack_sigma": self.slack_sigma,
                "pass": self.passed, "K": self.K}


@dataclass(frozen=True)
class TailAudit:
    name: str
    essential_variance: float
    rows: tuple[TailAuditRow, ...]
    increment_audit: dict

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows) and self.increment_audit["bound_excess"] <= 1e-12

    @property
    def offending(self) -> tuple[float, ...]:
        return tuple(r.K for r in self.rows if not r.passed)

    def to_json(self) -> dict:
        return {"name": self.name, "essential_variance": self.essential_variance, "pass": self.passed,
                "rows": [r.to_json() for r in self.rows], "increment_audit": self.increment_audit}


def martingale_tail_audit(spec: MartingaleSpec, K_grid, n_runs: int, seed: int) -> TailAudit:
    """Empirical ``P(|M_n| > K)`` against the Azuma bound plus 3 sigma."""
    M, audit = spec.simulate(n_runs, seed)
    U = spec.essential_variance
    rows = []
    for K in K_grid:
        p = float((np.abs(M) > K).mean())
        sigma = math.sqrt(p * (1 - p) / n_runs)
        bound = azuma_bound(U, K) if U > 0 else (0.0 if K >= 0 else 1.0)
        slack = (bound + 3 * sigma - p) / sigma if sigma > 0 else math.inf if p <= bound else -math.inf
        rows.append(TailAuditRow(p, bound, slack, p <= bound + 3 * sigma, float(K)))
    return TailAudit(spec.name, U, tuple(rows), audit)


# ------------------------------------------------------------------ gating

def _gate_ok(positions: np.ndarray, N: int, radius: float | None) -> bool:
    """Finite-horizon stand-in for the regeneration-radius event.

    Regenerations in direction ``e_1`` with certified margin at least the
    radius bound are kept; the first ``N`` of them must have slab radius
    below that bound.  Paths without such regenerations pass.  The default
    bound is ``max(R_1(N), 2)`` since every slab has radius at least 1.
    """
    bound = max(scale_R(1, max(N, 3)), 2) if radius is None else radius
    e1 = np.zeros(positions.shape[1])
    e1[0] = 1.0
    recs = [r for r in detect_regenerations(Trajectory.from_positions(positions), e1) if r.certified_margin >= bound]
    return all(r.radius < bound for r in recs[:N])


def _block_visits(env: Environment, block: BlockSpec, start, walk_seed: int, budget: int):
    traj, _ = run_quenched(env, start, StopRule.block_boundary(block, budget), walk_seed)
    pos = traj.positions
    inside = pos[block.contains(pos)]
    return pos, np.unique(inside, axis=0)


def _site_keys(sites: np.ndarray) -> set:
    return set(map(tuple, sites.tolist()))


def intersection_count(env: Environment, start, block: BlockSpec, seed_pair, gate: bool = True,
                       gate_radius: float | None = None, budget: int = 10**6) -> int:
    """Number of block sites visited by both of two walks in the same environment.

    ``seed_pair`` are the two walk seeds.  With ``gate`` the count is 0 if
    either path fails the regeneration-radius gate.
    """
    p1, v1 = _block_visits(env, block, start, seed_pair[0], budget)
    p2, v2 = _block_visits(env, block, start, seed_pair[1], budget)
    if gate and not (_gate_ok(p1, block.N, gate_radius) and _gate_ok(p2, block.N, gate_radius)):
        return 0
    return len(_site_keys(v1) & _site_keys(v2))


@dataclass(frozen=True)
class IntersectionTail:
    N: int
    d: int
    regime: str
    n_pairs: int
    scale: float
    thresholds: tuple[float, ...]
    survival: tuple[float, ...]
    rate: float | None
    mean_count: float
    R2: int
    control_mean: float | None

    def to_json(self) -> dict:
        return asdict(self)


def intersection_tail(env_or_law, block: BlockSpec, n_pairs: int, seed: int, gate: bool = True,
                      gate_radius: float | None = None, control: bool = True, budget: int = 10**6) -> IntersectionTail:
    """Tail of the intersection count in units of ``R_1(N)^d``.

    With a law, each pair shares a fresh environment; the control pairs put
    the two walks in independent environments.
    """
    law = env_or_law if isinstance(env_or_law, EnvironmentLaw) else env_or_law.law
    d = law.d
    start = np.asarray(block.center, dtype=np.int64)
    root = derive_seed(seed, "intersection")
    counts, ctrl = [], []
    for i in range(n_pairs):
        s = replicate_seed(root, i)
        if isinstance(env_or_law, Environment):
            env = env_or_law
        else:
            env = Environment(law, derive_seed(s, "env"))
        w1, w2 = derive_seed(s, "w1"), derive_seed(s, "w2")
        counts.append(intersection_count(env, start, block, (w1, w2), gate, gate_radius, budget))
        if control:
            env2 = Environment(law, derive_seed(s, "env-control"))
            p1, v1 = _block_visits(env, block, start, w1, budget)
            p2, v2 = _block_visits(env2, block, start, w2, budget)
            ok = not gate or (_gate_ok(p1, block.N, gate_radius) and _gate_ok(p2, block.N, gate_radius))
            ctrl.append(len(_site_keys(v1) & _site_keys(v2)) if ok else 0)
    scale = float(scale_R(1, max(block.N, 3))) ** d
    x = np.asarray(counts, dtype=float) / scale
    th = np.arange(0, int(np.ceil(x.max())) + 2) if x.size else np.array([0])
    surv = np.array([(x > t).mean() for t in th]) if x.size else np.zeros(1)
    ok = surv > 0
    rate = None
    if ok.sum() >= 2:
        rate = float(-np.polyfit(th[ok], np.log(surv[ok]), 1)[0])
    return IntersectionTail(
        block.N, d, "covered" if d >= 4 else "below-theory", n_pairs, scale,
        tuple(th.astype(float).tolist()), tuple(surv.tolist()), rate,
        float(np.mean(counts)) if counts else 0.0, scale_R(2, max(block.N, 3)),
        float(np.mean(ctrl)) if ctrl else None,
    )


# ------------------------------------------------------------------ hitting field

@dataclass(frozen=True)
class HittingField:
    block: BlockSpec
    sites: np.ndarray
    values: np.ndarray
    n_samples: int
    R2: int

    @property
    def sum_of_squares(self) -> float:
        return float(np.sum(self.values**2))

    @property
    def total(self) -> float:
        """Expected number of distinct gated-visited sites."""
        return float(np.sum(self.values))

    def value(self, site) -> float:
        hit = np.all(self.sites == np.asarray(site, dtype=np.int64), axis=1)
        return float(self.values[hit].sum())

    def to_json(self) -> dict:
        return {"n_samples": self.n_samples, "sum_of_squares": self.sum_of_squares, "R2": self.R2,
                "total": self.total, "sites": int(self.sites.shape[0])}


def hitting_field(env: Environment, block: BlockSpec, start, n_samples: int, seed: int, gate: bool = True,
                  gate_radius: float | None = None, budget: int = 10**6) -> HittingField:
    """Per-site frequency of being visited by a gated walk inside the block."""
    start = np.asarray(start, dtype=np.int64)
    root = derive_seed(seed, "hitting")
    tally: dict = {}
    for i in range(n_samples):
        pos, visited = _block_visits(env, block, start, replicate_seed(root, i), budget)
        if gate and not _gate_ok(pos, block.N, gate_radius):
            continue
        for s in map(tuple, visited.tolist()):
            tally[s] = tally.get(s, 0) + 1
    if tally:
        keys = sorted(tally)
        sites = np.array(keys, dtype=np.int64)
        vals = np.array([tally[k] for k in keys], dtype=float) / n_samples
    else:
        sites = np.zeros((0, block.d), dtype=np.int64)
        vals = np.zeros(0)
    return HittingField(block, sites, vals, int(n_samples), scale_R(2, max(block.N, 3)))


# ------------------------------------------------------------------ Taylor bound

def taylor_check(mu, f: Callable, m: float, k: float, L: float, J: float, rho, tol: float = 1e-12) -> bool:
    """Check ``|sum mu(x) f(x)| <= L m + J k / 2`` for a signed measure.

    ``mu`` maps sites to signed weights.  The hypotheses are verified first
    (non-strict inequalities, ``f`` examined on the box spanned by the
    support and ``rho``, enlarged by one):

    1. nearest-neighbour differences of ``f`` at most ``m``;
    2. pure and mixed second differences at most ``k``;
    3. ``sum mu = 0``;
    4. ``||sum x mu(x)||_1 <= L``;
    5. ``sum ||x - rho||_1^2 |mu(x)| <= J``.

    Raises :class:`HypothesisViolated` with the number of the first failure.
    """
    items = [(tuple(int(c) for c in np.atleast_1d(x)), float(w)) for x, w in dict(mu).items()]
    rho = np.atleast_1d(np.asarray(rho, dtype=np.int64))
    d = rho.shape[0]
    if not items:
        return True
    X = np.array([x for x, _ in items], dtype=np.int64).reshape(-1, d)
    w = np.array([v for _, v in items])
    lo = np.minimum(X.min(axis=0), rho) - 1
    hi = np.maximum(X.max(axis=0), rho) + 1
    axes = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    F = np.vectorize(lambda *c: float(f(np.array(c))), otypes=[float])(*[grid[..., i] for i in range(d)])
    first = max(float(np.abs(np.diff(F, axis=i)).max()) for i in range(d))
    if first > m + tol:
        raise HypothesisViolated(1, f"first difference {first:.6g} exceeds m={m}")
    second = 0.0
    for i in range(d):
        for j in range(d):
            if F.shape[i] < 2 or F.shape[j] < 2:
                continue
            g = np.diff(np.diff(F, axis=i), axis=j)
            if g.size:
                second = max(second, float(np.abs(g).max()))
    if second > k + tol:
        raise HypothesisViolated(2, f"second difference {second:.6g} exceeds k={k}")
    if abs(w.sum()) > tol * max(1.0, np.abs(w).sum()):
        raise HypothesisViolated(3, f"total mass {w.sum():.3g} is not zero")
    first_moment = float(np.abs(w @ X).sum())
    if first_moment > L + tol:
        raise HypothesisViolated(4, f"first moment {first_moment:.6g} exceeds L={L}")
    second_moment = float((np.abs(X - rho).sum(axis=1) ** 2 * np.abs(w)).sum())
    if second_moment > J + tol:
        raise HypothesisViolated(5, f"second moment {second_moment:.6g} exceeds J={J}")
    lhs = abs(sum(v * float(f(np.array(x))) for x, v in items))
    return lhs <= L * m + 0.5 * J * k + tol
