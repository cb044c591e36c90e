"""Front exit tables across scales and checks of how they add up."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .._hash import derive_seed
from ..env import EnvironmentLaw
from ..geom import BlockSpec
from ..regen import detect_regenerations
from ..scales import scale_R
from ..walk import StopRule, run_annealed
from .closeness import check_closeness, smallest_lambda
from .dist import LatticeDist, Region
from .exact import exit_distribution
from .histogram import estimate_exit

_TABLES: dict = {}


def annealed_front_table(law: EnvironmentLaw, N: int, width: float | None = None, theta=None,
                         n_samples: int = 100_000, seed: int = 0, method: str = "auto") -> LatticeDist:
    """Annealed exit law from the centre of a size-``N`` block, given front exit.

    Single-kernel laws are solved exactly (direct solve or mass transport);
    other laws fall back to an annealed Monte Carlo histogram.  Results are
    cached per argument tuple.
    """
    key = (law, N, width, theta, n_samples, seed, method)
    if key in _TABLES:
        return _TABLES[key]
    block = BlockSpec((0,) * law.d, N, theta, width)
    if law.single_kernel and method != "mc":
        table = exit_distribution(law, Region.from_block(block), block.center,
                                  "auto" if method == "auto" else method).front()
    else:
        h = estimate_exit(law, Region.from_block(block), block.center, n_samples, seed,
                          max(10**5, 50 * block.depth))
        table = h.front_dist()
    _TABLES[key] = table
    return table


@dataclass(frozen=True)
class LadderReport:
    n: int
    N: int
    h: int
    lambda_budget: float
    K_budget: float
    lambda_measured: float
    passed: bool
    slack: float
    violated: tuple[int, ...]

    def to_json(self) -> dict:
        return asdict(self)


def ladder_budget(N: int, n: int, lam: float, K: float, h: int = 5) -> tuple[float, float]:
    """``(lam R_{h+1}(N), 2 n K R_{h+1}(N))``."""
    r = scale_R(h + 1, max(N, 3))
    return lam * r, 2 * n * K * r


def sum_ladder_check(base: LatticeDist, target: LatticeDist, n: int, lam: float, K: float, N: int,
                     summands=None, h: int = 5) -> LadderReport:
    """Closeness of a sum of ``n`` summands to the next-scale table.

    ``summands`` lists the laws of the independent summands (each assumed
    (lam, K)-close to ``base``); by default ``n`` copies of ``base``.  The
    law of the sum is formed by exact convolution and checked against
    ``target`` with the enlarged budget from :func:`ladder_budget`.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if lam > 0 and n >= 1 / lam:
        raise ValueError("need n < 1/lambda")
    laws = [base] * n if summands is None else list(summands)
    if len(laws) != n:
        raise ValueError("need exactly n summand laws")
    s = laws[0]
    for law in laws[1:]:
        s = s.convolve(law)
    lam_b, K_b = ladder_budget(N, n, lam, K, h)
    lam_b = min(lam_b, 1.0)
    measured, _ = smallest_lambda(s, target, K_b)
    res = check_closeness(s, target, lam_b, K_b)
    return LadderReport(n, N, h, lam_b, K_b, float(measured), bool(res.ok), float(lam_b - measured),
                        () if res.ok else tuple(res.violated))


def adversarial_summand(base: LatticeDist, lam: float, K: int, axis: int = 1, steps: int = 30) -> LatticeDist:
    """Perturbation of ``base`` pushed as far as a (lam, K) certificate allows.

    Mass ``t`` is moved half to ``+K e_axis`` and half to ``-K e_axis``; the
    largest certified ``t <= lam`` is located by bisection.
    """
    e = np.zeros(base.d, dtype=np.int64)
    e[axis] = K

    def mixed(t):
        return LatticeDist(
            np.vstack([base.sites, base.sites + e, base.sites - e]),
            np.concatenate([(1 - t) * base.probs, t / 2 * base.probs, t / 2 * base.probs]),
        )

    lo, hi = 0.0, lam
    if check_closeness(mixed(hi), base, lam, K).ok:
        return mixed(hi)
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        if check_closeness(mixed(mid), base, lam, K).ok:
            lo = mid
        else:
            hi = mid
    return mixed(lo)


@dataclass(frozen=True)
class DecompositionReport:
    N: int
    j: int
    n_samples: int
    median: float
    quantiles: dict
    tail_k: tuple[int, ...]
    tail_survival: tuple[float, ...]
    fit: tuple[float, float, float] | None
    max_slab_radius: int
    missing: int

    def to_json(self) -> dict:
        return asdict(self)


def _fit_stretched_exp(k: np.ndarray, surv: np.ndarray):
    # log(-log(S/C)) is linear in log k only for C fixed; fit C = 1 first
    ok = (surv > 0) & (surv < 1) & (k > 0)
    if ok.sum() < 3:
        return None
    x = np.log(k[ok])
    y = np.log(-np.log(surv[ok]))
    g, lc = np.polyfit(x, y, 1)
    return 1.0, float(np.exp(lc)), float(g)


def convolution_decomposition_check(law: EnvironmentLaw, N: int, j: int, n_samples: int = 2000, seed: int = 0,
                                    min_margin: float = 1.0) -> DecompositionReport:
    """Split the level-``j N^2`` hitting site into two glued pieces plus a remainder.

    One annealed walk gives ``U = X_T(jN^2)``.  With ``tau`` the first
    regeneration after ``T(N^2)``, ``U_hat = X_T(N^2) + (U - X_tau)`` is a sum
    of a scale-``N`` piece and an (almost) independent scale-``N sqrt(j-1)``
    piece, and ``U' = X_tau - X_T(N^2)``.  Reports the tail of ``||U'||_inf``.
    """
    d = law.d
    e1 = np.zeros(d)
    e1[0] = 1.0
    if j <= 1:
        return DecompositionReport(N, j, n_samples, 0.0, {"0.5": 0.0, "0.9": 0.0, "0.99": 0.0}, (0,), (0.0,), None, 0, 0)
    level1, level_j = N * N, j * N * N
    # run past the top level so late regenerations can be certified
    stop = StopRule.halfspace(e1, level_j + N * N, budget=10**7)
    root = derive_seed(seed, "decomposition", N, j)
    norms, radii, missing = [], [0], 0
    for i in range(n_samples):
        traj, _ = run_annealed(law, np.zeros(d, dtype=np.int64), stop, root, i)
        pos = traj.positions
        t1 = int(np.argmax(pos[:, 0] >= level1))
        all_recs = detect_regenerations(traj, e1)
        recs = [r for r in all_recs if r.tau >= t1 and r.certified_margin >= min_margin]
        if not recs:
            missing += 1
            continue
        tau = recs[0].tau
        radii.append(max(r.radius for r in all_recs))
        norms.append(int(np.abs(pos[tau] - pos[t1]).max()))
    v = np.asarray(norms, dtype=float)
    if v.size == 0:
        raise ValueError("no regeneration observed; increase the horizon or samples")
    ks = np.arange(0, int(v.max()) + 2)
    surv = np.array([(v > k).mean() for k in ks])
    q = {str(p): float(np.quantile(v, p)) for p in (0.5, 0.9, 0.99)}
    return DecompositionReport(N, j, int(v.size), float(np.median(v)), q, tuple(ks.tolist()),
                               tuple(surv.tolist()), _fit_stretched_exp(ks.astype(float), surv),
                               int(max(radii)), missing)
