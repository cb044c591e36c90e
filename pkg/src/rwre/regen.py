"""Regeneration-time detection and slab statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import _engine
from ._hash import derive_seed
from .env import _EMPTY_OVERLAY, EnvironmentLaw
from .errors import InsufficientData
from .scales import scale_R
from .walk import StopRule, Trajectory, run_annealed


@dataclass(frozen=True)
class RegenerationRecord:
    tau: int
    position: tuple[int, ...]
    slab_duration: int
    slab_displacement: tuple[int, ...]
    radius: int
    certified_margin: float


def _unit_direction(direction, d: int) -> np.ndarray:
    v = np.asarray(direction, dtype=float).reshape(-1)
    if v.shape[0] != d:
        raise ValueError("direction has the wrong dimension")
    n = np.linalg.norm(v)
    if n == 0:
        raise ValueError("direction must be nonzero")
    return v / n


def _projections(traj, direction) -> tuple[np.ndarray, np.ndarray]:
    pos = traj.positions if isinstance(traj, Trajectory) else np.asarray(traj, dtype=np.int64)
    if pos.ndim == 1:
        pos = pos.reshape(-1, 1)
    return pos, pos @ _unit_direction(direction, pos.shape[1])


def regeneration_candidates(proj: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Times satisfying the three regeneration conditions on a finite horizon.

    Returns ``(times, margins)`` where the margin of ``t`` is how far the
    observed future from ``t+1`` on climbed above the level of ``X_{t+1}``.
    """
    p = np.asarray(proj, dtype=float)
    n = p.shape[0] - 1
    if n < 1:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    prefix = np.maximum.accumulate(p)
    before = np.concatenate(([-np.inf], prefix[:-1]))  # max over s < t
    suffix_min = np.minimum.accumulate(p[::-1])[::-1]
    suffix_max = np.maximum.accumulate(p[::-1])[::-1]
    after = np.concatenate((suffix_min[2:], [np.inf, np.inf]))  # min over s >= t+2
    t = np.arange(n)
    ok = (p[t] > before[t]) & (p[t + 1] > p[t]) & (after[t] > p[t + 1])
    times = t[ok]
    margins = suffix_max[times + 1] - p[times + 1]
    return times.astype(np.int64), margins


def brute_regeneration_times(proj) -> np.ndarray:
    """Quadratic-time reference for :func:`regeneration_candidates` (times only)."""
    p = [float(v) for v in np.asarray(proj, dtype=float)]
    n = len(p) - 1
    out = []
    for t in range(n):
        if any(p[s] >= p[t] for s in range(t)):
            continue
        if not p[t + 1] > p[t]:
            continue
        if any(p[s] <= p[t + 1] for s in range(t + 2, n + 1)):
            continue
        out.append(t)
    return np.array(out, dtype=np.int64)


def detect_regenerations(traj, direction) -> list[RegenerationRecord]:
    """All regeneration times of an observed path in ``direction``, in time order.

    Slab ``n`` runs from the previous record (time 0 for the first) to
    ``tau_n``; its radius is the largest sup-norm excursion from the slab's
    starting point.
    """
    pos, proj = _projections(traj, direction)
    times, margins = regeneration_candidates(proj)
    out: list[RegenerationRecord] = []
    prev = 0
    for t, m in zip(times.tolist(), margins.tolist()):
        seg = pos[prev : t + 1]
        radius = int(np.abs(seg - pos[prev]).max()) if seg.size else 0
        out.append(
            RegenerationRecord(
                tau=t,
                position=tuple(pos[t].tolist()),
                slab_duration=t - prev,
                slab_displacement=tuple((pos[t] - pos[prev]).tolist()),
                radius=radius,
                certified_margin=float(m),
            )
        )
        prev = t
    return out


def certified(records, min_margin: float) -> list[RegenerationRecord]:
    return [r for r in records if r.certified_margin >= min_margin]


# ------------------------------------------------------------------ summaries

@dataclass
class SlabAccumulator:
    """Count / sum / sum-of-squares form so batches merge associatively."""

    d: int
    count: int = 0
    sum_duration: float = 0.0
    sum_disp: np.ndarray = field(default=None)
    sum_outer: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.sum_disp is None:
            self.sum_disp = np.zeros(self.d)
        if self.sum_outer is None:
            self.sum_outer = np.zeros((self.d, self.d))

    def add(self, duration: float, displacement) -> None:
        y = np.asarray(displacement, dtype=float)
        self.count += 1
        self.sum_duration += duration
        self.sum_disp += y
        self.sum_outer += np.outer(y, y)

    def merge(self, other: "SlabAccumulator") -> "SlabAccumulator":
        return SlabAccumulator(
            self.d,
            self.count + other.count,
            self.sum_duration + other.sum_duration,
            self.sum_disp + other.sum_disp,
            self.sum_outer + other.sum_outer,
        )

    def summary(self) -> "RegenerationSummary":
        if self.count < 1:
            raise InsufficientData("no slabs")
        n = self.count
        rho = self.sum_duration / n
        U = self.sum_disp / n
        if n > 1:
            cov = (self.sum_outer - n * np.outer(U, U)) / (n - 1)
        else:
            cov = np.zeros((self.d, self.d))
        cov = 0.5 * (cov + cov.T)
        v = U / rho
        nv = np.linalg.norm(v)
        theta = v / nv if nv > 0 else np.full(self.d, np.nan)
        return RegenerationSummary(rho, U, cov, v, theta, n)


@dataclass(frozen=True)
class RegenerationSummary:
    mean_duration: float
    mean_displacement: np.ndarray
    displacement_covariance: np.ndarray
    velocity: np.ndarray
    direction: np.ndarray
    count: int

    def to_json(self) -> dict:
        return {
            "count": int(self.count),
            "rho_hat": float(self.mean_duration),
            "U_hat": [float(x) for x in self.mean_displacement],
            "sigma2": [[float(x) for x in row] for row in self.displacement_covariance],
            "v_hat": [float(x) for x in self.velocity],
        }


def slab_increments(records, min_margin: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Durations and displacements between consecutive usable records.

    The stretch before the first usable record is dropped because it is not
    distributed like the others.
    """
    kept = certified(records, min_margin)
    if len(kept) < 2:
        raise InsufficientData(f"need at least 2 usable records, have {len(kept)}")
    taus = np.array([r.tau for r in kept], dtype=np.int64)
    pos = np.array([r.position for r in kept], dtype=np.int64)
    return np.diff(taus), np.diff(pos, axis=0)


def summarize(records, min_margin: float = 0.0) -> RegenerationSummary:
    durations, disp = slab_increments(records, min_margin)
    acc = SlabAccumulator(disp.shape[1])
    for t, y in zip(durations, disp):
        acc.add(float(t), y)
    return acc.summary()


def event_A_N(records, N: int, radius: int | None = None) -> bool:
    """True iff the first ``N`` regeneration radii are all below ``R_1(N)``.

    ``radius`` replaces ``R_1(N)``, which is needed for ``N < 3``.
    """
    if N <= 0:
        return True
    if len(records) < N:
        raise InsufficientData(f"need {N} records, have {len(records)}")
    bound = scale_R(1, N) if radius is None else radius
    return all(r.radius < bound for r in records[:N])


# ------------------------------------------------------------------ diagnostics

@dataclass(frozen=True)
class IIDReport:
    n: int
    autocorr_duration: float
    autocorr_projection: float
    ks_duration_p: float
    ks_projection_p: float
    significance: float
    passed: bool

    def to_json(self) -> dict:
        return {k: (bool(v) if isinstance(v, (bool, np.bool_)) else v) for k, v in self.__dict__.items()}


def lag1_autocorrelation(x) -> float:
    x = np.asarray(x, dtype=float)
    if x.size < 3:
        return float("nan")
    y = x - x.mean()
    denom = float(y @ y)
    if denom == 0.0:
        return 0.0
    return float(y[:-1] @ y[1:]) / denom


def _iid_stats(durations, projections, significance: float) -> IIDReport:
    n = len(durations)
    r_t = lag1_autocorrelation(durations)
    r_p = lag1_autocorrelation(projections)
    h = n // 2
    ks_t = float(stats.ks_2samp(durations[:h], durations[h:]).pvalue)
    ks_p = float(stats.ks_2samp(projections[:h], projections[h:]).pvalue)
    z = stats.norm.ppf(1 - significance / 2) / math.sqrt(n)
    ok = abs(r_t) < z and abs(r_p) < z and ks_t >= significance and ks_p >= significance
    return IIDReport(n, r_t, r_p, ks_t, ks_p, significance, bool(ok))


def iid_diagnostics(records, direction=None, min_margin: float = 0.0, significance: float = 0.01) -> IIDReport:
    """Lag-1 autocorrelation and half-vs-half KS tests on slab increments."""
    durations, disp = slab_increments(records, min_margin)
    if len(durations) < 100:
        raise InsufficientData(f"need at least 100 slabs, have {len(durations)}")
    ell = np.eye(disp.shape[1])[0] if direction is None else _unit_direction(direction, disp.shape[1])
    return _iid_stats(durations.astype(float), disp @ ell, significance)


def iid_diagnostics_arrays(durations, projections, significance: float = 0.01) -> IIDReport:
    durations = np.asarray(durations, dtype=float)
    projections = np.asarray(projections, dtype=float)
    if len(durations) < 100:
        raise InsufficientData(f"need at least 100 slabs, have {len(durations)}")
    return _iid_stats(durations, projections, significance)


# ------------------------------------------------------------------ tau_1 tails

@dataclass(frozen=True)
class Tau1Table:
    u: np.ndarray
    survival: np.ndarray
    stderr: np.ndarray
    censored_frac: float
    drift_positive: bool
    n_samples: int

    def to_csv(self) -> str:
        lines = ["u,survival,stderr,censored_frac"]
        for u, s, e in zip(self.u, self.survival, self.stderr):
            lines.append(f"{int(u)},{s:.10g},{e:.10g},{self.censored_frac:.10g}")
        return "\n".join(lines) + "\n"


def _pilot_drift_positive(law, ell, seed, horizon, n_pilot=200) -> bool:
    lawp = law.engine_params()
    stp = StopRule.step_budget(horizon).engine_params(law.d)
    ends, _, _ = _engine.batch_ends(
        np.zeros(law.d, dtype=np.int64), n_pilot, 0,
        np.uint64(derive_seed(seed, "pilot-walk")), np.uint64(0), True,
        np.uint64(derive_seed(seed, "pilot-env")), lawp, _EMPTY_OVERLAY[law.d], stp,
    )
    proj = ends @ ell
    se = proj.std(ddof=1) / math.sqrt(n_pilot) if n_pilot > 1 else 0.0
    return bool(proj.mean() > 3 * se and proj.mean() > 0)


def tau1_tail(
    law: EnvironmentLaw,
    direction,
    u_grid,
    n_samples: int,
    seed: int,
    min_margin: float = 1.0,
    horizon: int | None = None,
) -> Tau1Table:
    """Empirical ``P(tau_1 > u)`` under the annealed law.

    Each sample runs ``horizon`` steps (default ``2 * max(u) + 50``);
    ``tau_1`` is the first regeneration with margin at least ``min_margin``.
    Samples with no such regeneration by ``max(u)`` count as ``tau_1 >
    max(u)`` and are reported as censored.  If a pilot run shows no positive
    drift along ``direction`` every sample is censored.
    """
    u = np.asarray(sorted(int(x) for x in u_grid), dtype=np.int64)
    umax = int(u[-1])
    H = int(horizon) if horizon is not None else 2 * umax + 50
    ell = _unit_direction(direction, law.d)
    drift_ok = _pilot_drift_positive(law, ell, seed, max(H, 100))
    tau1 = np.full(n_samples, np.iinfo(np.int64).max, dtype=np.int64)
    censored = np.ones(n_samples, dtype=bool)
    if drift_ok:
        stop = StopRule.step_budget(H)
        start = np.zeros(law.d, dtype=np.int64)
        for i in range(n_samples):
            traj, _ = run_annealed(law, start, stop, seed, i)
            times, margins = regeneration_candidates(traj.positions @ ell)
            good = times[(margins >= min_margin) & (times <= umax)]
            if good.size:
                tau1[i] = good[0]
                censored[i] = False
    surv = np.array([(tau1 > x).mean() for x in u])
    se = np.sqrt(surv * (1 - surv) / max(n_samples, 1))
    return Tau1Table(u, surv, se, float(censored.mean()), drift_ok, n_samples)


__all__ = [
    "RegenerationRecord",
    "RegenerationSummary",
    "SlabAccumulator",
    "IIDReport",
    "Tau1Table",
    "regeneration_candidates",
    "detect_regenerations",
    "certified",
    "slab_increments",
    "summarize",
    "event_A_N",
    "lag1_autocorrelation",
    "iid_diagnostics",
    "iid_diagnostics_arrays",
    "tau1_tail",
]
