"""(lambda, K)-closeness certificates via cube matching.

Given laws ``mu1`` and ``mu2`` on ``Z^d`` the coupling is built as follows.

* ``Z2 = X ~ mu2``.
* Partition the lattice into cubes of side ``s`` anchored at the lower
  corner of the joint support.  Draw ``Y'`` from ``mu1`` conditioned on the
  cube of ``X``.
* ``U`` rounds each coordinate of ``m = E mu1 - E Y'`` up or down at random
  so that ``E U = m``; set ``Z0 = Y' + U``.
* ``Z1`` is the maximal coupling of ``mu1`` with the law of ``Z0``.

Then ``E Z0 = E Z1`` by construction and ``||Z0 - Z2||_inf`` is bounded by
the cube side plus the rounded shift.  The five conditions checked are

1. ``Z1 ~ mu1`` and ``Z2 ~ mu2``;
2. ``P(Z1 != Z0) <= lambda``;
3. ``||Z0 - Z2||_inf <= K`` surely;
4. ``E Z1 = E Z0``;
5. ``sum_x |P(Z1=x) - P(Z0=x)| ||x - E Z1||_1^2 <= lambda var(Z1)``, with
   ``var`` the trace of the covariance.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from functools import cached_property
from itertools import product

import numpy as np

from ..errors import InfeasibleCoupling
from .dist import LatticeDist, aligned

TOL = 1e-9


@dataclass(frozen=True, eq=False)
class CouplingPlan:
    """One cube-matching coupling (fixed cube side)."""

    mu1: LatticeDist
    mu2: LatticeDist
    side: int
    anchor: np.ndarray
    shift: np.ndarray  # m = E mu1 - E Y'
    law_y: LatticeDist
    law_z0: LatticeDist
    displacement: int
    _cubes1: dict = field(repr=False)

    # rounding variable --------------------------------------------------------
    def shift_atoms(self) -> tuple[np.ndarray, np.ndarray]:
        """Support and probabilities of ``U``."""
        fl = np.floor(self.shift)
        fr = self.shift - fl
        opts = []
        for f, p in zip(fl, fr):
            if p <= 0:
                opts.append(((int(f), 1.0),))
            else:
                opts.append(((int(f), 1.0 - p), (int(f) + 1, p)))
        atoms, probs = [], []
        for combo in product(*opts):
            atoms.append([c[0] for c in combo])
            probs.append(float(np.prod([c[1] for c in combo])))
        return np.array(atoms, dtype=np.int64), np.array(probs)

    # clause evaluation -------------------------------------------------------
    @cached_property
    def clauses(self) -> dict:
        p_sites, p1, p0 = aligned(self.mu1, self.law_z0)
        overlap = np.minimum(p1, p0)
        resid = np.clip(p1 - p0, 0.0, None)
        rtot = resid.sum()
        z1_marg = overlap + ((1.0 - overlap.sum()) * resid / rtot if rtot > 0 else 0.0)
        mean1 = self.mu1.mean()
        c5 = float(np.sum(np.abs(p1 - p0) * np.abs(p_sites - mean1).sum(axis=1) ** 2))
        return {
            "marginal_error": float(np.abs(z1_marg - p1).max()),
            "mismatch": float(1.0 - overlap.sum()),
            "displacement": int(self.displacement),
            "mean_gap": float(np.abs(self.law_z0.mean() - mean1).max()),
            "variance_sum": c5,
            "variance": float(self.mu1.variance()),
        }

    @cached_property
    def lambda_needed(self) -> float:
        c = self.clauses
        v = c["variance"]
        r5 = c["variance_sum"] / v if v > 0 else (0.0 if c["variance_sum"] <= TOL else np.inf)
        return max(c["mismatch"], r5)

    # sampling ----------------------------------------------------------------
    def sample_z0(self, x, rng: np.random.Generator) -> np.ndarray:
        """``Z0`` given realised values of ``X`` (rows)."""
        x = np.atleast_2d(np.asarray(x, dtype=np.int64))
        cube = np.floor_divide(x - self.anchor, self.side)
        atoms, aprob = self.shift_atoms()
        out = np.empty_like(x)
        for i, c in enumerate(map(tuple, cube)):
            if c not in self._cubes1:
                raise InfeasibleCoupling(f"cube of {x[i].tolist()} carries no mass of the target law")
            sites, cp = self._cubes1[c]
            y = sites[rng.choice(len(cp), p=cp)]
            out[i] = y + atoms[rng.choice(len(aprob), p=aprob)]
        return out

    def z0_probability(self, x, z0) -> float:
        """``P(Z0 = z0 | Z2 = x)`` under the plan."""
        x = np.asarray(x, dtype=np.int64)
        z0 = np.asarray(z0, dtype=np.int64)
        c = tuple(np.floor_divide(x - self.anchor, self.side).tolist())
        if c not in self._cubes1:
            return 0.0
        sites, cp = self._cubes1[c]
        atoms, aprob = self.shift_atoms()
        total = 0.0
        for a, pa in zip(atoms, aprob):
            hit = np.all(sites == z0 - a, axis=1)
            total += pa * float(cp[hit].sum())
        return total

    def sample_z1(self, z0, rng: np.random.Generator) -> np.ndarray:
        """``Z1`` from the maximal coupling, given ``Z0``."""
        z0 = np.atleast_2d(np.asarray(z0, dtype=np.int64))
        sites, p1, p0 = aligned(self.mu1, self.law_z0)
        resid = np.clip(p1 - p0, 0.0, None)
        rtot = resid.sum()
        table = {tuple(s): (a, b) for s, a, b in zip(sites.tolist(), p1, p0)}
        out = z0.copy()
        for i, z in enumerate(map(tuple, z0.tolist())):
            a, b = table[z]
            keep = min(a, b) / b
            if rng.random() >= keep and rtot > 0:
                out[i] = sites[rng.choice(len(resid), p=resid / rtot)]
        return out

    def sample(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``n`` joint draws of ``(Z1, Z0, Z2)``."""
        x = self.mu2.sites[rng.choice(self.mu2.size, size=n, p=self.mu2.probs / self.mu2.total)]
        z0 = self.sample_z0(x, rng)
        return self.sample_z1(z0, rng), z0, x


def _cube_ids(sites: np.ndarray, anchor: np.ndarray, s: int) -> np.ndarray:
    return np.floor_divide(sites - anchor, s)


def build_plan(mu1: LatticeDist, mu2: LatticeDist, side: int) -> CouplingPlan | None:
    """Cube-matching coupling with cube side ``side``; ``None`` if infeasible."""
    mu1 = mu1.normalized()
    mu2 = mu2.normalized()
    anchor = np.minimum(mu1.sites.min(axis=0), mu2.sites.min(axis=0))
    c1 = _cube_ids(mu1.sites, anchor, side)
    c2 = _cube_ids(mu2.sites, anchor, side)
    allc, inv = np.unique(np.vstack([c1, c2]), axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    i1, i2 = inv[: len(c1)], inv[len(c1):]
    m1 = np.bincount(i1, weights=mu1.probs, minlength=len(allc))
    m2 = np.bincount(i2, weights=mu2.probs, minlength=len(allc))
    if np.any((m2 > 0) & (m1 <= 0)):
        return None
    # law of Y': mu1 reweighted cube by cube
    wy = mu1.probs * np.where(m1[i1] > 0, m2[i1] / np.where(m1[i1] > 0, m1[i1], 1.0), 0.0)
    law_y = LatticeDist(mu1.sites, wy)
    shift = mu1.mean() - law_y.mean()
    shift = np.where(np.abs(shift - np.rint(shift)) < 1e-12, np.rint(shift), shift)
    plan = CouplingPlan(mu1, mu2, side, anchor, shift, law_y, law_y, 0, {})
    atoms, aprob = plan.shift_atoms()
    z0 = LatticeDist(
        np.vstack([law_y.sites + a for a in atoms]),
        np.concatenate([law_y.probs * p for p in aprob]),
    )
    # exact worst displacement, coordinate by coordinate and cube by cube
    d = mu1.d
    big = np.iinfo(np.int64).max // 4
    ymin = np.full((len(allc), d), big)
    ymax = np.full((len(allc), d), -big)
    xmin = np.full((len(allc), d), big)
    xmax = np.full((len(allc), d), -big)
    pos1 = mu1.probs > 0
    np.minimum.at(ymin, i1[pos1], mu1.sites[pos1])
    np.maximum.at(ymax, i1[pos1], mu1.sites[pos1])
    np.minimum.at(xmin, i2, mu2.sites)
    np.maximum.at(xmax, i2, mu2.sites)
    live = m2 > 0
    disp = 0
    if np.any(live):
        up = ymax[live] - xmin[live] + atoms.max(axis=0)
        down = xmax[live] - ymin[live] - atoms.min(axis=0)
        disp = int(max(up.max(), down.max(), 0))
    cubes1 = {}
    for k in np.unique(i1[pos1]):
        sel = (i1 == k) & pos1
        cubes1[tuple(allc[k].tolist())] = (mu1.sites[sel], mu1.probs[sel] / mu1.probs[sel].sum())
    return CouplingPlan(mu1, mu2, side, anchor, shift, law_y, z0, disp, cubes1)


def coupling_plans(mu1: LatticeDist, mu2: LatticeDist) -> list[CouplingPlan]:
    """Feasible plans for every cube side up to the joint support span."""
    lo = np.minimum(mu1.sites.min(axis=0), mu2.sites.min(axis=0))
    hi = np.maximum(mu1.sites.max(axis=0), mu2.sites.max(axis=0))
    span = int((hi - lo).max())
    plans = []
    for s in range(1, span + 2):
        p = build_plan(mu1, mu2, s)
        if p is not None:
            plans.append(p)
    return plans


@dataclass(frozen=True)
class ClosenessCertificate:
    """Numbers of every checked condition for an issued coupling."""

    lam: float
    K: float
    side: int
    lambda_measured: float
    marginal_error: float
    mismatch: float
    displacement: int
    mean_gap: float
    variance_sum: float
    variance_budget: float
    ok: bool = True
    plan: CouplingPlan | None = field(default=None, repr=False, compare=False)

    def to_json(self) -> str:
        data = {k: v for k, v in asdict(self).items() if k != "plan"}
        return json.dumps(data, sort_keys=True)


@dataclass(frozen=True)
class ClosenessRefusal:
    """Best candidate coupling and the conditions it violates."""

    lam: float
    K: float
    violated: tuple[int, ...]
    side: int | None
    values: dict
    ok: bool = False

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _violations(c: dict, lam: float, K: float) -> tuple[int, ...]:
    bad = []
    if c["marginal_error"] > TOL:
        bad.append(1)
    if c["mismatch"] > lam + TOL:
        bad.append(2)
    if c["displacement"] > K:
        bad.append(3)
    if c["mean_gap"] > TOL:
        bad.append(4)
    if c["variance_sum"] > lam * c["variance"] + TOL:
        bad.append(5)
    return tuple(bad)


def _certificate(plan: CouplingPlan, lam: float, K: float) -> ClosenessCertificate:
    c = plan.clauses
    return ClosenessCertificate(
        float(lam), float(K), plan.side, plan.lambda_needed, c["marginal_error"], c["mismatch"],
        c["displacement"], c["mean_gap"], c["variance_sum"], lam * c["variance"], True, plan,
    )


def check_closeness(mu1: LatticeDist, mu2: LatticeDist, lam: float, K: float):
    """Certificate that ``mu1`` is (lam, K)-close to ``mu2``, or a refusal.

    Every feasible cube side whose worst displacement is at most ``K`` is
    tried; the one needing the smallest lambda is certified.  If none passes,
    the refusal reports the candidate with the largest such side.  Raises
    :class:`InfeasibleCoupling` when the rounded mean shift alone exceeds
    ``K`` for every side.
    """
    if mu1.d != mu2.d:
        raise ValueError("dimension mismatch")
    if not 0 <= lam <= 1:
        raise ValueError("lambda must lie in [0, 1]")
    plans = coupling_plans(mu1, mu2)
    if not plans or all(int(np.ceil(np.abs(p.shift).max() - 1e-12)) > K for p in plans):
        raise InfeasibleCoupling("mean mismatch exceeds what a shift bounded by K can absorb")
    within = [p for p in plans if p.displacement <= K]
    if not within:
        best = min(plans, key=lambda p: p.displacement)
        c = best.clauses
        return ClosenessRefusal(float(lam), float(K), _violations(c, lam, K), best.side, c)
    passing = [p for p in within if not _violations(p.clauses, lam, K)]
    if passing:
        return _certificate(min(passing, key=lambda p: (p.lambda_needed, p.side)), lam, K)
    best = max(within, key=lambda p: p.side)
    c = best.clauses
    return ClosenessRefusal(float(lam), float(K), _violations(c, lam, K), best.side, c)


def audit_certificate(cert: ClosenessCertificate) -> dict:
    """Recompute the conditions of an issued certificate from the raw plan.

    Works cube by cube over the support of ``mu2`` rather than through the
    cached clause values: the sure displacement, the mean of ``Z0`` as a
    mixture over ``X``, the mismatch and the variance sum of the maximal
    coupling.
    """
    plan = cert.plan
    if plan is None:
        raise ValueError("certificate carries no plan")
    atoms, aprob = plan.shift_atoms()
    mu2 = plan.mu2.normalized()
    mean_u = aprob @ atoms
    disp = 0
    mean_z0 = np.zeros(mu2.d)
    for x, px in zip(mu2.sites, mu2.probs):
        if px <= 0:
            continue
        c = tuple(np.floor_divide(x - plan.anchor, plan.side).tolist())
        sites, cp = plan._cubes1[c]
        for a in atoms:
            disp = max(disp, int(np.abs(sites + a - x).max()))
        mean_z0 += px * (cp @ sites + mean_u)
    mu1 = plan.mu1.normalized()
    sites, p1, p0 = aligned(mu1, plan.law_z0)
    mismatch = float(1.0 - np.minimum(p1, p0).sum())
    m1 = mu1.mean()
    vsum = float(np.sum(np.abs(p1 - p0) * np.abs(sites - m1).sum(axis=1) ** 2))
    var = float(np.trace(np.atleast_2d(mu1.covariance())))
    return {
        "displacement": disp,
        "mean_gap": float(np.abs(mean_z0 - m1).max()),
        "mismatch": mismatch,
        "variance_sum": vsum,
        "clause2": mismatch <= cert.lam + TOL,
        "clause3": disp <= cert.K,
        "clause4": float(np.abs(mean_z0 - m1).max()) <= TOL,
        "clause5": vsum <= cert.lam * var + TOL,
    }


def smallest_lambda(mu1: LatticeDist, mu2: LatticeDist, K: float) -> tuple[float, CouplingPlan | None]:
    """Smallest lambda any plan with displacement at most ``K`` achieves."""
    within = [p for p in coupling_plans(mu1, mu2) if p.displacement <= K]
    if not within:
        return np.inf, None
    best = min(within, key=lambda p: p.lambda_needed)
    return best.lambda_needed, best


@dataclass(frozen=True, eq=False)
class CompanionSampler:
    """Draws a companion for realised values of ``X``.

    The companion is ``Z0`` of a cube-matching plan with ``mu1 = target`` and
    ``mu2 = law(X)``: its displacement from ``X`` is at most ``K`` surely and
    the target is (lam, 0)-close to its law.
    """

    plan: CouplingPlan
    lam: float

    @property
    def K(self) -> int:
        return self.plan.displacement

    def companion(self, x, rng: np.random.Generator) -> np.ndarray:
        return self.plan.sample_z0(x, rng)

    def sample(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """``n`` joint draws of ``(X, companion)``."""
        p = self.plan.mu2
        x = p.sites[rng.choice(p.size, size=n, p=p.probs / p.total)]
        return x, self.plan.sample_z0(x, rng)


def companion_sampler(x_table: LatticeDist, target: LatticeDist, lam: float) -> CompanionSampler:
    """Companion construction with the smallest displacement meeting ``lam``.

    Raises :class:`InfeasibleCoupling` if no cube side gives a law within
    ``lam`` of the target.
    """
    plans = coupling_plans(target, x_table)
    ok = [p for p in plans if p.lambda_needed <= lam + TOL]
    if not ok:
        raise InfeasibleCoupling("no cube side yields a companion within the lambda budget")
    return CompanionSampler(min(ok, key=lambda p: (p.displacement, p.side)), float(lam))
