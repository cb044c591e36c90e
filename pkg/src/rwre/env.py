"""Single-site kernel laws, seeded i.i.d. environments, drift and nestling class.

A kernel in dimension ``d`` is a vector of ``2d`` probabilities ordered
``(+e1, -e1, +e2, -e2, ...)``.  Environments are never stored: the kernel at
a site is a pure function of ``(env_seed, site)`` computed by a counter-based
hash, so arbitrarily large regions cost nothing until queried.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, QhullError

from . import _engine
from ._hash import env_key
from .errors import InvalidRadius, NotNestling, UnsupportedLaw

SUM_TOL = 1e-12


def directions(d: int) -> np.ndarray:
    """The ``2d`` unit steps in kernel order, shape ``(2d, d)``."""
    out = np.zeros((2 * d, d), dtype=np.int64)
    for j in range(2 * d):
        out[j, j // 2] = 1 if j % 2 == 0 else -1
    return out


def direction_index(axis: int, sign: int) -> int:
    return 2 * axis + (0 if sign > 0 else 1)


@dataclass(frozen=True)
class TransitionKernel:
    """Probabilities of the ``2d`` nearest-neighbour steps."""

    probs: tuple[float, ...]

    def __post_init__(self):
        p = tuple(float(v) for v in self.probs)
        object.__setattr__(self, "probs", p)
        if len(p) == 0 or len(p) % 2:
            raise ValueError("kernel needs an even, positive number of entries")
        if min(p) < 0:
            raise ValueError(f"negative kernel entry in {p}")
        if abs(math.fsum(p) - 1.0) > SUM_TOL:
            raise ValueError(f"kernel {p} sums to {math.fsum(p)!r}, not 1")

    @property
    def d(self) -> int:
        return len(self.probs) // 2

    def as_array(self) -> np.ndarray:
        return np.asarray(self.probs, dtype=float)

    @classmethod
    def from_array(cls, arr) -> "TransitionKernel":
        return cls(tuple(float(v) for v in np.asarray(arr, dtype=float)))


def local_drift(kernel) -> np.ndarray:
    """Mean one-step displacement ``sum_e e * omega(e)``."""
    p = kernel.as_array() if isinstance(kernel, TransitionKernel) else np.asarray(kernel, float)
    d = p.shape[-1] // 2
    return p[..., 0::2] - p[..., 1::2] if d else np.zeros(0)


class Family(str, enum.Enum):
    SRW = "srw"
    FIXED = "fixed-drift"
    MIXTURE = "finite-mixture"
    DIRICHLET = "dirichlet-perturbed"


class Nestling(str, enum.Enum):
    PLAIN = "plain_nestling"
    MARGINAL = "marginally_nestling"
    NON = "non_nestling"


def _as_rows(kernels) -> tuple[tuple[float, ...], ...]:
    rows = []
    for k in kernels:
        if isinstance(k, TransitionKernel):
            rows.append(k.probs)
        else:
            rows.append(TransitionKernel(tuple(k)).probs)
    return tuple(rows)


@dataclass(frozen=True)
class EnvironmentLaw:
    """Distribution ``Q`` of the kernel at a single site.

    Use the constructors :meth:`srw`, :meth:`fixed`, :meth:`mixture` and
    :meth:`dirichlet` rather than the raw initializer.
    """

    d: int
    eta: float
    family: Family
    kernels: tuple[tuple[float, ...], ...]
    weights: tuple[float, ...] = (1.0,)
    concentration: float | None = None

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("dimension must be >= 1")
        if not 0.0 <= self.eta <= 1.0 / (2 * self.d) + 1e-15:
            raise ValueError(f"eta={self.eta} outside [0, 1/(2d)]")
        for row in self.kernels:
            if len(row) != 2 * self.d:
                raise ValueError(f"kernel {row} has wrong length for d={self.d}")
            if min(row) < self.eta - 1e-12:
                raise ValueError(f"kernel {row} violates ellipticity eta={self.eta}")
        if len(self.weights) != len(self.kernels):
            raise ValueError("one weight per kernel required")
        if min(self.weights) < 0 or abs(math.fsum(self.weights) - 1.0) > 1e-9:
            raise ValueError("mixture weights must be nonnegative and sum to 1")
        if self.family is Family.DIRICHLET:
            if self.concentration is None or self.concentration <= 0:
                raise ValueError("dirichlet family needs a positive concentration")
            if min(self.kernels[0]) <= self.eta:
                raise ValueError("dirichlet base kernel must exceed eta in every entry")

    # constructors ----------------------------------------------------------
    @classmethod
    def srw(cls, d: int) -> "EnvironmentLaw":
        p = 1.0 / (2 * d)
        return cls(d, p, Family.SRW, ((p,) * (2 * d),))

    @classmethod
    def fixed(cls, kernel, eta: float | None = None) -> "EnvironmentLaw":
        (row,) = _as_rows([kernel])
        d = len(row) // 2
        if eta is None:
            eta = min(min(row), 1.0 / (2 * d))
        return cls(d, eta, Family.FIXED, (row,))

    @classmethod
    def mixture(cls, kernels, weights, eta: float | None = None) -> "EnvironmentLaw":
        rows = _as_rows(kernels)
        d = len(rows[0]) // 2
        if eta is None:
            eta = min(min(min(r) for r in rows), 1.0 / (2 * d))
        return cls(d, eta, Family.MIXTURE, rows, tuple(float(w) for w in weights))

    @classmethod
    def dirichlet(cls, base, concentration: float, eta: float) -> "EnvironmentLaw":
        (row,) = _as_rows([base])
        return cls(len(row) // 2, eta, Family.DIRICHLET, (row,), (1.0,), float(concentration))

    # queries ---------------------------------------------------------------
    @property
    def finite_support(self) -> bool:
        return self.family is not Family.DIRICHLET

    @property
    def single_kernel(self) -> bool:
        """True when every site carries the same kernel (annealed = quenched)."""
        if self.family in (Family.SRW, Family.FIXED):
            return True
        if self.family is Family.MIXTURE:
            support = [k for k, w in zip(self.kernels, self.weights) if w > 0]
            return len(set(support)) == 1
        return False

    def support(self) -> tuple[np.ndarray, np.ndarray]:
        """Support kernels ``(m, 2d)`` and their weights."""
        if not self.finite_support:
            raise UnsupportedLaw("dirichlet-perturbed law has continuous support")
        k = np.asarray(self.kernels, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        keep = w > 0
        return k[keep], w[keep]

    def mean_kernel(self) -> np.ndarray:
        k = np.asarray(self.kernels, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        return w @ k

    def mean_drift(self) -> np.ndarray:
        """Annealed one-step drift ``E_Q[local drift]``."""
        return local_drift(self.mean_kernel())

    def engine_params(self):
        k = np.ascontiguousarray(np.asarray(self.kernels, dtype=float))
        w = np.asarray(self.weights, dtype=float)
        cumw = np.cumsum(w)
        cumw[-1] = 1.0
        if self.family is Family.DIRICHLET:
            base = k[0]
            resid = (base - self.eta) / (1.0 - 2 * self.d * self.eta)
            alpha = self.concentration * resid / resid.sum()
            code = _engine.FAM_DIRICHLET
        else:
            alpha = np.zeros(2 * self.d)
            code = _engine.FAM_FIXED if self.single_kernel else _engine.FAM_MIXTURE
            if code == _engine.FAM_FIXED:
                k = k[w > 0][:1]
        return (np.int64(code), k, cumw, np.ascontiguousarray(alpha), float(self.eta))


@dataclass(frozen=True, eq=False)
class Overlay:
    """Finite site -> kernel replacement map, also held as a dense box."""

    items: Mapping[tuple[int, ...], tuple[float, ...]]
    d: int

    def dense(self):
        if not self.items:
            return _EMPTY_OVERLAY[self.d]
        sites = np.array(list(self.items.keys()), dtype=np.int64)
        lo = sites.min(axis=0)
        shape = sites.max(axis=0) - lo + 1
        total = int(np.prod(shape))
        mask = np.zeros(total, dtype=np.bool_)
        kern = np.zeros((total, 2 * self.d))
        flat = np.ravel_multi_index(tuple((sites - lo).T), tuple(shape))
        mask[flat] = True
        kern[flat] = np.array(list(self.items.values()), dtype=float)
        return (lo, shape.astype(np.int64), mask, kern)


_EMPTY_OVERLAY = {
    d: (np.zeros(d, np.int64), np.zeros(d, np.int64), np.zeros(0, np.bool_), np.zeros((0, 2 * d)))
    for d in range(1, 9)
}


@dataclass(frozen=True, eq=False)
class Environment:
    """A quenched environment ``omega`` addressed by ``(env_seed, site)``."""

    law: EnvironmentLaw
    env_seed: int
    overlay: Overlay | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def d(self) -> int:
        return self.law.d

    @property
    def key(self) -> np.uint64:
        return np.uint64(env_key(self.env_seed))

    def engine_args(self):
        """``(env_key, lawp, ovp)`` tuple consumed by the numba engine."""
        if "args" not in self._cache:
            ovp = self.overlay.dense() if self.overlay is not None else _EMPTY_OVERLAY[self.d]
            self._cache["args"] = (self.key, self.law.engine_params(), ovp)
        return self._cache["args"]

    @property
    def homogeneous(self) -> bool:
        """Every site carries the same kernel and there is no overlay."""
        return self.law.single_kernel and (self.overlay is None or not self.overlay.items)

    def kernels_at(self, sites) -> np.ndarray:
        sites = np.ascontiguousarray(np.atleast_2d(np.asarray(sites, dtype=np.int64)))
        key, lawp, ovp = self.engine_args()
        return _engine.kernels_at_many(sites, key, lawp, ovp)

    def with_overlay(self, items: Mapping) -> "Environment":
        merged = dict(self.overlay.items) if self.overlay is not None else {}
        for site, kern in items.items():
            row = kern.probs if isinstance(kern, TransitionKernel) else tuple(float(v) for v in kern)
            if min(row) < self.law.eta - 1e-12:
                raise ValueError("overlay kernel violates ellipticity")
            merged[tuple(int(c) for c in site)] = row
        return Environment(self.law, self.env_seed, Overlay(merged, self.d))


def kernel_at(env: Environment, site: Sequence[int]) -> TransitionKernel:
    """Kernel at ``site``; deterministic in ``(env_seed, site)``."""
    row = env.kernels_at(np.asarray(site, dtype=np.int64).reshape(1, -1))[0]
    return TransitionKernel.from_array(row)


# ------------------------------------------------------------------ nestling

def _in_hull(points: np.ndarray, target: np.ndarray) -> bool:
    m = points.shape[0]
    a_eq = np.vstack([points.T, np.ones((1, m))])
    b_eq = np.concatenate([target, [1.0]])
    res = linprog(np.zeros(m), A_eq=a_eq, b_eq=b_eq, bounds=[(0, None)] * m, method="highs")
    return bool(res.status == 0)


def classify_nestling(law: EnvironmentLaw, tol: float = 1e-12) -> Nestling:
    """Position of 0 relative to the convex hull of the support drifts.

    Interior is taken in the ambient space, so a hull of lower dimension
    containing 0 counts as marginal.
    """
    if not law.finite_support:
        raise UnsupportedLaw("nestling class needs a finite-support law")
    kernels, _ = law.support()
    drifts = np.unique(np.round(local_drift(kernels), 15), axis=0)
    d = law.d
    if not _in_hull(drifts, np.zeros(d)):
        return Nestling.NON
    if drifts.shape[0] <= d:
        return Nestling.MARGINAL
    rank = np.linalg.matrix_rank(drifts[1:] - drifts[0], tol=1e-12)
    if rank < d:
        return Nestling.MARGINAL
    if d == 1:
        lo, hi = drifts.min(), drifts.max()
        return Nestling.PLAIN if lo < -tol and hi > tol else Nestling.MARGINAL
    try:
        hull = ConvexHull(drifts)
    except QhullError:
        return Nestling.MARGINAL
    # facets satisfy normal . x + offset <= 0 inside; at x = 0 this is offset
    return Nestling.PLAIN if np.all(hull.equations[:, -1] < -tol) else Nestling.MARGINAL


# --------------------------------------------------------------------- traps

def inward_direction(offset: Sequence[int]) -> int:
    """Direction index pointing from ``center + offset`` back toward center.

    Axis of largest absolute offset, ties to the lowest axis; the center
    itself points along ``-e1``.
    """
    off = np.asarray(offset, dtype=np.int64)
    if not off.any():
        return direction_index(0, -1)
    axis = int(np.argmax(np.abs(off)))
    return direction_index(axis, -1 if off[axis] > 0 else +1)


def trap_kernel(d: int, eta: float, inward: int) -> np.ndarray:
    k = np.full(2 * d, eta)
    k[inward] = 1.0 - (2 * d - 1) * eta
    return k


def ball_offsets(d: int, radius: int) -> np.ndarray:
    grids = np.meshgrid(*[np.arange(-radius, radius + 1)] * d, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1).astype(np.int64)


def plant_naive_trap(env: Environment, center, radius: int, kernel_for=None) -> Environment:
    """Overlay an l-infinity ball of inward-drifting kernels.

    By default each site gets the extreme elliptic kernel (mass
    ``1-(2d-1)eta`` inward, ``eta`` elsewhere).  ``kernel_for(inward_index)``
    may supply a different kernel, e.g. a support kernel of a mixture law.
    """
    if radius < 1:
        raise InvalidRadius(f"trap radius must be >= 1, got {radius}")
    d = env.d
    center = np.asarray(center, dtype=np.int64)
    items = {}
    for off in ball_offsets(d, radius):
        j = inward_direction(off)
        kern = trap_kernel(d, env.law.eta, j) if kernel_for is None else np.asarray(kernel_for(j), float)
        items[tuple(int(c) for c in center + off)] = tuple(kern)
    return env.with_overlay(items)


def inward_probability(law: EnvironmentLaw, inward: int) -> float:
    """Q-probability that a site's kernel drifts strictly along ``inward``."""
    if not law.finite_support:
        raise UnsupportedLaw("inward-drift probability needs a finite-support law")
    kernels, weights = law.support()
    e = directions(law.d)[inward]
    return float(weights[local_drift(kernels) @ e > 1e-15].sum())


def trap_log_probability(law_or_prob, d: int, radius: int) -> float:
    """Exact log product-measure probability of a radius-``radius`` trap.

    ``law_or_prob`` is either a constant per-site probability or a
    finite-support law, in which case each site uses the weight of kernels
    drifting along its inward direction.
    """
    if radius < 1:
        raise InvalidRadius(f"trap radius must be >= 1, got {radius}")
    if isinstance(law_or_prob, EnvironmentLaw):
        probs = {j: inward_probability(law_or_prob, j) for j in range(2 * d)}
        if min(probs.values()) <= 0:
            raise NotNestling("some inward direction has zero probability under the law")
        counts = np.zeros(2 * d, dtype=np.int64)
        for off in ball_offsets(d, radius):
            counts[inward_direction(off)] += 1
        return float(sum(counts[j] * math.log(probs[j]) for j in range(2 * d)))
    p = float(law_or_prob)
    return (2 * radius + 1) ** d * math.log(p)


def iter_sites(sites: Iterable) -> np.ndarray:
    return np.asarray(list(sites), dtype=np.int64)
