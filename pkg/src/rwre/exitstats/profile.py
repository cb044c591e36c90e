"""Discrete derivatives of front exit masses and the in-ellipsoid lower bound."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from itertools import combinations

import numpy as np

from ..errors import EmptyFront, SingularCovariance
from .dist import LatticeDist
from .exact import ExitLaw
from .histogram import ExitHistogram


@dataclass(frozen=True)
class DerivativeProfile:
    sup_mass: float
    max_first_diff: float
    max_second_diff: float
    max_mixed_diff: float
    N: int | None = None

    def to_json(self) -> dict:
        return asdict(self)


def front_masses(source) -> LatticeDist:
    """Unconditioned exit mass on front sites.

    Accepts an :class:`ExitLaw`, an :class:`ExitHistogram` or a plain
    :class:`LatticeDist` (taken as already restricted to the front).
    """
    if isinstance(source, ExitLaw):
        return source.dist.restrict(source.front_mask)
    if isinstance(source, ExitHistogram):
        f = source.front_flags
        return LatticeDist(source.sites[f], source.counts[f] / max(source.total, 1))
    if isinstance(source, LatticeDist):
        return source
    raise TypeError("expected ExitLaw, ExitHistogram or LatticeDist")


def _front_grid(front: LatticeDist) -> np.ndarray:
    s = front.sites
    if s.shape[1] > 1 and np.all(s[:, 0] == s[0, 0]):
        s = s[:, 1:]
    lo = s.min(axis=0) - 2
    hi = s.max(axis=0) + 2
    grid = np.zeros(tuple(hi - lo + 1))
    np.add.at(grid, tuple((s - lo).T), front.probs)
    return grid


def derivative_profile(source, N: int | None = None) -> DerivativeProfile:
    """Sup mass and maximal first, second and mixed differences on the front.

    The front grid is zero padded, so differences across the edge of the
    support are included.
    """
    front = front_masses(source)
    if front.size == 0 or front.total <= 0:
        raise EmptyFront("no exit mass on the front face")
    return DerivativeProfile(*grid_differences(_front_grid(front)), N)


def grid_differences(g: np.ndarray) -> tuple[float, float, float, float]:
    """Max of ``g`` and of its first, pure second and mixed differences.

    ``g`` should be zero padded by two cells on each side.
    """
    first = second = mixed = 0.0
    for ax in range(g.ndim):
        first = max(first, float(np.abs(np.diff(g, axis=ax)).max()))
        second = max(second, float(np.abs(np.diff(g, n=2, axis=ax)).max()))
    for a, b in combinations(range(g.ndim), 2):
        mixed = max(mixed, float(np.abs(np.diff(np.diff(g, axis=a), axis=b)).max()))
    return float(g.max()) if g.size else 0.0, first, second, mixed


@dataclass(frozen=True)
class LowerBoundReport:
    a: float
    N: int
    n_sites: int
    min_mass: float
    implied_c: float
    center: tuple[float, ...]

    def to_json(self) -> dict:
        return asdict(self)


def lower_bound_check(source, N: int, a: float, mean_displacement, covariance, start=None) -> LowerBoundReport:
    """Smallest front mass inside the Gaussian ellipsoid around the mean.

    ``mean_displacement`` and ``covariance`` are per-slab regeneration
    statistics ``U`` and ``Sigma``.  The centre is ``start + N^2 U / U_1``;
    a front site ``x`` is kept when the transverse quadratic form
    ``(x - centre)^T Sigma_perp^{-1} (x - centre) < a N^2 / U_1``.  The site
    nearest the centre is always kept, so the set shrinks to that cell as
    ``a -> 0``.  A vanishing transverse covariance keeps only that cell;
    a nonzero singular one raises :class:`SingularCovariance`.
    """
    front = front_masses(source)
    if front.size == 0:
        raise EmptyFront("no exit mass on the front face")
    d = front.d
    U = np.asarray(mean_displacement, dtype=float).reshape(d)
    S = np.asarray(covariance, dtype=float).reshape(d, d)
    if U[0] <= 0:
        raise ValueError("mean displacement must point forward")
    x0 = np.zeros(d) if start is None else np.asarray(start, dtype=float)
    centre = x0 + N * N * U / U[0]
    x1 = int(front.sites[0, 0])
    nearest = np.rint(centre[1:]).astype(np.int64)
    Sp = S[1:, 1:]
    thr = a * N * N / U[0]
    if d == 1 or np.allclose(Sp, 0.0):
        pts = nearest.reshape(1, -1)
    else:
        w = np.linalg.eigvalsh(Sp)
        if w.min() <= 1e-12 * max(w.max(), 1e-300):
            raise SingularCovariance("transverse covariance is singular")
        r = np.sqrt(thr * np.diag(Sp))
        axes = [np.arange(int(np.floor(c - ri)), int(np.ceil(c + ri)) + 1) for c, ri in zip(centre[1:], r)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d - 1)
        rel = grid - centre[1:]
        q = np.einsum("ij,jk,ik->i", rel, np.linalg.inv(Sp), rel)
        pts = np.unique(np.vstack([grid[q < thr], nearest.reshape(1, -1)]), axis=0)
    table = front.to_dict()
    masses = [table.get((x1,) + tuple(p.tolist()), 0.0) for p in pts]
    n_sites = len(masses)
    min_mass = float(min(masses))
    scale = float(N) ** (1 - d) * np.exp(-3 * a)
    return LowerBoundReport(float(a), int(N), n_sites, min_mass, min_mass / scale, tuple(centre.tolist()))
