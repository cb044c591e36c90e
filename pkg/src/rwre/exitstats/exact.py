"""Exact exit laws of finite regions.

Two routes are provided.  :func:`exact_exit` solves the absorption system
with a sparse direct solver and is the reference oracle for small regions.
:func:`propagate_exit` pushes probability mass step by step through the
region (numba), which scales to blocks with millions of sites at the price
of a truncation error that is reported as ``lost_mass``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .. import _engine
from ..env import Environment, EnvironmentLaw
from ..errors import RegionTooLarge
from .dist import LatticeDist, Region

MAX_EXACT_SITES = 100_000
_DENSE_KERNEL_CELLS = 2_000_000


@dataclass(frozen=True, eq=False)
class ExitLaw:
    """Exit distribution of a region together with its provenance."""

    dist: LatticeDist
    region: Region
    start: tuple[int, ...]
    method: str
    lost_mass: float = 0.0

    @property
    def front_mask(self) -> np.ndarray:
        return self.region.is_front(self.dist.sites)

    @property
    def front_mass(self) -> float:
        return float(self.dist.probs[self.front_mask].sum())

    def front(self) -> LatticeDist:
        """Exit law conditioned on leaving through the front face."""
        return self.dist.restrict(self.front_mask).normalized()


def _as_environment(env) -> Environment:
    if isinstance(env, Environment):
        return env
    if isinstance(env, EnvironmentLaw):
        if not env.single_kernel:
            raise ValueError("exact annealed exit laws need a single-kernel law; use Monte Carlo otherwise")
        return Environment(env, 0)
    raise TypeError("expected an Environment or EnvironmentLaw")


def _dirs(d: int) -> np.ndarray:
    out = np.zeros((2 * d, d), dtype=np.int64)
    for i in range(d):
        out[2 * i, i] = 1
        out[2 * i + 1, i] = -1
    return out


def exact_exit(env, region, start) -> ExitLaw:
    """Exit law from ``start`` by a sparse direct solve.

    With ``G`` the Green's function of the killed chain, ``g = e_start G``
    solves ``(I - Q)^T g = e_start`` and the exit law is ``g R``.
    Raises :class:`RegionTooLarge` above 10^5 interior sites.
    """
    env = _as_environment(env)
    region = Region.coerce(region)
    start = np.asarray(start, dtype=np.int64).reshape(-1)
    if not region.contains(start)[0]:
        return ExitLaw(LatticeDist.point(start), region, tuple(start.tolist()), "exact")
    n = region.n_interior
    if n > MAX_EXACT_SITES:
        raise RegionTooLarge(f"{n} interior sites exceed the direct-solve limit {MAX_EXACT_SITES}")
    d = region.d
    sites = region.interior_sites()
    index = -np.ones(region.mask.shape, dtype=np.int64)
    index[region.mask] = np.arange(n)
    kern = env.kernels_at(sites)
    shape = np.array(region.mask.shape)

    qi, qj, qv = [], [], []
    ri, rt, rv = [], [], []
    for j, e in enumerate(_dirs(d)):
        nb = sites + e
        rel = nb - region.lo
        inside = np.all((rel >= 0) & (rel < shape), axis=1)
        tgt = -np.ones(n, dtype=np.int64)
        tgt[inside] = index[tuple(rel[inside].T)]
        p = kern[:, j]
        hit = (tgt >= 0) & (p > 0)
        qi.append(np.nonzero(hit)[0])
        qj.append(tgt[hit])
        qv.append(p[hit])
        out = (tgt < 0) & (p > 0)
        ri.append(np.nonzero(out)[0])
        rt.append(nb[out])
        rv.append(p[out])
    Q = sp.csr_matrix((np.concatenate(qv), (np.concatenate(qi), np.concatenate(qj))), shape=(n, n))
    A = (sp.identity(n, format="csr") - Q).T.tocsc()
    s = int(index[tuple(start - region.lo)])
    b = np.zeros(n)
    b[s] = 1.0
    g = np.atleast_1d(spsolve(A, b))
    ri = np.concatenate(ri)
    exits = LatticeDist(np.vstack(rt), g[ri] * np.concatenate(rv))
    return ExitLaw(exits, region, tuple(start.tolist()), "exact")


def propagate_exit(env, region, start, tol: float = 1e-13, prune: float = 1e-22, max_steps: int | None = None) -> ExitLaw:
    """Exit law by iterating the transition operator on a mass vector.

    Stops once the mass still inside is below ``tol``.  Cells carrying less
    than ``prune`` are dropped, which keeps the active window small.  The
    discarded amount plus the residual interior mass is ``lost_mass``.
    """
    env = _as_environment(env)
    region = Region.coerce(region)
    start = np.asarray(start, dtype=np.int64).reshape(-1)
    if not region.contains(start)[0]:
        return ExitLaw(LatticeDist.point(start), region, tuple(start.tolist()), "propagate")
    d = region.d
    mask = np.pad(region.mask, 1, constant_values=False)
    lo = region.lo - 1
    shape = np.array(mask.shape, dtype=np.int64)
    key, lawp, ovp = env.engine_args()
    kconst = np.zeros(2 * d)
    kdense = np.zeros((1, 2 * d))
    if env.homogeneous:
        mode = 0
        kconst = env.kernels_at(start)[0]
    elif mask.size <= _DENSE_KERNEL_CELLS:
        mode = 1
        kdense = np.zeros((mask.size, 2 * d))
        flat = np.flatnonzero(mask)
        pts = np.stack(np.unravel_index(flat, mask.shape), axis=1) + lo
        kdense[flat] = env.kernels_at(pts)
    else:
        mode = 2
    if max_steps is None:
        max_steps = 10**9
    absorbed, steps, remaining, pruned = _engine.propagate_mass(
        np.ascontiguousarray(mask.ravel()), shape, lo.astype(np.int64), start, mode,
        kconst, kdense, key, lawp, ovp, float(tol), float(prune), int(max_steps),
    )
    flat = np.flatnonzero(absorbed)
    pts = np.stack(np.unravel_index(flat, mask.shape), axis=1) + lo
    exits = LatticeDist(pts, absorbed[flat])
    return ExitLaw(exits, region, tuple(start.tolist()), "propagate", float(remaining + pruned))


def exit_distribution(env, region, start, method: str = "auto") -> ExitLaw:
    """Dispatch to :func:`exact_exit` or :func:`propagate_exit`."""
    region = Region.coerce(region)
    if method == "auto":
        method = "exact" if region.n_interior <= MAX_EXACT_SITES else "propagate"
    if method == "exact":
        return exact_exit(env, region, start)
    if method == "propagate":
        return propagate_exit(env, region, start)
    raise ValueError(f"unknown method {method!r}")
