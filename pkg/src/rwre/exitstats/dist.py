"""Finite lattice distributions and absorbing regions."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from ..geom import BlockSpec


@dataclass(frozen=True, eq=False)
class LatticeDist:
    """Finite (sub-)probability distribution on ``Z^d``.

    Sites are stored sorted lexicographically and unique.
    """

    sites: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.sites, dtype=np.int64)
        if s.ndim == 1:
            s = s.reshape(-1, 1)
        p = np.asarray(self.probs, dtype=float).reshape(-1)
        if s.shape[0] != p.shape[0]:
            raise ValueError("sites and probs differ in length")
        if np.any(p < 0):
            raise ValueError("negative probability")
        if s.shape[0]:
            uniq, inv = np.unique(s, axis=0, return_inverse=True)
            agg = np.zeros(uniq.shape[0])
            np.add.at(agg, inv.reshape(-1), p)
            s, p = uniq, agg
        object.__setattr__(self, "sites", s)
        object.__setattr__(self, "probs", p)

    # constructors -----------------------------------------------------------
    @classmethod
    def from_dict(cls, mapping: Mapping, d: int | None = None) -> "LatticeDist":
        if not mapping:
            return cls(np.zeros((0, d or 1), dtype=np.int64), np.zeros(0))
        keys = [tuple(k) if np.ndim(k) else (int(k),) for k in mapping]
        return cls(np.array(keys, dtype=np.int64), np.array(list(mapping.values()), dtype=float))

    @classmethod
    def point(cls, site) -> "LatticeDist":
        return cls(np.asarray(site, dtype=np.int64).reshape(1, -1), np.ones(1))

    @classmethod
    def from_samples(cls, samples) -> "LatticeDist":
        s = np.asarray(samples, dtype=np.int64)
        if s.ndim == 1:
            s = s.reshape(-1, 1)
        if s.shape[0] == 0:
            return cls(np.zeros((0, s.shape[1]), dtype=np.int64), np.zeros(0))
        uniq, counts = np.unique(s, axis=0, return_counts=True)
        return cls(uniq, counts / s.shape[0])

    # basic queries ----------------------------------------------------------
    @property
    def d(self) -> int:
        return self.sites.shape[1]

    @property
    def size(self) -> int:
        return self.sites.shape[0]

    @property
    def total(self) -> float:
        return float(self.probs.sum())

    def to_dict(self) -> dict:
        return {tuple(s.tolist()): float(p) for s, p in zip(self.sites, self.probs)}

    def prob(self, site) -> float:
        site = np.asarray(site, dtype=np.int64).reshape(1, -1)
        hit = np.all(self.sites == site, axis=1)
        return float(self.probs[hit].sum())

    def normalized(self) -> "LatticeDist":
        t = self.total
        if t <= 0:
            raise ValueError("cannot normalise an empty distribution")
        return LatticeDist(self.sites, self.probs / t)

    def restrict(self, mask) -> "LatticeDist":
        mask = np.asarray(mask, dtype=bool)
        return LatticeDist(self.sites[mask], self.probs[mask])

    def mean(self) -> np.ndarray:
        return (self.probs @ self.sites) / self.total

    def covariance(self) -> np.ndarray:
        m = self.mean()
        c = self.sites - m
        return (c.T * self.probs) @ c / self.total

    def variance(self) -> float:
        """Trace of the covariance matrix."""
        return float(np.trace(self.covariance()))

    def shift(self, v) -> "LatticeDist":
        return LatticeDist(self.sites + np.asarray(v, dtype=np.int64), self.probs)

    def support_box(self) -> tuple[np.ndarray, np.ndarray]:
        return self.sites.min(axis=0), self.sites.max(axis=0)

    # dense conversions ------------------------------------------------------
    def dense(self, lo=None, hi=None) -> tuple[np.ndarray, np.ndarray]:
        """Dense array over the box ``lo..hi`` (default: support box)."""
        if lo is None or hi is None:
            lo, hi = self.support_box()
        lo = np.asarray(lo, dtype=np.int64)
        hi = np.asarray(hi, dtype=np.int64)
        arr = np.zeros(tuple(hi - lo + 1))
        idx = tuple((self.sites - lo).T)
        np.add.at(arr, idx, self.probs)
        return arr, lo

    @classmethod
    def from_dense(cls, arr, lo, cutoff: float = 0.0) -> "LatticeDist":
        arr = np.asarray(arr, dtype=float)
        nz = np.argwhere(arr > cutoff)
        return cls(nz + np.asarray(lo, dtype=np.int64), arr[tuple(nz.T)])

    def convolve(self, other: "LatticeDist") -> "LatticeDist":
        """Law of the sum of independent draws (direct summation)."""
        a, alo = self.dense()
        b, blo = other.dense()
        out = np.zeros(tuple(np.array(a.shape) + np.array(b.shape) - 1))
        for idx in np.argwhere(b > 0):
            sl = tuple(slice(i, i + n) for i, n in zip(idx, a.shape))
            out[sl] += b[tuple(idx)] * a
        return LatticeDist.from_dense(out, alo + blo)

    def tv_distance(self, other: "LatticeDist") -> float:
        return 0.5 * l1_distance(self, other)


def aligned(p: LatticeDist, q: LatticeDist) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Common support and the two probability vectors on it."""
    sites = np.unique(np.vstack([p.sites, q.sites]), axis=0)
    out = []
    for dist in (p, q):
        v = np.zeros(sites.shape[0])
        if dist.size:
            pos = _lookup(sites, dist.sites)
            v[pos] = dist.probs
        out.append(v)
    return sites, out[0], out[1]


def _lookup(sorted_sites: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Row indices of ``query`` inside the lexicographically sorted ``sorted_sites``."""
    base, q = _row_keys(sorted_sites, query)
    pos = np.searchsorted(base, q)
    if np.any(pos >= base.shape[0]) or np.any(base[np.minimum(pos, base.shape[0] - 1)] != q):
        raise KeyError("query site not in support")
    return pos


def _row_keys(a: np.ndarray, b: np.ndarray):
    # mixed-radix keys, first coordinate most significant, so key order is
    # lexicographic order
    lo = np.minimum(a.min(axis=0), b.min(axis=0)) if b.size else a.min(axis=0)
    hi = np.maximum(a.max(axis=0), b.max(axis=0)) if b.size else a.max(axis=0)
    span = (hi - lo + 1).astype(object)
    mult = np.ones(a.shape[1], dtype=object)
    for i in range(a.shape[1] - 2, -1, -1):
        mult[i] = mult[i + 1] * span[i + 1]
    if int(np.prod(span)) < 2**62:
        m = mult.astype(np.int64)
        return (a - lo) @ m, (b - lo) @ m
    raise OverflowError("support too spread out for integer keys")


def l1_distance(p: LatticeDist, q: LatticeDist) -> float:
    _, a, b = aligned(p, q)
    return float(np.abs(a - b).sum())


# ------------------------------------------------------------------ regions

@dataclass(frozen=True, eq=False)
class Region:
    """Finite set of interior sites given as a boolean mask over a box.

    The walk is absorbed at the first site outside the mask.  ``block`` and
    ``box`` remember how the region was built so that the Monte Carlo engine
    can use the matching stop rule; ``holes`` are removed interior sites.
    """

    lo: np.ndarray
    mask: np.ndarray
    block: BlockSpec | None = None
    box: tuple | None = None
    holes: tuple = ()

    @property
    def d(self) -> int:
        return self.mask.ndim

    @property
    def hi(self) -> np.ndarray:
        return self.lo + np.array(self.mask.shape) - 1

    @property
    def n_interior(self) -> int:
        return int(self.mask.sum())

    @classmethod
    def from_box(cls, lo, hi) -> "Region":
        lo = np.asarray(lo, dtype=np.int64).reshape(-1)
        hi = np.asarray(hi, dtype=np.int64).reshape(-1)
        return cls(lo, np.ones(tuple(hi - lo + 1), dtype=bool), box=(tuple(lo.tolist()), tuple(hi.tolist())))

    @classmethod
    def from_block(cls, block: BlockSpec) -> "Region":
        lo, hi = block.bounding_box()
        axes = np.ogrid[tuple(slice(int(a), int(b) + 1) for a, b in zip(lo, hi))]
        z = block.center
        th = block.theta
        t = (axes[0] - z[0]).astype(float)
        mask = np.abs(t) < block.depth
        for i in range(1, block.d):
            u = z[i] + (th[i] * t) / th[0]
            mask = mask & (np.abs(axes[i] - u) < block.half_width)
        return cls(lo.astype(np.int64), np.ascontiguousarray(mask), block=block)

    @classmethod
    def coerce(cls, region) -> "Region":
        if isinstance(region, Region):
            return region
        if isinstance(region, BlockSpec):
            return cls.from_block(region)
        lo, hi = region
        return cls.from_box(lo, hi)

    def without(self, sites) -> "Region":
        """Same region with ``sites`` turned into absorbing sites."""
        m = self.mask.copy()
        holes = list(self.holes)
        for s in np.atleast_2d(np.asarray(sites, dtype=np.int64)):
            idx = tuple(s - self.lo)
            if all(0 <= i < n for i, n in zip(idx, m.shape)):
                m[idx] = False
            holes.append(tuple(s.tolist()))
        return Region(self.lo, m, self.block, self.box, tuple(holes))

    def contains(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.int64))
        rel = x - self.lo
        ok = np.all((rel >= 0) & (rel < np.array(self.mask.shape)), axis=1)
        out = np.zeros(x.shape[0], dtype=bool)
        out[ok] = self.mask[tuple(rel[ok].T)]
        return out

    def interior_sites(self) -> np.ndarray:
        return np.argwhere(self.mask) + self.lo

    def is_front(self, sites) -> np.ndarray:
        """Front boundary flags (only meaningful for block regions)."""
        sites = np.atleast_2d(np.asarray(sites, dtype=np.int64))
        if self.block is None:
            return np.zeros(sites.shape[0], dtype=bool)
        return sites[:, 0] - self.block.center[0] == self.block.depth

    def stop_rule(self, budget: int):
        from ..walk import StopRule

        if self.block is not None:
            rule = StopRule.block_boundary(self.block, budget)
        elif self.box is not None:
            rule = StopRule.box_exit(self.box[0], self.box[1], budget)
        else:
            raise ValueError("Monte Carlo needs a block or box region")
        if self.holes:
            rule = StopRule.any_of(rule, StopRule.sites(self.holes, budget, strict=True), budget=budget)
        return rule
