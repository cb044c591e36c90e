"""Monte Carlo exit histograms."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from ..env import Environment
from ..walk import sample_exits
from .dist import LatticeDist, Region


@dataclass(frozen=True, eq=False)
class ExitHistogram:
    """Counts of exit sites.

    ``sites``/``counts`` hold only walks that left the region; walks that ran
    out of steps are tallied in ``budget_exhausted`` and excluded from
    ``total``.  Histograms over the same region and start merge by addition.
    """

    region: Region
    start: tuple[int, ...]
    sites: np.ndarray
    counts: np.ndarray
    budget_exhausted: int
    mode: str

    def __post_init__(self):
        s = np.asarray(self.sites, dtype=np.int64).reshape(-1, len(self.start))
        c = np.asarray(self.counts, dtype=np.int64).reshape(-1)
        if s.shape[0]:
            uniq, inv = np.unique(s, axis=0, return_inverse=True)
            agg = np.zeros(uniq.shape[0], dtype=np.int64)
            np.add.at(agg, inv.reshape(-1), c)
            s, c = uniq, agg
        object.__setattr__(self, "sites", s)
        object.__setattr__(self, "counts", c)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def front_flags(self) -> np.ndarray:
        return self.region.is_front(self.sites)

    @property
    def front_total(self) -> int:
        return int(self.counts[self.front_flags].sum())

    def to_dist(self) -> LatticeDist:
        return LatticeDist(self.sites, self.counts / max(self.total, 1))

    def front_dist(self) -> LatticeDist:
        f = self.front_flags
        return LatticeDist(self.sites[f], self.counts[f] / max(self.front_total, 1))

    def mean_and_stderr(self, front_only: bool = False) -> tuple[np.ndarray, np.ndarray]:
        """Sample mean of the exit site and its coordinate-wise standard error."""
        if front_only:
            f = self.front_flags
            s, c = self.sites[f], self.counts[f]
        else:
            s, c = self.sites, self.counts
        n = c.sum()
        if n == 0:
            raise ValueError("empty histogram")
        m = (c @ s) / n
        var = (c @ (s - m) ** 2) / max(n - 1, 1)
        return m, np.sqrt(var / n)

    def merge(self, other: "ExitHistogram") -> "ExitHistogram":
        if other.start != self.start or other.mode != self.mode:
            raise ValueError("histograms differ in start or mode")
        return ExitHistogram(
            self.region,
            self.start,
            np.vstack([self.sites, other.sites]),
            np.concatenate([self.counts, other.counts]),
            self.budget_exhausted + other.budget_exhausted,
            self.mode,
        )

    def to_csv(self, target=None) -> str | None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"x_{i + 1}" for i in range(len(self.start))] + ["count", "is_front"])
        for s, c, f in zip(self.sites.tolist(), self.counts.tolist(), self.front_flags.tolist()):
            w.writerow(s + [c, int(f)])
        text = buf.getvalue()
        if target is None:
            return text
        with open(target, "w", encoding="utf-8") as fh:
            fh.write(text)
        return None


def estimate_exit(mode, region, start, n_samples: int, seed: int, step_budget: int = 10**6, first: int = 0) -> ExitHistogram:
    """Exit histogram from ``n_samples`` walks started at ``start``.

    ``mode`` is an :class:`Environment` (quenched walks) or an
    :class:`~rwre.env.EnvironmentLaw` (annealed walks, fresh environment per
    replicate).  Replicates ``first .. first+n_samples-1`` are simulated, so
    splitting the index range across workers and merging reproduces the
    single-run histogram exactly.
    """
    region = Region.coerce(region)
    rule = region.stop_rule(step_budget)
    smp = sample_exits(mode, start, rule, seed, n_samples, first)
    ok = smp.stopped
    label = "quenched" if isinstance(mode, Environment) else "annealed"
    return ExitHistogram(
        region,
        tuple(int(v) for v in np.asarray(start).reshape(-1)),
        smp.ends[ok],
        np.ones(int(ok.sum()), dtype=np.int64),
        int((~ok).sum()),
        label,
    )
