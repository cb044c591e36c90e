"""Empirical good/bad classification of blocks.

A block is called good when, for every probe start, the quenched exit
behaviour matches the annealed one:

(a) the walk leaves through the front face with frequency ``>= 1 - delta_exit``;
(b) the quenched and annealed mean exit sites differ by at most ``R_3(N)``
    in every coordinate, up to a 3 sigma sampling slack;
(c) on front cubes of side ``ceil(N^theta)`` the two exit laws differ by at
    most ``N^((theta-1)(d-1) - theta(d-1)/(d+1))``, again with 3 sigma slack.

For homogeneous environments the quenched and annealed laws coincide and
one sample serves for both.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .._hash import derive_seed
from ..env import Environment
from ..geom import BlockSpec
from ..scales import scale_R
from .dist import Region
from .histogram import ExitHistogram, estimate_exit

DELTA_EXIT = 0.05
SLACK = 3.0


def cube_discrepancy_bound(N: int, theta: float, d: int) -> float:
    """``N^((theta-1)(d-1) - theta(d-1)/(d+1))``."""
    return float(N) ** ((theta - 1) * (d - 1) - theta * (d - 1) / (d + 1))


def mean_tolerance(N: int) -> float:
    return float(scale_R(3, max(N, 3)))


def default_probes(block: BlockSpec) -> np.ndarray:
    """Block centre and one point along each signed axis in the middle third."""
    z = np.asarray(block.center, dtype=np.int64)
    out = [z.copy()]
    steps = [max(block.depth // 6, 0)] + [int(block.half_width // 6)] * (block.d - 1)
    for i in range(block.d):
        for sgn in (1, -1):
            if steps[i] == 0:
                continue
            p = z.copy()
            p[i] += sgn * steps[i]
            if block.middle_third_contains(p):
                out.append(p)
    return np.unique(np.array(out), axis=0)


@dataclass(frozen=True)
class ProbeEvidence:
    start: tuple[int, ...]
    front_freq: float
    mean_gap: float
    mean_tol: float
    mean_sigma: float
    cube_gap: float
    cube_tol: float
    cube_sigma: float

    @property
    def exit_ok(self) -> bool:
        return self.front_freq >= 1 - DELTA_EXIT

    @property
    def mean_ok(self) -> bool:
        return self.mean_gap <= self.mean_tol + SLACK * self.mean_sigma

    @property
    def cube_ok(self) -> bool:
        return self.cube_gap <= self.cube_tol + SLACK * self.cube_sigma

    @property
    def ok(self) -> bool:
        return self.exit_ok and self.mean_ok and self.cube_ok

    def margins(self) -> dict:
        """Distance to each threshold in units of the sampling sigma."""

        def z(gap, tol, sig):
            return (tol + SLACK * sig - gap) / sig if sig > 0 else math.copysign(math.inf, tol - gap + 1e-300)

        return {
            "exit": self.front_freq - (1 - DELTA_EXIT),
            "mean": z(self.mean_gap, self.mean_tol, self.mean_sigma),
            "cube": z(self.cube_gap, self.cube_tol, self.cube_sigma),
        }


@dataclass(frozen=True)
class BlockClassification:
    good: bool
    block: BlockSpec
    theta: float
    evidence: tuple[ProbeEvidence, ...] = field(default=())

    @property
    def reasons(self) -> tuple[str, ...]:
        out = set()
        for e in self.evidence:
            if not e.exit_ok:
                out.add("exit")
            if not e.mean_ok:
                out.add("mean")
            if not e.cube_ok:
                out.add("cube")
        return tuple(sorted(out))

    def to_json(self) -> dict:
        return {
            "good": self.good,
            "center": list(self.block.center),
            "N": self.block.N,
            "theta": self.theta,
            "reasons": list(self.reasons),
            "evidence": [dict(asdict(e), margins=e.margins()) for e in self.evidence],
        }


def _cube_masses(h: ExitHistogram, block: BlockSpec, side: int) -> dict:
    f = h.front_flags
    sites = h.sites[f]
    if sites.shape[0] == 0:
        return {}
    lo, _ = block.bounding_box()
    keys = np.floor_divide(sites[:, 1:] - lo[1:], side)
    out: dict = {}
    for k, c in zip(map(tuple, keys.tolist()), h.counts[f].tolist()):
        out[k] = out.get(k, 0) + c
    n = h.total + h.budget_exhausted
    return {k: v / n for k, v in out.items()}


def _compare(q: ExitHistogram, a: ExitHistogram, block: BlockSpec, theta: float, same: bool) -> ProbeEvidence:
    n_q = q.total + q.budget_exhausted
    front_freq = q.front_total / n_q if n_q else 0.0
    if q.total == 0 or a.total == 0:
        return ProbeEvidence(q.start, front_freq, math.inf, mean_tolerance(block.N), 0.0, math.inf, 0.0, 0.0)
    mq, sq = q.mean_and_stderr()
    ma, sa = a.mean_and_stderr()
    if same:
        gap_vec, sig_vec = np.zeros_like(mq), np.zeros_like(mq)
    else:
        gap_vec, sig_vec = np.abs(mq - ma), np.sqrt(sq**2 + sa**2)
    j = int(np.argmax(gap_vec - SLACK * sig_vec))
    side = max(1, math.ceil(block.N**theta))
    cq = _cube_masses(q, block, side)
    ca = cq if same else _cube_masses(a, block, side)
    n_a = a.total + a.budget_exhausted
    worst, worst_sig, worst_score = 0.0, 0.0, -math.inf
    for k in set(cq) | set(ca):
        pq, pa = cq.get(k, 0.0), ca.get(k, 0.0)
        gap = abs(pq - pa)
        sig = 0.0 if same else math.sqrt(pq * (1 - pq) / n_q + pa * (1 - pa) / n_a)
        score = gap - SLACK * sig
        if score > worst_score:
            worst, worst_sig, worst_score = gap, sig, score
    return ProbeEvidence(
        q.start, front_freq, float(gap_vec[j]), mean_tolerance(block.N), float(sig_vec[j]),
        worst, cube_discrepancy_bound(block.N, theta, block.d), worst_sig,
    )


def _overlay_sites(env: Environment) -> np.ndarray | None:
    if env.overlay is None or not env.overlay.items:
        return None
    if "overlay_sites" not in env._cache:
        env._cache["overlay_sites"] = np.array(list(env.overlay.items.keys()), dtype=np.int64)
    return env._cache["overlay_sites"]


def _overlay_hits(env: Environment, block: BlockSpec) -> bool:
    sites = _overlay_sites(env)
    if sites is None:
        return False
    lo, hi = block.bounding_box()
    near = np.all((sites >= lo) & (sites <= hi), axis=1)
    return bool(near.any() and np.any(block.contains(sites[near])))


class BlockClassifier:
    """Classifier with caches for annealed samples and repeated blocks.

    Blocks whose kernels do not depend on position (single-kernel law and no
    overlay inside the block) share one cached verdict per
    ``(N, width, direction)``; other blocks are cached by centre.
    """

    def __init__(self, env: Environment, theta: float = 1.0, n_samples: int = 2000, seed: int = 0,
                 step_budget: int | None = None, probes=None):
        if not 0 < theta <= 1:
            raise ValueError("theta must lie in (0, 1]")
        self.env = env
        self.theta = float(theta)
        self.n_samples = int(n_samples)
        self.seed = int(seed)
        self.step_budget = step_budget
        self.probes = probes
        self._verdicts: dict = {}
        self._annealed: dict = {}

    def _budget(self, block: BlockSpec) -> int:
        return self.step_budget if self.step_budget is not None else max(10**5, 50 * block.depth)

    def _annealed_hist(self, block: BlockSpec, offset: np.ndarray, idx: int) -> ExitHistogram:
        key = (block.N, block.width, block.theta, tuple(offset.tolist()))
        if key not in self._annealed:
            origin = block.moved((0,) * block.d)
            self._annealed[key] = estimate_exit(
                self.env.law, Region.from_block(origin), offset, self.n_samples,
                derive_seed(self.seed, "annealed", idx), self._budget(block),
            )
        return self._annealed[key]

    def classify(self, block: BlockSpec) -> BlockClassification:
        uniform = self.env.law.single_kernel and not _overlay_hits(self.env, block)
        ckey = ("uniform", block.N, block.width, block.theta) if uniform else ("site", block.center, block.N, block.width, block.theta)
        if ckey in self._verdicts:
            v = self._verdicts[ckey]
            return BlockClassification(v.good, block, v.theta, v.evidence)
        probes = default_probes(block) if self.probes is None else np.atleast_2d(np.asarray(self.probes, dtype=np.int64))
        z = np.asarray(block.center, dtype=np.int64)
        region = Region.from_block(block)
        evidence = []
        for i, p in enumerate(probes):
            off = p - z
            if uniform:
                h = self._annealed_hist(block, off, i)
                q = ExitHistogram(region, tuple(p.tolist()), h.sites + z, h.counts, h.budget_exhausted, "quenched")
                evidence.append(_compare(q, q, block, self.theta, True))
                continue
            q = estimate_exit(self.env, region, p, self.n_samples,
                              derive_seed(self.seed, "quenched", *block.center, i), self._budget(block))
            a = self._annealed_hist(block, off, i)
            a = ExitHistogram(region, q.start, a.sites + z, a.counts, a.budget_exhausted, "annealed")
            evidence.append(_compare(q, a, block, self.theta, False))
        verdict = BlockClassification(all(e.ok for e in evidence), block, self.theta, tuple(evidence))
        self._verdicts[ckey] = verdict
        return verdict


def classify_block(env: Environment, block: BlockSpec, theta: float = 1.0, n_samples: int = 2000, seed: int = 0,
                   probes=None, step_budget: int | None = None) -> BlockClassification:
    """Classify one block as good or bad; evidence margins are always kept."""
    return BlockClassifier(env, theta, n_samples, seed, step_budget, probes).classify(block)
