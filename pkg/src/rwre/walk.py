"""Quenched and annealed walk engines with hitting-time stop rules."""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import _engine
from ._hash import derive_seed, replicate_seed, walk_key
from .env import _EMPTY_OVERLAY, Environment, EnvironmentLaw
from .errors import DomainError
from .geom import BlockSpec

DEFAULT_BUDGET = 10**7


class StopCause(str, enum.Enum):
    stopped = "stopped"
    budget_exhausted = "budget_exhausted"


_CAUSES = {_engine.CAUSE_STOPPED: StopCause.stopped, _engine.CAUSE_BUDGET: StopCause.budget_exhausted}


@dataclass(frozen=True)
class _Cond:
    kind: str  # "ge", "le", "site", "out_box", "out_block"
    vec: tuple = ()
    level: float = 0.0
    lo: tuple = ()
    hi: tuple = ()
    block: BlockSpec | None = None


@dataclass(frozen=True)
class StopRule:
    """Disjunction of simple stop conditions with a mandatory step cap.

    ``strict`` rules ignore time 0, which is what return-type rules need
    (the walk starts on the target site).
    """

    conditions: tuple[_Cond, ...]
    budget: int = DEFAULT_BUDGET
    strict: bool = False
    variant: str = "any_of"
    _eng: dict = field(default_factory=dict, repr=False, compare=False, hash=False)

    def __post_init__(self):
        if int(self.budget) < 0:
            raise DomainError("step budget must be non-negative")

    # constructors ---------------------------------------------------------
    @classmethod
    def halfspace(cls, direction, level: float, budget: int = DEFAULT_BUDGET) -> "StopRule":
        """Stop once ``<X, direction> >= level``."""
        return cls((_Cond("ge", tuple(float(v) for v in direction), float(level)),), int(budget), variant="halfspace")

    @classmethod
    def below(cls, direction, level: float, budget: int = DEFAULT_BUDGET) -> "StopRule":
        """Stop once ``<X, direction> <= level``."""
        return cls((_Cond("le", tuple(float(v) for v in direction), float(level)),), int(budget), variant="below")

    @classmethod
    def slab(cls, direction, lower: float, upper: float, budget: int = DEFAULT_BUDGET) -> "StopRule":
        """Stop on leaving the open slab ``lower < <X, direction> < upper``."""
        v = tuple(float(c) for c in direction)
        return cls((_Cond("ge", v, float(upper)), _Cond("le", v, float(lower))), int(budget), variant="slab")

    @classmethod
    def sites(cls, sites: Iterable[Sequence[int]], budget: int = DEFAULT_BUDGET, strict: bool = False) -> "StopRule":
        conds = tuple(_Cond("site", tuple(int(c) for c in s)) for s in sites)
        if not conds:
            raise DomainError("empty site set")
        return cls(conds, int(budget), strict=strict, variant="set")

    @classmethod
    def box_exit(cls, lo, hi, budget: int = DEFAULT_BUDGET) -> "StopRule":
        """Stop on leaving the closed box ``lo <= x <= hi``."""
        return cls((_Cond("out_box", lo=tuple(int(c) for c in lo), hi=tuple(int(c) for c in hi)),), int(budget), variant="box")

    @classmethod
    def block_boundary(cls, block: BlockSpec, budget: int = DEFAULT_BUDGET) -> "StopRule":
        return cls((_Cond("out_block", block=block),), int(budget), variant="block_boundary")

    @classmethod
    def step_budget(cls, max_steps: int) -> "StopRule":
        return cls((), int(max_steps), variant="step_budget")

    @classmethod
    def any_of(cls, *rules: "StopRule", budget: int | None = None) -> "StopRule":
        conds = tuple(c for r in rules for c in r.conditions)
        b = min(r.budget for r in rules) if budget is None else int(budget)
        return cls(conds, b, strict=any(r.strict for r in rules))

    def with_budget(self, budget: int) -> "StopRule":
        return StopRule(self.conditions, int(budget), self.strict, self.variant)

    # evaluation -------------------------------------------------------------
    def holds(self, positions) -> np.ndarray:
        """Vectorised numpy test of the stop condition (ignores ``strict``)."""
        x = np.atleast_2d(np.asarray(positions, dtype=np.int64))
        out = np.zeros(x.shape[0], dtype=bool)
        for c in self.conditions:
            if c.kind == "ge":
                out |= x @ np.asarray(c.vec) >= c.level - 1e-9
            elif c.kind == "le":
                out |= x @ np.asarray(c.vec) <= c.level + 1e-9
            elif c.kind == "site":
                out |= np.all(x == np.asarray(c.vec), axis=1)
            elif c.kind == "out_box":
                out |= np.any((x < np.asarray(c.lo)) | (x > np.asarray(c.hi)), axis=1)
            else:
                out |= ~np.asarray(c.block.contains(x), dtype=bool)
        return out

    def engine_params(self, d: int):
        if d in self._eng:
            return self._eng[d]
        n = len(self.conditions)
        kinds = np.zeros(n, dtype=np.int64)
        fpar = np.zeros((n, d + 2))
        ipar = np.zeros((n, 2 * d), dtype=np.int64)
        codes = {"ge": _engine.STOP_HALF_GE, "le": _engine.STOP_HALF_LE, "site": _engine.STOP_SITE,
                 "out_box": _engine.STOP_OUT_BOX, "out_block": _engine.STOP_OUT_BLOCK}
        for i, c in enumerate(self.conditions):
            kinds[i] = codes[c.kind]
            if c.kind in ("ge", "le"):
                if len(c.vec) != d:
                    raise DomainError("direction dimension mismatch")
                fpar[i, :d] = c.vec
                fpar[i, d] = c.level
            elif c.kind == "site":
                ipar[i, :d] = c.vec
            elif c.kind == "out_box":
                ipar[i, :d] = c.lo
                ipar[i, d:] = c.hi
            else:
                z, th, depth, width = c.block.engine_params()
                ipar[i, :d] = z
                fpar[i, :d] = th
                fpar[i, d] = depth
                fpar[i, d + 1] = width
        stp = (kinds, fpar, ipar, np.int64(self.budget), np.int64(1 if self.strict else 0))
        self._eng[d] = stp
        return stp


# ------------------------------------------------------------------ trajectories

@dataclass(frozen=True, eq=False)
class Trajectory:
    """Nearest-neighbour path; ``positions[0]`` is the start."""

    positions: np.ndarray
    walk_seed: int | None = None

    @property
    def start(self) -> np.ndarray:
        return self.positions[0]

    @property
    def d(self) -> int:
        return self.positions.shape[1]

    @property
    def length(self) -> int:
        return self.positions.shape[0] - 1

    @property
    def end(self) -> np.ndarray:
        return self.positions[-1]

    @property
    def steps(self) -> np.ndarray:
        """Direction indices in kernel order (+e1, -e1, +e2, ...)."""
        inc = np.diff(self.positions, axis=0)
        axis = np.argmax(np.abs(inc), axis=1)
        sign = inc[np.arange(len(inc)), axis]
        return 2 * axis + (sign < 0)

    def is_nearest_neighbor(self) -> bool:
        inc = np.diff(self.positions, axis=0)
        return bool(np.all(np.abs(inc).sum(axis=1) == 1))

    @classmethod
    def from_positions(cls, positions, walk_seed=None) -> "Trajectory":
        p = np.asarray(positions, dtype=np.int64)
        if p.ndim == 1:
            p = p.reshape(-1, 1)
        return cls(p, walk_seed)

    def to_csv(self, target=None) -> str | None:
        """Rows ``t,x_1,...,x_d``; returns the text when ``target`` is None."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + [f"x_{i + 1}" for i in range(self.d)])
        for t, row in enumerate(self.positions.tolist()):
            w.writerow([t, *row])
        if target is None:
            return buf.getvalue()
        if hasattr(target, "write"):
            target.write(buf.getvalue())
        else:
            with open(target, "w") as fh:
                fh.write(buf.getvalue())
        return None


def _start(start, d: int) -> np.ndarray:
    s = np.ascontiguousarray(np.asarray(start, dtype=np.int64).reshape(-1))
    if s.shape[0] != d:
        raise DomainError(f"start has dimension {s.shape[0]}, environment has {d}")
    return s


def run_quenched(env: Environment, start, stop: StopRule, walk_seed: int) -> tuple[Trajectory, StopCause]:
    """Walk in the fixed environment ``env`` until ``stop`` fires or the budget runs out."""
    key, lawp, ovp = env.engine_args()
    s = _start(start, env.d)
    pos, cause = _engine.walk_path(s, np.uint64(walk_key(walk_seed)), key, lawp, ovp, stop.engine_params(env.d))
    return Trajectory(pos, walk_seed), _CAUSES[int(cause)]


def annealed_env_seed(seed: int, replicate: int = 0) -> int:
    return replicate_seed(derive_seed(seed, "annealed-env"), replicate)


def annealed_walk_seed(seed: int, replicate: int = 0) -> int:
    return replicate_seed(derive_seed(seed, "annealed-walk"), replicate)


def run_annealed(law: EnvironmentLaw, start, stop: StopRule, seed: int, replicate: int = 0) -> tuple[Trajectory, StopCause]:
    """One draw from the annealed law: a fresh environment per replicate."""
    env = Environment(law, annealed_env_seed(seed, replicate))
    return run_quenched(env, start, stop, annealed_walk_seed(seed, replicate))


@dataclass(frozen=True)
class ExitSample:
    ends: np.ndarray
    times: np.ndarray
    causes: np.ndarray

    @property
    def n(self) -> int:
        return self.ends.shape[0]

    @property
    def stopped(self) -> np.ndarray:
        return self.causes == _engine.CAUSE_STOPPED


def sample_exits(
    env_or_law,
    start,
    stop: StopRule,
    seed: int,
    n: int,
    first: int = 0,
) -> ExitSample:
    """Stop positions of replicates ``first .. first+n-1``.

    With an :class:`Environment` the walks are quenched and replicate ``i``
    uses walk seed ``replicate_seed(derive_seed(seed, "walk"), i)``.  With an
    :class:`EnvironmentLaw` they are annealed and each replicate matches
    ``run_annealed(law, start, stop, seed, i)``.
    """
    if isinstance(env_or_law, Environment):
        key, lawp, ovp = env_or_law.engine_args()
        d = env_or_law.d
        wroot = derive_seed(seed, "walk")
        eroot = 0
        annealed = False
    else:
        law = env_or_law
        d = law.d
        key = np.uint64(0)
        lawp = law.engine_params()
        ovp = _EMPTY_OVERLAY[d]
        wroot = derive_seed(seed, "annealed-walk")
        eroot = derive_seed(seed, "annealed-env")
        annealed = True
    s = _start(start, d)
    ends, times, causes = _engine.batch_ends(
        s, int(n), int(first), np.uint64(wroot), key, annealed, np.uint64(eroot), lawp, ovp, stop.engine_params(d)
    )
    return ExitSample(ends, times, causes)


def quenched_walk_seed(seed: int, replicate: int) -> int:
    """Walk seed that :func:`sample_exits` uses for a quenched replicate."""
    return replicate_seed(derive_seed(seed, "walk"), replicate)


# ------------------------------------------------------------------ hitting times

def first_hit_time(traj: Trajectory, stop: StopRule) -> int | None:
    hits = np.flatnonzero(stop.holds(traj.positions))
    if stop.strict:
        hits = hits[hits > 0]
    return int(hits[0]) if hits.size else None


def kth_return_time(traj: Trajectory, site, k: int) -> int | None:
    """Time of the ``k``-th visit to ``site`` strictly after time 0."""
    if k < 1:
        raise DomainError("k must be >= 1")
    s = np.asarray(site, dtype=np.int64).reshape(1, -1)
    visits = np.flatnonzero(np.all(traj.positions[1:] == s, axis=1)) + 1
    return int(visits[k - 1]) if visits.size >= k else None


def visit_times(traj: Trajectory, site) -> np.ndarray:
    s = np.asarray(site, dtype=np.int64).reshape(1, -1)
    return np.flatnonzero(np.all(traj.positions == s, axis=1))


__all__ = [
    "StopCause",
    "StopRule",
    "Trajectory",
    "ExitSample",
    "run_quenched",
    "run_annealed",
    "sample_exits",
    "first_hit_time",
    "kth_return_time",
    "visit_times",
    "annealed_env_seed",
    "annealed_walk_seed",
    "quenched_walk_seed",
]
