"""Auxiliary walk forced through good blocks, and the random-direction event.

The auxiliary walk ``Y`` moves between layers ``{x_1 = j N_1^2}``.  At each
stop it applies a transverse correction ``beta`` (drawn from a companion
coupling so that layer-to-layer displacements look annealed), takes a small
``+e1, -e1`` detour, and then either crosses the largest good block covering
it, conditioned on leaving through the front face, or takes ``N_1^2`` forced
steps along ``e1`` when no covering block is good.

Conditional laws needed by the companion coupling are tabulated by running
independent continuations of the construction from the relevant stop; the
tables are cached by ``(scale, anchor)`` and seeded from that key, so they do
not depend on the order in which runs touch them.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _engine
from ._hash import derive_seed, walk_key
from .env import Environment
from .errors import (BudgetExhausted, ConditioningTooRare, InfeasibleCoupling, IncompleteRun,
                     InvariantViolation, AuditTooLong, NotOnLayer)
from .exitstats.classify import BlockClassifier, _overlay_sites
from .exitstats.closeness import CompanionSampler, companion_sampler
from .exitstats.dist import LatticeDist, Region
from .exitstats.exact import exit_distribution
from .exitstats.ladder import annealed_front_table
from .geom import BlockSpec, ScaleLadder, lattice_cover, lattice_spacing
from .scales import log_scale_R
from .walk import StopRule, Trajectory

MAX_RETRIES = 10_000
AUDIT_MAX_STEPS = 10_000


# ------------------------------------------------------------------ config

@dataclass(frozen=True)
class AuxConfig:
    """Parameters of the auxiliary construction.

    ``lambda_cap`` clips the per-scale companion budgets, whose formula value
    is astronomically large at desk-scale ``L``.  Blocks use the transverse
    half-width ``width_factor * N_k``.
    """

    ladder: ScaleLadder
    w: tuple[float, ...] = ()
    M: int | None = None
    lambda_cap: float = 1.0
    width_factor: float = 5.0
    cube_exponent: float = 1.0
    classifier_samples: int = 1000
    classifier_seed: int = 0
    table_samples: int = 200
    max_retries: int = MAX_RETRIES
    step_budget: int = 10**7

    def __post_init__(self):
        object.__setattr__(self, "w", tuple(float(v) for v in self.w))
        if self.w and len(self.w) != self.ladder.d - 1:
            raise ValueError("direction w needs d-1 coordinates")
        if not 0 <= self.lambda_cap <= 1:
            raise ValueError("lambda_cap must lie in [0, 1]")

    @property
    def sizes(self) -> tuple[int, ...]:
        return self.ladder.sizes

    @property
    def widths(self) -> tuple[float, ...]:
        return tuple(self.width_factor * n for n in self.sizes)

    @property
    def lambdas(self) -> tuple[float, ...]:
        """``min(cap, L^-chi R_{5+k}(L))`` per scale."""
        L = self.ladder.L
        out = []
        for k in range(1, self.ladder.iota + 1):
            log_lam = -self.ladder.chi * math.log(L) + log_scale_R(5 + k, L)
            out.append(min(self.lambda_cap, math.exp(min(log_lam, 0.0))))
        return tuple(out)

    def horizon(self, u: float | None = None) -> int:
        """``M``: explicit, or ``floor((log u)^(1-epsilon))``."""
        if self.M is not None:
            return int(self.M)
        if u is None or u <= math.e:
            return 1
        return max(1, int(math.floor(math.log(u) ** (1 - self.ladder.epsilon))))

    def offsets(self, M: int) -> tuple[int, ...]:
        """``A_1 = 1``; ``A_k`` smallest with ``A_k N_k^2 > (M + A_{k-1}) N_{k-1}^2``."""
        A = [1]
        s = self.sizes
        for k in range(1, len(s)):
            A.append((M + A[-1]) * s[k - 1] ** 2 // s[k] ** 2 + 1)
        return tuple(A)

    def block(self, k: int, center) -> BlockSpec:
        return BlockSpec(tuple(int(c) for c in center), self.sizes[k - 1], None, self.widths[k - 1])

    def means(self, law) -> tuple[np.ndarray, ...]:
        """Annealed mean front-exit displacement per scale."""
        return tuple(self.front_table(law, k).mean() for k in range(1, self.ladder.iota + 1))

    def front_table(self, law, k: int) -> LatticeDist:
        N = self.sizes[k - 1]
        return annealed_front_table(law, N, self.widths[k - 1], None, seed=self.classifier_seed)

    def to_json(self) -> dict:
        return {
            "ladder": self.ladder.to_json(),
            "w": list(self.w),
            "M": self.M,
            "lambda_cap": self.lambda_cap,
            "width_factor": self.width_factor,
            "cube_exponent": self.cube_exponent,
            "classifier_samples": self.classifier_samples,
            "classifier_seed": self.classifier_seed,
            "table_samples": self.table_samples,
        }


# ------------------------------------------------------------------ levels

def _good(classifier, block: BlockSpec) -> bool:
    if isinstance(classifier, BlockClassifier):
        return classifier.classify(block).good
    if hasattr(classifier, "is_good"):
        return bool(classifier.is_good(block))
    return bool(classifier(block))


def level_of(x, ladder: ScaleLadder, classifier, widths=None) -> int:
    """Largest scale ``k`` whose layer grid holds ``x`` and whose covering block is good.

    ``classifier`` is a :class:`BlockClassifier`, an object with ``is_good``
    or a plain predicate on blocks.  Returns 0 when no scale qualifies.
    """
    x = np.asarray(x, dtype=np.int64)
    for k in range(ladder.iota, 0, -1):
        N = ladder.sizes[k - 1]
        if x[0] % (N * N):
            continue
        width = None if widths is None else widths[k - 1]
        z = lattice_cover(x, N, None, width)
        if _good(classifier, BlockSpec(tuple(z), N, None, width)):
            return k
    return 0


def conditioned_front_exit(env: Environment, block: BlockSpec, start, seed: int,
                           max_retries: int = MAX_RETRIES, budget: int | None = None) -> tuple[Trajectory, int]:
    """Quenched path from ``start`` conditioned to leave ``block`` through its front.

    Rejection sampling; returns the path and the number of attempts.
    """
    start = np.ascontiguousarray(np.asarray(start, dtype=np.int64))
    if not block.middle_third_contains(start):
        raise ValueError("start must lie in the middle third of the block")
    budget = budget if budget is not None else max(10**5, 50 * block.depth)
    key, lawp, ovp = env.engine_args()
    stp = StopRule.block_boundary(block, budget).engine_params(env.d)
    path, attempts = _engine.conditioned_path(start, np.uint64(walk_key(seed)), key, lawp, ovp, stp,
                                              block.front_level, int(max_retries))
    if attempts < 0:
        raise ConditioningTooRare(f"no front exit of block at {block.center} in {max_retries} attempts")
    return Trajectory(path, seed), int(attempts)


# ------------------------------------------------------------------ context

class AuxContext:
    """Caches shared by many runs in one environment.

    Holds the block verdicts, annealed front tables and the tabulated
    conditional laws used by the companion couplings.
    """

    def __init__(self, env: Environment, config: AuxConfig, classifier: BlockClassifier | None = None):
        self.env = env
        self.cfg = config
        self.classifier = classifier or BlockClassifier(env, config.cube_exponent, config.classifier_samples,
                                                        config.classifier_seed)
        self._verdict: dict = {}
        self._uniform: dict = {}
        self._tables: dict = {}
        self._samplers: dict = {}
        self._targets: dict = {}
        self._front_prob: dict = {}
        sites = _overlay_sites(env)
        self._ov_box = None if sites is None else (sites.min(axis=0), sites.max(axis=0))

    # verdicts --------------------------------------------------------------
    def _may_differ(self, block: BlockSpec) -> bool:
        if not self.env.law.single_kernel:
            return True
        if self._ov_box is None:
            return False
        lo, hi = block.bounding_box()
        return bool(np.all(lo <= self._ov_box[1]) and np.all(hi >= self._ov_box[0]))

    def is_good(self, k: int, center) -> bool:
        key = (k, tuple(int(c) for c in center))
        v = self._verdict.get(key)
        if v is None:
            block = self.cfg.block(k, center)
            if self._may_differ(block):
                v = self.classifier.classify(block).good
            else:
                if k not in self._uniform:
                    self._uniform[k] = self.classifier.classify(self.cfg.block(k, (0,) * self.env.d)).good
                v = self._uniform[k]
            self._verdict[key] = v
        return v

    def cover(self, k: int, x) -> np.ndarray:
        return lattice_cover(x, self.cfg.sizes[k - 1], None, self.cfg.widths[k - 1])

    def prepare(self, transverse: float | None = None) -> int:
        """Classify every lattice block that can differ from the uniform verdict.

        Restricted to transverse coordinates within ``transverse`` of the
        axis (default: the largest block width).  Returns the number of
        blocks classified; used before fanning runs out to workers.
        """
        d = self.env.d
        cfg = self.cfg
        reach = transverse if transverse is not None else max(cfg.widths)
        n = 0
        for k in range(1, cfg.ladder.iota + 1):
            self.is_good(k, (0,) * d)
            if self._ov_box is None and self.env.law.single_kernel:
                continue
            N, W = cfg.sizes[k - 1], cfg.widths[k - 1]
            s = lattice_spacing(N, W)
            if self._ov_box is not None and self.env.law.single_kernel:
                lo1, hi1 = self._ov_box[0][0] - N * N, self._ov_box[1][0] + N * N
            else:
                lo1, hi1 = -N * N, 2 * cfg.ladder.L + N * N
            lo1 = max(lo1, -N * N)
            layers = range(-(-lo1 // (N * N)) * N * N, hi1 + 1, N * N)
            ticks = np.arange(-(int(reach) // s) * s, int(reach) + 1, s)
            grids = np.meshgrid(*([ticks] * (d - 1)), indexing="ij")
            trans = np.stack([g.ravel() for g in grids], axis=1) if d > 1 else np.zeros((1, 0), np.int64)
            for z1 in layers:
                for t in trans:
                    c = (int(z1),) + tuple(int(v) for v in t)
                    if (k, c) not in self._verdict:
                        self.is_good(k, c)
                        n += 1
        return n

    def export_verdicts(self) -> dict:
        return {"site": dict(self._verdict), "uniform": dict(self._uniform),
                "classifier": dict(self.classifier._verdicts)}

    def import_verdicts(self, state: dict) -> None:
        # merge on miss: existing entries win, values are order independent
        for k, v in state["site"].items():
            self._verdict.setdefault(k, v)
        for k, v in state["uniform"].items():
            self._uniform.setdefault(k, v)
        for k, v in state["classifier"].items():
            self.classifier._verdicts.setdefault(k, v)

    # tables ----------------------------------------------------------------
    def target(self, k: int) -> LatticeDist:
        if k not in self._targets:
            self._targets[k] = self.cfg.front_table(self.env.law, k)
        return self._targets[k]

    def conditional_table(self, k: int, anchor) -> LatticeDist:
        """Law of the scale-``k`` layer displacement ``X`` from a stop anchored at ``anchor``.

        ``anchor`` is a point tuple, or ``"start"`` for the initial stop.
        """
        key = (k, anchor)
        if key not in self._tables:
            n = self.cfg.table_samples
            root = derive_seed(self.cfg.classifier_seed, "table", k, *(anchor if anchor != "start" else ("start",)))
            first, random = _continuation(self, k, anchor, derive_seed(root, 0))
            if not random:
                # nothing random happened: the law is a point mass
                self._tables[key] = LatticeDist.point(first)
            else:
                xs = [first] + [_continuation(self, k, anchor, derive_seed(root, i))[0] for i in range(1, n)]
                self._tables[key] = LatticeDist.from_samples(np.array(xs))
        return self._tables[key]

    def sampler(self, k: int, anchor, x) -> tuple[CompanionSampler, str]:
        """Companion sampler for ``X = x``; falls back to adding ``x`` to the table.

        Samplers are cached by table content, so anchors whose conditional
        laws coincide (forced steps, say) share one coupling.
        """
        if anchor == "beta11":
            table, lam = LatticeDist.point(x), 0.0
        else:
            table, lam = self.conditional_table(k, anchor), self.cfg.lambdas[k - 1]
        s = self._sampler_for(k, table, lam)
        c = tuple(np.floor_divide(np.asarray(x) - s.plan.anchor, s.plan.side).tolist())
        if c in s.plan._cubes1:
            return s, "table"
        n = float(table.probs.sum())
        aug = LatticeDist(np.vstack([table.sites, np.asarray(x).reshape(1, -1)]),
                          np.concatenate([table.probs, [n / max(self.cfg.table_samples, 1)]]))
        return self._sampler_for(k, aug.normalized(), lam), "augmented"

    def _sampler_for(self, k: int, table: LatticeDist, lam: float) -> CompanionSampler:
        key = (k, lam, table.sites.tobytes(), table.probs.round(15).tobytes())
        if key not in self._samplers:
            self._samplers[key] = companion_sampler(table, self.target(k), lam)
        return self._samplers[key]

    def front_probability(self, k: int, center, start) -> float:
        """Exact quenched probability of a front exit (audit only)."""
        block = self.cfg.block(k, center)
        uniform = not self._may_differ(block)
        rel = tuple(int(a) - int(b) for a, b in zip(start, center))
        key = (k, rel) if uniform else (k, tuple(center), rel)
        if key not in self._front_prob:
            if uniform:
                b0 = self.cfg.block(k, (0,) * self.env.d)
                law = exit_distribution(self.env, Region.from_block(b0), rel)
            else:
                law = exit_distribution(self.env, Region.from_block(block), tuple(int(v) for v in start))
            self._front_prob[key] = law.front_mass
        return self._front_prob[key]


# ------------------------------------------------------------------ the walk

@dataclass(frozen=True)
class Segment:
    kind: str  # "forced", "correction" or "exit"
    t0: int
    t1: int
    scale: int = 0
    center: tuple[int, ...] | None = None
    attempts: int = 0


@dataclass(frozen=True)
class BetaDraw:
    k: int
    j: int
    beta: tuple[int, ...]
    x: tuple[int, ...]
    source: str
    probability: float


@dataclass(eq=False)
class AuxRun:
    """One auxiliary walk with its stopping times and corrections.

    ``zeta[n]`` are the stop times, ``zeta_p[n]`` the times right after the
    correction at that stop, ``anchors_p[n]`` / ``anchors[n]`` the positions
    before and after the correction, ``levels[n]`` the scale used to leave
    the stop.  ``betas`` maps ``(k, j)`` to the correction applied on layer
    ``j N_k^2`` at scale ``k``.
    """

    positions: np.ndarray | None
    zeta: list
    zeta_p: list
    anchors_p: list
    anchors: list
    levels: list
    betas: dict
    draws: list
    segments: list
    sizes: tuple[int, ...]
    L: int
    seed: int
    layer_points: dict = field(default_factory=dict)
    Q: tuple[int, ...] = ()
    stop_bound: float = math.inf
    max_beta: int = 0

    @property
    def n_stops(self) -> int:
        return len(self.zeta)

    @property
    def nonzero_betas(self) -> dict:
        return {k: v for k, v in self.betas.items() if any(v)}

    def compact(self) -> "AuxRun":
        """Copy without the trajectory and segment list (for bulk runs)."""
        return AuxRun(None, self.zeta, self.zeta_p, self.anchors_p, self.anchors, self.levels, self.betas,
                      [], [], self.sizes, self.L, self.seed, self.layer_points, self.Q, self.stop_bound,
                      self.max_beta)

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "L": self.L,
            "sizes": list(self.sizes),
            "zeta": list(self.zeta),
            "zeta_prime": list(self.zeta_p),
            "x": [list(a) for a in self.anchors],
            "x_prime": [list(a) for a in self.anchors_p],
            "levels": list(self.levels),
            "beta": [{"k": k, "j": j, "vector": list(v)} for (k, j), v in sorted(self.betas.items())],
            "Q": list(self.Q),
            "stop_bound": self.stop_bound,
        }


def _staircase(a: np.ndarray, b: np.ndarray) -> list[np.ndarray]:
    """Axis-ordered shortest path from ``a`` to ``b`` (axis 2 first), excluding ``a``."""
    out = []
    cur = a.copy()
    for i in list(range(1, a.shape[0])) + [0]:
        step = 1 if b[i] > cur[i] else -1
        while cur[i] != b[i]:
            cur = cur.copy()
            cur[i] += step
            out.append(cur)
    return out


class _Walker:
    """Runs the construction from the start or from an anchored stop."""

    def __init__(self, ctx: AuxContext, seed: int, record: bool = True):
        self.ctx = ctx
        self.cfg = ctx.cfg
        self.seed = int(seed)
        self.record = record
        self.d = ctx.env.d
        self.sizes = self.cfg.sizes
        self.iota = len(self.sizes)
        self.limit = 2 * self.cfg.ladder.L
        self.pieces: list[np.ndarray] = []
        self.t = 0
        self.y = np.zeros(self.d, dtype=np.int64)
        self.zeta, self.zeta_p, self.anchors_p, self.anchors, self.levels = [], [], [], [], []
        self.betas: dict = {}
        self.draws: list = []
        self.segments: list = []
        self.flags: dict = {}
        self.random_used = False

    # bookkeeping -----------------------------------------------------------
    def _append(self, pts, kind, **kw):
        if len(pts) == 0:
            return False
        pts = np.asarray(pts, dtype=np.int64).reshape(-1, self.d)
        over = np.nonzero(pts[:, 0] >= self.limit)[0]
        done = over.size > 0
        if done:
            pts = pts[: over[0] + 1]
        t0 = self.t
        self.pieces.append(pts)
        self.t += pts.shape[0]
        self.y = pts[-1].copy()
        if self.record:
            self.segments.append(Segment(kind, t0, self.t, **kw))
        if self.t > self.cfg.step_budget:
            raise BudgetExhausted(f"auxiliary walk exceeded {self.cfg.step_budget} steps")
        return done

    def _forced(self):
        n1 = self.sizes[0] ** 2
        pts = np.repeat(self.y.reshape(1, -1), n1, axis=0)
        pts[:, 0] += np.arange(1, n1 + 1)
        return self._append(pts, "forced")

    def _set_flags(self, x, kmax, anchor):
        """Verdicts of covering blocks at ``x``; bad ones mark the next layer."""
        good = {}
        for k in range(1, kmax + 1):
            N2 = self.sizes[k - 1] ** 2
            z = self.ctx.cover(k, x)
            good[k] = (self.ctx.is_good(k, z), tuple(z.tolist()))
            if not good[k][0]:
                self.flags[(k, int(x[0]) // N2 + 1)] = (anchor, tuple(int(v) for v in x))
        return good

    def _grid_level(self, x1: int) -> int:
        return max(k for k in range(1, self.iota + 1) if x1 % (self.sizes[k - 1] ** 2) == 0)

    def _leave(self, x, good, n):
        """Leave the stop at ``x`` through the largest good block, or by forced steps."""
        level = 0
        for k in sorted(good, reverse=True):
            if good[k][0]:
                level = k
                break
        self.levels.append(level)
        if level == 0:
            return self._forced()
        block = self.cfg.block(level, good[level][1])
        self.random_used = True
        traj, attempts = conditioned_front_exit(self.ctx.env, block, x, derive_seed(self.seed, "segment", n),
                                                self.cfg.max_retries)
        return self._append(traj.positions[1:], "exit", scale=level, center=block.center, attempts=attempts)

    def _beta(self, k: int, j: int, x_prime, lower_sum):
        if (k, j) == (1, 1):
            x = np.zeros(self.d, dtype=np.int64)
            x[0] = self.sizes[0] ** 2
            return self._draw(k, j, x, "beta11")
        flag = self.flags.get((k, j))
        if flag is None:
            return np.zeros(self.d, dtype=np.int64)
        anchor, x_from = flag
        x = np.asarray(x_prime) - np.asarray(x_from) + lower_sum
        return self._draw(k, j, x, anchor)

    def _draw(self, k, j, x, anchor):
        sampler, source = self.ctx.sampler(k, anchor, x)
        rng = np.random.default_rng(derive_seed(self.seed, "beta", k, j))
        z0 = sampler.companion(x, rng)[0]
        beta = z0 - x
        self.random_used = True
        if self.record:
            self.draws.append(BetaDraw(k, j, tuple(beta.tolist()), tuple(int(v) for v in x), source,
                                       sampler.plan.z0_probability(x, z0)))
        return beta

    def _corrections(self, x_prime, kmax):
        total = np.zeros(self.d, dtype=np.int64)
        for k in range(1, kmax + 1):
            j = int(x_prime[0]) // self.sizes[k - 1] ** 2
            b = self._beta(k, j, x_prime, total.copy())
            self.betas[(k, j)] = tuple(int(v) for v in b)
            total = total + b
        return total

    # driving -----------------------------------------------------------------
    def start(self):
        """Stop 0 at the origin, then the initial forced run."""
        x = self.y.copy()
        self.zeta.append(0)
        self.zeta_p.append(0)
        self.anchors_p.append(tuple(x.tolist()))
        self.anchors.append(tuple(x.tolist()))
        self.pieces.append(x.reshape(1, -1))
        self.t = 1
        self._set_flags(x, self.iota, "start")
        self.levels.append(0)
        return self._forced()

    def resume(self, x, k_target: int):
        """Start at an anchored stop (after its correction) for a continuation."""
        x = np.asarray(x, dtype=np.int64)
        self.y = x.copy()
        self.pieces.append(x.reshape(1, -1))
        self.t = 1
        kmax = self._grid_level(int(x[0]))
        good = self._set_flags(x, kmax, tuple(int(v) for v in x))
        return self._leave(x, good, 0)

    def step(self, n: int, stop_at: int | None = None):
        """Handle stop ``n`` at the current position; returns (finished, X-sum)."""
        x_prime = self.y.copy()
        x1 = int(x_prime[0])
        if x1 >= self.limit:
            return True, None
        kmax = self._grid_level(x1)
        if stop_at is not None and x1 > stop_at:
            raise IncompleteRun("continuation jumped over its target layer")
        if stop_at is not None and x1 == stop_at:
            k_t = self._target_scale
            total = np.zeros(self.d, dtype=np.int64)
            for k in range(1, k_t):
                j = x1 // self.sizes[k - 1] ** 2
                total = total + self._beta(k, j, x_prime, total.copy())
            return True, total
        self.zeta.append(self.t - 1)
        self.anchors_p.append(tuple(x_prime.tolist()))
        beta = self._corrections(x_prime, kmax)
        x = x_prime + beta
        if beta[0] != 0:
            raise InvariantViolation("correction with a nonzero first coordinate")
        path = _staircase(x_prime, x)
        bump = x.copy()
        bump[0] += 1
        path += [bump, x.copy()]
        self._append(path, "correction")
        self.zeta_p.append(self.t - 1)
        self.anchors.append(tuple(x.tolist()))
        good = self._set_flags(x, kmax, tuple(int(v) for v in x))
        return self._leave(x, good, n), None

    @property
    def positions(self) -> np.ndarray:
        return np.vstack(self.pieces)


def _continuation(ctx: AuxContext, k: int, anchor, seed: int) -> tuple[tuple[int, ...], bool]:
    """One draw of the scale-``k`` layer displacement from an anchored stop.

    Also reports whether any random choice was made along the way.
    """
    w = _Walker(ctx, seed, record=False)
    w._target_scale = k
    N2 = ctx.cfg.sizes[k - 1] ** 2
    if anchor == "start":
        origin = np.zeros(ctx.env.d, dtype=np.int64)
        done = w.start()
        # the first stop carries the special correction beta_{1,1}
        n = 1
    else:
        origin = np.asarray(anchor, dtype=np.int64)
        done = w.resume(origin, k)
        n = 1
    goal = int(origin[0]) + N2
    while not done:
        finished, lower = w.step(n, stop_at=goal)
        if lower is not None:
            return tuple((w.y - origin + lower).tolist()), w.random_used
        done = finished
        n += 1
    raise IncompleteRun("continuation ended before reaching its target layer")


# ------------------------------------------------------------------ run + checks

def _layer_points(run: AuxRun, pos: np.ndarray) -> dict:
    zmap = dict(zip(run.zeta, run.zeta_p))
    out = {}
    top = np.maximum.accumulate(pos[:, 0])
    for k, N in enumerate(run.sizes, start=1):
        N2 = N * N
        levels = np.arange(0, int(top[-1]) // N2 + 1) * N2
        # nearest-neighbour steps: the first time at or above a level is a hit
        hits = np.searchsorted(top, levels, side="left")
        for j, t in enumerate(hits.tolist()):
            out[(k, j)] = tuple(pos[zmap.get(t, t)].tolist())
    return out


def bad_visit_counts(run: AuxRun, ctx: AuxContext) -> tuple[tuple[int, ...], float]:
    """Bad lattice blocks touched by the run per scale, and the stop-count bound.

    The bound is ``L^(2 chi) (iota + 2 + sum_k Q_k)``.
    """
    cfg = ctx.cfg
    lad = cfg.ladder
    iota = lad.iota
    pos = run.positions
    if pos is None or pos.shape[0] == 0:
        return (0,) * iota, lad.L ** (2 * lad.chi) * (iota + 2)
    Q = []
    d = pos.shape[1]
    for k in range(1, iota + 1):
        N, W = cfg.sizes[k - 1], cfg.widths[k - 1]
        N2 = N * N
        s = lattice_spacing(N, W)
        uniform_good = ctx.is_good(k, (0,) * d) and ctx.env.law.single_kernel
        lo1, hi1 = int(pos[:, 0].min()) - N2 + 1, int(pos[:, 0].max()) + N2 - 1
        if uniform_good:
            if ctx._ov_box is None:
                Q.append(0)
                continue
            lo1 = max(lo1, int(ctx._ov_box[0][0]) - N2 + 1)
            hi1 = min(hi1, int(ctx._ov_box[1][0]) + N2 - 1)
        count = 0
        for z1 in range(-(-lo1 // N2) * N2, hi1 + 1, N2):
            near = pos[np.abs(pos[:, 0] - z1) < N2]
            if near.shape[0] == 0:
                continue
            tlo = near[:, 1:].min(axis=0) - W
            thi = near[:, 1:].max(axis=0) + W
            axes = [np.arange(-(-int(math.floor(a)) // s) * s, int(math.ceil(b)) + 1, s) for a, b in zip(tlo, thi)]
            grids = np.meshgrid(*axes, indexing="ij")
            for t in np.stack([g.ravel() for g in grids], axis=1):
                c = (z1,) + tuple(int(v) for v in t)
                if uniform_good and not ctx._may_differ(cfg.block(k, c)):
                    continue
                if ctx.is_good(k, c):
                    continue
                if np.any(cfg.block(k, c).contains(near)):
                    count += 1
        Q.append(count)
    return tuple(Q), lad.L ** (2 * lad.chi) * (iota + 2 + sum(Q))


def run_aux(env: Environment, config: AuxConfig, u: float | None = None, seed: int = 0,
            ctx: AuxContext | None = None, check: bool = True) -> AuxRun:
    """Build one auxiliary walk up to the level ``x_1 = 2L``.

    With ``check`` the construction invariants are enforced: no return to the
    origin, every correction below ``L^(4 psi)`` in l1 norm, stops on the
    ``N_1^2`` grid, increasing stop times, and the stop-count bound.
    Violations raise :class:`InvariantViolation`.
    """
    ctx = ctx or AuxContext(env, config)
    w = _Walker(ctx, seed)
    done = w.start()
    n = 1
    while not done:
        done, _ = w.step(n)
        n += 1
    pos = w.positions
    run = AuxRun(pos, w.zeta, w.zeta_p, w.anchors_p, w.anchors, w.levels, w.betas, w.draws, w.segments,
                 config.sizes, config.ladder.L, int(seed))
    run.layer_points = _layer_points(run, pos)
    run.Q, run.stop_bound = bad_visit_counts(run, ctx)
    run.max_beta = max((sum(abs(c) for c in b) for b in w.betas.values()), default=0)
    if check:
        check_invariants(run, config)
    return run


def check_invariants(run: AuxRun, config: AuxConfig) -> None:
    lad = config.ladder
    pos = run.positions
    if pos is not None:
        if np.any(np.all(pos[1:] == 0, axis=1)):
            raise InvariantViolation("auxiliary walk returned to the origin")
        if np.any(np.abs(np.diff(pos, axis=0)).sum(axis=1) != 1):
            raise InvariantViolation("auxiliary walk made a non nearest-neighbour step")
        for seg in run.segments:
            if seg.kind == "exit":
                blk = config.block(seg.scale, seg.center)
                end = pos[seg.t1 - 1]
                if end[0] != blk.front_level and end[0] < 2 * lad.L:
                    raise InvariantViolation("conditioned segment left through a non-front face")
    cap = lad.L ** (4 * lad.psi)
    for key, b in run.betas.items():
        if b[0] != 0:
            raise InvariantViolation(f"beta{key} has a nonzero first coordinate")
        if sum(abs(c) for c in b) >= cap:
            raise InvariantViolation(f"beta{key} = {b} is not below L^(4 psi) = {cap}")
    n1 = config.sizes[0] ** 2
    for a, b in zip(run.anchors_p, run.anchors):
        if a[0] % n1 or b[0] % n1:
            raise InvariantViolation("stop off the N_1^2 layer grid")
    if any(b <= a for a, b in zip(run.zeta, run.zeta[1:])):
        raise InvariantViolation("stop times not strictly increasing")
    if run.n_stops > run.stop_bound:
        raise InvariantViolation(f"{run.n_stops} stops exceed the bound {run.stop_bound:.1f}")


def _batch_worker(args):
    env, config, u, seeds, verdicts, compact = args
    ctx = AuxContext(env, config)
    if verdicts is not None:
        ctx.import_verdicts(verdicts)
    out = []
    for s in seeds:
        r = run_aux(env, config, u, s, ctx)
        out.append(r.compact() if compact else r)
    return out


def aux_seeds(seed: int, n_runs: int, first: int = 0) -> list[int]:
    root = derive_seed(seed, "aux")
    return [derive_seed(root, i) for i in range(first, first + n_runs)]


def run_aux_many(env: Environment, config: AuxConfig, n_runs: int, seed: int = 0, u: float | None = None,
                 workers: int = 1, compact: bool = True, chunk: int = 250) -> list[AuxRun]:
    """Independent auxiliary runs; output does not depend on ``workers``.

    Runs are seeded by index.  With several workers the parent classifies
    the blocks that may differ from the uniform verdict first and ships the
    verdicts, so workers do not repeat that work.
    """
    seeds = aux_seeds(seed, n_runs)
    if workers <= 1:
        return _batch_worker((env, config, u, seeds, None, compact))
    ctx = AuxContext(env, config)
    ctx.prepare()
    state = ctx.export_verdicts()
    jobs = [(env, config, u, seeds[i:i + chunk], state, compact) for i in range(0, len(seeds), chunk)]
    out: list = []
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for part in pool.map(_batch_worker, jobs):
            out.extend(part)
    return out


# ------------------------------------------------------------------ W event

@dataclass(frozen=True)
class WOutcome:
    holds: bool
    per_scale: tuple[bool, ...]
    layers: tuple[tuple[int, int, bool], ...]
    first_failure: tuple[int, int] | None

    def to_json(self) -> dict:
        return {"holds": self.holds, "per_scale": list(self.per_scale),
                "layers": [list(t) for t in self.layers],
                "first_failure": None if self.first_failure is None else list(self.first_failure)}


def w_event(run: AuxRun, config: AuxConfig, means=None, M: int | None = None, w=None) -> WOutcome:
    """Whether the run tracks the ``w``-tilted corridor on every scale.

    Layer ``j`` of scale ``k`` passes when
    ``|Y'(j) - Y'(A_k) - (j - A_k) E_k - (0, w)(j - A_k) N_k|_inf < N_k``,
    with ``Y'(j)`` the position right after the correction at the first
    visit of layer ``j N_k^2``.  Front exits hold by construction.
    """
    M = config.horizon() if M is None else M
    A = config.offsets(M)
    w = np.asarray(config.w if w is None else w, dtype=float)
    if means is None:
        raise ValueError("annealed means per scale are required (AuxConfig.means)")
    d = len(run.anchors[0]) if run.anchors else config.ladder.d
    if w.size == 0:
        w = np.zeros(d - 1)
    layers = []
    per_scale = []
    first = None
    for k, N in enumerate(config.sizes, start=1):
        a = A[k - 1]
        need = [(k, j) for j in range(a, a + M + 1)]
        missing = [key for key in need if key not in run.layer_points]
        if missing:
            raise IncompleteRun(f"run never reached layer {missing[0]}")
        base = np.asarray(run.layer_points[(k, a)], dtype=float)
        tilt = np.concatenate([[0.0], w]) * N
        ok_k = True
        for j in range(a + 1, a + M + 1):
            y = np.asarray(run.layer_points[(k, j)], dtype=float)
            dev = y - base - (j - a) * np.asarray(means[k - 1]) - (j - a) * tilt
            ok = bool(np.abs(dev).max() < N)
            layers.append((k, j, ok))
            if not ok and first is None:
                first = (k, j)
            ok_k &= ok
        per_scale.append(ok_k)
    return WOutcome(all(per_scale), tuple(per_scale), tuple(layers), first)


@dataclass(frozen=True)
class WEstimate:
    w: tuple[float, ...]
    p_hat: float
    stderr: float
    n_runs: int
    bound: float
    in_cone: bool
    flagged: bool
    chain_factors: tuple[float, ...]
    chain_product: float


def estimate_w_probability(env: Environment, config: AuxConfig, w_grid, n_runs: int, seed: int = 0,
                           u: float | None = None, workers: int = 1, runs=None) -> list[WEstimate]:
    """Frequency of the random-direction event for each ``w`` on a grid.

    The same runs serve every ``w``.  A value is flagged when ``w`` lies in
    ``[-1, 1]^(d-1)`` and the estimate falls more than 3 standard errors
    below ``u^(epsilon - 1/2)``.
    """
    runs = runs if runs is not None else run_aux_many(env, config, n_runs, seed, u, workers)
    means = config.means(env.law)
    M = config.horizon(u)
    bound = u ** (config.ladder.epsilon - 0.5) if u is not None else math.nan
    out = []
    for w in w_grid:
        w = tuple(float(v) for v in np.atleast_1d(w))
        res = [w_event(r, config, means, M, w) for r in runs]
        hits = np.array([r.holds for r in res], dtype=float)
        p = float(hits.mean()) if len(res) else math.nan
        se = float(math.sqrt(p * (1 - p) / len(res))) if len(res) else math.nan
        # chain rule: P(layer i passes | all earlier pass), in evaluation order
        factors = []
        alive = np.ones(len(res), dtype=bool)
        for i in range(len(res[0].layers) if res else 0):
            ok = np.array([r.layers[i][2] for r in res])
            n_alive = alive.sum()
            factors.append(float((ok & alive).sum() / n_alive) if n_alive else 0.0)
            alive &= ok
        in_cone = all(abs(v) <= 1 for v in w)
        flagged = bool(in_cone and not math.isnan(bound) and p + 3 * se < bound)
        out.append(WEstimate(w, p, se, len(res), bound, in_cone, flagged, tuple(factors),
                             float(np.prod(factors)) if factors else 1.0))
    return out


# ------------------------------------------------------------------ likelihood

def stop_count_bound(iota: int, Q_sum: int, L2chi: float) -> float:
    """``Q = L^(2 chi) (iota + 2 + sum_k Q_k)``."""
    return L2chi * (iota + 2 + Q_sum)


def likelihood_floor_value(iota: int, Q_sum: int, L2chi: float, L4psi: float, eta: float) -> tuple[float, float]:
    """``(bound, log bound)`` of ``(1/2) eta^(Q (L^(4 psi) + 2))``."""
    q = stop_count_bound(iota, Q_sum, L2chi)
    if eta <= 0:
        return 0.0, -math.inf
    lg = math.log(0.5) + q * (L4psi + 2) * math.log(eta)
    return math.exp(lg), lg


def likelihood_floor(run: AuxRun, config: AuxConfig, eta: float) -> tuple[float, float]:
    lad = config.ladder
    return likelihood_floor_value(lad.iota, sum(run.Q), lad.L ** (2 * lad.chi), lad.L ** (4 * lad.psi), eta)


@dataclass(frozen=True)
class RatioAudit:
    log_ratio: float
    log_floor: float
    passed: bool
    steps: int
    n_exits: int
    n_draws: int


def ratio_audit(run: AuxRun, ctx: AuxContext, eta: float | None = None) -> RatioAudit:
    """Exact comparison of path probabilities of the walk and of the construction.

    The ratio of the quenched probability of the realised path to its
    probability under the construction is the product of the kernel weights
    of the non-conditioned steps, times the front-exit probability of each
    conditioned segment, divided by the probability of each correction draw.
    """
    pos = run.positions
    if pos is None:
        raise ValueError("audit needs the trajectory")
    if pos.shape[0] - 1 > AUDIT_MAX_STEPS:
        raise AuditTooLong(f"{pos.shape[0] - 1} steps exceed the audit limit {AUDIT_MAX_STEPS}")
    env = ctx.env
    eta = env.law.eta if eta is None else eta
    kern = env.kernels_at(pos[:-1])
    steps = np.diff(pos, axis=0)
    axis = np.argmax(np.abs(steps), axis=1)
    sign = steps[np.arange(steps.shape[0]), axis]
    col = 2 * axis + (sign < 0)
    probs = kern[np.arange(steps.shape[0]), col]
    free = np.ones(steps.shape[0], dtype=bool)
    lg = 0.0
    n_exit = 0
    for seg in run.segments:
        if seg.kind != "exit":
            continue
        # steps t0-1 -> t0, ..., t1-2 -> t1-1 belong to the segment
        free[seg.t0 - 1: seg.t1 - 1] = False
        start = tuple(int(v) for v in pos[seg.t0 - 1])
        lg += math.log(ctx.front_probability(seg.scale, seg.center, start))
        n_exit += 1
    with np.errstate(divide="ignore"):
        lg += float(np.sum(np.log(probs[free])))
    for dr in run.draws:
        lg -= math.log(dr.probability)
    _, lf = likelihood_floor(run, ctx.cfg, eta)
    return RatioAudit(lg, lf, bool(lg >= lf), int(steps.shape[0]), n_exit, len(run.draws))


def layer_displacements(runs, k: int, j: int) -> LatticeDist:
    """Empirical law of ``Y'(j+1) - Y'(j)`` at scale ``k`` across runs."""
    out = []
    for r in runs:
        a, b = r.layer_points.get((k, j)), r.layer_points.get((k, j + 1))
        if a is not None and b is not None:
            out.append(np.subtract(b, a))
    if not out:
        raise IncompleteRun(f"no run reached layers {j} and {j + 1} at scale {k}")
    return LatticeDist.from_samples(np.array(out))


__all__ = [
    "AuxConfig", "AuxContext", "AuxRun", "BetaDraw", "RatioAudit", "Segment", "WEstimate", "WOutcome",
    "aux_seeds", "bad_visit_counts", "check_invariants", "conditioned_front_exit", "estimate_w_probability",
    "layer_displacements", "level_of", "likelihood_floor", "likelihood_floor_value", "ratio_audit", "run_aux",
    "run_aux_many", "stop_count_bound", "w_event",
]
