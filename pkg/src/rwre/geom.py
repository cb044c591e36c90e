"""Block geometry, basic lattices, the slowdown box and the scale ladder."""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateLadder, InfeasibleConstants, NotOnLayer
from .scales import scale_R


class Site(str, enum.Enum):
    INTERIOR = "interior"
    BOUNDARY = "boundary"
    FRONT = "front_boundary"
    EXTERIOR = "exterior"


def _unit(theta, d: int) -> tuple[float, ...]:
    if theta is None:
        v = np.zeros(d)
        v[0] = 1.0
    else:
        v = np.asarray(theta, dtype=float)
        v = v / np.linalg.norm(v)
    return tuple(float(c) for c in v)


@dataclass(frozen=True)
class BlockSpec:
    """Basic block of size ``N`` around ``center`` along direction ``theta``.

    The block holds sites with ``|x_1 - z_1| < N^2`` whose distance (sup norm)
    to the axis point ``u(z, x) = z + theta <x-z, e1> / theta_1`` is below the
    transverse half-width, ``N * R_5(N)`` unless ``width`` overrides it.
    """

    center: tuple[int, ...]
    N: int
    theta: tuple[float, ...] | None = None
    width: float | None = None

    def __post_init__(self):
        c = tuple(int(v) for v in self.center)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "theta", _unit(self.theta, len(c)))
        if self.N < 2:
            raise ValueError("block size N must be >= 2")
        if self.theta[0] <= 0:
            raise ValueError("theta must have a positive first coordinate")
        if len(self.theta) != len(c):
            raise ValueError("theta and center dimensions differ")
        if self.width is not None and self.width <= 0:
            raise ValueError("width must be positive")

    @property
    def d(self) -> int:
        return len(self.center)

    @property
    def depth(self) -> int:
        return self.N * self.N

    @property
    def half_width(self) -> float:
        if self.width is not None:
            return float(self.width)
        return float(self.N * scale_R(5, max(self.N, 3)))

    @property
    def front_level(self) -> int:
        """First coordinate of the front face."""
        return self.center[0] + self.depth

    def moved(self, center) -> "BlockSpec":
        return BlockSpec(tuple(center), self.N, self.theta, self.width)

    def engine_params(self):
        return (
            np.asarray(self.center, dtype=np.int64),
            np.asarray(self.theta, dtype=float),
            float(self.depth),
            self.half_width,
        )

    # membership --------------------------------------------------------------
    def _test(self, x, frac: float):
        x = np.asarray(x, dtype=np.int64)
        z = np.asarray(self.center, dtype=np.int64)
        th = np.asarray(self.theta)
        t = (x[..., 0] - z[0]).astype(float)
        ok = np.abs(t) < self.depth * frac
        w = self.half_width * frac
        for i in range(1, self.d):
            u = z[i] + (th[i] * t) / th[0]
            ok = ok & (np.abs(x[..., i] - u) < w)
        return ok

    def contains(self, x):
        r = self._test(x, 1.0)
        return bool(r) if np.ndim(r) == 0 else r

    def middle_third_contains(self, x):
        r = self._test(x, 1.0 / 3.0)
        return bool(r) if np.ndim(r) == 0 else r

    def classify(self, x) -> Site:
        x = np.asarray(x, dtype=np.int64)
        if self.contains(x):
            return Site.INTERIOR
        nbrs = x + np.vstack([np.eye(self.d, dtype=np.int64), -np.eye(self.d, dtype=np.int64)])
        if np.any(self.contains(nbrs)):
            if x[0] - self.center[0] == self.depth:
                return Site.FRONT
            return Site.BOUNDARY
        return Site.EXTERIOR

    # enumeration -------------------------------------------------------------
    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        """Inclusive integer box containing every interior site."""
        z = np.asarray(self.center)
        lo = np.empty(self.d, dtype=np.int64)
        hi = np.empty(self.d, dtype=np.int64)
        lo[0] = z[0] - self.depth + 1
        hi[0] = z[0] + self.depth - 1
        tmax = self.depth - 1
        for i in range(1, self.d):
            shift = abs(self.theta[i] * tmax / self.theta[0])
            lo[i] = math.floor(z[i] - shift - self.half_width)
            hi[i] = math.ceil(z[i] + shift + self.half_width)
        return lo, hi

    def box_size(self) -> int:
        lo, hi = self.bounding_box()
        return int(np.prod(hi - lo + 1))

    def interior_sites(self) -> np.ndarray:
        lo, hi = self.bounding_box()
        grids = np.meshgrid(*[np.arange(a, b + 1) for a, b in zip(lo, hi)], indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=1)
        return pts[self.contains(pts)]

    def front_sites(self) -> np.ndarray:
        inner = self.interior_sites()
        back = inner[inner[:, 0] == self.center[0] + self.depth - 1]
        out = back.copy()
        out[:, 0] += 1
        return out


def block_contains(block: BlockSpec, x) -> bool:
    return block.contains(x)


def middle_third_contains(block: BlockSpec, x) -> bool:
    return block.middle_third_contains(x)


def boundary_classify(block: BlockSpec, x) -> Site:
    return block.classify(x)


# -------------------------------------------------------------------- lattices

def lattice_spacing(N: int, width: float | None = None) -> int:
    """Transverse spacing ``floor(W/4)`` of the basic lattice, at least 1."""
    w = N * scale_R(5, max(N, 3)) if width is None else width
    return max(1, int(math.floor(w / 4)))


def lattice_cover(x, N: int, theta=None, width: float | None = None) -> np.ndarray:
    """Lattice point ``z`` on the layer of ``x`` whose middle third holds ``x``.

    Chooses the candidate closest to ``x`` in sup norm, ties broken
    lexicographically.
    """
    x = np.asarray(x, dtype=np.int64)
    if x[0] % (N * N) != 0:
        raise NotOnLayer(f"first coordinate {x[0]} not divisible by N^2={N * N}")
    s = lattice_spacing(N, width)
    z = x.copy()
    if x.shape[0] > 1:
        rest = x[1:]
        lower = np.floor_divide(rest, s) * s
        best = np.minimum(rest - lower, lower + s - rest)
        reach = int(best.max())
        # smallest lattice value within `reach` of each coordinate
        z[1:] = -np.floor_divide(-(rest - reach), s) * s
    block = BlockSpec(tuple(z), N, theta, width)
    if not block.middle_third_contains(x):
        raise NotOnLayer(f"no lattice block covers {tuple(x)} at N={N}")
    return z


def lattice_index(z, N: int, width: float | None = None) -> np.ndarray:
    z = np.asarray(z, dtype=np.int64)
    s = lattice_spacing(N, width)
    idx = z.copy()
    idx[..., 0] = z[..., 0] // (N * N)
    idx[..., 1:] = z[..., 1:] // s
    return idx


def sublattice_class(z, N: int, width: float | None = None) -> tuple[int, ...]:
    """Class of a lattice point among the ``9^d`` residue classes."""
    return tuple(int(v) for v in np.mod(lattice_index(z, N, width), 9))


def sublattice_decomposition(N: int, d: int, width: float | None = None) -> list[tuple[int, ...]]:
    """All ``9^d`` residue classes of the basic lattice."""
    return list(itertools.product(range(9), repeat=d))


def classes_disjoint(N: int, d: int, theta=None, width: float | None = None) -> bool:
    """Whether same-class distinct lattice blocks are always disjoint.

    Checks the nearest same-class neighbours along each lattice axis by
    membership on bounding boxes.  At small ``N`` the spacing floor can make
    this false; the statement is asymptotic.
    """
    s = lattice_spacing(N, width)
    base = BlockSpec((0,) * d, N, theta, width)
    pts = base.interior_sites() if base.box_size() <= 2_000_000 else None
    steps = [N * N * 9] + [s * 9] * (d - 1)
    for axis in range(d):
        offset = np.zeros(d, dtype=np.int64)
        offset[axis] = steps[axis]
        other = base.moved(offset)
        if pts is None:
            raise ValueError("block too large for the disjointness check")
        if np.any(other.contains(pts)):
            return False
    return True


# ------------------------------------------------------------------- slowdown box

@dataclass(frozen=True)
class SlowdownBox:
    """``[-L, L] x [-L^2, L^2]^(d-1)``, optionally recentred."""

    L: int
    d: int
    center: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.L < 1:
            raise ValueError("L must be >= 1")
        if self.center is None:
            object.__setattr__(self, "center", (0,) * self.d)

    @property
    def lo(self) -> np.ndarray:
        half = np.array([self.L] + [self.L**2] * (self.d - 1), dtype=np.int64)
        return np.asarray(self.center, dtype=np.int64) - half

    @property
    def hi(self) -> np.ndarray:
        half = np.array([self.L] + [self.L**2] * (self.d - 1), dtype=np.int64)
        return np.asarray(self.center, dtype=np.int64) + half

    @property
    def size(self) -> int:
        return (2 * self.L + 1) * (2 * self.L**2 + 1) ** (self.d - 1)

    def contains(self, x):
        x = np.asarray(x)
        return np.all((x >= self.lo) & (x <= self.hi), axis=-1)


# ----------------------------------------------------------------- constants

@dataclass(frozen=True)
class Constants:
    epsilon: float
    psi: float
    chi: float
    relaxed: bool = False


def constant_inequalities(c: Constants, alpha: float, d: int, gamma: float) -> dict[str, bool]:
    """The three feasibility conditions linking epsilon, psi and chi."""
    return {
        "epsilon": 2 * d * c.epsilon < d - alpha,
        "psi": c.psi <= gamma * c.epsilon / (30 * d) * (1 + 1e-12),
        "chi": c.chi < (c.psi**2 / 2) * (d - 1) / (2 * (d + 1)),
    }


def choose_constants(alpha: float, d: int, gamma: float, mode: str = "strict", **overrides) -> Constants:
    """Pick ``(epsilon, psi, chi)``.

    ``strict`` picks interior points of the feasible region; ``relaxed``
    passes ``epsilon``/``psi``/``chi`` overrides through and flags the result.
    """
    if mode == "relaxed":
        eps = overrides.get("epsilon")
        if eps is None:
            eps = (d - alpha) / (4 * d) if alpha is not None and alpha < d else 0.0
        return Constants(float(eps), float(overrides["psi"]), float(overrides["chi"]), True)
    if mode != "strict":
        raise ValueError(f"unknown mode {mode!r}")
    if gamma <= 0:
        raise InfeasibleConstants("gamma must be positive")
    if not 0 < alpha < d:
        raise InfeasibleConstants(f"need 0 < alpha < d, got alpha={alpha}, d={d}")
    eps = (d - alpha) / (4 * d)
    psi = gamma * eps / (30 * d)
    chi = 0.9 * (psi**2 / 2) * (d - 1) / (2 * (d + 1))
    return Constants(eps, psi, chi, False)


def _ceil(v: float) -> int:
    # absorb float noise around exact integers such as 10**4 ** 0.25
    r = round(v)
    if r >= 2 and abs(v - r) <= 1e-9 * v:
        return int(r)
    return int(math.ceil(v))


@dataclass(frozen=True)
class ScaleLadder:
    L: int
    d: int
    constants: Constants
    sizes: tuple[int, ...]
    rhos: tuple[float, ...]
    alpha: float | None = None
    gamma: float | None = None
    near_degenerate: bool = False
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def iota(self) -> int:
        return len(self.sizes)

    @property
    def epsilon(self) -> float:
        return self.constants.epsilon

    @property
    def psi(self) -> float:
        return self.constants.psi

    @property
    def chi(self) -> float:
        return self.constants.chi

    @property
    def relaxed(self) -> bool:
        return self.constants.relaxed

    def to_json(self) -> dict:
        return {
            "L": self.L,
            "epsilon": self.epsilon,
            "psi": self.psi,
            "chi": self.chi,
            "relaxed": self.relaxed,
            "sizes": list(self.sizes),
            "rhos": list(self.rhos),
            "iota": self.iota,
        }


def build_ladder(L: int, constants: Constants, d: int = 2, alpha=None, gamma=None) -> ScaleLadder:
    """Scales ``N_1 < ... < N_iota`` with ``N_iota^2 < 2L``."""
    if L < 2:
        raise ValueError("L must be >= 2")
    n1 = _ceil(L**constants.psi)
    if n1 * n1 >= 2 * L:
        raise DegenerateLadder(f"N_1={n1} already has N_1^2 >= 2L={2 * L}")
    sizes = [n1]
    rhos = []
    k = 1
    while True:
        rho = constants.chi / 2 + constants.chi / 2**k
        rhos.append(rho)
        nxt = sizes[-1] * _ceil(L**rho)
        if nxt * nxt >= 2 * L:
            break
        sizes.append(nxt)
        k += 1
    return ScaleLadder(
        L=int(L),
        d=d,
        constants=constants,
        sizes=tuple(sizes),
        rhos=tuple(rhos),
        alpha=alpha,
        gamma=gamma,
        near_degenerate=L**constants.psi < 2,
    )
