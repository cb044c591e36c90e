"""Campaign configuration: YAML schema, validation with source positions, hashing.

A campaign file looks like::

    seed: 7
    workers: 2
    output: results
    laws:
      drift: {family: fixed, kernel: [0.4, 0.2, 0.2, 0.2]}
    experiments:
      - id: tg
        kind: tgamma
        law: drift
        samples: 10000
        params: {ell: [1, 0]}
        grid: {L: [2, 4, 6]}

A single ``law:`` key may be used instead of ``laws:``; it is stored under
the name ``default``, which is also what experiments without ``law`` use.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .env import EnvironmentLaw
from .errors import SchemaError
from .tasks import KINDS

SEED_ENV_VAR = "RWRE_SEED"
FAMILIES = ("srw", "fixed", "mixture", "dirichlet")

_TOP_KEYS = {"seed", "workers", "output", "law", "laws", "experiments"}
_LAW_KEYS = {
    "srw": {"family", "d"},
    "fixed": {"family", "kernel", "eta"},
    "mixture": {"family", "kernels", "weights", "eta"},
    "dirichlet": {"family", "base", "concentration", "eta"},
}
_EXP_KEYS = {"id", "kind", "law", "env", "params", "grid", "samples", "seed"}
_ENV_KEYS = {"seed", "strips", "traps"}
_STRIP_KEYS = {"lo", "hi", "kernel"}
_TRAP_KEYS = {"center", "radius"}


# ------------------------------------------------------------------ YAML with marks

class _Marked:
    """Plain Python data plus a ``path -> (line, column)`` table."""

    def __init__(self):
        self.marks: dict[tuple, tuple[int, int]] = {}

    def build(self, loader, node, path=()):
        self.marks[path] = (node.start_mark.line + 1, node.start_mark.column + 1)
        if isinstance(node, yaml.MappingNode):
            out = {}
            for knode, vnode in node.value:
                key = loader.construct_object(knode, deep=True)
                if not isinstance(key, str):
                    raise SchemaError(f"keys must be strings, got {key!r}",
                                      knode.start_mark.line + 1, knode.start_mark.column + 1)
                if key in out:
                    raise SchemaError(f"duplicate key {key!r}", knode.start_mark.line + 1,
                                      knode.start_mark.column + 1)
                self.marks[path + (key, "#key")] = (knode.start_mark.line + 1, knode.start_mark.column + 1)
                out[key] = self.build(loader, vnode, path + (key,))
            return out
        if isinstance(node, yaml.SequenceNode):
            return [self.build(loader, v, path + (i,)) for i, v in enumerate(node.value)]
        return loader.construct_object(node, deep=True)

    def at(self, path, key: bool = False):
        path = tuple(path)
        if key and path + ("#key",) in self.marks:
            return self.marks[path + ("#key",)]
        while path and path not in self.marks:
            path = path[:-1]
        return self.marks.get(path, (None, None))


def _load(text: str) -> tuple[object, _Marked]:
    marked = _Marked()
    loader = yaml.SafeLoader(text)
    try:
        node = loader.get_single_node()
        if node is None:
            raise SchemaError("empty configuration")
        data = marked.build(loader, node)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        raise SchemaError(f"YAML syntax error: {exc.problem}",
                          mark.line + 1 if mark else None, mark.column + 1 if mark else None) from None
    finally:
        loader.dispose()
    return data, marked


# ------------------------------------------------------------------ spec types

@dataclass(frozen=True)
class LawSpec:
    family: str
    d: int | None = None
    kernels: tuple[tuple[float, ...], ...] = ()
    weights: tuple[float, ...] = ()
    eta: float | None = None
    concentration: float | None = None

    def build(self) -> EnvironmentLaw:
        if self.family == "srw":
            return EnvironmentLaw.srw(self.d)
        if self.family == "fixed":
            return EnvironmentLaw.fixed(self.kernels[0], self.eta)
        if self.family == "mixture":
            return EnvironmentLaw.mixture(self.kernels, self.weights, self.eta)
        return EnvironmentLaw.dirichlet(self.kernels[0], self.concentration, self.eta)

    def to_dict(self) -> dict:
        out: dict = {"family": self.family}
        if self.family == "srw":
            out["d"] = self.d
        elif self.family == "fixed":
            out["kernel"] = list(self.kernels[0])
        elif self.family == "mixture":
            out["kernels"] = [list(k) for k in self.kernels]
            out["weights"] = list(self.weights)
        else:
            out["base"] = list(self.kernels[0])
            out["concentration"] = self.concentration
        if self.eta is not None and self.family != "srw":
            out["eta"] = self.eta
        return out


@dataclass(frozen=True)
class StripSpec:
    """Box ``lo <= x <= hi`` (inclusive) whose sites all carry ``kernel``."""

    lo: tuple[int, ...]
    hi: tuple[int, ...]
    kernel: tuple[float, ...]


@dataclass(frozen=True)
class TrapSpec:
    center: tuple[int, ...]
    radius: int


@dataclass(frozen=True)
class EnvSpec:
    seed: int | None = None
    strips: tuple[StripSpec, ...] = ()
    traps: tuple[TrapSpec, ...] = ()

    def to_dict(self) -> dict:
        out: dict = {}
        if self.seed is not None:
            out["seed"] = self.seed
        if self.strips:
            out["strips"] = [{"lo": list(s.lo), "hi": list(s.hi), "kernel": list(s.kernel)} for s in self.strips]
        if self.traps:
            out["traps"] = [{"center": list(t.center), "radius": t.radius} for t in self.traps]
        return out


@dataclass
class ExperimentSpec:
    id: str
    kind: str
    law: str = "default"
    env: EnvSpec | None = None
    params: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)
    samples: int | None = None
    seed: int | None = None

    def cells(self) -> list[dict]:
        """Parameter dictionaries of the grid cells, in sorted-key product order."""
        if not self.grid:
            return [dict(self.params)]
        keys = sorted(self.grid)
        out = []
        for combo in itertools.product(*(self.grid[k] for k in keys)):
            cell = dict(self.params)
            cell.update(zip(keys, combo))
            out.append(cell)
        return out

    def to_dict(self) -> dict:
        out: dict = {"id": self.id, "kind": self.kind, "law": self.law}
        if self.env is not None:
            out["env"] = self.env.to_dict()
        if self.params:
            out["params"] = self.params
        if self.grid:
            out["grid"] = self.grid
        if self.samples is not None:
            out["samples"] = self.samples
        if self.seed is not None:
            out["seed"] = self.seed
        return out


@dataclass
class CampaignConfig:
    seed: int = 0
    workers: int = 1
    output: str = "results"
    laws: dict[str, LawSpec] = field(default_factory=dict)
    experiments: list[ExperimentSpec] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "workers": self.workers,
            "output": self.output,
            "laws": {k: v.to_dict() for k, v in sorted(self.laws.items())},
            "experiments": [e.to_dict() for e in self.experiments],
        }

    def experiment(self, exp_id: str) -> ExperimentSpec:
        for e in self.experiments:
            if e.id == exp_id:
                return e
        raise KeyError(exp_id)


# ------------------------------------------------------------------ validation

class _Validator:
    def __init__(self, marked: _Marked):
        self.m = marked

    def fail(self, msg, path, key=False):
        line, col = self.m.at(path, key)
        raise SchemaError(msg, line, col)

    def mapping(self, value, path, allowed, what, required=()):
        if not isinstance(value, dict):
            self.fail(f"{what} must be a mapping", path)
        for k in value:
            if k not in allowed:
                self.fail(f"unknown key {k!r} in {what}", path + (k,), key=True)
        for k in required:
            if k not in value:
                self.fail(f"{what} is missing required key {k!r}", path)
        return value

    def integer(self, value, path, what, minimum=None):
        if isinstance(value, bool) or not isinstance(value, int):
            self.fail(f"{what} must be an integer", path)
        if minimum is not None and value < minimum:
            self.fail(f"{what} must be >= {minimum}", path)
        return value

    def number(self, value, path, what):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            self.fail(f"{what} must be a finite number", path)
        return float(value)

    def vector(self, value, path, what, kind="number"):
        if not isinstance(value, list) or not value:
            self.fail(f"{what} must be a non-empty list", path)
        conv = self.number if kind == "number" else self.integer
        return tuple(conv(v, path + (i,), f"{what}[{i}]") for i, v in enumerate(value))

    def kernel_row(self, value, path, what):
        row = self.vector(value, path, what)
        if len(row) % 2:
            self.fail(f"{what} has odd length {len(row)}", path)
        if min(row) < 0:
            self.fail(f"{what} has a negative entry", path)
        total = math.fsum(row)
        if abs(total - 1.0) > 1e-9:
            self.fail(f"{what} sums to {total:.12g}, not 1", path)
        return row

    def law(self, name, value, path) -> LawSpec:
        what = f"law {name!r}"
        if not isinstance(value, dict):
            self.fail(f"{what} must be a mapping", path)
        fam = value.get("family")
        if fam not in FAMILIES:
            self.fail(f"{what}: family must be one of {', '.join(FAMILIES)}", path + ("family",))
        self.mapping(value, path, _LAW_KEYS[fam], what)
        eta = None
        if "eta" in value:
            eta = self.number(value["eta"], path + ("eta",), f"{what}: eta")
        if fam == "srw":
            spec = LawSpec("srw", d=self.integer(value.get("d", 2), path + ("d",), f"{what}: d", 1))
        elif fam == "fixed":
            self.mapping(value, path, _LAW_KEYS[fam], what, ("kernel",))
            row = self.kernel_row(value["kernel"], path + ("kernel",), f"{what}: kernel")
            spec = LawSpec("fixed", d=len(row) // 2, kernels=(row,), eta=eta)
        elif fam == "mixture":
            self.mapping(value, path, _LAW_KEYS[fam], what, ("kernels", "weights"))
            ks = value["kernels"]
            if not isinstance(ks, list) or not ks:
                self.fail(f"{what}: kernels must be a non-empty list", path + ("kernels",))
            rows = tuple(self.kernel_row(k, path + ("kernels", i), f"{what}: kernels[{i}]")
                         for i, k in enumerate(ks))
            if len({len(r) for r in rows}) != 1:
                self.fail(f"{what}: kernel rows differ in length", path + ("kernels",))
            w = self.vector(value["weights"], path + ("weights",), f"{what}: weights")
            spec = LawSpec("mixture", d=len(rows[0]) // 2, kernels=rows, weights=w, eta=eta)
        else:
            self.mapping(value, path, _LAW_KEYS[fam], what, ("base", "concentration", "eta"))
            row = self.kernel_row(value["base"], path + ("base",), f"{what}: base")
            c = self.number(value["concentration"], path + ("concentration",), f"{what}: concentration")
            spec = LawSpec("dirichlet", d=len(row) // 2, kernels=(row,), eta=eta, concentration=c)
        try:
            spec.build()
        except ValueError as exc:
            self.fail(f"{what}: {exc}", path)
        return spec

    def env(self, value, path, d) -> EnvSpec:
        self.mapping(value, path, _ENV_KEYS, "env")
        seed = self.integer(value["seed"], path + ("seed",), "env.seed") if "seed" in value else None
        strips, traps = [], []
        for i, s in enumerate(value.get("strips", []) or []):
            p = path + ("strips", i)
            self.mapping(s, p, _STRIP_KEYS, f"env.strips[{i}]", ("lo", "hi", "kernel"))
            lo = self.vector(s["lo"], p + ("lo",), f"env.strips[{i}].lo", "int")
            hi = self.vector(s["hi"], p + ("hi",), f"env.strips[{i}].hi", "int")
            k = self.kernel_row(s["kernel"], p + ("kernel",), f"env.strips[{i}].kernel")
            if not (len(lo) == len(hi) == d == len(k) // 2):
                self.fail(f"env.strips[{i}] does not match dimension {d}", p)
            strips.append(StripSpec(lo, hi, k))
        for i, t in enumerate(value.get("traps", []) or []):
            p = path + ("traps", i)
            self.mapping(t, p, _TRAP_KEYS, f"env.traps[{i}]", ("center", "radius"))
            c = self.vector(t["center"], p + ("center",), f"env.traps[{i}].center", "int")
            if len(c) != d:
                self.fail(f"env.traps[{i}].center does not match dimension {d}", p)
            traps.append(TrapSpec(c, self.integer(t["radius"], p + ("radius",), "radius", 0)))
        return EnvSpec(seed, tuple(strips), tuple(traps))

    def experiment(self, value, path, laws) -> ExperimentSpec:
        self.mapping(value, path, _EXP_KEYS, "experiment", ("id", "kind"))
        eid = value["id"]
        if not isinstance(eid, str) or not eid or not all(c.isalnum() or c in "-_." for c in eid):
            self.fail("experiment id must be a non-empty string of letters, digits, '-', '_' or '.'", path + ("id",))
        kind = value["kind"]
        if kind not in KINDS:
            self.fail(f"unknown experiment kind {kind!r}", path + ("kind",))
        law = value.get("law", "default")
        if law not in laws:
            self.fail(f"experiment {eid!r} refers to undefined law {law!r}", path + ("law",))
        allowed = KINDS[kind].params
        params = value.get("params", {}) or {}
        self.mapping(params, path + ("params",), allowed, f"params of {kind!r}")
        grid = value.get("grid", {}) or {}
        self.mapping(grid, path + ("grid",), allowed, f"grid of {kind!r}")
        for k, v in grid.items():
            if not isinstance(v, list) or not v:
                self.fail(f"grid entry {k!r} must be a non-empty list", path + ("grid", k))
            if k in params:
                self.fail(f"{k!r} appears in both params and grid", path + ("grid", k), key=True)
        env = None
        if value.get("env") is not None:
            env = self.env(value["env"], path + ("env",), laws[law].d)
        samples = None
        if "samples" in value:
            samples = self.integer(value["samples"], path + ("samples",), "samples", 1)
        seed = self.integer(value["seed"], path + ("seed",), "seed") if "seed" in value else None
        return ExperimentSpec(eid, kind, law, env, params, grid, samples, seed)

    def campaign(self, data) -> CampaignConfig:
        self.mapping(data, (), _TOP_KEYS, "campaign")
        seed = self.integer(data.get("seed", 0), ("seed",), "seed")
        workers = self.integer(data.get("workers", 1), ("workers",), "workers", 1)
        output = data.get("output", "results")
        if not isinstance(output, str) or not output:
            self.fail("output must be a non-empty string", ("output",))
        laws: dict[str, LawSpec] = {}
        if "laws" in data:
            if not isinstance(data["laws"], dict):
                self.fail("laws must be a mapping", ("laws",))
            for name, spec in data["laws"].items():
                laws[name] = self.law(name, spec, ("laws", name))
        if "law" in data:
            if "default" in laws:
                self.fail("'law' given but 'laws' already defines 'default'", ("law",), key=True)
            laws["default"] = self.law("default", data["law"], ("law",))
        exps = data.get("experiments", [])
        if not isinstance(exps, list):
            self.fail("experiments must be a list", ("experiments",))
        out, seen = [], set()
        for i, e in enumerate(exps):
            spec = self.experiment(e, ("experiments", i), laws)
            if spec.id in seen:
                self.fail(f"duplicate experiment id {spec.id!r}", ("experiments", i, "id"))
            seen.add(spec.id)
            out.append(spec)
        return CampaignConfig(seed, workers, output, laws, out)


# ------------------------------------------------------------------ public API

def parse_text(text: str, env_override: bool = True) -> CampaignConfig:
    """Validate a campaign given as YAML text.

    With ``env_override`` the variable ``RWRE_SEED`` replaces the seed.
    """
    data, marked = _load(text)
    cfg = _Validator(marked).campaign(data)
    if env_override and os.environ.get(SEED_ENV_VAR, "").strip():
        raw = os.environ[SEED_ENV_VAR].strip()
        try:
            cfg.seed = int(raw, 0)
        except ValueError:
            raise SchemaError(f"{SEED_ENV_VAR}={raw!r} is not an integer") from None
    return cfg


def parse_config(path, env_override: bool = True) -> CampaignConfig:
    """Read and validate a campaign file; raises :class:`SchemaError` or ``OSError``."""
    text = Path(path).read_text(encoding="utf-8")
    return parse_text(text, env_override)


def dump_config(cfg: CampaignConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True, allow_unicode=True)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=True)


def content_hash(obj) -> str:
    """Hex SHA-256 of the canonical JSON form of ``obj``."""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def config_hash(cfg: CampaignConfig) -> str:
    """Hash of the validated configuration; independent of key order in the file.

    Worker count and output directory do not affect results and are left out.
    """
    d = cfg.to_dict()
    d.pop("workers")
    d.pop("output")
    return content_hash(d)
