"""Campaign orchestration, result files, run ledger and consolidated reports.

Layout of an output directory::

    <out>/<id>.json          summary of every grid cell (sorted keys, UTF-8)
    <out>/<id>.csv           flat rows of every cell, RFC-4180 quoting
    <out>/ledger/<stamp>-<id>.json   one ledger entry per experiment run

Result files contain no timestamps or timings, so they are byte-identical
across reruns and worker counts; wall times live in the ledger only.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from ._hash import derive_seed, replicate_seed
from .config import CampaignConfig, config_hash, content_hash
from .errors import EmptyLedger
from .tasks import KINDS, jsonable, run_task

log = logging.getLogger("rwre")

LEDGER_DIR = "ledger"


@dataclass(frozen=True)
class CellTask:
    exp_index: int
    cell_index: int
    kind: str
    law: object  # LawSpec
    env: object  # EnvSpec or None
    params: dict
    samples: int | None
    seed: int


@dataclass
class RunLedgerEntry:
    experiment: str
    kind: str
    config_hash: str
    input_hash: str
    outputs: dict
    wall_time: float
    status: str
    errors: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {"experiment": self.experiment, "kind": self.kind, "config_hash": self.config_hash,
                "input_hash": self.input_hash, "outputs": self.outputs, "wall_time": self.wall_time,
                "status": self.status, "errors": self.errors}


def experiment_seed(cfg: CampaignConfig, exp) -> int:
    return int(exp.seed) if exp.seed is not None else derive_seed(cfg.seed, "experiment", exp.id)


def _execute(task: CellTask) -> tuple[int, int, dict, float]:
    t0 = time.perf_counter()
    try:
        res = run_task(task.kind, task.law.build(), task.env, task.params, task.samples, task.seed)
        out = {"summary": jsonable(res.summary), "rows": jsonable(res.rows), "passed": res.passed, "error": None}
    except Exception as exc:  # isolate the failure to this cell
        out = {"summary": {}, "rows": [], "passed": False,
               "error": f"{type(exc).__name__}: {exc}", "traceback": traceback.format_exc(limit=5)}
    return task.exp_index, task.cell_index, out, time.perf_counter() - t0


def plan_tasks(cfg: CampaignConfig) -> list[CellTask]:
    tasks = []
    for i, exp in enumerate(cfg.experiments):
        root = experiment_seed(cfg, exp)
        for j, cell in enumerate(exp.cells()):
            tasks.append(CellTask(i, j, exp.kind, cfg.laws[exp.law], exp.env, cell, exp.samples,
                                  replicate_seed(root, j)))
    return tasks


def dumps_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1, ensure_ascii=False) + "\n"


def rows_to_csv(rows: list[dict], lead: list[str] | None = None) -> str:
    cols: list[str] = list(lead or [])
    for r in rows:
        for k in r:
            if k not in cols:
                cols.append(k)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\r\n", quoting=csv.QUOTE_MINIMAL, restval="")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("" if v is None else v) for k, v in r.items()})
    return buf.getvalue()


def _sha(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _write(path: Path, text: str) -> str:
    data = text.encode("utf-8")
    path.write_bytes(data)
    return _sha(data)


@dataclass
class CampaignResult:
    entries: list[RunLedgerEntry]
    out_dir: Path
    config_hash: str

    @property
    def ok(self) -> bool:
        return all(e.status == "ok" for e in self.entries)

    @property
    def exit_code(self) -> int:
        return 0 if self.ok else 1

    def output_hashes(self) -> dict:
        return {name: h for e in self.entries for name, h in sorted(e.outputs.items())}

    def digest(self) -> str:
        return content_hash(self.output_hashes())


def run_campaign(cfg: CampaignConfig, workers: int | None = None, out_dir=None, echo=print) -> CampaignResult:
    """Run every experiment block and persist results plus ledger entries.

    Grid cells are the unit of parallelism; each gets a seed derived from the
    campaign seed, the experiment id and the cell index, so outputs do not
    depend on ``workers``.  A failing cell marks its experiment as failed
    without stopping the others.
    """
    workers = cfg.workers if workers is None else int(workers)
    out = Path(out_dir if out_dir is not None else cfg.output)
    (out / LEDGER_DIR).mkdir(parents=True, exist_ok=True)
    chash = config_hash(cfg)
    tasks = plan_tasks(cfg)
    results: dict[tuple[int, int], tuple[dict, float]] = {}
    if workers <= 1 or len(tasks) <= 1:
        for t in tasks:
            i, j, res, dt = _execute(t)
            results[(i, j)] = (res, dt)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for i, j, res, dt in pool.map(_execute, tasks):
                results[(i, j)] = (res, dt)
    entries = []
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S%f")
    for i, exp in enumerate(cfg.experiments):
        cells = exp.cells()
        cell_out = [results[(i, j)][0] for j in range(len(cells))]
        wall = sum(results[(i, j)][1] for j in range(len(cells)))
        errors = [f"cell {j}: {c['error']}" for j, c in enumerate(cell_out) if c["error"]]
        passed = [c["passed"] for c in cell_out]
        status = "error" if errors else ("failed" if any(p is False for p in passed) else "ok")
        doc = {
            "experiment": exp.id,
            "kind": exp.kind,
            "law": cfg.laws[exp.law].to_dict(),
            "config_hash": chash,
            "status": status,
            "cells": [{"index": j, "params": jsonable(cells[j]), "summary": c["summary"], "passed": c["passed"],
                       "error": c["error"]} for j, c in enumerate(cell_out)],
        }
        grid_keys = sorted(exp.grid)
        rows = []
        for j, c in enumerate(cell_out):
            for r in c["rows"]:
                row = {"cell": j}
                row.update({k: json.dumps(jsonable(cells[j][k])) if isinstance(cells[j][k], (list, dict))
                            else cells[j][k] for k in grid_keys})
                row.update(r)
                rows.append(row)
        outputs = {
            f"{exp.id}.json": _write(out / f"{exp.id}.json", dumps_json(doc)),
            f"{exp.id}.csv": _write(out / f"{exp.id}.csv", rows_to_csv(rows, ["cell"] + grid_keys)),
        }
        inputs = {"experiment": exp.to_dict(), "law": cfg.laws[exp.law].to_dict(), "seed": experiment_seed(cfg, exp)}
        entry = RunLedgerEntry(exp.id, exp.kind, chash, content_hash(inputs), outputs, round(wall, 3), status, errors)
        path = out / LEDGER_DIR / f"{stamp}-{exp.id}.json"
        n = 1
        while path.exists():
            path = out / LEDGER_DIR / f"{stamp}-{exp.id}-{n}.json"
            n += 1
        _write(path, dumps_json(entry.to_json()))
        entries.append(entry)
        if echo is not None:
            flag = {"ok": "PASS", "failed": "FAIL", "error": "ERROR"}[status]
            if all(p is None for p in passed) and status == "ok":
                flag = "DONE"
            echo(f"{flag:5s} {exp.id:24s} {exp.kind:13s} {wall:8.1f}s" + (f"  {errors[0]}" if errors else ""))
    return CampaignResult(entries, out, chash)


# ------------------------------------------------------------------ report

@dataclass
class Report:
    tables: dict
    summaries: dict
    skipped: list

    @property
    def partial(self) -> bool:
        return bool(self.skipped)


def _load_entry(path: Path, root: Path) -> tuple[dict, dict, list]:
    entry = json.loads(path.read_text(encoding="utf-8"))
    for key in ("experiment", "kind", "outputs", "config_hash"):
        if key not in entry:
            raise ValueError(f"missing field {key!r}")
    docs, rows = {}, []
    for name, h in entry["outputs"].items():
        data = (root / name).read_bytes()
        if _sha(data) != h:
            raise ValueError(f"{name} does not match its recorded hash")
        if name.endswith(".json"):
            docs = json.loads(data.decode("utf-8"))
        elif name.endswith(".csv"):
            rows = list(csv.DictReader(io.StringIO(data.decode("utf-8"), newline="")))
    return entry, docs, rows


def report(ledger_dir, out_dir=None, warn=log.warning) -> Report:
    """Merge ledger entries into per-kind tables keyed by experiment id.

    ``ledger_dir`` may be the campaign output directory or its ``ledger``
    subdirectory.  The newest entry per experiment wins.  Unreadable or
    inconsistent entries are skipped with a warning and make the report
    partial.  Writes ``report.json`` and ``report-<kind>.csv`` when
    ``out_dir`` is given.
    """
    root = Path(ledger_dir)
    if (root / LEDGER_DIR).is_dir():
        root = root / LEDGER_DIR
    files = sorted(root.glob("*.json")) if root.is_dir() else []
    if not files:
        raise EmptyLedger(f"no ledger entries in {ledger_dir}")
    data_root = root.parent
    latest: dict[str, tuple[dict, dict, list]] = {}
    skipped = []
    for f in files:
        try:
            entry, doc, rows = _load_entry(f, data_root)
        except (OSError, ValueError, UnicodeDecodeError) as exc:
            warn(f"skipping corrupted ledger entry {f.name}: {exc}")
            skipped.append(f.name)
            continue
        latest[entry["experiment"]] = (entry, doc, rows)
    tables: dict[str, list] = {}
    summaries: dict[str, dict] = {}
    for exp_id in sorted(latest):
        entry, doc, rows = latest[exp_id]
        kind = entry["kind"]
        summaries.setdefault(kind, {})[exp_id] = {"status": entry.get("status"), "config_hash": entry["config_hash"],
                                                  "cells": doc.get("cells", [])}
        tables.setdefault(kind, []).extend(dict({"experiment": exp_id}, **r) for r in rows)
    rep = Report(tables, summaries, skipped)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(dumps_json({"kinds": summaries, "skipped": skipped}), encoding="utf-8")
        for kind, rows in tables.items():
            (out / f"report-{kind}.csv").write_text(rows_to_csv(rows, ["experiment"]), encoding="utf-8", newline="")
    return rep


def describe_kinds() -> str:
    return "\n".join(f"  {k:13s} {v.doc}" for k, v in sorted(KINDS.items()))
