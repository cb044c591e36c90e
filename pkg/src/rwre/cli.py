"""Command-line entry point ``rwre``.

Each experiment kind has a subcommand that runs a one-block campaign built
from the command line; ``run`` executes a campaign file, ``report`` merges a
ledger and ``selftest`` runs the built-in acceptance campaign.

Exit codes: 0 success, 1 experiment failure (or partial report), 2 config error.
"""

from __future__ import annotations

import argparse
import logging
import sys
import tempfile
import time
from pathlib import Path

import yaml

from .campaign import describe_kinds, report, run_campaign
from .config import SchemaError, parse_config, parse_text
from .errors import EmptyLedger
from .tasks import KINDS

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2

SELFTEST_CAMPAIGN = """\
seed: 20161016
workers: 1
output: selftest-results
laws:
  srw1: {family: srw, d: 1}
  srw2: {family: srw, d: 2}
  biased1: {family: fixed, kernel: [0.6, 0.4]}
  drift2: {family: fixed, kernel: [0.5, 0.1, 0.2, 0.2]}
  mix2:
    family: mixture
    kernels: [[0.4, 0.1, 0.25, 0.25], [0.1, 0.4, 0.25, 0.25]]
    weights: [0.5, 0.5]
  nestling:
    family: mixture
    kernels:
      - [0.7, 0.1, 0.1, 0.1]
      - [0.1, 0.7, 0.1, 0.1]
      - [0.1, 0.1, 0.7, 0.1]
      - [0.1, 0.1, 0.1, 0.7]
    weights: [0.4, 0.2, 0.2, 0.2]
  aux: {family: fixed, kernel: [0.85, 0.05, 0.05, 0.05], eta: 0.05}
experiments:
  - id: exit-oracle
    kind: exit-compare
    law: mix2
    samples: 1000000
    params: {box: [[-4, -4], [4, 4]], tol: 0.01}
  - id: ruin-srw
    kind: exit-compare
    law: srw1
    samples: 100000
    params: {box: [[1], [4]], start: [2], tol: 0.01}
  - id: ruin-backtrack
    kind: tgamma
    law: biased1
    samples: 1000000
    params: {L_grid: [5]}
  - id: llt-d1
    kind: llt
    law: srw1
    params: {slope_tol: 0.05}
  - id: llt-d2
    kind: llt
    law: srw2
    params: {slope: -1.0, slope_tol: 0.05}
  - id: derivative-decay
    kind: profile
    law: drift2
    params: {N_grid: [10, 20, 40]}
  - id: regeneration
    kind: regen
    law: drift2
    samples: 10
    params: {steps: 20000, brute_paths: 1000, min_slabs: 10000}
  - id: azuma
    kind: azuma
    samples: 100000
    law: srw1
  - id: coupling
    kind: closeness
    law: drift2
    params: {N: 10, n_sum: 4, lam: 0.2, K: 1}
  - id: aux-invariants
    kind: aux-run
    law: aux
    samples: 300
    env:
      strips: [{lo: [150, -40], hi: [154, 40], kernel: [0.45, 0.05, 0.45, 0.05]}]
    params: {L: 300, psi: 0.4, chi: 0.2, lambda_cap: 0.1, audit: 20}
  - id: trap
    kind: trap
    law: nestling
    samples: 2000
    params: {n: 250, radius: 5, radii: [3, 4, 5, 6, 7, 8]}
"""


def _law_from_arg(text: str | None) -> dict:
    if text is None:
        return {"family": "srw", "d": 2}
    head, _, tail = text.partition(":")
    if head == "srw" and "{" not in text:
        return {"family": "srw", "d": int(tail or 2)}
    value = yaml.safe_load(text)
    if not isinstance(value, dict):
        raise SchemaError(f"--law must be 'srw[:d]' or a YAML mapping, got {text!r}")
    return value


def _kv(items, what) -> dict:
    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise SchemaError(f"{what} expects key=value, got {item!r}")
        out[key] = yaml.safe_load(value)
    return out


def _single_campaign(args) -> str:
    exp = {"id": args.id or args.command, "kind": args.command, "law": "default"}
    params = _kv(args.param, "--param")
    if params:
        exp["params"] = params
    grid = _kv(args.grid, "--grid")
    if grid:
        exp["grid"] = grid
    if args.samples is not None:
        exp["samples"] = args.samples
    if args.env is not None:
        exp["env"] = yaml.safe_load(args.env)
    doc = {"seed": args.seed, "workers": args.workers, "output": args.out,
           "laws": {"default": _law_from_arg(args.law)}, "experiments": [exp]}
    return yaml.safe_dump(doc, sort_keys=True)


def _print_result(res) -> None:
    print(f"config hash {res.config_hash}")
    print(f"output digest {res.digest()}")
    print(f"results in {res.out_dir}")


def cmd_kind(args) -> int:
    cfg = parse_text(_single_campaign(args))
    res = run_campaign(cfg)
    _print_result(res)
    return res.exit_code


def cmd_run(args) -> int:
    try:
        cfg = parse_config(args.config)
    except OSError as exc:
        raise SchemaError(f"cannot read {args.config}: {exc}") from None
    res = run_campaign(cfg, workers=args.workers, out_dir=args.out)
    _print_result(res)
    return res.exit_code


def cmd_report(args) -> int:
    try:
        rep = report(args.ledger, args.out or args.ledger,
                     warn=lambda m: print(f"warning: {m}", file=sys.stderr))
    except EmptyLedger as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    for kind, exps in sorted(rep.summaries.items()):
        for exp_id, s in sorted(exps.items()):
            print(f"{kind:13s} {exp_id:24s} {s['status']}")
    if rep.partial:
        print(f"partial report: {len(rep.skipped)} entries skipped", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def cmd_selftest(args) -> int:
    cfg = parse_text(SELFTEST_CAMPAIGN)
    base = Path(args.out) if args.out else Path(tempfile.mkdtemp(prefix="rwre-selftest-"))
    counts = [args.workers] + ([args.verify_workers] if args.verify_workers is not None else [])
    digests, code = [], EXIT_OK
    t0 = time.perf_counter()
    for w in counts:
        print(f"selftest with {w} worker(s)")
        res = run_campaign(cfg, workers=w, out_dir=base / f"workers-{w}")
        digests.append(res.output_hashes())
        print(f"output digest {res.digest()}")
        code = max(code, res.exit_code)
    if len(digests) == 2:
        same = digests[0] == digests[1]
        print(f"{'PASS' if same else 'FAIL'}  determinism across workers {counts[0]} and {counts[1]}")
        if not same:
            code = EXIT_FAIL
    print(f"selftest wall time {time.perf_counter() - t0:.1f}s; results in {base}")
    return code


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rwre", description="Random walk in random environment toolkit.",
                                formatter_class=argparse.RawDescriptionHelpFormatter,
                                epilog="experiment kinds:\n" + describe_kinds())
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in sorted(KINDS):
        k = KINDS[name]
        sp = sub.add_parser(name, help=k.doc, description=k.doc + "\n\nparameters and defaults:\n" +
                            "\n".join(f"  {a} = {v!r}" for a, v in k.params.items()),
                            formatter_class=argparse.RawDescriptionHelpFormatter)
        sp.add_argument("--law", help="'srw[:d]' or a YAML mapping such as \"{family: fixed, kernel: [0.6, 0.4]}\"")
        sp.add_argument("--param", "-p", action="append", metavar="KEY=VALUE", help="parameter (YAML value)")
        sp.add_argument("--grid", "-g", action="append", metavar="KEY=[V1,V2]", help="grid over a parameter")
        sp.add_argument("--env", help="environment overlay as a YAML mapping (seed, strips, traps)")
        sp.add_argument("--samples", "-n", type=int)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--id", help="experiment id (defaults to the kind)")
        sp.add_argument("--workers", "-j", type=int, default=1)
        sp.add_argument("--out", "-o", default="results")
        sp.set_defaults(func=cmd_kind)
    sp = sub.add_parser("run", help="run a campaign file")
    sp.add_argument("config")
    sp.add_argument("--workers", "-j", type=int)
    sp.add_argument("--out", "-o")
    sp.set_defaults(func=cmd_run)
    sp = sub.add_parser("report", help="merge ledger entries into plot-ready tables")
    sp.add_argument("ledger", help="campaign output directory or its ledger subdirectory")
    sp.add_argument("--out", "-o", help="where to write report.json and report-<kind>.csv")
    sp.set_defaults(func=cmd_report)
    sp = sub.add_parser("selftest", help="run the built-in acceptance campaign")
    sp.add_argument("--workers", "-j", type=int, default=1)
    sp.add_argument("--verify-workers", type=int, metavar="N",
                    help="rerun with N workers and require identical output hashes")
    sp.add_argument("--out", "-o")
    sp.add_argument("--print-config", action="store_true", help="print the campaign and exit")
    sp.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "print_config", False):
        print(SELFTEST_CAMPAIGN, end="")
        return EXIT_OK
    try:
        return args.func(args)
    except SchemaError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except yaml.YAMLError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
