"""Command-line interface.

Subcommands:

  run <config.json> [...]   execute experiment configs (--jobs for parallel runs)
  verify [--scope S] [--sabotage ID]
                            run the self-check table; nonzero exit on failure
  compare <cfgA> <cfgB>     run two configs and emit a joint CSV for plotting
  oracle ridge <config>     print the exact ridge posterior as JSON

The output directory comes from the NATVB_OUTDIR environment variable
(default: the working directory); everything else lives in the config.
Exit codes: 0 success, 1 check failures, 2 config/schema errors,
3 domain errors during a run (partial trace flushed).
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor

from .errors import DomainError, LeftDomain
from .harness import (ConfigError, compare_runs, load_config, output_dir,
                      ridge_oracle, run_experiment)
from .verify import run_verify


def _run_one(path_str: str) -> dict:
    cfg = load_config(path_str)
    return run_experiment(cfg, output_dir())


def _cmd_run(args) -> int:
    try:
        if args.jobs > 1 and len(args.config) > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                summaries = list(pool.map(_run_one, args.config))
        else:
            summaries = [_run_one(path) for path in args.config]
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DomainError, LeftDomain) as exc:
        print(f"domain error during run: {exc}", file=sys.stderr)
        return 3
    for summary in summaries:
        print(json.dumps(summary, sort_keys=True))
    return 0


def _cmd_verify(args) -> int:
    try:
        results = run_verify(scope=args.scope, sabotage=args.sabotage)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 1 if any(not r.passed for r in results) else 0


def _cmd_compare(args) -> int:
    try:
        joint = compare_runs(load_config(args.config_a), load_config(args.config_b),
                             output_dir())
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DomainError, LeftDomain) as exc:
        print(f"domain error during run: {exc}", file=sys.stderr)
        return 3
    print(joint)
    return 0


def _cmd_oracle(args) -> int:
    if args.target != "ridge":
        print(f"unknown oracle target {args.target!r}", file=sys.stderr)
        return 2
    try:
        posterior = ridge_oracle(load_config(args.config))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(posterior, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="natvb",
        description="Natural-gradient variational Bayes: experiments and checks.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run experiment configs")
    p_run.add_argument("config", nargs="+", help="path(s) to config JSON")
    p_run.add_argument("--jobs", type=int, default=1,
                       help="run configs in parallel")
    p_run.set_defaults(fn=_cmd_run)

    p_verify = sub.add_parser("verify", help="run the self-check suite")
    p_verify.add_argument("--scope", default=None,
                          help="run only checks in this scope")
    p_verify.add_argument("--sabotage", default=None,
                          help="inject a named fault to test the checks")
    p_verify.set_defaults(fn=_cmd_verify)

    p_cmp = sub.add_parser("compare", help="run two configs, emit a joint CSV")
    p_cmp.add_argument("config_a")
    p_cmp.add_argument("config_b")
    p_cmp.set_defaults(fn=_cmd_compare)

    p_oracle = sub.add_parser("oracle", help="print an exact-posterior oracle")
    p_oracle.add_argument("target", help="oracle kind (ridge)")
    p_oracle.add_argument("config", help="config with the model block")
    p_oracle.set_defaults(fn=_cmd_oracle)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    raise SystemExit(main())
