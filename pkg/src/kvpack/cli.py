"""Command-line front end.

Subcommands: ``gen-trace`` (write a workload CSV), ``simulate`` (one run,
metrics CSV + summary JSON), ``compare`` (several schedulers on one
trace), ``verify`` (randomized verification suite, JSON report). Exit
codes: 0 success, 1 configuration/parse errors, 2 verification failures.
``KVPACK_LOG`` sets log verbosity (DEBUG/INFO/WARNING/ERROR).
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from typing import List, Optional

from .config import RunConfig, SCHEDULER_KINDS, load_config
from .errors import ConfigError, ParseError
from .sim import compare, comparison_table, run, write_metrics_csv, \
    write_summary_json
from .verification import run_all
from .workload import LengthDistribution, gen_poisson, load_trace, save_trace

log = logging.getLogger("kvpack")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_VERIFY = 2


def _setup_logging() -> None:
    level = os.environ.get("KVPACK_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _load_run_config(path: Optional[str]) -> RunConfig:
    return load_config(path) if path else RunConfig()


def _apply_overrides(config: RunConfig, args) -> RunConfig:
    if getattr(args, "seed", None) is not None:
        config = dataclasses.replace(
            config, sim=dataclasses.replace(config.sim, seed=args.seed))
    if getattr(args, "no_batching", False):
        config = dataclasses.replace(
            config, scheduler=dataclasses.replace(config.scheduler,
                                                  batching=False))
    return config


def _trace_for(config: RunConfig, args):
    path = getattr(args, "trace", None) or config.workload.trace_path
    if path:
        if not os.path.exists(path):
            raise ConfigError(f"trace file not found: {path}")
        return load_trace(path)
    w = config.workload
    dist = LengthDistribution(
        prompt_mean_log=w.prompt_mean_log, prompt_sigma_log=w.prompt_sigma_log,
        response_mean_log=w.response_mean_log,
        response_sigma_log=w.response_sigma_log, scale=w.scale)
    return gen_poisson(w.mean_interarrival_slots, w.duration_slots, dist,
                       seed=config.sim.seed)


def _cmd_gen_trace(args) -> int:
    config = _apply_overrides(_load_run_config(args.config), args)
    trace = _trace_for(config, args)
    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, "trace.csv")
    save_trace(trace, out_path)
    print(f"wrote {out_path} ({len(trace)} requests)")
    return EXIT_OK


def _cmd_simulate(args) -> int:
    config = _apply_overrides(_load_run_config(args.config), args)
    trace = _trace_for(config, args)
    result = run(config, trace)
    os.makedirs(args.out, exist_ok=True)
    metrics_path = os.path.join(args.out, "metrics.csv")
    summary_path = os.path.join(args.out, "summary.json")
    write_metrics_csv(result.metrics, metrics_path)
    write_summary_json(result.summary, summary_path)
    print(f"wrote {metrics_path} and {summary_path}")
    return EXIT_OK


def _cmd_compare(args) -> int:
    config = _apply_overrides(_load_run_config(args.config), args)
    kinds = [k.strip() for k in args.schedulers.split(",") if k.strip()]
    for kind in kinds:
        if kind not in SCHEDULER_KINDS:
            raise ConfigError(f"unknown scheduler {kind!r} in --schedulers")
    trace = _trace_for(config, args)
    results = compare(config, trace, schedulers=kinds)
    os.makedirs(args.out, exist_ok=True)
    for kind, res in results.items():
        write_metrics_csv(res.metrics,
                          os.path.join(args.out, f"metrics_{kind}.csv"))
        write_summary_json(res.summary,
                           os.path.join(args.out, f"summary_{kind}.json"))
    table = comparison_table(results)
    table_path = os.path.join(args.out, "comparison.json")
    with open(table_path, "w", encoding="utf-8") as fh:
        json.dump({"schema_version": 1, "rows": table}, fh, indent=2,
                  sort_keys=True)
        fh.write("\n")
    for row in table:
        print(f"{row['scheduler']:>5}: peak_gpus={row['peak_gpus']} "
              f"migrations={row['total_migrations']} "
              f"utilization={row['mean_utilization']:.3f}")
    print(f"wrote {table_path}")
    return EXIT_OK


def _cmd_verify(args) -> int:
    config = _apply_overrides(_load_run_config(args.config), args)
    report = run_all(seeds=args.seeds, max_requests=args.max_requests,
                     config=config, quick=args.quick)
    os.makedirs(args.out, exist_ok=True)
    report_path = os.path.join(args.out, "verification.json")
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    for check in report["checks"]:
        status = "PASS" if check["passed"] else "FAIL"
        print(f"{status} {check['name']}")
    print(f"wrote {report_path}")
    return EXIT_OK if report["passed"] else EXIT_VERIFY


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kvpack",
        description="Multi-GPU KV-cache scheduling simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, trace=True):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, help="override sim.seed")
        if trace:
            p.add_argument("--trace", help="trace CSV to replay")
            p.add_argument("--no-batching", action="store_true",
                           help="disable operation batching")

    p = sub.add_parser("gen-trace", help="generate a workload trace CSV")
    common(p)
    p.set_defaults(func=_cmd_gen_trace)

    p = sub.add_parser("simulate", help="run one simulation")
    common(p)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("compare", help="run several schedulers on one trace")
    common(p)
    p.add_argument("--schedulers", default="mell,bf,wf,lb",
                   help="comma-separated scheduler list")
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("verify", help="run the verification suite")
    common(p, trace=False)
    p.add_argument("--seeds", type=int, default=50,
                   help="seeds for the randomized sweeps")
    p.add_argument("--max-requests", type=int, default=12,
                   help="peak concurrency cap for the exact oracle")
    p.add_argument("--quick", action="store_true",
                   help="scaled-down sweep sizes")
    p.set_defaults(func=_cmd_verify)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
