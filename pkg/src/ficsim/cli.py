"""Command-line entry point.

    ficsim run <config> [--seed N] [--out DIR]
    ficsim metrics <trace>
    ficsim serve <config> --port P [--out DIR] [--host H]
    ficsim list-scenarios

Exit codes: 0 success, 2 configuration error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import json
import sys

from .harness import NumericalAbort, metrics, run_scenario
from .scenario import ConfigError, list_scenarios, resolve_config

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ficsim",
        description="Deterministic master-replica teleoperation simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a scenario headless")
    run_p.add_argument("config", help="config file path or builtin scenario name")
    run_p.add_argument("--seed", type=int, default=None)
    run_p.add_argument("--out", default=".", help="output directory")

    met_p = sub.add_parser("metrics", help="summarize a trace file")
    met_p.add_argument("trace")
    met_p.add_argument("--settle-tol", type=float, default=None)

    srv_p = sub.add_parser("serve", help="run a live operator session")
    srv_p.add_argument("config")
    srv_p.add_argument("--port", type=int, required=True)
    srv_p.add_argument("--host", default="127.0.0.1")
    srv_p.add_argument("--out", default=None)
    srv_p.add_argument("--paced", action="store_true",
                       help="advance with operator timestamps instead of wall time")

    sub.add_parser("list-scenarios", help="list builtin scenario presets")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = resolve_config(args.config)
            if cfg.master_input is None:
                print("error: config has a live input source; use `serve`",
                      file=sys.stderr)
                return EXIT_CONFIG
            result = run_scenario(cfg, seed=args.seed, out_dir=args.out)
            print(result.trace_path)
            return EXIT_OK

        if args.command == "metrics":
            report = metrics(args.trace, settle_tol=args.settle_tol)
            print(json.dumps(report, indent=1, sort_keys=True))
            return EXIT_OK

        if args.command == "serve":
            from .server import serve
            cfg = resolve_config(args.config)
            trace = serve(cfg, port=args.port, host=args.host, out_dir=args.out,
                          realtime=not args.paced)
            if trace is not None:
                print(trace)
            return EXIT_OK

        if args.command == "list-scenarios":
            for name in list_scenarios():
                print(name)
            return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
