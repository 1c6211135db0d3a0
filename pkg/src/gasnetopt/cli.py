"""Command line entry point.

    gasnetopt solve SCENARIO [--tol T] [--out DIR]
    gasnetopt optimize SCENARIO [--method bnb|penalty|staged] [--seed N] [--tol T] [--out DIR]
    gasnetopt flow SCENARIO [--out DIR]
    gasnetopt track SCENARIO [--out DIR]
    gasnetopt contract check|invoice SCENARIO [--strict] [--out DIR]
    gasnetopt batch SCENARIO... [--out DIR]

Exit codes: 0 success, 2 infeasible, 3 parse or usage error, 4 internal
failure (non-convergence, rejected state). NO_COLOR disables colour.
"""
from __future__ import annotations

import argparse
import os
import sys

from .errors import GasNetError
from .netopt.optimize import METHODS
from .results import (EXIT_INTERNAL, EXIT_OK, EXIT_PARSE, emit_results, exit_code_for, run_batch,
                      run_contract_check, run_contract_invoice, run_flow, run_optimize, run_solve,
                      run_track, status_exit_code)
from .scenario import read_scenario


class _Parser(argparse.ArgumentParser):
    # usage errors share the parse-error exit code so 2 always means infeasible
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_PARSE, f"{self.prog}: error: {message}\n")


def _colour(text, code, stream):
    if os.environ.get("NO_COLOR") is not None or not getattr(stream, "isatty", lambda: False)():
        return text
    return f"\033[{code}m{text}\033[0m"


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gasnetopt", description="Gas network steady-state modelling and optimization.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, tol=True):
        sp.add_argument("--out", default=None, help="directory for result files (default: print summary only)")
        if tol:
            sp.add_argument("--tol", type=float, default=None, help="pressure closure tolerance, bar")

    sp = sub.add_parser("solve", help="hydraulic state for the configured schemes")
    sp.add_argument("scenario")
    common(sp)
    sp = sub.add_parser("optimize", help="choose station schemes and controls")
    sp.add_argument("scenario")
    sp.add_argument("--method", choices=METHODS, default=None)
    sp.add_argument("--seed", type=int, default=None)
    common(sp)
    sp = sub.add_parser("flow", help="convex min-cost flow")
    sp.add_argument("scenario")
    common(sp)
    sp = sub.add_parser("track", help="supply, quality and cost tracking")
    sp.add_argument("scenario")
    common(sp)
    sp = sub.add_parser("contract", help="contract bookings and invoices")
    sp.add_argument("action", choices=("check", "invoice"))
    sp.add_argument("scenario")
    sp.add_argument("--strict", action="store_true", help="treat volume above the top tier as an error")
    common(sp)
    sp = sub.add_parser("batch", help="run several scenarios in their own modes")
    sp.add_argument("scenarios", nargs="+")
    sp.add_argument("--method", choices=METHODS, default=None)
    sp.add_argument("--seed", type=int, default=None)
    common(sp)
    return p


def _report(bundle, out):
    line = f"{bundle.scenario} {bundle.mode}: {bundle.status}"
    if "objective" in bundle.summary and bundle.summary["objective"] is not None:
        line += f" objective={bundle.summary['objective']:.6g}"
    ok = bundle.status in ("ok", "feasible", "optimal")
    print(_colour(line, "32" if ok else "31", sys.stdout))
    if bundle.message:
        print(f"  {bundle.message}")
    if out:
        for path in emit_results(bundle, out):
            print(f"  wrote {path}")


def _run(args) -> int:
    if args.command == "batch":
        bundles = run_batch([read_scenario(s) for s in args.scenarios], args.tol, args.method, args.seed)
        for b in bundles:
            _report(b, args.out)
        return bundles[-1].summary["worst_exit"]
    scn = read_scenario(args.scenario)
    if args.command == "solve":
        b = run_solve(scn, args.tol)
    elif args.command == "optimize":
        b = run_optimize(scn, args.method, args.seed, args.tol)
    elif args.command == "flow":
        b = run_flow(scn, args.tol)
    elif args.command == "track":
        b = run_track(scn, args.tol)
    elif args.action == "check":
        b = run_contract_check(scn, args.tol)
    else:
        b = run_contract_invoice(scn, args.strict)
    _report(b, args.out)
    return status_exit_code(b)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _run(args)
    except GasNetError as exc:
        code = exit_code_for(exc)
        print(_colour(f"error: {type(exc).__name__}: {exc}", "31", sys.stderr), file=sys.stderr)
        return code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (ValueError, ArithmeticError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())

__all__ = ["main", "build_parser", "EXIT_OK"]
