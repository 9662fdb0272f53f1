"""``dcchance`` command line: solve, bench, validate.

Exit codes: 0 solved (converged, optimal, or stopped at max_iter/time_limit),
1 bad input, 2 infeasible, 3 numerical failure or a failed invariant (bench, validate).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import validate
from .baselines import BudgetExceededError, NoInitialPointError, OracleInfeasibleError
from .bench import load_specs, run_bench, write_report
from .model import InvalidInputError, load_instance
from .pdca import InfeasibleStartError, PdcaError, SolverConfig
from .solve import METHODS, solve_chance

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE, EXIT_NUMERICAL = 0, 1, 2, 3

_DEFAULTS = SolverConfig()


def _solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--alpha", type=float, default=None,
                   help="override the risk level alpha in (0, 1)")
    p.add_argument("--beta0", type=float, default=_DEFAULTS.beta0,
                   help=f"initial proximal weight (default {_DEFAULTS.beta0}); 0 runs plain DCA")
    p.add_argument("--beta-decay", type=float, default=_DEFAULTS.beta_decay,
                   help=f"factor applied to beta each iteration (default {_DEFAULTS.beta_decay})")
    p.add_argument("--tol", type=float, default=_DEFAULTS.tol_rel,
                   help=f"relative objective change that stops the iteration (default {_DEFAULTS.tol_rel})")
    p.add_argument("--max-iter", type=int, default=_DEFAULTS.max_iter,
                   help=f"iteration cap (default {_DEFAULTS.max_iter})")
    p.add_argument("--time-limit", type=float, default=_DEFAULTS.time_limit_s,
                   help=f"wall-clock limit in seconds, checked between iterations "
                        f"(default {_DEFAULTS.time_limit_s:g})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dcchance", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("solve", help="solve an instance file")
    ps.add_argument("instance", help="instance JSON file")
    ps.add_argument("--method", choices=METHODS, default="pdca",
                    help="dca / pdca start from the CVaR point; oracle enumerates scenario subsets")
    _solver_flags(ps)
    ps.add_argument("--out", default="solution.json",
                    help="solution JSON path; the trace CSV goes next to it as <stem>.trace.csv")

    pb = sub.add_parser("bench", help="run a benchmark spec")
    pb.add_argument("spec", help="BenchSpec JSON file (one object or a list)")
    pb.add_argument("--alpha", type=float, default=None, help="override alpha in every spec")
    pb.add_argument("--seed", type=int, nargs="+", default=None, help="override the seed list")
    pb.add_argument("--tol", type=float, default=None, help="override tol_rel")
    pb.add_argument("--max-iter", type=int, default=None, help="override max_iter")
    pb.add_argument("--time-limit", type=float, default=None, help="override time_limit_s")
    pb.add_argument("--workers", type=int, default=None, help="parallel instances")
    pb.add_argument("--no-timing", action="store_true",
                    help="leave time columns blank so repeated runs give identical files")
    pb.add_argument("--out", default="bench_out", help="output directory")

    pv = sub.add_parser("validate", help="run the invariant checks")
    pv.add_argument("--level", choices=("fast", "full"), default="fast")
    return parser


def _err(msg: str) -> None:
    print(f"dcchance: {msg}", file=sys.stderr)


def cmd_solve(args) -> int:
    try:
        problem = load_instance(args.instance)
        if args.alpha is not None:
            problem = dataclasses.replace(problem, alpha=args.alpha)
        config = SolverConfig(beta0=args.beta0, beta_decay=args.beta_decay, tol_rel=args.tol,
                              max_iter=args.max_iter, time_limit_s=args.time_limit)
    except FileNotFoundError as exc:
        _err(f"cannot read {exc.filename}")
        return EXIT_INPUT
    except (InvalidInputError, ValueError) as exc:
        _err(str(exc))
        return EXIT_INPUT
    try:
        result = solve_chance(problem, args.method, config)
    except (NoInitialPointError, InfeasibleStartError, OracleInfeasibleError) as exc:
        _err(f"infeasible: {exc}")
        return EXIT_INFEASIBLE
    except BudgetExceededError as exc:
        _err(str(exc))
        return EXIT_INPUT
    except InvalidInputError as exc:
        _err(str(exc))
        return EXIT_INPUT
    except (PdcaError, RuntimeError, ArithmeticError, AssertionError) as exc:
        _err(f"numerical failure: {exc}")
        return EXIT_NUMERICAL

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(result.to_dict(), indent=2) + "\n")
    if result.trace is not None:
        result.trace.to_csv(out.with_name(out.stem + ".trace.csv"))
    print(f"{args.method}: fval={result.fval:.10g} prob={result.prob:.4f} "
          f"status={result.status} iters={result.iters}")
    return EXIT_OK


def cmd_bench(args) -> int:
    try:
        specs = load_specs(args.spec)
        overrides = {k: v for k, v in (("alpha", args.alpha), ("seeds", args.seed),
                                         ("tol_rel", args.tol), ("max_iter", args.max_iter),
                                         ("time_limit_s", args.time_limit),
                                         ("workers", args.workers)) if v is not None}
        specs = [dataclasses.replace(s, **overrides) for s in specs]
    except FileNotFoundError as exc:
        _err(f"cannot read {exc.filename}")
        return EXIT_INPUT
    except (json.JSONDecodeError, TypeError, InvalidInputError, ValueError) as exc:
        _err(f"bad bench spec: {exc}")
        return EXIT_INPUT
    rows = [r for spec in specs for r in run_bench(spec)]
    cells, agg = write_report(rows, args.out, timing=not args.no_timing)
    print(f"wrote {len(rows)} rows to {cells} and {agg}")
    bad = [r for r in rows if r["method"] in ("dca", "pdca1", "pdca2")
           and r["status"] in ("converged", "max_iter", "time_limit")
           and not r["prob"] >= 1 - r["alpha"] - 1e-12]
    for r in bad:
        _err(f"prob {r['prob']} below 1 - alpha for {r['family']} {r['method']} seed {r['seed']}")
    return EXIT_NUMERICAL if bad else EXIT_OK


def cmd_validate(args) -> int:
    return EXIT_OK if validate.run(args.level) else EXIT_NUMERICAL


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"solve": cmd_solve, "bench": cmd_bench, "validate": cmd_validate}[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
