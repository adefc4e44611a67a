"""
Command-line entry point.

    python main.py solve --problem polytope5 --lambda 0.5/L --rho 1.3
    python main.py sweep-rho --problem polytope5 --rho 0.5:1.3:0.1
    python main.py compare --problem fractional5 --methods fbf@0.9/L fbf-adaptive@1
    python main.py flow --problem plane3 --lambdas 0.99/L 0.8/L 0.5/L
    python main.py certify --trace runs/polytope5_fbf_trace.csv
    python main.py list-problems
"""
from __future__ import annotations

import argparse
from typing import Optional, Sequence

from bench import (
    FlowRequest,
    RunSpec,
    SolverSpec,
    cmd_certify,
    cmd_compare,
    cmd_flow,
    cmd_list_problems,
    cmd_solve,
    cmd_sweep_rho,
    guarded,
    load_runspec,
    parse_rho_list,
)
from config import configure_logging, get_settings
from registry import problem_names

SOLVER_FLAGS = ("method", "lam", "lambda_mode", "mu", "tol", "max_iter", "seed", "stop", "x0", "allow_large_step")


def _add_solver_flags(parser: argparse.ArgumentParser, rho: bool = True) -> None:
    parser.add_argument("--problem", choices=problem_names(), help="registry problem name")
    parser.add_argument("--config", help="run specification JSON; flags given on the command line override it")
    parser.add_argument(
        "--method",
        choices=["fbf", "extragradient", "subgradient_extragradient", "projected_gradient"],
    )
    parser.add_argument("--lambda", dest="lam", help="stepsize, absolute or 'c/L'")
    parser.add_argument("--lambda-mode", dest="lambda_mode", choices=["fixed", "adaptive"])
    parser.add_argument("--mu", type=float, help="adaptive stepsize factor in (0, 1)")
    if rho:
        parser.add_argument("--rho", help="relaxation parameter or comma-separated sequence")
    parser.add_argument("--tol", type=float, help="stop tolerance")
    parser.add_argument("--stop", choices=["dist_ref", "residual", "exact"])
    parser.add_argument("--max-iter", dest="max_iter", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--x0", type=float, nargs="+", help="starting point (defaults to the problem's)")
    parser.add_argument("--allow-large-step", dest="allow_large_step", action="store_true", default=None)
    parser.add_argument("--out", help="output path prefix")
    parser.add_argument("--record", action="store_true", help="store the run in the history database")


def build_runspec(args: argparse.Namespace) -> RunSpec:
    base = load_runspec(args.config).model_dump(by_alias=False) if args.config else {"solver": {}}
    solver = dict(base.get("solver") or {})
    for key in SOLVER_FLAGS:
        value = getattr(args, key, None)
        if value is not None:
            solver[key] = value
    rho = getattr(args, "rho", None)
    if rho is not None:
        values = parse_rho_list(rho)
        solver["rho"] = values[0] if len(values) == 1 else values
    problem = args.problem or base.get("problem")
    if problem is None:
        raise ValueError("a problem is required (--problem or --config)")
    spec = {"problem": problem, "solver": SolverSpec.model_validate(solver)}
    if args.out or base.get("output"):
        spec["output"] = args.out or base.get("output")
    if base.get("emit"):
        spec["emit"] = base["emit"]
    if getattr(args, "emit", None):
        spec["emit"] = args.emit
    return RunSpec.model_validate(spec)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vi-bench", description="Forward-backward-forward benchmarks for variational inequalities")
    parser.add_argument("--log-level", dest="log_level", help="DEBUG, INFO, WARNING or ERROR")
    sub = parser.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve", help="run one solver on one problem")
    _add_solver_flags(solve)
    solve.add_argument("--emit", choices=["csv", "json", "both"])

    sweep = sub.add_parser("sweep-rho", help="FBF over a list of relaxation parameters")
    _add_solver_flags(sweep, rho=False)
    sweep.add_argument("--rho", default="0.5:1.3:0.1", help="comma list or start:stop:step")
    sweep.add_argument("--workers", type=int, default=None)

    compare = sub.add_parser("compare", help="several methods on one problem")
    _add_solver_flags(compare)
    compare.add_argument(
        "--methods", nargs="+", default=["fbf", "extragradient", "subgradient-extragradient"],
        help="method names, optionally with a stepsize: fbf@0.99/L fbf-adaptive@1",
    )
    compare.add_argument("--workers", type=int, default=None)

    flow = sub.add_parser("flow", help="integrate the continuous-time dynamics")
    flow.add_argument("--problem", choices=problem_names(), required=True)
    flow.add_argument("--lambdas", nargs="+", default=["0.99/L", "0.8/L", "0.5/L"])
    flow.add_argument("--horizon", "-T", type=float, default=200.0)
    flow.add_argument("--h", type=float, default=1e-3)
    flow.add_argument("--integrator", choices=["rk4", "explicit_euler"], default="rk4")
    flow.add_argument("--stride", type=int, default=100)
    flow.add_argument("--x0", type=float, nargs="+")
    flow.add_argument("--out", help="output path prefix")
    flow.add_argument("--workers", type=int, default=None)

    certify = sub.add_parser("certify", help="check an existing trace CSV")
    certify.add_argument("--trace", required=True)
    certify.add_argument("--problem", choices=problem_names())
    certify.add_argument("--out", help="also write the report JSON here")

    listing = sub.add_parser("list-problems", help="show the built-in problems")
    listing.add_argument("--constants", action="store_true", help="compute and print cached constants")
    return parser


def _workers(args: argparse.Namespace) -> int:
    return args.workers if getattr(args, "workers", None) else get_settings().workers


def dispatch(args: argparse.Namespace) -> int:
    if args.command == "solve":
        return cmd_solve(build_runspec(args), record=args.record)
    if args.command == "sweep-rho":
        runspec = build_runspec(args)
        return cmd_sweep_rho(
            runspec.problem, parse_rho_list(args.rho), runspec.solver, runspec.output,
            workers=_workers(args), record=args.record,
        )
    if args.command == "compare":
        runspec = build_runspec(args)
        return cmd_compare(
            runspec.problem, args.methods, runspec.solver, runspec.output,
            workers=_workers(args), record=args.record,
        )
    if args.command == "flow":
        request = FlowRequest(
            problem=args.problem, lambdas=args.lambdas, horizon=args.horizon, h=args.h,
            integrator=args.integrator, sample_stride=args.stride, x0=args.x0,
        )
        return cmd_flow(request, args.out, workers=_workers(args))
    if args.command == "certify":
        return cmd_certify(args.trace, args.problem, args.out)
    return cmd_list_problems(constants=args.constants)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    return guarded(lambda: dispatch(args))
