"""Command-line front end.

Commands: ``solve`` (joint equilibrium), ``mte`` (fixed demands), ``num``
(fixed single-path routes), ``simulate`` (two-time-scale protocol),
``gradcheck`` (analytic vs finite-difference gradients), ``validate``
(parse/validate only).  Exit codes: 0 success, 1 check failed, 2 input
error, 3 convergence error.  ``MNUM_LOG={error|info|debug}`` controls log
verbosity.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import report as rpt
from .choice import DeterministicMin, Logit
from .equilibrium import (
    DualProgram,
    SolverOptions,
    solve_num_singlepath,
)
from .errors import ConvergenceError, NetworkError, OracleUnavailableError
from .network import load_network
from .protocol import ProtocolConfig, run as run_protocol

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_INPUT_ERROR = 2
EXIT_NO_CONVERGENCE = 3

GRADCHECK_TOL = 1e-5


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mnum", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--input", required=True, help="network JSON file")
    common.add_argument("--output", help="output path (report file, or directory for simulate)")
    common.add_argument("--choice", choices=("logit", "min"), help="override the choice model")
    common.add_argument("--beta", type=float, help="logit concentration parameter")
    common.add_argument("--tol", type=float, default=1e-8, help="solver tolerance")
    common.add_argument("--max-iter", type=int, default=5000, help="solver iteration budget")
    common.add_argument("--seed", type=int, default=42, help="random seed")
    common.add_argument("--no-figures", action="store_true", help="skip figure rendering")

    solver_flags = argparse.ArgumentParser(add_help=False)
    solver_flags.add_argument(
        "--solver", choices=("descent", "fixedpoint"), default="descent", help="solver mode"
    )

    sub.add_parser("solve", parents=[common, solver_flags], help="joint rate/routing equilibrium")

    p_mte = sub.add_parser("mte", parents=[common, solver_flags], help="fixed-demand routing equilibrium")
    p_mte.add_argument(
        "--demand",
        action="append",
        default=[],
        metavar="SOURCE=RATE",
        help="fixed demand per source (repeatable; unspecified sources get 0)",
    )

    p_num = sub.add_parser("num", parents=[common], help="single-path rate-control equilibrium")
    p_num.add_argument(
        "--route",
        action="append",
        default=[],
        metavar="SOURCE=ARC,ARC,...",
        help="fixed arc route per source (default: free-flow shortest path)",
    )

    p_sim = sub.add_parser("simulate", parents=[common], help="flow-level protocol simulation")
    p_sim.add_argument("--alpha", type=float, default=0.5, help="router smoothing factor")
    p_sim.add_argument("--delta", type=float, default=0.5, help="source relaxation step")
    p_sim.add_argument("--inner", type=int, default=50, help="source sweeps per router sweep")
    p_sim.add_argument("--outer", type=int, default=200, help="router sweeps")
    p_sim.add_argument("--noise-sigma", type=float, default=0.0, help="std of observation noise")
    p_sim.add_argument(
        "--band", type=float, default=0.01, help="relative rate distance considered converged"
    )

    p_grad = sub.add_parser("gradcheck", parents=[common], help="gradient identity check")
    p_grad.add_argument("--points", type=int, default=20, help="random interior points to test")

    sub.add_parser("validate", parents=[common], help="parse and validate a network file")
    return parser


def _configure_logging() -> None:
    level = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}.get(
        os.environ.get("MNUM_LOG", "error").lower(), logging.ERROR
    )
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")


def _load(args):
    net, choice_spec = load_network(args.input)
    if args.choice == "min":
        if args.beta is not None:
            raise NetworkError("--beta is not meaningful with --choice min")
        choice = DeterministicMin()
    elif args.choice == "logit":
        choice = Logit(args.beta if args.beta is not None else 1.0)
    elif args.beta is not None:
        if choice_spec is not None and choice_spec[0] == "min":
            raise NetworkError("--beta requires a logit choice model")
        choice = Logit(args.beta)
    elif choice_spec is None:
        choice = Logit(1.0)
    elif choice_spec[0] == "logit":
        choice = Logit(choice_spec[1])
    else:
        choice = DeterministicMin()
    return net, choice


def _solver_options(args) -> SolverOptions:
    if not args.tol > 0.0:
        raise NetworkError(f"--tol must be positive, got {args.tol}")
    if args.max_iter < 1:
        raise NetworkError(f"--max-iter must be at least 1, got {args.max_iter}")
    return SolverOptions(
        tol=args.tol, max_iter=args.max_iter, method=getattr(args, "solver", "descent")
    )


def _emit_equilibrium(args, net, eq) -> None:
    print(f"converged in {eq.iterations} iterations ({eq.method})")
    print(f"objective      {eq.objective:.12g}")
    print(f"grad norm      {eq.grad_norm:.3e}")
    print(f"rmnum residual {eq.rmnum_residual:.3e}")
    for src, x, q in zip(net.sources, eq.x, eq.q):
        print(f"source {src.id}: rate {x:.9g}  queueing delay {q:.9g}")
    if args.output:
        out = Path(args.output)
        rpt.write_json(out, rpt.equilibrium_report(net, eq))
        print(f"report written to {out}")
        if not args.no_figures:
            for p in rpt.render_equilibrium_figures(out.with_suffix(""), net, eq):
                print(f"figure written to {p}")


def _cmd_solve(args) -> int:
    net, choice = _load(args)
    eq = DualProgram(net, choice).solve(_solver_options(args))
    _emit_equilibrium(args, net, eq)
    return EXIT_OK


def _parse_demands(net, pairs):
    demands = np.zeros(net.n_sources)
    for item in pairs:
        if "=" not in item:
            raise NetworkError(f"--demand expects SOURCE=RATE, got {item!r}")
        sid, _, val = item.partition("=")
        try:
            rate = float(val)
        except ValueError:
            raise NetworkError(f"--demand {item!r}: rate must be a number") from None
        if rate < 0.0:
            raise NetworkError(f"--demand {item!r}: rate must be nonnegative")
        demands[net.source_index(sid)] = rate
    return demands


def _cmd_mte(args) -> int:
    net, choice = _load(args)
    demands = _parse_demands(net, args.demand)
    eq = DualProgram(net, choice, demands=demands).solve(_solver_options(args))
    _emit_equilibrium(args, net, eq)
    return EXIT_OK


def _cmd_num(args) -> int:
    net, _ = _load(args)
    routes = {}
    for item in args.route:
        if "=" not in item:
            raise NetworkError(f"--route expects SOURCE=ARC,ARC,..., got {item!r}")
        sid, _, arcs = item.partition("=")
        routes[sid] = [a for a in arcs.split(",") if a]
    sol = solve_num_singlepath(net, routes, _solver_options(args))
    print(f"converged in {sol.iterations} iterations")
    print(f"objective    {sol.objective:.12g}")
    print(f"kkt residual {sol.kkt_residual:.3e}")
    for src, x, q in zip(net.sources, sol.x, sol.q):
        print(f"source {src.id}: rate {x:.9g}  queueing delay {q:.9g}")
    if args.output:
        out = Path(args.output)
        rpt.write_json(out, rpt.singlepath_report(net, sol))
        print(f"report written to {out}")
    return EXIT_OK


def _cmd_simulate(args) -> int:
    net, choice = _load(args)
    cfg = ProtocolConfig(
        inner=args.inner,
        outer=args.outer,
        alpha=args.alpha,
        delta=args.delta,
        noise_sigma=args.noise_sigma,
        seed=args.seed,
    )
    program = DualProgram(net, choice)
    reference = program.solve(SolverOptions(tol=args.tol, max_iter=args.max_iter))
    result = run_protocol(net, choice, cfg, reference=reference, program=program)
    summary = result.summary(net)
    print(f"final rate distance {summary['final_rate_distance']:.6g} "
          f"(relative {summary['final_rate_distance_rel']:.6g})")
    print(f"overload events     {summary['overload_events']}")
    if args.output:
        outdir = Path(args.output)
        outdir.mkdir(parents=True, exist_ok=True)
        trace_path = rpt.write_trace_csv(outdir / "trace.csv", result.trace)
        summary_path = rpt.write_json(outdir / "summary.json", summary)
        print(f"trace written to {trace_path}")
        print(f"summary written to {summary_path}")
        if not args.no_figures:
            for p in rpt.render_simulation_figures(outdir / "simulation", net, result):
                print(f"figure written to {p}")
    within = summary["final_rate_distance_rel"] < args.band
    print(f"within band {args.band:g}: {'yes' if within else 'no'}")
    return EXIT_OK if within else EXIT_CHECK_FAILED


def _cmd_gradcheck(args) -> int:
    net, choice = _load(args)
    program = DualProgram(net, choice)
    rng = np.random.default_rng(args.seed)
    corrupt = bool(os.environ.get("MNUM_GRADCHECK_CORRUPT"))
    worst = 0.0
    print(f"{'point':>5}  {'max rel err':>12}")
    for point in range(args.points):
        lam = net.lambda0 * (1.0 + rng.uniform(0.05, 0.6, net.n_arcs))
        g = program.gradient(lam)
        if corrupt:
            g = g + 1e-3
        fd = np.empty_like(g)
        for a in range(net.n_arcs):
            h = min(1e-5 * max(1.0, abs(lam[a])), 0.25 * (lam[a] - net.lambda0[a]))
            up, dn = lam.copy(), lam.copy()
            up[a] += h
            dn[a] -= h
            fd[a] = (program.objective(up) - program.objective(dn)) / (2.0 * h)
        rel = float(np.max(np.abs(g - fd) / np.maximum(1.0, np.abs(fd)))) if g.size else 0.0
        worst = max(worst, rel)
        print(f"{point:>5}  {rel:>12.3e}")
    print(f"worst relative error {worst:.3e} (tolerance {GRADCHECK_TOL:g})")
    return EXIT_OK if worst < GRADCHECK_TOL else EXIT_CHECK_FAILED


def _cmd_validate(args) -> int:
    net, choice_spec = load_network(args.input)
    print(f"nodes   {net.n_nodes}")
    print(f"arcs    {net.n_arcs}")
    print(f"sources {net.n_sources}")
    if choice_spec is None:
        print("choice  (not specified)")
    elif choice_spec[0] == "logit":
        print(f"choice  logit beta={choice_spec[1]:g}")
    else:
        print("choice  min")
    print("network is valid")
    return EXIT_OK


_COMMANDS = {
    "solve": _cmd_solve,
    "mte": _cmd_mte,
    "num": _cmd_num,
    "simulate": _cmd_simulate,
    "gradcheck": _cmd_gradcheck,
    "validate": _cmd_validate,
}


def main(argv=None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (NetworkError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    except ConvergenceError as exc:
        print(f"convergence error: {exc}", file=sys.stderr)
        if exc.iterations is not None:
            print(f"  iterations: {exc.iterations}", file=sys.stderr)
        if exc.residual is not None:
            print(f"  residual:   {exc.residual:.3e}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    except OracleUnavailableError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR


if __name__ == "__main__":
    sys.exit(main())
