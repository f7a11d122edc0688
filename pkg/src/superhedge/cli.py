"""Command-line front end.

Instance files are JSON::

    {"T": 2,
     "marginals": [{"support": [...], "weights": [...]}, {"file": "mu2.csv"}],
     "payoff": {"kind": "forward_start", "params": {"strike": 1.0}},
     "options": {"tol": 1e-9, "max_iters": 100000, "threads": 1}}

Exit codes: 0 success, 1 malformed input, 2 infeasible or unbounded,
3 solver stopped early (iteration limit) or a failed consistency check
under ``--strict``.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import lp as lpmod
from .block_example import (
    a1_closed_form,
    a1_numeric,
    discretize_block,
    payoff_expectation_offdiag,
    refinement_experiment,
)
from .coupling import best_gain, expectation, in_Pi, penalized_value
from .marginals import DiscreteMarginal, MarginalError, check_convex_order, marginal_from_json
from .payoff import PayoffError, PayoffSpec, growth_constant, payoff_from_json
from .pricing import (
    Instance,
    SolverOptions,
    constrained_dual_price,
    dual_price,
    martingale_feasible,
    penalized_primal_price,
    primal_price,
    sweep_bounds,
)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_INFEASIBLE = 2
EXIT_INCOMPLETE = 3

FUNCTIONALS = {"P": "P", "D": "D", "DN": "D^N", "PN": "P^N"}
REPORT_FIELDS = ("functional", "status", "value", "N", "residuals", "diagnostics", "certificate")

log = logging.getLogger("superhedge")


class InputError(ValueError):
    """Malformed instance or arguments; the message names the offending field."""


# -- instance files --------------------------------------------------------------


def load_instance(path) -> tuple[list, PayoffSpec | None, dict]:
    """Parse an instance file into ``(marginals, payoff or None, options)``."""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise InputError(f"instance: file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"instance: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise InputError("instance: expected a JSON object")
    entries = data.get("marginals")
    if not isinstance(entries, list):
        raise InputError("marginals: missing or not a list")
    T = data.get("T", len(entries))
    if isinstance(T, bool) or not isinstance(T, int) or T < 2:
        raise InputError("T: expected an integer >= 2")
    if T != len(entries):
        raise InputError(f"T: declares {T} periods but {len(entries)} marginals are given")
    try:
        mus = [marginal_from_json(e, path.parent, f"marginals[{i}]") for i, e in enumerate(entries)]
    except MarginalError as exc:
        raise InputError(str(exc)) from None
    phi = None
    if "payoff" in data:
        try:
            phi = payoff_from_json(data["payoff"], tuple(mu.support for mu in mus))
        except PayoffError as exc:
            msg = str(exc)
            raise InputError(msg if msg.startswith("payoff") else f"payoff: {msg}") from None
    options = data.get("options", {})
    if not isinstance(options, dict):
        raise InputError("options: expected an object")
    unknown = set(options) - {"tol", "max_iters", "threads"}
    if unknown:
        raise InputError(f"options.{sorted(unknown)[0]}: unknown option")
    return mus, phi, options


def _solver_options(file_opts: dict, args) -> SolverOptions:
    tol = args.tol if getattr(args, "tol", None) is not None else file_opts.get("tol", 1e-9)
    iters = args.max_iters if getattr(args, "max_iters", None) is not None else file_opts.get("max_iters")
    threads = args.threads if getattr(args, "threads", None) is not None else file_opts.get("threads", 1)
    if not isinstance(tol, (int, float)) or isinstance(tol, bool) or not tol > 0:
        raise InputError("options.tol: expected a positive number")
    if iters is not None and (isinstance(iters, bool) or not isinstance(iters, int) or iters < 1):
        raise InputError("options.max_iters: expected a positive integer")
    if isinstance(threads, bool) or not isinstance(threads, int) or threads < 1:
        raise InputError("options.threads: expected a positive integer")
    return SolverOptions(tol=float(tol), max_iters=iters, threads=threads)


# -- output ----------------------------------------------------------------------


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


def dumps(obj) -> str:
    """Deterministic JSON: insertion-ordered fields, shortest round-trip floats."""
    return json.dumps(_jsonable(obj), indent=2, allow_nan=False) + "\n"


def report_dict(report, timing: bool = False) -> dict:
    d = report.to_dict()
    if not timing:
        d["diagnostics"].pop("wall_time", None)
    return d


def validate_report(d) -> None:
    """Schema check for a price report as emitted by ``price``."""
    if not isinstance(d, dict) or tuple(d) != REPORT_FIELDS:
        raise ValueError(f"report fields must be {REPORT_FIELDS}")
    if d["functional"] not in FUNCTIONALS.values():
        raise ValueError("report.functional: unknown functional")
    if d["status"] not in (lpmod.OPTIMAL, lpmod.INFEASIBLE, lpmod.UNBOUNDED, lpmod.ITERATION_LIMIT):
        raise ValueError("report.status: unknown status")
    if not isinstance(d["value"], (int, float)) and d["value"] not in ("nan", "inf", "-inf"):
        raise ValueError("report.value: expected a number")
    if d["N"] is not None and not isinstance(d["N"], (int, float)):
        raise ValueError("report.N: expected a number or null")
    for key in ("residuals", "diagnostics"):
        if not isinstance(d[key], dict):
            raise ValueError(f"report.{key}: expected an object")
    cert = d["certificate"]
    if cert is not None:
        if cert.get("type") == "coupling":
            if not all(k in cert for k in ("shape", "grids", "mass")):
                raise ValueError("report.certificate: incomplete coupling")
            if len(cert["mass"]) != int(np.prod(cert["shape"])):
                raise ValueError("report.certificate.mass: wrong length")
        elif cert.get("type") == "strategy":
            if not all(k in cert for k in ("bound", "u", "delta")):
                raise ValueError("report.certificate: incomplete strategy")
        else:
            raise ValueError("report.certificate.type: unknown")


def _emit(text: str, out) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _status_code(status: str) -> int:
    if status == lpmod.OPTIMAL:
        return EXIT_OK
    if status in (lpmod.INFEASIBLE, lpmod.UNBOUNDED):
        return EXIT_INFEASIBLE
    return EXIT_INCOMPLETE


# -- commands --------------------------------------------------------------------


def cmd_price(args) -> int:
    mus, phi, file_opts = load_instance(args.instance)
    if phi is None:
        raise InputError("payoff: missing")
    options = _solver_options(file_opts, args)
    functional = args.functional
    if functional in ("DN", "PN"):
        if args.N is None:
            raise InputError(f"--N: required for functional {functional}")
        if not args.N > 0:
            raise InputError("--N: must be positive")
    try:
        inst = Instance(mus, phi)
    except (PayoffError, ValueError) as exc:
        raise InputError(f"payoff: {exc}") from None
    if functional == "P":
        rep = primal_price(inst, None, options)
    elif functional == "D":
        rep = dual_price(inst, None, options)
    elif functional == "DN":
        rep = constrained_dual_price(inst, None, args.N, options)
    else:
        rep = penalized_primal_price(inst, None, args.N, options)
    d = report_dict(rep, args.timing)
    if args.format == "csv":
        text = "functional,status,value,N\n" + ",".join(
            str(v) for v in (d["functional"], d["status"], _jsonable(rep.value), _jsonable(rep.N) if rep.N else "")
        ) + "\n"
    else:
        text = dumps(d)
    _emit(text, args.out)
    return _status_code(rep.status)


def cmd_sweep(args) -> int:
    mus, phi, file_opts = load_instance(args.instance)
    if phi is None:
        raise InputError("payoff: missing")
    options = _solver_options(file_opts, args)
    Ns = list(args.Ns)
    if len(set(Ns)) != len(Ns):
        raise InputError("--Ns: duplicate values")
    if any(b <= a for a, b in zip(Ns, Ns[1:])):
        raise InputError("--Ns: values must be increasing")
    if Ns[0] <= 0:
        raise InputError("--Ns: values must be positive")
    table = sweep_bounds(mus, phi, Ns, options, include_threshold=args.to_threshold)
    if args.format == "json":
        text = dumps(
            {
                "D": table.D,
                "P": table.P,
                "threshold": table.threshold,
                "lipschitz_scale": table.lipschitz_scale,
                "rows": [{"N": r.N, "D_N": r.D_N, "P_N": r.P_N, "gap": r.gap} for r in table.rows],
                "violations": table.violations,
            }
        )
    else:
        text = table.to_csv()
    _emit(text, args.out)
    for v in table.violations:
        log.warning(v)
    if not math.isfinite(table.D):
        return EXIT_INFEASIBLE
    if args.strict and table.violations:
        return EXIT_INCOMPLETE
    return EXIT_OK


def _positive_int(name, v):
    if v is None or v < 1:
        raise InputError(f"{name}: expected a positive integer")
    return v


def cmd_example31(args) -> int:
    if args.sub == "closed-form":
        M = _positive_int("--M", args.M)
        d = {
            "M": M,
            "a1_closed_form": a1_closed_form(M),
            "a1_numeric": a1_numeric(M),
            "payoff_expectation": payoff_expectation_offdiag(M),
        }
        _emit(dumps(d), args.out)
        return EXIT_OK
    if args.sub == "grid":
        M = _positive_int("--M", args.M)
        n = _positive_int("--n", args.n)
        if n % M:
            raise InputError(f"--M: {M} does not divide n={n}")
        q = discretize_block(M, n)
        phi = PayoffSpec.indicator_offdiagonal()
        uni = DiscreteMarginal.midpoint_grid(n)
        ok, dev = in_Pi(q, [uni, uni])
        d = {
            "M": M,
            "n": n,
            "best_gain": best_gain(q, 1.0),
            "continuum_best_gain": a1_closed_form(M),
            "expectation": expectation(q, phi),
            "marginal_deviation": dev,
        }
        if args.N is not None:
            d["N"] = args.N
            d["penalized_value"] = penalized_value(q, phi, args.N)
        if args.coupling:
            d["coupling"] = q.to_dict()
        _emit(dumps(d), args.out)
        return EXIT_OK
    ns = [_positive_int("--n", n) for n in args.n_list]
    if any(n < 2 for n in ns):
        raise InputError("--n: expected integers >= 2")
    if any(b <= a for a, b in zip(ns, ns[1:])):
        raise InputError("--n: values must be increasing")
    Ns = list(args.N_list)
    if any(b <= a for a, b in zip(Ns, Ns[1:])) or Ns[0] <= 0:
        raise InputError("--N: values must be positive and increasing")
    options = _solver_options({}, args)
    table = refinement_experiment(ns, Ns, options)
    if args.format == "json":
        text = dumps(
            {
                "rows": [
                    {k: getattr(r, k) for k in table.HEADER} | {"certificate_M": r.certificate_M}
                    for r in table.rows
                ],
                "violations": table.violations,
            }
        )
    else:
        text = table.to_csv()
    _emit(text, args.out)
    if args.gnuplot:
        Path(args.gnuplot).write_text(table.to_gnuplot(), encoding="utf-8")
    for v in table.violations:
        log.warning(v)
    return EXIT_INCOMPLETE if args.strict and table.violations else EXIT_OK


def cmd_check(args) -> int:
    mus, phi, file_opts = load_instance(args.instance)
    options = _solver_options(file_opts, args)
    order = check_convex_order(mus)
    feasible = martingale_feasible(mus, options)
    d = {"convex_order": order.to_dict(), "convex_order_feasible": order.feasible}
    if phi is not None:
        try:
            d["growth"] = growth_constant(phi, tuple(mu.support for mu in mus)).to_dict()
        except PayoffError as exc:
            raise InputError(f"payoff: {exc}") from None
    d["martingale_feasible"] = feasible
    d["strassen_agrees"] = feasible == order.feasible
    _emit(dumps(d), args.out)
    if not d["strassen_agrees"]:
        log.error("convex-order verdict and LP feasibility disagree")
        return EXIT_INCOMPLETE
    return EXIT_OK if feasible else EXIT_INFEASIBLE


# -- parser ----------------------------------------------------------------------


def _solver_flags(p):
    p.add_argument("--tol", type=float, help="solver feasibility/optimality tolerance")
    p.add_argument("--max-iters", type=int, dest="max_iters", help="simplex iteration cap")
    p.add_argument("--threads", type=int, help="parallel workers for sweeps")
    p.add_argument("--out", help="write output here instead of stdout")


class _Parser(argparse.ArgumentParser):
    """Usage errors are malformed input: exit 1 rather than argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="superhedge", description="Superhedging prices and martingale transport bounds.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("price", help="solve one functional")
    p.add_argument("instance")
    p.add_argument("--functional", choices=sorted(FUNCTIONALS), required=True)
    p.add_argument("--N", type=float, help="trading bound for DN / PN")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--timing", action="store_true", help="include wall-clock times in diagnostics")
    _solver_flags(p)
    p.set_defaults(func=cmd_price)

    p = sub.add_parser("sweep", help="paired D^N / P^N over increasing N")
    p.add_argument("instance")
    p.add_argument("--Ns", type=float, nargs="+", required=True)
    p.add_argument("--format", choices=("json", "csv"), default="csv")
    p.add_argument("--to-threshold", action="store_true", dest="to_threshold",
                   help="append the certified stabilization level N* to the sweep")
    p.add_argument("--strict", action="store_true", help="exit 3 when a consistency check fails")
    _solver_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("example31", help="the diagonal-block duality-gap example")
    ex = p.add_subparsers(dest="sub", required=True)
    q = ex.add_parser("closed-form", help="best trading gain of the block measure")
    q.add_argument("--M", type=int, required=True)
    q.add_argument("--out")
    q = ex.add_parser("grid", help="block coupling on the n-point midpoint grid")
    q.add_argument("--M", type=int, required=True)
    q.add_argument("--n", type=int, required=True)
    q.add_argument("--N", type=float, help="also report E[Phi] - A^N")
    q.add_argument("--coupling", action="store_true", help="include the mass tensor")
    q.add_argument("--out")
    q = ex.add_parser("gap", help="grid values P, D, D^N, P^N against the block certificate")
    q.add_argument("--n", type=int, nargs="+", dest="n_list", required=True)
    q.add_argument("--N", type=float, nargs="+", dest="N_list", default=[1.0])
    q.add_argument("--format", choices=("json", "csv"), default="csv")
    q.add_argument("--gnuplot", help="also write whitespace-separated data here")
    q.add_argument("--strict", action="store_true", help="exit 3 when a consistency check fails")
    _solver_flags(q)
    p.set_defaults(func=cmd_example31)

    p = sub.add_parser("check", help="convex order, growth bound and martingale feasibility")
    p.add_argument("instance")
    _solver_flags(p)
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (InputError, MarginalError, PayoffError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
