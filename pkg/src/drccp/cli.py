"""Command-line interface.

    drccp solve    --problem P --method {cvar-conic,cutting,inner,scenario}
    drccp certify  --problem P --x 1.5
    drccp compare  --problem P --candidates 1000 --seed 7
    drccp wasserstein --a mu.json --b nu.csv --p 1
    drccp oracle-check --problem P

Every command writes ``report.json`` (plus CSV tables and PNG figures) to
``--out``. Exit codes: 0 success, 2 infeasible, 3 non-convergence,
4 invalid input, 5 method incompatible with the constraint.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import conic
from .constraints import PiecewiseBilinearConstraint, check_subgradients
from .core import transport_plan
from .cutting import AlgoParams, AssumptionError, CuttingError, run_cutting_surface
from .exact import worst_case_violation
from .io import Problem, ProblemError, atomic_write_json, atomic_write_text, load_distribution, write_csv
from .reformulate import (ReformulationError, cdcp_value, compare_sets, inner_value, membership_sample_approx,
                          membership_scenario, solve_cvar_drccp, solve_inner_cdcp, solve_scenario)

EXIT_OK, EXIT_CHECK_FAILED, EXIT_INFEASIBLE, EXIT_NONCONVERGED, EXIT_INPUT, EXIT_INCOMPATIBLE = 0, 1, 2, 3, 4, 5
METHODS = ("cvar-conic", "cutting", "inner", "scenario")
SUBSYSTEMS = ("cutting", "compare", "oracle-check")


class Incompatible(ValueError):
    pass


def subsystem_seeds(seed: int) -> dict:
    """One 64-bit seed expanded into an independent stream per subsystem."""
    children = np.random.SeedSequence(seed).spawn(len(SUBSYSTEMS))
    return {name: int(ch.generate_state(1, np.uint64)[0]) for name, ch in zip(SUBSYSTEMS, children)}


def _status_code(status: str) -> int:
    if status == conic.OPTIMAL:
        return EXIT_OK
    if status == conic.INFEASIBLE:
        return EXIT_INFEASIBLE
    return EXIT_NONCONVERGED


def _base_report(command, args, problem: Problem | None):
    rep = {"command": command, "version": __version__, "seed": args.seed, "timings": {}}
    if problem is not None:
        rep["input_digest"] = problem.digest()
        rep["parameters"] = {"theta": problem.theta, "alpha": problem.alpha, "p": problem.p,
                             "delta": problem.delta}
        if args.embed_samples:
            rep["samples"] = problem.samples.tolist()
    return rep


def _require_bilinear(problem: Problem, method: str, p_one: bool = True):
    if not isinstance(problem.F, PiecewiseBilinearConstraint):
        raise Incompatible(f"method {method} needs a piecewise-bilinear constraint")
    if p_one and problem.p != 1:
        raise Incompatible(f"method {method} is only valid for p = 1")


def _exact_kwargs(problem: Problem) -> dict:
    if isinstance(problem.F, PiecewiseBilinearConstraint):
        return {}
    return {"grid_resolution": problem.grid_resolution or 0.05}


def _worst_case_curve(problem, x, out: Path, figures: bool):
    grid = np.linspace(0.0, 2.0 * max(problem.theta, 1e-3), 11)
    probs = [worst_case_violation(x, problem.F, problem.samples, th, problem.p, problem.support,
                                  **_exact_kwargs(problem)).worst_case_probability for th in grid]
    write_csv(out / "worst_case.csv", ["theta", "worst_case_probability"],
              [[float(t), float(v)] for t, v in zip(grid, probs)])
    if figures:
        from .plotting import plot_worst_case
        plot_worst_case(grid, probs, problem.alpha, out / "worst_case.png")


def cmd_solve(problem: Problem, method: str, args, out: Path):
    rep = _base_report("solve", args, problem)
    rep["method"] = method
    t0 = time.perf_counter()
    F, S = problem.F, problem.samples
    if method == "cutting":
        _require_bilinear(problem, method, p_one=False)
        if F.K != 1:
            raise Incompatible("cutting needs a constraint concave in xi (a single bilinear piece)")
        if not problem.support.is_compact or not problem.X.is_bounded:
            raise Incompatible("cutting needs a bounded X and a compact support")
        algo = dict(problem.algorithm)
        algo.setdefault("eta", problem.tol.oracle_tol)
        algo["seed"] = subsystem_seeds(args.seed)["cutting"]
        try:
            params = AlgoParams(**algo)
        except TypeError as exc:
            raise ProblemError(f"algorithm: {exc}") from exc
        try:
            res = run_cutting_surface(F, S, problem.theta, problem.p, problem.alpha, problem.c, problem.X,
                                      problem.support, params, problem.tol)
        except AssumptionError as exc:
            rep.update(status=conic.INFEASIBLE, message=str(exc))
            return rep, EXIT_INFEASIBLE
        except CuttingError as exc:
            rep.update(status=conic.NUMERICAL_ERROR, message=str(exc))
            return rep, EXIT_NONCONVERGED
        sol = res.solution
        rep["trace_summary"] = {"iterations": res.state.k, "total_cuts": res.state.total_cuts,
                                "B": float(res.B), "B_source": res.B.source, "bounds": res.bounds.to_dict()}
        atomic_write_text(out / "trace.csv", res.trace_csv())
        if args.figures:
            from .plotting import plot_cutting_trace
            plot_cutting_trace(res.trace, out / "trace.png")
    else:
        _require_bilinear(problem, method, p_one=method != "scenario")
        if method == "cvar-conic":
            sol = solve_cvar_drccp(F, S, problem.theta, problem.alpha, problem.support, problem.c, problem.X,
                                   problem.p, problem.tol)
        elif method == "inner":
            sol = solve_inner_cdcp(F, S, problem.theta, problem.alpha, problem.c, problem.X, problem.p,
                                   problem.tol)
        else:
            sol = solve_scenario(F, S, problem.delta, problem.c, problem.X, problem.tol)
    rep["timings"]["solve"] = time.perf_counter() - t0
    rep["status"] = sol.status
    rep["solution"] = sol.to_dict()
    if sol.x is not None:
        t1 = time.perf_counter()
        cert = worst_case_violation(sol.x, F, S, problem.theta, problem.p, problem.support)
        rep["certificates"] = {"dcp": cert.to_dict(),
                               "dcp_member": bool(cert.worst_case_probability <= problem.alpha + problem.tol.feas_tol)}
        vals = F.values_at_samples(sol.x, S)
        G = cert.distances if cert.distances is not None else np.full(len(vals), np.nan)
        s = sol.s if sol.s is not None else np.full(len(vals), np.nan)
        write_csv(out / "solution.csv", ["i", "F", "s", "G"],
                  [[i, float(v), float(si), None if not np.isfinite(g) else float(g)]
                   for i, (v, si, g) in enumerate(zip(vals, s, G))])
        _worst_case_curve(problem, sol.x, out, args.figures)
        rep["timings"]["certify"] = time.perf_counter() - t1
    return rep, _status_code(sol.status)


def cmd_certify(problem: Problem, x, args, out: Path):
    rep = _base_report("certify", args, problem)
    x = np.asarray(x, float).ravel()
    if x.size != problem.F.n:
        raise ProblemError(f"x has dimension {x.size}, expected {problem.F.n}")
    rep["x"] = x.tolist()
    sets = ("DCP", "CDCP", "inner", "SCP_0", "SA_delta")
    if not problem.X.contains(x, tol=problem.tol.feas_tol):
        rep["domain"] = "x lies outside X"
        rep["verdicts"] = {k: False for k in sets}
        return rep, EXIT_OK
    t0 = time.perf_counter()
    F, S, tol = problem.F, problem.samples, problem.tol
    cert = worst_case_violation(x, F, S, problem.theta, problem.p, problem.support, **_exact_kwargs(problem))
    verdicts = {"DCP": bool(cert.worst_case_probability <= problem.alpha + tol.feas_tol)}
    values = {"DCP": cert.worst_case_probability}
    if isinstance(F, PiecewiseBilinearConstraint) and problem.p == 1:
        cv = cdcp_value(x, F, S, problem.theta, problem.alpha, problem.support, tol)
        verdicts["CDCP"], values["CDCP"] = bool(cv <= tol.feas_tol), cv
    else:
        verdicts["CDCP"] = None
    try:
        iv = inner_value(x, F, problem.lipschitz, S, problem.theta, problem.alpha)
        verdicts["inner"], values["inner"] = bool(iv <= tol.feas_tol), iv
    except ValueError:
        verdicts["inner"] = None
    verdicts["SCP_0"] = membership_scenario(x, F, S, 0.0, tol.feas_tol)
    verdicts["SA_delta"] = membership_sample_approx(x, F, S, min(problem.delta, 1.0))
    rep["verdicts"] = verdicts
    rep["values"] = values
    rep["certificates"] = {"dcp": cert.to_dict()}
    rep["timings"]["certify"] = time.perf_counter() - t0
    vals = F.values_at_samples(x, S)
    G = cert.distances if cert.distances is not None else np.full(len(vals), np.nan)
    write_csv(out / "certify.csv", ["i", "F", "G"],
              [[i, float(v), None if not np.isfinite(g) else float(g)] for i, (v, g) in enumerate(zip(vals, G))])
    _worst_case_curve(problem, x, out, args.figures)
    return rep, EXIT_OK


def cmd_compare(problem: Problem, count: int, args, out: Path):
    _require_bilinear(problem, "compare")
    rep = _base_report("compare", args, problem)
    rng = np.random.default_rng(subsystem_seeds(args.seed)["compare"])
    cands = problem.X.poly.sample(rng, count) if count > 0 else np.zeros((0, problem.F.n))
    t0 = time.perf_counter()
    report = compare_sets(list(cands), problem.F, problem.samples, problem.theta, problem.alpha,
                          problem.support, problem.lipschitz, None, problem.X, problem.tol,
                          include_cdcp=not args.skip_cdcp)
    rep["timings"]["compare"] = time.perf_counter() - t0
    rep["comparison"] = report.to_dict()
    header = [f"x{j}" for j in range(problem.F.n)] + report.columns()[problem.F.n:]
    write_csv(out / "compare.csv", header, report.table())
    for w in report.warnings:
        print(f"warning: {w}", file=sys.stderr)
    if args.figures:
        from .plotting import plot_comparison
        plot_comparison(report, out / "compare.png")
    return rep, EXIT_OK


def cmd_wasserstein(args, out: Path):
    try:
        mu, nu = load_distribution(args.a), load_distribution(args.b)
    except (OSError, ValueError, KeyError) as exc:
        raise ProblemError(str(exc)) from exc
    rep = _base_report("wasserstein", args, None)
    t0 = time.perf_counter()
    cost, plan = transport_plan(mu, nu, args.p)
    rep["timings"]["transport"] = time.perf_counter() - t0
    rep["p"] = args.p
    rep["distance"] = cost ** (1.0 / args.p)
    write_csv(out / "plan.csv", ["i", "j", "mass"],
              [[i, j, float(plan[i, j])] for i, j in zip(*np.nonzero(plan > 1e-15))])
    return rep, EXIT_OK


def cmd_oracle_check(problem: Problem, count: int, args, out: Path):
    rep = _base_report("oracle-check", args, problem)
    F = problem.F
    oracle = F.as_oracle() if isinstance(F, PiecewiseBilinearConstraint) else F
    rng = np.random.default_rng(subsystem_seeds(args.seed)["oracle-check"])
    t0 = time.perf_counter()
    res = check_subgradients(oracle, problem.X, problem.support, rng, count)
    rep["timings"]["check"] = time.perf_counter() - t0
    rep["check"] = res
    return rep, EXIT_OK if res["failures"] == 0 else EXIT_CHECK_FAILED


def _vector(text: str):
    return [float(v) for v in text.replace(" ", "").split(",") if v]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", type=Path, default=Path("drccp-out"))
    common.add_argument("--embed-samples", action="store_true", help="copy the samples into the report")
    common.add_argument("--no-figures", dest="figures", action="store_false", help="skip PNG rendering")

    prob = argparse.ArgumentParser(add_help=False)
    prob.add_argument("--problem", type=Path, required=True)
    prob.add_argument("--theta", type=float)
    prob.add_argument("--alpha", type=float)

    ap = argparse.ArgumentParser(prog="drccp", description="Wasserstein distributionally robust chance constraints")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    s = sub.add_parser("solve", parents=[common, prob])
    s.add_argument("--method", choices=METHODS, default="cvar-conic")
    c = sub.add_parser("certify", parents=[common, prob])
    c.add_argument("--x", type=_vector, required=True, help="comma-separated decision vector")
    m = sub.add_parser("compare", parents=[common, prob])
    m.add_argument("--candidates", type=int, default=1000)
    m.add_argument("--skip-cdcp", action="store_true", help="skip the conic and exact membership columns")
    w = sub.add_parser("wasserstein", parents=[common])
    w.add_argument("--a", type=Path, required=True)
    w.add_argument("--b", type=Path, required=True)
    w.add_argument("--p", type=int, choices=(1, 2), default=1)
    o = sub.add_parser("oracle-check", parents=[common, prob])
    o.add_argument("--count", type=int, default=100)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out: Path = args.out
    try:
        problem = None
        if hasattr(args, "problem"):
            problem = Problem.load(args.problem).with_overrides(args.theta, args.alpha)
        if args.command == "solve":
            rep, code = cmd_solve(problem, args.method, args, out)
        elif args.command == "certify":
            rep, code = cmd_certify(problem, args.x, args, out)
        elif args.command == "compare":
            if args.candidates < 0:
                raise ProblemError("--candidates must be nonnegative")
            rep, code = cmd_compare(problem, args.candidates, args, out)
        elif args.command == "wasserstein":
            rep, code = cmd_wasserstein(args, out)
        else:
            rep, code = cmd_oracle_check(problem, args.count, args, out)
    except ProblemError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (Incompatible, ReformulationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INCOMPATIBLE
    rep["exit_code"] = code
    atomic_write_json(out / "report.json", _jsonable(rep))
    print(_summary(rep))
    return code


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _summary(rep) -> str:
    cmd = rep["command"]
    if cmd == "solve":
        sol = rep.get("solution") or {}
        return f"{rep['method']}: status={rep.get('status')} objective={sol.get('objective')} x={sol.get('x')}"
    if cmd == "certify":
        return "certify: " + ", ".join(f"{k}={v}" for k, v in rep["verdicts"].items())
    if cmd == "compare":
        c = rep["comparison"]
        return (f"compare: candidates={c['candidates']} delta1={c['delta1']:.6g} delta2={c['delta2']:.6g} "
                f"violations={c['violation_count']}")
    if cmd == "wasserstein":
        return f"W_{rep['p']} = {rep['distance']:.12g}"
    return f"oracle-check: failures={rep['check']['failures']} of {rep['check']['points']}"


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
