"""Conic CVaR reformulation of the DRCCP, its Lipschitz inner approximation,
scenario / sample-approximation baselines and the inclusion report linking
them.

Everything here uses p = 1 and the Euclidean ground metric. For a
piecewise-bilinear constraint with slopes ``w_k(x) = a_k + A_k^T x`` and
intercepts ``b_k(x) = d_k^T x + e_k`` the CVaR approximation reads

    lam * theta + mean(s) <= t * alpha
    s_i >= b_k(x) + t + (w_k(x) - C^T eta_ik)^T xi_i + h^T eta_ik,  s_i >= 0
    ||w_k(x) - C^T eta_ik|| <= lam,   eta_ik >= 0

where ``{C xi <= h}`` is the support. On free support the eta terms vanish.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import conic
from .constraints import (PiecewiseBilinearConstraint, PolyhedralSupport, PolytopeX,
                          lipschitz_xi_bound, sup_negative_constraint)
from .core import DEFAULT_TOLERANCES, Tolerances
from .exact import worst_case_violation
from .parallel import pmap

GROWTH_FLAG = "free-support: relies on the growth condition, F is unbounded on the support"
LAMBDA_ZERO_FLAG = "lambda*=0: strict positivity of lambda not enforced"


class ReformulationError(ValueError):
    pass


class FreeSupportWarning(UserWarning):
    pass


@dataclass
class DrccpSolution:
    x: np.ndarray | None
    t: float
    lam: float
    s: np.ndarray | None
    objective: float
    method: str
    status: str = conic.OPTIMAL
    eta: np.ndarray | None = None
    flags: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == conic.OPTIMAL

    def budget_slack(self, theta: float, alpha: float, p: int = 1) -> float:
        """``t*alpha - lam*theta^p - mean(s)``; nonnegative on feasible points."""
        return float(self.t * alpha - self.lam * theta ** p - np.mean(self.s))

    def to_dict(self) -> dict:
        def arr(v):
            return None if v is None else np.asarray(v, float).tolist()

        def num(v):
            return None if v is None or not np.isfinite(v) else float(v)

        return {"method": self.method, "status": self.status, "x": arr(self.x), "t": num(self.t),
                "lambda": num(self.lam), "s": arr(self.s), "objective": num(self.objective),
                "eta": arr(self.eta), "flags": list(self.flags), "info": self.info}


def _failed(method, res: conic.SolverResult, flags=()):
    return DrccpSolution(None, np.nan, np.nan, None, np.nan, method, res.status, None, list(flags),
                         {"backend": res.backend, "message": res.message})


def _check_inputs(F, theta, alpha, p):
    if not isinstance(F, PiecewiseBilinearConstraint):
        raise ReformulationError("conic reformulations need a PiecewiseBilinearConstraint")
    if p != 1:
        raise ReformulationError("the conic reformulation is only valid for p = 1")
    if theta < 0:
        raise ValueError("theta must be nonnegative")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")


class _XTerm:
    """Affine expressions in x, with x either a decision variable or frozen."""

    def __init__(self, cols=None, value=None):
        self.cols, self.value = cols, value

    def expr(self, coef, const=0.0):
        coef = np.asarray(coef, float)
        if self.cols is None:
            return np.zeros(0, int), np.zeros(0), float(const + coef @ self.value)
        return self.cols, coef, float(const)


def _cvar_program(F, samples, theta, alpha, support, c=None, X=None, x_fixed=None):
    samples = np.atleast_2d(np.asarray(samples, float)).reshape(-1, F.m)
    if support is not None:
        support.check_samples(samples)
    N = samples.shape[0]
    b = conic.ProgramBuilder()
    if x_fixed is None:
        xcols = b.add_variables("x", F.n, X.poly.lb, X.poly.ub)
        X.add_to(b, xcols)
        xt = _XTerm(cols=xcols)
    else:
        xt = _XTerm(value=np.asarray(x_fixed, float).ravel())
    t = b.add_variables("t", 1)
    lam = b.add_variables("lam", 1, lb=0.0)
    s = b.add_variables("s", N, lb=0.0)
    free = support is None or support.is_free
    if free:
        b.notes.append(GROWTH_FLAG)
    else:
        C, h = support.rows()
        eta = b.add_variables("eta", N * F.K * C.shape[0], lb=0.0).reshape(N, F.K, C.shape[0])

    # lam * theta + mean(s) - alpha * t <= 0
    budget_cols = np.concatenate([lam, s, t])
    budget_coefs = np.concatenate([[theta], np.full(N, 1.0 / N), [-alpha]])
    if x_fixed is None:
        b.add_le(budget_cols, budget_coefs, 0.0)
        b.set_objective(xcols, c)
    else:
        b.set_objective(budget_cols, budget_coefs)

    for k in range(F.K):
        a_k, A_k, d_k, e_k = F.a[k], F.A[k], F.d[k], F.e[k]
        if free:
            rows = [xt.expr(A_k[:, j], a_k[j]) for j in range(F.m)]
            b.add_soc(rows, lam, [1.0])
        for i, xi in enumerate(samples):
            xc, xv, const = xt.expr(A_k @ xi + d_k, a_k @ xi + e_k)
            if free:
                cols = np.concatenate([xc, t, [s[i]]])
                coefs = np.concatenate([xv, [1.0, -1.0]])
            else:
                e_ik = eta[i, k]
                cols = np.concatenate([xc, t, [s[i]], e_ik])
                coefs = np.concatenate([xv, [1.0, -1.0], h - C @ xi])
                rows = []
                for j in range(F.m):
                    xc_j, xv_j, const_j = xt.expr(A_k[:, j], a_k[j])
                    rows.append((np.concatenate([xc_j, e_ik]), np.concatenate([xv_j, -C[:, j]]), const_j))
                b.add_soc(rows, lam, [1.0])
            b.add_le(cols, coefs, -const)
    return b.build()


def build_cvar_drccp(F, samples, theta: float, alpha: float, support: PolyhedralSupport | None,
                     c, X: PolytopeX, p: int = 1) -> conic.ConicProgram:
    """Conic program ``min c^T x`` over the CVaR approximation of the DRCCP."""
    _check_inputs(F, theta, alpha, p)
    c = np.asarray(c, float).ravel()
    if c.size != F.n or X.n != F.n:
        raise ValueError("c, X and F disagree on the dimension of x")
    if support is None or support.is_free:
        warnings.warn(GROWTH_FLAG, FreeSupportWarning, stacklevel=2)
    return _cvar_program(F, samples, theta, alpha, support, c=c, X=X)


def _solution_from(prog, res, method, flags, with_eta=True):
    x = res.value(prog, "x") if "x" in prog.blocks else None
    lam = float(res.value(prog, "lam")[0])
    eta = None
    if with_eta and "eta" in prog.blocks:
        eta = np.maximum(res.value(prog, "eta"), 0.0)
    flags = list(flags) + list(prog.notes)
    if lam <= 1e-9:
        flags.append(LAMBDA_ZERO_FLAG)
    info = {"backend": res.backend, "iterations": res.iterations, "residuals": res.residuals}
    return DrccpSolution(x, float(res.value(prog, "t")[0]), lam, res.value(prog, "s"),
                         float(res.objective), method, res.status, eta, flags, info)


def solve_cvar_drccp(F, samples, theta, alpha, support, c, X, p: int = 1,
                     tol: Tolerances = DEFAULT_TOLERANCES, backend=None) -> DrccpSolution:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", FreeSupportWarning)
        prog = build_cvar_drccp(F, samples, theta, alpha, support, c, X, p)
    res = conic.solve(prog, tol, backend)
    if not res.optimal:
        return _failed("cvar-conic", res, prog.notes)
    sol = _solution_from(prog, res, "cvar-conic", [])
    if sol.eta is not None:
        N = np.atleast_2d(samples).reshape(-1, F.m).shape[0]
        sol.eta = sol.eta.reshape(N, F.K, -1)
    return sol


def cdcp_certificate(x, F, samples, theta, alpha, support=None, tol: Tolerances = DEFAULT_TOLERANCES,
                     backend=None) -> DrccpSolution:
    """Optimal ``(t, lam, s, eta)`` at frozen ``x``.

    Each ``s_i`` is pinned to ``max(0, sup_xi F(x, xi) + t - lam*||xi - xi_i||)``,
    unlike the full solve where slack in the budget leaves ``s`` loose.
    """
    _check_inputs(F, theta, alpha, 1)
    prog = _cvar_program(F, samples, theta, alpha, support, x_fixed=x)
    res = conic.solve(prog, tol, backend)
    if not res.optimal:
        raise ReformulationError(f"membership program ended with status {res.status}")
    sol = _solution_from(prog, res, "cdcp-membership", [])
    sol.x = np.asarray(x, float).ravel()
    return sol


def cdcp_value(x, F, samples, theta, alpha, support=None, tol: Tolerances = DEFAULT_TOLERANCES,
               backend=None) -> float:
    """``min_{t, lam, s} lam*theta + mean(s) - t*alpha`` at frozen ``x``.

    Equals ``alpha`` times the worst-case CVaR of ``F(x, xi)``; ``x`` belongs
    to the CVaR approximation iff the value is nonpositive.
    """
    return cdcp_certificate(x, F, samples, theta, alpha, support, tol, backend).objective


def membership_cdcp(x, F, samples, theta, alpha, support=None, tol: Tolerances = DEFAULT_TOLERANCES) -> bool:
    return cdcp_value(x, F, samples, theta, alpha, support, tol) <= tol.feas_tol


# -- Lipschitz inner approximation -----------------------------------------

def _hinge_min(values, alpha) -> float:
    """``inf_t mean((v + t)_+) - t*alpha`` by breakpoint enumeration."""
    v = np.asarray(values, float).ravel()
    ts = -np.unique(v)
    obj = np.maximum(v[None, :] + ts[:, None], 0.0).mean(axis=1) - ts * alpha
    return float(obj.min())


def _lipschitz(F, x, L_F):
    if L_F is None:
        return F.lipschitz_xi(x)
    return float(L_F(x)) if callable(L_F) else float(L_F)


def inner_value(x, F, L_F, samples, theta, alpha) -> float:
    """``theta * L_F(x) + inf_t mean((F(x, xi_i) + t)_+) - t*alpha``."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    vals = F.values_at_samples(x, np.atleast_2d(np.asarray(samples, float)).reshape(-1, F.m))
    return theta * _lipschitz(F, x, L_F) + _hinge_min(vals, alpha)


def membership_inner(x, F, L_F, samples, theta, alpha, tol: Tolerances = DEFAULT_TOLERANCES) -> bool:
    return inner_value(x, F, L_F, samples, theta, alpha) <= tol.feas_tol


def solve_inner_cdcp(F, samples, theta, alpha, c, X, p: int = 1, tol: Tolerances = DEFAULT_TOLERANCES,
                     backend=None) -> DrccpSolution:
    """``min c^T x`` s.t. ``theta*ell + mean(u) <= t*alpha``, ``u_i >= (F(x, xi_i) + t)_+``
    and ``ell >= ||a_k + A_k^T x||`` for every piece.
    ``ell`` is reported in the ``lam`` field and ``u`` in ``s``.
    """
    _check_inputs(F, theta, alpha, p)
    samples = np.atleast_2d(np.asarray(samples, float)).reshape(-1, F.m)
    N = samples.shape[0]
    b = conic.ProgramBuilder()
    x = b.add_variables("x", F.n, X.poly.lb, X.poly.ub)
    X.add_to(b, x)
    t = b.add_variables("t", 1)
    ell = b.add_variables("lam", 1, lb=0.0)
    u = b.add_variables("s", N, lb=0.0)
    b.set_objective(x, np.asarray(c, float).ravel())
    b.add_le(np.concatenate([ell, u, t]), np.concatenate([[theta], np.full(N, 1.0 / N), [-alpha]]), 0.0)
    for k in range(F.K):
        b.add_soc([(x, F.A[k][:, j], F.a[k, j]) for j in range(F.m)], ell, [1.0])
        for i, xi in enumerate(samples):
            b.add_le(np.concatenate([x, t, [u[i]]]),
                     np.concatenate([F.A[k] @ xi + F.d[k], [1.0, -1.0]]),
                     -(F.a[k] @ xi + F.e[k]))
    prog = b.build()
    res = conic.solve(prog, tol, backend)
    if not res.optimal:
        return _failed("inner", res)
    return _solution_from(prog, res, "inner", [])


# -- scenario and sample approximations --------------------------------------

def solve_scenario(F, samples, delta: float, c, X, tol: Tolerances = DEFAULT_TOLERANCES) -> DrccpSolution:
    """``min c^T x`` s.t. ``F(x, xi_i) + delta <= 0`` for every sample (an LP)."""
    if not isinstance(F, PiecewiseBilinearConstraint):
        raise ReformulationError("the scenario LP needs a PiecewiseBilinearConstraint")
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    samples = np.atleast_2d(np.asarray(samples, float)).reshape(-1, F.m)
    b = conic.ProgramBuilder()
    x = b.add_variables("x", F.n, X.poly.lb, X.poly.ub)
    X.add_to(b, x)
    b.set_objective(x, np.asarray(c, float).ravel())
    for k in range(F.K):
        for xi in samples:
            b.add_le(x, F.A[k] @ xi + F.d[k], -delta - F.e[k] - F.a[k] @ xi)
    prog = b.build()
    res = conic.solve(prog, tol)
    if not res.optimal:
        return _failed("scenario", res)
    xs = res.value(prog, "x")
    return DrccpSolution(xs, np.nan, np.nan, None, float(res.objective), "scenario", res.status, None,
                         [], {"backend": res.backend, "delta": float(delta)})


def _violations(x, F, samples):
    return F.values_at_samples(x, np.atleast_2d(np.asarray(samples, float)).reshape(-1, F.m))


def membership_scenario(x, F, samples, delta: float = 0.0, margin: float = 0.0) -> bool:
    return bool(np.all(_violations(x, F, samples) + delta <= margin))


def membership_sample_approx(x, F, samples, delta: float, margin: float = 0.0) -> bool:
    """At most a ``delta`` fraction of samples may have ``F > margin``."""
    if not 0 <= delta <= 1:
        raise ValueError("delta must lie in [0, 1]")
    ok = np.mean(_violations(x, F, samples) <= margin)
    return bool(ok >= 1 - delta - 1e-12)


@dataclass(frozen=True)
class ExPostThreshold:
    value: float
    active: tuple
    gamma: float
    degenerate: bool = False


def ex_post_threshold(x, F, samples, alpha, L_F, tol: Tolerances = DEFAULT_TOLERANCES) -> ExPostThreshold:
    """Largest radius for which a scenario-feasible ``x`` is guaranteed to
    stay in the inner approximation: ``(gamma / L)(alpha - |J|/N)``, clamped at 0.
    ``J`` holds the samples where the constraint is active within feas_tol and
    ``gamma`` is the smallest slack among the others.
    """
    vals = _violations(x, F, samples)
    if np.any(vals > tol.feas_tol):
        raise ValueError("x is not feasible for the scenario program")
    N = vals.size
    active = np.abs(vals) <= tol.feas_tol
    if active.all():
        return ExPostThreshold(0.0, tuple(range(N)), np.nan, True)
    gamma = float(np.min(-vals[~active]))
    L = _lipschitz(F, x, L_F)
    val = gamma / L * (alpha - active.sum() / N) if L > 0 else np.inf
    return ExPostThreshold(max(float(val), 0.0), tuple(np.flatnonzero(active).tolist()), gamma)


# -- inclusion report ---------------------------------------------------------

SETS = ("SCP_d2", "SCP_0", "SA_0", "SA_d1", "inner", "CDCP", "DCP")
RELATIONS = (
    ("SCP_d2", "inner"),
    ("inner", "SA_d1"),
    ("inner", "CDCP"),
    ("CDCP", "DCP"),
    ("SCP_d2", "SCP_0"),
    ("SCP_0", "SA_0"),
    ("SA_0", "SCP_0"),
    ("SA_0", "SA_d1"),
)


@dataclass
class ComparisonReport:
    theta: float
    alpha: float
    L_F: float
    t_star: float
    delta1: float
    delta2: float
    rows: list = field(default_factory=list)
    violations: list = field(default_factory=list)
    skipped: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def violation_count(self) -> int:
        return len(self.violations)

    def columns(self) -> list:
        n = len(self.rows[0]["x"]) if self.rows else 0
        return [f"x{j}" for j in range(n)] + list(SETS) + ["wc_prob", "ex_post_threshold"]

    def table(self) -> list:
        out = []
        for r in self.rows:
            row = [float(v) for v in r["x"]]
            for name in SETS:
                v = r["verdicts"].get(name)
                row.append("skipped" if v is None else int(v))
            row.append(r.get("wc_prob"))
            row.append(r.get("ex_post_threshold"))
            out.append(row)
        return out

    def to_dict(self) -> dict:
        return {"theta": self.theta, "alpha": self.alpha, "L_F": self.L_F,
                "t_star": None if not np.isfinite(self.t_star) else self.t_star,
                "delta1": self.delta1, "delta2": self.delta2,
                "violation_count": self.violation_count, "violations": self.violations,
                "skipped": self.skipped, "warnings": self.warnings, "candidates": len(self.rows)}


def _verdicts(x, F, samples, theta, alpha, support, L, d1, d2, tol, include_cdcp):
    """Strict and loose verdicts per set. ``strict`` clears the boundary by
    feas_tol, ``loose`` admits points up to feas_tol beyond it."""
    ft = tol.feas_tol
    vals = _violations(x, F, samples)
    out = {}

    def both(fn):
        return fn(-ft), fn(ft)

    out["SCP_d2"] = both(lambda m: bool(np.all(vals + d2 <= m)))
    out["SCP_0"] = both(lambda m: bool(np.all(vals <= m)))
    out["SA_0"] = both(lambda m: bool(np.mean(vals <= m) >= 1 - 1e-12))
    if d1 >= 0:
        out["SA_d1"] = both(lambda m: bool(np.mean(vals <= m) >= 1 - d1 - 1e-12))
    inner = theta * L + _hinge_min(vals, alpha)
    out["inner"] = (inner <= -ft, inner <= ft)
    extra = {"inner_value": inner}
    if include_cdcp:
        cv = cdcp_value(x, F, samples, theta, alpha, support, tol)
        out["CDCP"] = (cv <= -ft, cv <= ft)
        wc = worst_case_violation(x, F, samples, theta, 1, support).worst_case_probability
        out["DCP"] = (wc <= alpha - ft, wc <= alpha + ft)
        extra.update(cdcp_value=cv, wc_prob=wc)
    return out, extra, vals


def compare_sets(candidates, F, samples, theta, alpha, support=None, L_F=None, t_star=None, X=None,
                 tol: Tolerances = DEFAULT_TOLERANCES, include_cdcp: bool = True,
                 threads: int | None = None) -> ComparisonReport:
    """Evaluate every membership at each candidate and check the inclusions

        SCP_d2 <= inner <= SA_d1,  inner <= CDCP <= DCP,
        SCP_d2 <= SCP_0 = SA_0 <= SA_d1

    with ``d1 = alpha - theta*L/t*`` and ``d2 = theta*L/alpha``. A violation
    is a candidate strictly inside the smaller set but outside the larger one
    by more than feas_tol.
    """
    samples = np.atleast_2d(np.asarray(samples, float)).reshape(-1, F.m)
    if L_F is None:
        if X is None:
            raise ValueError("either L_F or X is needed")
        L_F = lipschitz_xi_bound(F, X)
    L = float(L_F)
    if t_star is None:
        if X is None:
            raise ValueError("either t_star or X is needed")
        t_star = sup_negative_constraint(F, X, support or PolyhedralSupport.free(F.m)).value
    t_star = float(t_star)
    d1 = alpha - theta * L / t_star if t_star > 0 else -np.inf
    d2 = theta * L / alpha
    report = ComparisonReport(float(theta), float(alpha), L, t_star, float(d1), float(d2))
    if d1 < 0:
        report.warnings.append(f"delta1 = {d1:.6g} < 0: theta too large, sample-approximation check skipped")

    def one(x):
        return _verdicts(np.asarray(x, float), F, samples, theta, alpha, support, L, d1, d2, tol, include_cdcp)

    results = pmap(one, list(candidates), threads)
    for idx, (x, (verdict, extra, vals)) in enumerate(zip(candidates, results)):
        row = {"x": np.asarray(x, float).tolist(),
               "verdicts": {k: v[1] for k, v in verdict.items()}, **extra}
        if verdict["SCP_0"][1]:
            try:
                row["ex_post_threshold"] = ex_post_threshold(x, F, samples, alpha, L, tol).value
            except ValueError:
                row["ex_post_threshold"] = None
        else:
            row["ex_post_threshold"] = None
        report.rows.append(row)
        for small, big in RELATIONS:
            if small not in verdict or big not in verdict:
                if idx == 0:
                    report.skipped.append(f"{small}<={big}")
                continue
            if verdict[small][0] and not verdict[big][1]:
                report.violations.append({"candidate": idx, "relation": f"{small}<={big}"})
    return report
