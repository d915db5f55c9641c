"""Central cutting-surface method for the semi-infinite CVaR program

    min c^T x  s.t.  lam*theta^p + mean(s) <= t*alpha,
                     H_i(y, xi) := F(x, xi) + t - lam*d^p(xi, xi_i) - s_i <= 0
                     for all xi in Xi and every sample i,

over ``y = (x, t, lam, s)`` in a compact box. Each master problem is an LP
(F is a single bilinear piece, so H_i is affine in y for fixed xi) that
maximizes the centering improvement ``sigma``; a separation oracle either
returns a violated ``xi`` per sample or certifies the iterate.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass

import numpy as np

from . import conic
from .constraints import (CONCAVE, AFFINE, PiecewiseBilinearConstraint,
                          PolyhedralSupport, PolytopeX, UnboundedSetError, sup_negative_constraint)
from .core import DEFAULT_TOLERANCES, Tolerances
from .reformulate import DrccpSolution


class CuttingError(RuntimeError):
    pass


class AssumptionError(ValueError):
    """No point of X satisfies the constraint robustly over the support."""


@dataclass(frozen=True)
class Bounds:
    t_max: float
    lam_max: float
    s_max: float
    sup_neg_F: float
    exact: bool = True
    resolution: float | None = None

    def to_dict(self):
        f = lambda v: None if not np.isfinite(v) else float(v)
        return {"t_max": f(self.t_max), "lam_max": f(self.lam_max), "s_max": f(self.s_max),
                "sup_neg_F": f(self.sup_neg_F), "exact": self.exact, "resolution": self.resolution}


def compute_bounds(F, X: PolytopeX, support: PolyhedralSupport, alpha: float, theta: float, p: int = 1,
                   N: int = 1, grid_resolution: float = 0.05) -> Bounds:
    """Box for ``(t, lam, s)`` containing every optimal solution.

    ``t <= sup(-F) / (1 - alpha)``, ``lam <= alpha * t_max / theta^p`` and
    ``s_i <= alpha * N * t_max``.
    """
    if not X.is_bounded:
        raise UnboundedSetError("the cutting-surface method needs a bounded X")
    if not support.is_compact:
        raise UnboundedSetError("the cutting-surface method needs a compact support")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if 1 - alpha < 1e-12:
        raise ValueError("alpha too close to 1: t_max is unbounded (ill-posed)")
    sup = sup_negative_constraint(F, X, support, grid_resolution)
    if not sup.value > 0:
        raise AssumptionError(f"sup of -F over X x Xi is {sup.value:.6g}; no robustly feasible x exists")
    t_max = sup.value / (1 - alpha)
    lam_max = alpha * t_max / theta ** p if theta > 0 else np.inf
    return Bounds(t_max, lam_max, alpha * N * t_max, sup.value, sup.exact, sup.resolution)


@dataclass(frozen=True)
class BEstimate:
    value: float
    source: str
    max_norm: float = np.nan

    def __float__(self):
        return float(self.value)


def _dp(xi, xi_hat, p):
    r = np.linalg.norm(np.atleast_2d(xi) - xi_hat, axis=-1)
    return r ** p


def estimate_B(F, X: PolytopeX, support: PolyhedralSupport, samples, bounds: Bounds, p: int = 1,
               rng=None, count: int = 10_000, override: float | None = None) -> BEstimate:
    """Twice the largest sampled norm of the y-gradient of ``H_i``.

    The gradient is ``(d_x F(x, xi), 1, -d^p(xi, xi_i), -e_i)``; vertices of
    the support are added to the random draws.
    """
    if override is not None:
        if not override > 0:
            raise ValueError("B must be positive")
        return BEstimate(float(override), "override")
    rng = np.random.default_rng(0) if rng is None else rng
    samples = np.atleast_2d(np.asarray(samples, float)).reshape(-1, support.dim)
    xs = X.poly.sample(rng, count)
    xis = support.poly.sample(rng, count)
    try:
        xis = np.vstack([xis, support.poly.vertices])
        xs = np.vstack([xs, X.poly.sample(rng, xis.shape[0] - count)])
    except ValueError:
        pass
    if isinstance(F, PiecewiseBilinearConstraint):
        gx = F.subgrad_x(xs[0], xis) if F.K == 1 else np.array([F.subgrad_x(x, xi) for x, xi in zip(xs, xis)])
        if F.K == 1:
            gx = np.atleast_2d(gx)
    else:
        gx = np.array([np.asarray(F.subgrad_x(x, xi), float) for x, xi in zip(xs, xis)])
    gx2 = np.sum(gx * gx, axis=1)
    # distances to the farthest sample bound the d^p component for every i
    dmax = np.max(_dp(xis[:, None, :], samples[None, :, :], p), axis=1)
    norms = np.sqrt(gx2 + 2.0 + dmax ** 2)
    top = float(np.max(norms))
    return BEstimate(2.0 * top, "sampled", top)


@dataclass
class AlgoParams:
    eta: float = 1e-4
    B: float | None = None
    sigma_tol: float | None = None
    max_iter: int = 500
    starts: int = 16
    ascent_iters: int = 200
    grid_resolution: float = 0.02
    cut_tol: float = 1e-9
    polish_iter: int = 50
    separation: str = "auto"
    seed: int = 0

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.B is not None and not self.B > 0:
            raise ValueError("B must be positive")
        if self.sigma_tol is not None and not self.sigma_tol > 0:
            raise ValueError("sigma_tol must be positive")
        if not 0 < self.cut_tol <= self.eta:
            raise ValueError("cut_tol must lie in (0, eta]")


@dataclass
class Iterate:
    x: np.ndarray
    t: float
    lam: float
    s: np.ndarray

    def as_vector(self):
        return np.concatenate([self.x, [self.t, self.lam], self.s])


@dataclass
class CuttingState:
    k: int
    M: float
    cuts: list
    incumbent: Iterate | None = None
    sigma: float = np.inf

    @property
    def total_cuts(self) -> int:
        return sum(len(q) for q in self.cuts)


def H_value(F, y: Iterate, xi, xi_hat, i, p):
    return float(F(y.x, xi)) + y.t - y.lam * float(_dp(xi, xi_hat, p)[0]) - float(y.s[i])


def solve_master(state: CuttingState, c, X: PolytopeX, bounds: Bounds, B: float, alpha: float,
                 theta: float, p: int, F: PiecewiseBilinearConstraint, samples, tol=DEFAULT_TOLERANCES):
    """``max sigma`` over the current cuts; returns ``(Iterate, sigma)``."""
    samples = np.atleast_2d(samples)
    N = samples.shape[0]
    b = conic.ProgramBuilder()
    x = b.add_variables("x", F.n, X.poly.lb, X.poly.ub)
    X.add_to(b, x)
    t = b.add_variables("t", 1, 0.0, bounds.t_max)
    lam = b.add_variables("lam", 1, 0.0, bounds.lam_max)
    s = b.add_variables("s", N, 0.0, bounds.s_max)
    sig = b.add_variables("sigma", 1)
    b.set_objective(sig, [-1.0])
    c = np.asarray(c, float).ravel()
    b.add_le(np.concatenate([x, sig]), np.concatenate([c, [1.0]]), state.M)
    b.add_le(np.concatenate([lam, s, t]), np.concatenate([[theta ** p], np.full(N, 1.0 / N), [-alpha]]), 0.0)
    a, A, d, e = F.a[0], F.A[0], F.d[0], F.e[0]
    for i, Q in enumerate(state.cuts):
        for xi in Q:
            dist = float(_dp(xi, samples[i], p)[0])
            b.add_le(np.concatenate([x, t, lam, [s[i]], sig]),
                     np.concatenate([A @ xi + d, [1.0, -dist, -1.0, B]]),
                     -(a @ xi + e))
    prog = b.build()
    res = conic.solve(prog, tol)
    if not res.optimal:
        raise CuttingError(f"master problem ended with status {res.status}")
    y = Iterate(res.value(prog, "x"), float(res.value(prog, "t")[0]), float(res.value(prog, "lam")[0]),
                res.value(prog, "s"))
    return y, float(res.value(prog, "sigma")[0])


@dataclass(frozen=True)
class SeparationResult:
    point: np.ndarray | None
    value: float
    certificate: str


def _separate_exact(y, i, F, support, samples, p):
    """Maximize ``w^T xi - lam * ||xi - xi_i||^p`` over a polytope via one SOCP."""
    xi_hat = samples[i]
    w = F.slopes(y.x)[0]
    poly = support.poly
    if y.lam <= 0:
        _, xi = poly.maximize(w)
    else:
        b = conic.ProgramBuilder()
        v = b.add_variables("v", poly.dim, poly.lb, poly.ub)
        tau = b.add_variables("tau", 1, lb=0.0)
        b.set_objective(np.concatenate([v, tau]), np.concatenate([-w, [y.lam]]))
        b.add_le_rows(poly.A, v, poly.b)
        if p == 1:
            b.add_soc([([v[j]], [1.0], -xi_hat[j]) for j in range(poly.dim)], tau, [1.0])
        else:
            # ||v - xi_hat||^2 <= tau  as  ||(2(v - xi_hat), tau - 1)|| <= tau + 1
            rows = [([v[j]], [2.0], -2.0 * xi_hat[j]) for j in range(poly.dim)] + [(tau, [1.0], -1.0)]
            b.add_soc(rows, tau, [1.0], 1.0)
        prog = b.build()
        res = conic.solve(prog)
        if res.x is None:
            raise CuttingError(f"separation SOCP failed: {res.status}")
        xi = poly.project(res.value(prog, "v"))
    candidates = [np.asarray(xi, float), xi_hat]
    vals = [H_value(F, y, z, xi_hat, i, p) for z in candidates]
    j = int(np.argmax(vals))
    return candidates[j], vals[j]


def _phi_grad(F, y, xi, xi_hat, p):
    g = np.asarray(F.grad_xi(y.x, xi), float).reshape(-1)
    r = xi - xi_hat
    nr = np.linalg.norm(r)
    if p == 1:
        dg = r / nr if nr > 0 else np.zeros_like(r)
    else:
        dg = 2 * r
    return g - y.lam * dg


def _ascent(F, y, i, support, xi_hat, p, start, iters):
    z = support.poly.project(start)
    fz = H_value(F, y, z, xi_hat, i, p)
    step = 1.0
    for _ in range(iters):
        g = _phi_grad(F, y, z, xi_hat, p)
        if not np.any(g):
            break
        improved = False
        while step > 1e-10:
            cand = support.poly.project(z + step * g)
            fc = H_value(F, y, cand, xi_hat, i, p)
            if fc > fz + 1e-14:
                z, fz, improved = cand, fc, True
                step *= 2.0
                break
            step *= 0.5
        if not improved:
            break
    return z, fz


def separation_oracle(y: Iterate, i: int, F, support: PolyhedralSupport, samples, p: int = 1,
                      params: AlgoParams | None = None, rng=None) -> SeparationResult:
    """Look for ``xi`` with ``H_i(y, xi) > cut_tol``.

    A single bilinear piece on a polytope is handled exactly by one SOCP.
    Otherwise multi-start projected supergradient ascent is used, backed by a
    grid search when the support has dimension at most 3.
    """
    params = params or AlgoParams()
    samples = np.atleast_2d(np.asarray(samples, float)).reshape(-1, support.dim)
    xi_hat = samples[i]
    curvature = F.curvature_in_xi
    if curvature not in (AFFINE, CONCAVE):
        raise ValueError("separation needs a constraint concave in xi")
    if not support.is_compact:
        raise UnboundedSetError("separation needs a compact support")
    method = params.separation
    if method == "auto":
        method = "exact" if isinstance(F, PiecewiseBilinearConstraint) and F.K == 1 else "ascent"
    if method == "exact":
        xi, val = _separate_exact(y, i, F, support, samples, p)
        if val > params.cut_tol:
            return SeparationResult(xi, val, "exact")
        return SeparationResult(None, val, "exact")

    rng = np.random.default_rng(params.seed) if rng is None else rng
    starts = np.vstack([support.poly.sample(rng, params.starts), xi_hat[None]])
    best, best_val = None, -np.inf
    for st in starts:
        z, fz = _ascent(F, y, i, support, xi_hat, p, st, params.ascent_iters)
        if fz > best_val:
            best, best_val = z, fz
    if best_val > params.cut_tol:
        return SeparationResult(best, best_val, "ascent")
    if support.dim <= 3:
        grid = support.poly.grid(params.grid_resolution)
        vals = np.array([H_value(F, y, g, xi_hat, i, p) for g in grid])
        j = int(np.argmax(vals))
        if vals[j] > params.cut_tol:
            return SeparationResult(grid[j], float(vals[j]), "grid")
        return SeparationResult(None, max(best_val, float(vals[j])), "grid")
    return SeparationResult(None, best_val, "weak")


@dataclass
class CuttingResult:
    solution: DrccpSolution
    trace: list
    state: CuttingState
    bounds: Bounds
    B: BEstimate
    converged: bool

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "M", "sigma", "total_cuts", "wallclock", "step"])
        for r in self.trace:
            w.writerow([r["k"], repr(r["M"]), repr(r["sigma"]), r["total_cuts"], f"{r['wallclock']:.6f}", r["step"]])
        return buf.getvalue()


def run_cutting_surface(F, samples, theta: float, p: int, alpha: float, c, X: PolytopeX,
                        support: PolyhedralSupport, params: AlgoParams | None = None,
                        tol: Tolerances = DEFAULT_TOLERANCES) -> CuttingResult:
    """Central cutting-surface loop.

    Cuts are added while some sample has a violated ``xi`` (the incumbent
    stays); otherwise the master iterate becomes the incumbent and the
    objective bound ``M`` drops to its cost. Stops when ``sigma <= sigma_tol``.
    """
    params = params or AlgoParams(eta=tol.oracle_tol)
    if not isinstance(F, PiecewiseBilinearConstraint) or F.K != 1:
        raise ValueError("the cutting-surface master needs a single bilinear piece (K = 1)")
    if p not in (1, 2):
        raise ValueError("p must be 1 or 2")
    samples = np.atleast_2d(np.asarray(samples, float)).reshape(-1, F.m)
    support.check_samples(samples)
    N = samples.shape[0]
    c = np.asarray(c, float).ravel()
    rng = np.random.default_rng(params.seed)
    bounds = compute_bounds(F, X, support, alpha, theta, p, N)
    B = estimate_B(F, X, support, samples, bounds, p, rng, override=params.B)
    U, _ = X.maximize(c)
    sigma_tol = params.sigma_tol if params.sigma_tol is not None else 1e-6 * (1 + abs(U))
    state = CuttingState(0, float(U), [[] for _ in range(N)])
    trace = []
    t0 = time.perf_counter()
    converged = False
    def add_cuts(y, row):
        for i in range(N):
            sep = separation_oracle(y, i, F, support, samples, p, params, rng)
            if sep.point is None:
                continue
            if any(np.linalg.norm(q - sep.point) <= 1e-9 for q in state.cuts[i]):
                continue
            state.cuts[i].append(np.asarray(sep.point, float))
            row["cuts"].append((i, sep.point, sep.value))

    def close(row):
        row.update(M=state.M, total_cuts=state.total_cuts, wallclock=time.perf_counter() - t0)
        trace.append(row)

    for k in range(1, params.max_iter + 1):
        state.k = k
        y, sigma = solve_master(state, c, X, bounds, float(B), alpha, theta, p, F, samples, tol)
        state.sigma = sigma
        row = {"k": k, "M_prev": state.M, "sigma": sigma, "y": y, "cuts": []}
        if sigma <= sigma_tol:
            row["step"] = "stop"
            close(row)
            converged = True
            break
        add_cuts(y, row)
        if row["cuts"]:
            row["step"] = "cut"
        else:
            state.incumbent = y
            state.M = float(c @ y.x)
            row["step"] = "update"
        close(row)

    # Near a degenerate optimum sigma decays geometrically and the stop above
    # can leave a gap well above sigma_tol. Polish with plain cutting planes
    # (B = 0): the relaxed minimizer replaces the incumbent only if separation
    # finds no cut, so it is feasible and optimal over the true constraints.
    lower = None
    if converged and state.incumbent is not None and params.polish_iter > 0:
        last = min(params.max_iter, state.k + params.polish_iter)
        for k in range(state.k + 1, last + 1):
            state.k = k
            y, gap = solve_master(state, c, X, bounds, 0.0, alpha, theta, p, F, samples, tol)
            lower = state.M - gap
            row = {"k": k, "M_prev": state.M, "sigma": gap, "y": y, "cuts": []}
            add_cuts(y, row)
            if row["cuts"]:
                row["step"] = "polish-cut"
                close(row)
                continue
            if c @ y.x < state.M:
                state.incumbent = y
                state.M = float(c @ y.x)
            row["step"] = "polish"
            close(row)
            break

    if state.incumbent is None:
        if converged:
            raise CuttingError("no eta-feasible incumbent: the master stalled before any update")
        raise CuttingError(f"no incumbent after {params.max_iter} iterations")
    inc = state.incumbent
    flags = [] if converged else [f"not converged after {params.max_iter} iterations"]
    info = {"iterations": state.k, "total_cuts": state.total_cuts, "B": float(B), "B_source": B.source,
            "sigma_tol": sigma_tol, "bounds": bounds.to_dict(),
            "lower_bound": None if lower is None else float(lower)}
    sol = DrccpSolution(inc.x, inc.t, inc.lam, inc.s, float(c @ inc.x), "cutting",
                        conic.OPTIMAL if converged else conic.ITERATION_LIMIT, None, flags, info)
    return CuttingResult(sol, trace, state, bounds, B, converged)
