"""Exact worst-case violation probabilities over the Wasserstein ball.

For fixed ``x`` the worst-case probability of ``F(x, xi) > 0`` equals

    min_{lam >= 0}  lam * theta^p + mean_i max(1 - lam * G_i, 0)

with ``G_i`` the d^p-distance from sample i to the violating set. The
objective is convex and piecewise linear in ``lam``, so it is minimized by
enumerating ``lam = 0`` and the breakpoints ``1 / G_i``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .constraints import PiecewiseBilinearConstraint, violation_distances
from .core import DEFAULT_TOLERANCES, Tolerances, empirical_cvar, pairwise_cost

ZERO_DISTANCE = 1e-12


class PreconditionError(ValueError):
    pass


@dataclass
class ExactCertificate:
    worst_case_probability: float
    lam: float
    breakpoints: list = field(default_factory=list)
    distances: np.ndarray | None = None
    approximate: bool = False
    resolution: float | None = None

    def to_dict(self) -> dict:
        dist = None
        if self.distances is not None:
            dist = [None if not np.isfinite(g) else float(g) for g in self.distances]
        return {
            "worst_case_probability": float(self.worst_case_probability),
            "lambda": float(self.lam),
            "breakpoints": [float(b) for b in self.breakpoints],
            "distances": dist,
            "approximate": bool(self.approximate),
            "resolution": self.resolution,
        }


def dual_worst_case(distances, theta: float, p: int = 1):
    """Minimize the breakpoint dual for given distances.

    Returns ``(value, lam_star, breakpoints)``. Ties go to the smaller ``lam``.
    Infinite distances contribute nothing; zero distances contribute ``1/N``.
    """
    G = np.asarray(distances, float).ravel()
    G = np.where(G < ZERO_DISTANCE, 0.0, G)
    n = G.size
    budget = theta ** p
    finite_pos = G[np.isfinite(G) & (G > 0)]
    breaks = np.unique(1.0 / finite_pos)
    lams = np.concatenate([[0.0], breaks])
    # an empty violating set makes every G infinite and every term zero
    violating = np.isfinite(G)
    terms = np.maximum(1.0 - lams[:, None] * np.where(violating, G, 0.0)[None, :], 0.0)
    terms = np.where(violating[None, :], terms, 0.0)
    vals = lams * budget + terms.sum(axis=1) / n
    j = int(np.argmin(vals))
    return float(min(max(vals[j], 0.0), 1.0)), float(lams[j]), breaks.tolist()


def _shifted(F, margin):
    """``F - margin`` so that only violations beyond ``margin`` count."""
    if margin == 0:
        return F
    if not isinstance(F, PiecewiseBilinearConstraint):
        raise ValueError("a violation margin needs a PiecewiseBilinearConstraint")
    return PiecewiseBilinearConstraint(F.a, F.A, F.d, F.e - margin)


def worst_case_violation(x, F, samples, theta: float, p: int = 1, support=None,
                         grid_resolution: float | None = None, grid=None, margin: float = 0.0) -> ExactCertificate:
    """Worst-case ``P(F(x, xi) > margin)`` over the ball of radius ``theta``.

    ``margin = feas_tol`` gives the loose verdict, which ignores violating
    regions created by round-off when ``sup F`` is zero at ``x``.
    """
    samples = np.atleast_2d(np.asarray(samples, float))
    if theta < 0:
        raise ValueError("theta must be nonnegative")
    F = _shifted(F, margin)
    if theta == 0:
        vals = F.values_at_samples(x, samples)
        return ExactCertificate(float(np.mean(vals > 0)), 0.0, [], None, False, None)
    dist = violation_distances(F, x, samples, p, support, grid_resolution, grid)
    value, lam, breaks = dual_worst_case(dist.values, theta, p)
    return ExactCertificate(value, lam, breaks, dist.values, dist.approximate, dist.resolution)


def membership_dcp(x, F, samples, theta, p, alpha, support=None, tol: Tolerances = DEFAULT_TOLERANCES,
                   **kw):
    """``(member, certificate)`` for the exact distributionally robust set."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    cert = worst_case_violation(x, F, samples, theta, p, support, **kw)
    return cert.worst_case_probability <= alpha + tol.feas_tol, cert


def cvar_form_value(x, F, samples, theta, p, alpha, support=None, **kw) -> float:
    """``theta^p / alpha + CVaR_{1-alpha}(-G)``; nonpositive exactly on members."""
    samples = np.atleast_2d(np.asarray(samples, float))
    dist = violation_distances(F, x, samples, p, support, kw.get("grid_resolution"), kw.get("grid"))
    G = np.where(dist.values < ZERO_DISTANCE, 0.0, dist.values)
    if not np.all(np.isfinite(G)):
        raise PreconditionError("the violating set is empty at x; the CVaR form is undefined")
    return theta ** p / alpha + empirical_cvar(-G, alpha)


def brute_force_worst_case(x, F, samples, theta: float, p: int, grid) -> float:
    """Worst-case violation over distributions supported on ``grid``.

    Solves the transport LP: each sample ships mass ``1/N`` to grid points
    with total cost ``sum gamma_ij ||g_j - xi_i||^p <= theta^p``, maximizing
    the mass landing on violating grid points.
    """
    samples = np.atleast_2d(np.asarray(samples, float))
    grid = np.atleast_2d(np.asarray(grid, float))
    if grid.shape[1] != samples.shape[1]:
        grid = grid.reshape(-1, samples.shape[1])
    for s in samples:
        if not np.any(np.all(np.abs(grid - s) <= 1e-12, axis=1)):
            raise ValueError("every sample must be a grid point")
    n, J = samples.shape[0], grid.shape[0]
    viol = (np.asarray(F(x, grid), float).reshape(-1) > 0) if hasattr(F, "piece_values") \
        else np.array([float(F(x, g)) > 0 for g in grid])
    if theta == 0:
        return float(np.mean(F.values_at_samples(x, samples) > 0))
    cost = pairwise_cost(samples, grid, p)
    c = -np.tile(viol.astype(float), n)
    a_eq = sparse.kron(sparse.eye(n), np.ones((1, J))).tocsr()
    b_eq = np.full(n, 1.0 / n)
    res = linprog(c, A_ub=cost.reshape(1, -1), b_ub=[theta ** p], A_eq=a_eq, b_eq=b_eq,
                  bounds=(0, None), method="highs",
                  options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10})
    if res.status != 0:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return float(-res.fun)


def grid_dual_worst_case(x, F, samples, theta: float, p: int, grid) -> float:
    """Breakpoint dual with distances restricted to ``grid``."""
    if theta == 0:
        return float(np.mean(F.values_at_samples(x, samples) > 0))
    dist = violation_distances(F, x, samples, p, grid=grid)
    return dual_worst_case(dist.values, theta, p)[0]
