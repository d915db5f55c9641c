"""Constraint functions F(x, xi), the decision set X and the support set Xi.

The tractable class is :class:`PiecewiseBilinearConstraint`,

    F(x, xi) = max_k (a_k + A_k^T x)^T xi + d_k^T x + e_k,

which is convex in both arguments and affine in each when K = 1. Anything
else is wrapped in a :class:`ConstraintOracle` that exposes values and
(sub/super)gradients.
"""

from __future__ import annotations

import importlib
import itertools
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
from scipy.optimize import linprog

from . import conic

AFFINE, CONCAVE, CONVEX = "affine", "concave", "convex"


class EmptySetError(ValueError):
    pass


class UnboundedSetError(ValueError):
    pass


# -- polyhedra ---------------------------------------------------------------

class Polyhedron:
    """``{z : A z <= b, lb <= z <= ub}`` with cached LP queries."""

    def __init__(self, A, b, lb=None, ub=None, dim=None):
        A = np.asarray(A, float) if A is not None else None
        if dim is None:
            if A is not None and A.size:
                dim = A.shape[1]
            elif lb is not None:
                dim = np.asarray(lb, float).size
            else:
                raise ValueError("cannot infer the polyhedron dimension")
        self.dim = int(dim)
        self.A = np.zeros((0, dim)) if A is None or A.size == 0 else A.reshape(-1, dim)
        self.b = np.zeros(0) if b is None else np.asarray(b, float).ravel()
        if self.A.shape[0] != self.b.size:
            raise ValueError("row count of A and length of b differ")
        self.lb = np.full(dim, -np.inf) if lb is None else np.asarray(lb, float).ravel().copy()
        self.ub = np.full(dim, np.inf) if ub is None else np.asarray(ub, float).ravel().copy()
        if self.lb.size != dim or self.ub.size != dim:
            raise ValueError("box bounds have the wrong length")

    @property
    def is_box(self) -> bool:
        return self.A.shape[0] == 0

    def _bounds(self):
        return list(zip(np.where(np.isfinite(self.lb), self.lb, None),
                        np.where(np.isfinite(self.ub), self.ub, None)))

    def maximize(self, c):
        """Return ``(value, argmax)``; value is ``inf`` when unbounded, ``-inf`` when empty."""
        c = np.asarray(c, float)
        res = linprog(-c, A_ub=self.A if self.A.size else None, b_ub=self.b if self.b.size else None,
                      bounds=self._bounds(), method="highs")
        if res.status == 2:
            return -np.inf, None
        if res.status == 3:
            return np.inf, None
        if res.status != 0:
            raise RuntimeError(f"LP failed: {res.message}")
        return -float(res.fun), res.x

    @cached_property
    def is_empty(self) -> bool:
        if np.any(self.lb > self.ub):
            return True
        return self.maximize(np.zeros(self.dim))[0] == -np.inf

    @cached_property
    def bounding_box(self):
        lo, hi = np.empty(self.dim), np.empty(self.dim)
        for j in range(self.dim):
            e = np.zeros(self.dim)
            e[j] = 1.0
            hi[j] = self.maximize(e)[0]
            lo[j] = -self.maximize(-e)[0]
        return lo, hi

    @property
    def is_bounded(self) -> bool:
        lo, hi = self.bounding_box
        return bool(np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)))

    def contains(self, z, tol=1e-9) -> bool:
        z = np.asarray(z, float)
        if np.any(z < self.lb - tol) or np.any(z > self.ub + tol):
            return False
        return bool(np.all(self.A @ z <= self.b + tol))

    def contains_many(self, zs, tol=1e-9) -> np.ndarray:
        zs = np.atleast_2d(zs)
        ok = np.all(zs >= self.lb - tol, axis=1) & np.all(zs <= self.ub + tol, axis=1)
        if self.A.size:
            ok &= np.all(zs @ self.A.T <= self.b + tol, axis=1)
        return ok

    def all_rows(self):
        """Constraint rows including finite box bounds."""
        rows, rhs = [self.A], [self.b]
        eye = np.eye(self.dim)
        fin_u, fin_l = np.isfinite(self.ub), np.isfinite(self.lb)
        rows += [eye[fin_u], -eye[fin_l]]
        rhs += [self.ub[fin_u], -self.lb[fin_l]]
        return np.vstack(rows), np.concatenate(rhs)

    @cached_property
    def vertices(self) -> np.ndarray:
        """Vertex list by enumerating active sets (desk-scale dimensions only)."""
        if not self.is_bounded:
            raise UnboundedSetError("vertices of an unbounded polyhedron")
        if self.is_box:
            return np.array(list(itertools.product(*zip(self.lb, self.ub))), dtype=float)
        if self.dim > 8:
            raise ValueError("vertex enumeration is limited to dimension <= 8")
        G, h = self.all_rows()
        out = []
        for combo in itertools.combinations(range(G.shape[0]), self.dim):
            sub = G[list(combo)]
            if abs(np.linalg.det(sub)) < 1e-12:
                continue
            v = np.linalg.solve(sub, h[list(combo)])
            if np.all(G @ v <= h + 1e-9 * (1 + np.abs(h))):
                out.append(v)
        verts = np.unique(np.round(np.array(out), 10), axis=0)
        return verts

    def sample(self, rng, count: int) -> np.ndarray:
        """Uniform points by rejection from the bounding box."""
        lo, hi = self.bounding_box
        if not self.is_bounded:
            raise UnboundedSetError("cannot sample uniformly from an unbounded set")
        out, have = [], 0
        for _ in range(1000):
            batch = rng.uniform(lo, hi, size=(max(4 * (count - have), 16), self.dim))
            batch = batch[self.contains_many(batch, tol=0.0)]
            out.append(batch)
            have += len(batch)
            if have >= count:
                break
        pts = np.vstack(out)
        if len(pts) < count:
            raise RuntimeError("rejection sampling did not collect enough points")
        return pts[:count]

    def grid(self, resolution: float) -> np.ndarray:
        """Regular grid of spacing ``resolution`` over the set (bounded sets)."""
        lo, hi = self.bounding_box
        axes = [np.linspace(l, h, max(2, int(np.ceil((h - l) / resolution)) + 1)) for l, h in zip(lo, hi)]
        pts = np.array(np.meshgrid(*axes, indexing="ij")).reshape(self.dim, -1).T
        return pts[self.contains_many(pts)]

    def project(self, z) -> np.ndarray:
        """Euclidean projection; clipping for boxes, a small SOCP otherwise."""
        z = np.asarray(z, float)
        if self.is_box:
            return np.clip(z, self.lb, self.ub)
        if self.contains(z, tol=0.0):
            return z.copy()
        b = conic.ProgramBuilder()
        v = b.add_variables("v", self.dim, self.lb, self.ub)
        tau = b.add_variables("tau", 1)
        b.set_objective(tau, [1.0])
        b.add_le_rows(self.A, v, self.b)
        b.add_soc([([v[j]], [1.0], -z[j]) for j in range(self.dim)], tau, [1.0])
        prog = b.build()
        res = conic.solve(prog)
        if res.x is None:
            raise RuntimeError(f"projection failed: {res.status}")
        return np.clip(res.value(prog, "v"), self.lb, self.ub)


@dataclass(frozen=True, eq=False)
class PolytopeX:
    """Decision set ``X = {x : D x <= g}`` with optional per-coordinate box."""

    D: np.ndarray
    g: np.ndarray
    lb: np.ndarray = None
    ub: np.ndarray = None
    poly: Polyhedron = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        dim = None
        if self.D is None or np.asarray(self.D).size == 0:
            if self.lb is None and self.ub is None:
                raise ValueError("X needs rows or box bounds to fix its dimension")
            dim = np.asarray(self.lb if self.lb is not None else self.ub).size
        poly = Polyhedron(self.D, self.g, self.lb, self.ub, dim=dim)
        if poly.is_empty:
            raise EmptySetError("X is empty")
        object.__setattr__(self, "poly", poly)

    @classmethod
    def box(cls, lb, ub):
        lb, ub = np.atleast_1d(np.asarray(lb, float)), np.atleast_1d(np.asarray(ub, float))
        return cls(None, None, lb, ub)

    @property
    def n(self) -> int:
        return self.poly.dim

    @property
    def is_bounded(self) -> bool:
        return self.poly.is_bounded

    def require_bounded(self):
        if not self.is_bounded:
            raise UnboundedSetError("X must be bounded here")

    def contains(self, x, tol=1e-9) -> bool:
        return self.poly.contains(x, tol)

    def maximize(self, c):
        return self.poly.maximize(c)

    def minimize(self, c):
        val, arg = self.poly.maximize(-np.asarray(c, float))
        return -val, arg

    def add_to(self, builder: conic.ProgramBuilder, cols):
        """Write ``D x <= g`` into ``builder``; box bounds go on the variables."""
        builder.add_le_rows(self.poly.A, cols, self.poly.b)

    def to_dict(self) -> dict:
        box = None
        if np.any(np.isfinite(self.poly.lb)) or np.any(np.isfinite(self.poly.ub)):
            box = [[_num(l), _num(u)] for l, u in zip(self.poly.lb, self.poly.ub)]
        return {"D": self.poly.A.tolist(), "g": self.poly.b.tolist(), "box": box}

    @classmethod
    def from_dict(cls, doc: dict) -> "PolytopeX":
        box = doc.get("box")
        lb = ub = None
        if box is not None:
            box = np.array([[_unnum(v) for v in pair] for pair in box], float)
            lb, ub = box[:, 0], box[:, 1]
        D = doc.get("D")
        return cls(np.asarray(D, float) if D else None, np.asarray(doc.get("g") or [], float), lb, ub)


@dataclass(frozen=True, eq=False)
class PolyhedralSupport:
    """Support set of the uncertainty: all of R^m, or ``{xi : C xi <= h}``."""

    kind: str
    dim: int
    C: np.ndarray = None
    h: np.ndarray = None
    lb: np.ndarray = None
    ub: np.ndarray = None
    poly: Polyhedron = field(init=False, repr=False, compare=False, default=None)

    def __post_init__(self):
        if self.kind not in ("free", "polytope"):
            raise ValueError(f"unknown support kind {self.kind!r}")
        if self.kind == "polytope":
            poly = Polyhedron(self.C, self.h, self.lb, self.ub, dim=self.dim)
            if poly.is_empty:
                raise EmptySetError("support set is empty")
            object.__setattr__(self, "poly", poly)

    @classmethod
    def free(cls, dim: int):
        return cls("free", int(dim))

    @classmethod
    def polytope(cls, C, h):
        C = np.atleast_2d(np.asarray(C, float))
        return cls("polytope", C.shape[1], C, np.asarray(h, float).ravel())

    @classmethod
    def box(cls, lb, ub):
        lb, ub = np.atleast_1d(np.asarray(lb, float)), np.atleast_1d(np.asarray(ub, float))
        return cls("polytope", lb.size, None, None, lb, ub)

    @property
    def is_free(self) -> bool:
        return self.kind == "free"

    @property
    def is_compact(self) -> bool:
        return not self.is_free and self.poly.is_bounded

    def rows(self):
        """``(C, h)`` including box bounds, for dual reformulations."""
        if self.is_free:
            return np.zeros((0, self.dim)), np.zeros(0)
        return self.poly.all_rows()

    def contains(self, xi, tol=1e-9) -> bool:
        return True if self.is_free else self.poly.contains(xi, tol)

    def check_samples(self, samples, tol=1e-9):
        """Raise ValueError unless every sample lies in the support."""
        if self.is_free:
            return
        bad = np.flatnonzero(~self.poly.contains_many(samples, tol))
        if bad.size:
            raise ValueError(f"samples {bad.tolist()} lie outside the support")

    def to_dict(self):
        if self.is_free:
            return "free"
        C, h = self.rows()
        return {"C": C.tolist(), "h": h.tolist()}

    @classmethod
    def from_dict(cls, doc, dim: int):
        if doc is None or doc == "free":
            return cls.free(dim)
        if "box" in doc:
            box = np.asarray(doc["box"], float)
            return cls.box(box[:, 0], box[:, 1])
        return cls.polytope(doc["C"], doc["h"])


def _num(v):
    return float(v) if np.isfinite(v) else None


def _unnum(v):
    return np.nan if v is None else float(v)


# -- constraint functions ----------------------------------------------------

@dataclass(frozen=True, eq=False)
class Piece:
    a: np.ndarray
    A: np.ndarray
    d: np.ndarray
    e: float


class PiecewiseBilinearConstraint:
    """``F(x, xi) = max_k (a_k + A_k^T x)^T xi + d_k^T x + e_k``.

    ``a`` has shape (K, m), ``A`` (K, n, m), ``d`` (K, n) and ``e`` (K,).
    """

    def __init__(self, a, A, d, e):
        a = np.atleast_2d(np.asarray(a, float))
        A = np.asarray(A, float)
        if A.ndim == 2:
            A = A[None]
        d = np.atleast_2d(np.asarray(d, float))
        e = np.atleast_1d(np.asarray(e, float))
        K = a.shape[0]
        if K < 1:
            raise ValueError("need at least one piece")
        if A.shape[0] != K or d.shape[0] != K or e.size != K:
            raise ValueError("piece counts differ across a, A, d, e")
        if A.shape[1:] != (d.shape[1], a.shape[1]):
            raise ValueError(f"A has shape {A.shape[1:]}, expected {(d.shape[1], a.shape[1])}")
        self.a, self.A, self.d, self.e = a, A, d, e
        for arr in (a, A, d, e):
            arr.setflags(write=False)

    @classmethod
    def from_pieces(cls, pieces):
        return cls([p.a for p in pieces], [p.A for p in pieces], [p.d for p in pieces], [p.e for p in pieces])

    @classmethod
    def affine(cls, a, A, d, e):
        """Single piece (K = 1)."""
        a = np.atleast_1d(np.asarray(a, float))
        d = np.atleast_1d(np.asarray(d, float))
        A = np.asarray(A, float).reshape(d.size, a.size)
        return cls(a[None], A[None], d[None], [float(e)])

    @property
    def K(self) -> int:
        return self.a.shape[0]

    @property
    def n(self) -> int:
        return self.d.shape[1]

    @property
    def m(self) -> int:
        return self.a.shape[1]

    @property
    def curvature_in_xi(self) -> str:
        return AFFINE if self.K == 1 else CONVEX

    @property
    def pieces(self):
        return [Piece(self.a[k], self.A[k], self.d[k], float(self.e[k])) for k in range(self.K)]

    def _check(self, x, xi=None):
        x = np.asarray(x, float).ravel()
        if x.size != self.n:
            raise ValueError(f"x has dimension {x.size}, expected {self.n}")
        if xi is None:
            return x
        xi = np.atleast_1d(np.asarray(xi, float))
        if xi.shape[-1] != self.m:
            if self.m == 1:
                xi = xi[..., None]
            else:
                raise ValueError(f"xi has dimension {xi.shape[-1]}, expected {self.m}")
        return x, xi

    def slopes(self, x) -> np.ndarray:
        """Rows ``a_k + A_k^T x`` (shape K x m)."""
        x = self._check(x)
        return self.a + np.einsum("knm,n->km", self.A, x)

    def intercepts(self, x) -> np.ndarray:
        x = self._check(x)
        return self.d @ x + self.e

    def piece_values(self, x, xi) -> np.ndarray:
        x, xi = self._check(x, xi)
        return xi @ self.slopes(x).T + self.intercepts(x)

    def __call__(self, x, xi):
        return self.piece_values(x, xi).max(axis=-1)

    def grad_xi(self, x, xi):
        k = np.argmax(self.piece_values(x, xi), axis=-1)
        return self.slopes(x)[k]

    def subgrad_x(self, x, xi):
        x, xi = self._check(x, xi)
        k = np.argmax(self.piece_values(x, xi), axis=-1)
        return np.einsum("...nm,...m->...n", self.A[k], xi) + self.d[k]

    def values_at_samples(self, x, samples) -> np.ndarray:
        return np.asarray(self(x, samples), float).reshape(-1)

    def lipschitz_xi(self, x) -> float:
        """Lipschitz constant of ``xi -> F(x, xi)`` on R^m at fixed ``x``."""
        return float(np.max(np.linalg.norm(self.slopes(x), axis=1)))

    def as_oracle(self) -> "ConstraintOracle":
        return ConstraintOracle(self.__call__, self.subgrad_x, self.grad_xi, self.n, self.m,
                                self.curvature_in_xi, lipschitz=self.lipschitz_xi, name="bilinear")

    def to_dict(self) -> dict:
        return {"pieces": [{"a": p.a.tolist(), "A": p.A.tolist(), "d": p.d.tolist(), "e": p.e}
                           for p in self.pieces]}

    @classmethod
    def from_dict(cls, doc) -> "PiecewiseBilinearConstraint":
        pieces = doc["pieces"] if isinstance(doc, dict) else doc
        a = [np.atleast_1d(np.asarray(p["a"], float)) for p in pieces]
        d = [np.atleast_1d(np.asarray(p["d"], float)) for p in pieces]
        A = [np.asarray(p["A"], float).reshape(dk.size, ak.size) for p, ak, dk in zip(pieces, a, d)]
        return cls(a, A, d, [float(p["e"]) for p in pieces])

    def __repr__(self):
        return f"PiecewiseBilinearConstraint(K={self.K}, n={self.n}, m={self.m})"


@dataclass(frozen=True)
class ConstraintOracle:
    """Black-box constraint with derivative access.

    ``grad_xi`` is a supergradient when ``curvature`` is concave.
    ``lipschitz`` is either a constant or a callable ``x -> L_F(x)``.
    Callables must be pure; they are invoked from worker threads.
    """

    eval: Callable
    subgrad_x: Callable
    grad_xi: Callable
    n: int
    m: int
    curvature: str = CONCAVE
    convex_in_x: bool = True
    lipschitz: object = None
    name: str = "oracle"

    def __post_init__(self):
        if not self.convex_in_x:
            raise ValueError("constraint oracles must be convex in x")
        if self.curvature not in (AFFINE, CONCAVE, CONVEX):
            raise ValueError(f"unknown curvature {self.curvature!r}")

    @property
    def curvature_in_xi(self) -> str:
        return self.curvature

    def __call__(self, x, xi):
        return self.eval(np.asarray(x, float), np.asarray(xi, float))

    def values_at_samples(self, x, samples) -> np.ndarray:
        return np.array([float(self(x, s)) for s in np.atleast_2d(samples)])

    def lipschitz_xi(self, x) -> float:
        if self.lipschitz is None:
            raise ValueError(f"oracle {self.name!r} declares no Lipschitz bound")
        return float(self.lipschitz(x)) if callable(self.lipschitz) else float(self.lipschitz)


def evaluate(F, x, xi) -> float:
    return float(np.asarray(F(x, xi)).reshape(()))


def lipschitz_xi_bound(F: PiecewiseBilinearConstraint, X: PolytopeX) -> float:
    """Upper bound on ``max_k sup_{x in X} ||a_k + A_k^T x||``.

    Each coordinate of ``A_k^T x`` is bounded by two LPs over X and the norm
    of the resulting interval hull is returned.
    """
    if not X.is_bounded:
        raise UnboundedSetError("lipschitz_xi_bound needs a bounded X")
    best = 0.0
    for k in range(F.K):
        sq = 0.0
        for j in range(F.m):
            col = F.A[k][:, j]
            hi = X.maximize(col)[0] + F.a[k, j]
            lo = -X.maximize(-col)[0] + F.a[k, j]
            sq += max(lo * lo, hi * hi)
        best = max(best, np.sqrt(sq))
    return float(best)


@dataclass(frozen=True)
class SupBound:
    """``sup_{X x Xi} -F`` (or an upper bound on it) with provenance."""

    value: float
    exact: bool
    resolution: float | None = None


def sup_negative_constraint(F, X: PolytopeX, support: PolyhedralSupport,
                            grid_resolution: float = 0.1) -> SupBound:
    """``sup_{x in X, xi in Xi} -F(x, xi)``.

    Piecewise-bilinear F: each piece is bilinear, so its supremum over the
    product of polytopes sits at a vertex of Xi; for every vertex an LP over
    X is solved. With K > 1 the minimum over pieces is an upper bound.
    Oracles use a dense grid over both sets (a lower estimate, flagged).
    """
    if isinstance(F, PiecewiseBilinearConstraint):
        if support.is_free:
            best = np.inf
            for k in range(F.K):
                if np.any(F.a[k]) or np.any(F.A[k]):
                    continue
                best = min(best, X.maximize(-F.d[k])[0] - F.e[k])
            return SupBound(float(best), F.K == 1 or not np.isfinite(best))
        verts = support.poly.vertices
        best = np.inf
        for k in range(F.K):
            top = -np.inf
            for v in verts:
                # -F_k(x, v) = -(A_k v + d_k)^T x - a_k^T v - e_k
                val, _ = X.maximize(-(F.A[k] @ v + F.d[k]))
                top = max(top, val - F.a[k] @ v - F.e[k])
            best = min(best, top)
        return SupBound(float(best), F.K == 1)
    X.require_bounded()
    if not support.is_compact:
        raise UnboundedSetError("oracle constraints need a compact support for this bound")
    xs, xis = X.poly.grid(grid_resolution), support.poly.grid(grid_resolution)
    best = max(-float(F(x, xi)) for x in xs for xi in xis)
    return SupBound(best, False, grid_resolution)


# -- distance to the violating set -------------------------------------------

def _halfspace_distance(w, c0, xi_hat, p):
    """d^p from ``xi_hat`` to ``{xi : w^T xi + c0 >= 0}``; inf if the open set is empty."""
    nw = np.linalg.norm(w)
    if nw == 0.0:
        return 0.0 if c0 > 0 else np.inf
    return (max(-(w @ xi_hat + c0), 0.0) / nw) ** p


def _polytope_piece_distance(poly: Polyhedron, w, c0, xi_hat, p):
    top, _ = poly.maximize(w)
    if not top + c0 > 0:
        return np.inf
    if w @ xi_hat + c0 >= 0 and poly.contains(xi_hat, tol=0.0):
        return 0.0
    b = conic.ProgramBuilder()
    v = b.add_variables("v", poly.dim, poly.lb, poly.ub)
    tau = b.add_variables("tau", 1, lb=0.0)
    b.set_objective(tau, [1.0])
    b.add_le_rows(poly.A, v, poly.b)
    b.add_le(v, -w, c0)
    b.add_soc([([v[j]], [1.0], -xi_hat[j]) for j in range(poly.dim)], tau, [1.0])
    prog = b.build()
    res = conic.solve(prog)
    if not res.optimal:
        raise RuntimeError(f"distance SOCP failed: {res.status}")
    return float(res.x[tau[0]]) ** p


def distance_to_violation(F, x, xi_hat, p: int = 1, support: PolyhedralSupport | None = None,
                          grid: np.ndarray | None = None) -> float:
    """``G(x, xi_hat) = inf { ||xi - xi_hat||^p : xi in support, F(x, xi) > 0 }``.

    Returns ``inf`` when no point of the support violates. Piecewise-bilinear
    constraints are handled exactly (closed form on free support, one SOCP
    per piece on a polytope). Other constraints, or an explicit ``grid``,
    use the minimum over violating grid points.
    """
    xi_hat = np.atleast_1d(np.asarray(xi_hat, float))
    if grid is not None or not isinstance(F, PiecewiseBilinearConstraint):
        if grid is None:
            raise ValueError("a grid is required for constraints without closed-form distances")
        return grid_distance_to_violation(F, x, xi_hat, p, grid)
    W, c = F.slopes(x), F.intercepts(x)
    if support is None or support.is_free:
        return float(min(_halfspace_distance(W[k], c[k], xi_hat, p) for k in range(F.K)))
    return float(min(_polytope_piece_distance(support.poly, W[k], c[k], xi_hat, p) for k in range(F.K)))


def grid_distance_to_violation(F, x, xi_hat, p, grid) -> float:
    grid = np.atleast_2d(np.asarray(grid, float))
    if grid.shape[1] != np.size(xi_hat):
        grid = grid.reshape(-1, np.size(xi_hat))
    vals = np.asarray(F(x, grid), float).reshape(-1) if isinstance(F, PiecewiseBilinearConstraint) \
        else np.array([float(F(x, g)) for g in grid])
    bad = grid[vals > 0]
    if bad.size == 0:
        return np.inf
    return float(np.min(np.linalg.norm(bad - xi_hat, axis=1) ** p))


def support_grid(support: PolyhedralSupport, resolution: float, samples=None, radius: float = 5.0):
    """Grid over the support. Free supports use the sample hull padded by ``radius``."""
    if support.is_compact:
        return support.poly.grid(resolution)
    samples = np.atleast_2d(samples)
    lo, hi = samples.min(axis=0) - radius, samples.max(axis=0) + radius
    return Polyhedron(None, None, lo, hi, dim=lo.size).grid(resolution)


@dataclass(frozen=True)
class ViolationDistances:
    values: np.ndarray
    resolution: float | None = None

    @property
    def approximate(self) -> bool:
        return self.resolution is not None


def violation_distances(F, x, samples, p=1, support=None, grid_resolution: float | None = None,
                        grid=None) -> ViolationDistances:
    """``G(x, xi_i)`` for every sample, flagged approximate when a grid was used."""
    samples = np.atleast_2d(np.asarray(samples, float))
    if samples.shape[1] != (F.m if hasattr(F, "m") else samples.shape[1]):
        samples = samples.reshape(-1, F.m)
    use_grid = grid is not None or grid_resolution is not None or not isinstance(F, PiecewiseBilinearConstraint)
    if use_grid:
        if grid is None:
            if grid_resolution is None:
                raise ValueError("grid_resolution is required for oracle constraints")
            grid = support_grid(support or PolyhedralSupport.free(samples.shape[1]), grid_resolution, samples)
        res = grid_resolution
        vals = np.array([grid_distance_to_violation(F, x, s, p, grid) for s in samples])
        return ViolationDistances(vals, res if res is not None else np.nan)
    vals = np.array([distance_to_violation(F, x, s, p, support) for s in samples])
    return ViolationDistances(vals, None)


# -- derivative checks ------------------------------------------------------

def check_subgradients(oracle: ConstraintOracle, X: PolytopeX, support: PolyhedralSupport, rng,
                       count: int = 100, step: float = 1e-6, rtol: float = 1e-4, atol: float = 1e-6,
                       xi_box=None) -> dict:
    """Compare reported derivatives with central finite differences.

    Points are drawn uniformly from X and from the support (or ``xi_box``
    when the support is free). Returns counts and the worst relative error.
    """
    xs = X.poly.sample(rng, count)
    if support.is_compact:
        xis = support.poly.sample(rng, count)
    else:
        lo, hi = xi_box if xi_box is not None else (-np.ones(oracle.m) * 3, np.ones(oracle.m) * 3)
        xis = rng.uniform(lo, hi, size=(count, oracle.m))
    worst, failures = 0.0, 0
    for x, xi in zip(xs, xis):
        gx = np.asarray(oracle.subgrad_x(x, xi), float).ravel()
        gxi = np.asarray(oracle.grad_xi(x, xi), float).ravel()
        fd_x = np.array([(oracle(x + step * e, xi) - oracle(x - step * e, xi)) / (2 * step)
                         for e in np.eye(oracle.n)], float).ravel()
        fd_xi = np.array([(oracle(x, xi + step * e) - oracle(x, xi - step * e)) / (2 * step)
                          for e in np.eye(oracle.m)], float).ravel()
        ref = np.concatenate([fd_x, fd_xi])
        got = np.concatenate([gx, gxi])
        err = np.abs(got - ref)
        rel = float(np.max(err / np.maximum(np.abs(ref), atol / rtol)))
        worst = max(worst, rel)
        if np.any(err > rtol * np.abs(ref) + atol):
            failures += 1
    return {"points": int(count), "failures": failures, "max_relative_error": worst,
            "step": step, "rtol": rtol}


# -- oracle registry ---------------------------------------------------------

def concave_quadratic_oracle(a, A, d, e, kappa=1.0, center=None) -> ConstraintOracle:
    """``F = (a + A^T x)^T xi - kappa/2 ||xi - center||^2 + d^T x + e``, concave in xi."""
    a = np.atleast_1d(np.asarray(a, float))
    d = np.atleast_1d(np.asarray(d, float))
    A = np.asarray(A, float).reshape(d.size, a.size)
    center = np.zeros(a.size) if center is None else np.asarray(center, float)

    def f(x, xi):
        r = xi - center
        return float((a + A.T @ x) @ xi - 0.5 * kappa * r @ r + d @ x + e)

    def gx(x, xi):
        return A @ xi + d

    def gxi(x, xi):
        return a + A.T @ x - kappa * (xi - center)

    return ConstraintOracle(f, gx, gxi, d.size, a.size, CONCAVE, name="concave-quadratic")


def log_sum_exp_oracle(W, B, e=0.0) -> ConstraintOracle:
    """``F = log sum_j exp(w_j^T xi + b_j^T x) + e``, convex in both arguments.

    The Lipschitz constant in xi is ``max_j ||w_j||``.
    """
    W = np.atleast_2d(np.asarray(W, float))
    B = np.atleast_2d(np.asarray(B, float))

    def parts(x, xi):
        z = W @ xi + B @ x
        zmax = z.max()
        w = np.exp(z - zmax)
        return z, zmax, w / w.sum()

    def f(x, xi):
        z, zmax, _ = parts(x, xi)
        return float(zmax + np.log(np.exp(z - zmax).sum()) + e)

    def gx(x, xi):
        return B.T @ parts(x, xi)[2]

    def gxi(x, xi):
        return W.T @ parts(x, xi)[2]

    lip = float(np.max(np.linalg.norm(W, axis=1)))
    return ConstraintOracle(f, gx, gxi, B.shape[1], W.shape[1], CONVEX, lipschitz=lip, name="log-sum-exp")


ORACLES = {
    "concave-quadratic": concave_quadratic_oracle,
    "log-sum-exp": log_sum_exp_oracle,
}


def load_oracle(spec: dict) -> ConstraintOracle:
    """Build an oracle from ``{"id": name, "params": {...}}``.

    ``id`` is a registry key or ``"package.module:factory"``.
    """
    ident = spec["id"]
    params = spec.get("params", {})
    if ident in ORACLES:
        factory = ORACLES[ident]
    elif ":" in ident:
        mod, _, attr = ident.partition(":")
        factory = getattr(importlib.import_module(mod), attr)
    else:
        raise KeyError(f"unknown oracle {ident!r}")
    return factory(**params)
