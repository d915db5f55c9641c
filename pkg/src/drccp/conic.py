"""Solver-agnostic conic programs (linear rows plus second-order cones).

A :class:`ConicProgram` is

    minimize    c @ z + offset
    subject to  A_eq @ z == b_eq
                A_ub @ z <= b_ub
                ||M_j @ z + q_j|| <= r_j @ z + s_j     for every cone block j
                lb <= z <= ub

Programs are assembled with :class:`ProgramBuilder` and solved by
:func:`solve`, which dispatches to HiGHS (pure LPs), Clarabel, or the
dense CVXOPT interior-point method.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .core import DEFAULT_TOLERANCES, Tolerances

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration_limit"
NUMERICAL_ERROR = "numerical_error"


class ProgramError(ValueError):
    """Malformed conic program."""


@dataclass(frozen=True)
class SOCBlock:
    M: sparse.csr_matrix
    q: np.ndarray
    r: np.ndarray
    s: float

    @property
    def size(self):
        return self.M.shape[0] + 1


@dataclass(frozen=True)
class ConicProgram:
    c: np.ndarray
    A_eq: sparse.csr_matrix
    b_eq: np.ndarray
    A_ub: sparse.csr_matrix
    b_ub: np.ndarray
    cones: tuple = ()
    lb: np.ndarray = None
    ub: np.ndarray = None
    offset: float = 0.0
    blocks: dict = field(default_factory=dict)
    notes: tuple = ()

    def __post_init__(self):
        n = self.c.size
        if n < 1:
            raise ProgramError("a program needs at least one variable")
        for name in ("A_eq", "A_ub"):
            if getattr(self, name).shape[1] != n:
                raise ProgramError(f"{name} has {getattr(self, name).shape[1]} columns, expected {n}")
        if self.A_eq.shape[0] != self.b_eq.size or self.A_ub.shape[0] != self.b_ub.size:
            raise ProgramError("row count and right-hand side length differ")
        for cone in self.cones:
            if cone.M.shape[1] != n or cone.r.size != n or cone.q.size != cone.M.shape[0]:
                raise ProgramError("cone block dimensions are inconsistent")
        lb = np.full(n, -np.inf) if self.lb is None else np.asarray(self.lb, float)
        ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, float)
        if lb.size != n or ub.size != n:
            raise ProgramError("bound vectors have the wrong length")
        object.__setattr__(self, "lb", lb)
        object.__setattr__(self, "ub", ub)

    @property
    def n(self) -> int:
        return self.c.size

    @property
    def is_lp(self) -> bool:
        return not self.cones

    def var(self, name: str) -> np.ndarray:
        return self.blocks[name]

    def permuted(self, perm) -> "ConicProgram":
        """The same program with variables reordered so new z[k] = old z[perm[k]]."""
        perm = np.asarray(perm)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(perm.size)
        cones = tuple(SOCBlock(cn.M[:, perm], cn.q, cn.r[perm], cn.s) for cn in self.cones)
        blocks = {k: inv[v] for k, v in self.blocks.items()}
        return ConicProgram(self.c[perm], self.A_eq[:, perm], self.b_eq, self.A_ub[:, perm], self.b_ub,
                            cones, self.lb[perm], self.ub[perm], self.offset, blocks, self.notes)

    def residuals(self, z: np.ndarray) -> float:
        """Largest constraint violation at ``z``, relative to the data scale."""
        viol = [0.0]
        scale = 1.0
        if self.b_eq.size:
            viol.append(np.max(np.abs(self.A_eq @ z - self.b_eq)))
            scale = max(scale, np.max(np.abs(self.b_eq)))
        if self.b_ub.size:
            viol.append(np.max(self.A_ub @ z - self.b_ub))
            scale = max(scale, np.max(np.abs(self.b_ub)))
        viol.append(np.max(self.lb - z))
        viol.append(np.max(z - self.ub))
        for cn in self.cones:
            viol.append(np.linalg.norm(cn.M @ z + cn.q) - (cn.r @ z + cn.s))
        finite = np.concatenate([self.lb[np.isfinite(self.lb)], self.ub[np.isfinite(self.ub)]])
        if finite.size:
            scale = max(scale, np.max(np.abs(finite)))
        return max(0.0, float(max(viol))) / (1.0 + scale)


class ProgramBuilder:
    """Incremental assembly of a :class:`ConicProgram`.

    Linear expressions are passed as ``(cols, coefs)`` pairs, with ``cols``
    an index array returned by :meth:`add_variables`.
    """

    def __init__(self):
        self._n = 0
        self._lb, self._ub, self._c = [], [], []
        self._eq, self._ub_rows = _Rows(), _Rows()
        self._cones = []
        self.blocks = {}
        self.offset = 0.0
        self.notes = []

    def add_variables(self, name: str, size: int, lb=-np.inf, ub=np.inf) -> np.ndarray:
        idx = np.arange(self._n, self._n + size)
        self._n += size
        self._lb.append(np.broadcast_to(np.asarray(lb, float), (size,)).copy())
        self._ub.append(np.broadcast_to(np.asarray(ub, float), (size,)).copy())
        self._c.append(np.zeros(size))
        self.blocks[name] = idx
        return idx

    def set_objective(self, cols, coefs, offset: float = 0.0):
        c = np.concatenate(self._c) if self._c else np.zeros(0)
        c[:] = 0.0
        np.add.at(c, np.asarray(cols, int), np.asarray(coefs, float))
        self._c = [c]
        self.offset = float(offset)

    def add_le(self, cols, coefs, rhs: float):
        self._ub_rows.add(cols, coefs, rhs)

    def add_eq(self, cols, coefs, rhs: float):
        self._eq.add(cols, coefs, rhs)

    def add_le_rows(self, matrix, cols, rhs):
        """Add ``matrix @ z[cols] <= rhs`` for a dense matrix."""
        matrix = np.atleast_2d(np.asarray(matrix, float))
        rhs = np.broadcast_to(np.asarray(rhs, float), (matrix.shape[0],))
        for row, b in zip(matrix, rhs):
            self.add_le(cols, row, b)

    def add_soc(self, rows, rhs_cols=(), rhs_coefs=(), rhs_const: float = 0.0):
        """Add ``||(e_1, ..., e_k)|| <= r @ z + s``.

        ``rows`` is a list of ``(cols, coefs, const)`` triples, one per
        entry ``e_j = coefs @ z[cols] + const`` of the normed vector.
        """
        self._cones.append((list(rows), (np.asarray(rhs_cols, int), np.asarray(rhs_coefs, float)), float(rhs_const)))

    def build(self) -> ConicProgram:
        n = self._n
        c = np.concatenate(self._c) if self._c else np.zeros(0)
        c = np.concatenate([c, np.zeros(n - c.size)])
        cones = []
        for rows, (rc, rv), s in self._cones:
            data, ri, ci, q = [], [], [], []
            for k, (cols, coefs, const) in enumerate(rows):
                cols = np.asarray(cols, int)
                data.extend(np.asarray(coefs, float).tolist())
                ci.extend(cols.tolist())
                ri.extend([k] * cols.size)
                q.append(float(const))
            M = sparse.csr_matrix((data, (ri, ci)), shape=(len(rows), n))
            r = np.zeros(n)
            np.add.at(r, rc, rv)
            cones.append(SOCBlock(M, np.asarray(q), r, s))
        a_eq, b_eq = self._eq.matrix(n)
        a_ub, b_ub = self._ub_rows.matrix(n)
        return ConicProgram(c, a_eq, b_eq, a_ub, b_ub, tuple(cones),
                            np.concatenate(self._lb) if self._lb else None,
                            np.concatenate(self._ub) if self._ub else None,
                            self.offset, dict(self.blocks), tuple(self.notes))


class _Rows:
    def __init__(self):
        self.data, self.ri, self.ci, self.rhs = [], [], [], []

    def add(self, cols, coefs, rhs):
        cols = np.atleast_1d(np.asarray(cols, int))
        coefs = np.broadcast_to(np.asarray(coefs, float), cols.shape)
        k = len(self.rhs)
        self.data.extend(coefs.tolist())
        self.ci.extend(cols.tolist())
        self.ri.extend([k] * cols.size)
        self.rhs.append(float(rhs))

    def matrix(self, n):
        m = len(self.rhs)
        mat = sparse.csr_matrix((self.data, (self.ri, self.ci)), shape=(m, n))
        mat.sum_duplicates()
        return mat, np.asarray(self.rhs, float)


@dataclass
class SolverResult:
    status: str
    x: np.ndarray | None
    objective: float
    dual_objective: float = np.nan
    residuals: dict = field(default_factory=dict)
    backend: str = ""
    iterations: int = 0
    message: str = ""
    certificate: np.ndarray | None = None

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL

    def value(self, program: ConicProgram, name: str) -> np.ndarray:
        return self.x[program.var(name)]


def _bound_rows(program: ConicProgram):
    """Finite variable bounds as extra ``<=`` rows."""
    n = program.n
    lo = np.flatnonzero(np.isfinite(program.lb))
    hi = np.flatnonzero(np.isfinite(program.ub))
    rows = sparse.vstack([
        sparse.csr_matrix((-np.ones(lo.size), (np.arange(lo.size), lo)), shape=(lo.size, n)),
        sparse.csr_matrix((np.ones(hi.size), (np.arange(hi.size), hi)), shape=(hi.size, n)),
    ])
    rhs = np.concatenate([-program.lb[lo], program.ub[hi]])
    return rows.tocsr(), rhs


def _cone_rows(program: ConicProgram):
    blocks, rhs = [], []
    for cn in program.cones:
        # s = (r z + s0, M z + q) must lie in the cone, written as -G z + h
        blocks.append(sparse.vstack([sparse.csr_matrix(-cn.r.reshape(1, -1)), -cn.M]))
        rhs.append(np.concatenate([[cn.s], cn.q]))
    return blocks, rhs


def _finish(program, status, z, backend, iterations=0, message="", dual_objective=np.nan,
            dual_residual=np.nan, tol=DEFAULT_TOLERANCES, certificate=None):
    if z is None or status not in (OPTIMAL, ITERATION_LIMIT, NUMERICAL_ERROR):
        return SolverResult(status, None, np.nan, dual_objective, {}, backend, iterations, message, certificate)
    z = np.asarray(z, float)
    obj = float(program.c @ z + program.offset)
    primal = program.residuals(z)
    gap = abs(obj - dual_objective) / (1.0 + abs(obj)) if np.isfinite(dual_objective) else np.nan
    res = {"primal": float(primal), "dual": float(dual_residual), "gap": float(gap)}
    if status == OPTIMAL and (primal > tol.feas_tol or (np.isfinite(gap) and gap > tol.opt_tol)):
        status = NUMERICAL_ERROR
        message = (message + "; " if message else "") + "residuals above tolerance"
    return SolverResult(status, z, obj, dual_objective, res, backend, iterations, message, certificate)


def _solve_highs(program, tol, max_iter):
    from scipy.optimize import linprog

    bounds = list(zip(np.where(np.isfinite(program.lb), program.lb, None),
                      np.where(np.isfinite(program.ub), program.ub, None)))
    res = linprog(program.c,
                  A_ub=program.A_ub if program.b_ub.size else None,
                  b_ub=program.b_ub if program.b_ub.size else None,
                  A_eq=program.A_eq if program.b_eq.size else None,
                  b_eq=program.b_eq if program.b_eq.size else None,
                  bounds=bounds, method="highs",
                  options={"primal_feasibility_tolerance": min(1e-9, tol.feas_tol),
                           "dual_feasibility_tolerance": min(1e-9, tol.opt_tol),
                           "maxiter": max_iter * 100})
    status = {0: OPTIMAL, 1: ITERATION_LIMIT, 2: INFEASIBLE, 3: UNBOUNDED}.get(res.status, NUMERICAL_ERROR)
    if status != OPTIMAL:
        return _finish(program, status, res.x if status == ITERATION_LIMIT else None, "highs",
                       message=res.message, tol=tol)
    # marginals are sensitivities of the optimum to each right-hand side
    y_ub = res.ineqlin.marginals if program.b_ub.size else np.zeros(0)
    y_eq = res.eqlin.marginals if program.b_eq.size else np.zeros(0)
    mu_l = np.where(np.isfinite(program.lb), res.lower.marginals, 0.0)
    mu_u = np.where(np.isfinite(program.ub), res.upper.marginals, 0.0)
    dual_obj = (program.b_ub @ y_ub + program.b_eq @ y_eq
                + np.where(np.isfinite(program.lb), program.lb, 0.0) @ mu_l
                + np.where(np.isfinite(program.ub), program.ub, 0.0) @ mu_u + program.offset)
    stat = program.c.copy()
    if program.b_ub.size:
        stat -= program.A_ub.T @ y_ub
    if program.b_eq.size:
        stat -= program.A_eq.T @ y_eq
    stat -= mu_l + mu_u
    dres = float(np.max(np.abs(stat))) / (1.0 + float(np.max(np.abs(program.c))))
    return _finish(program, OPTIMAL, res.x, "highs", res.nit, res.message, float(dual_obj), dres, tol)


def _stacked(program):
    brow, brhs = _bound_rows(program)
    lin = sparse.vstack([program.A_ub, brow]).tocsr()
    lin_rhs = np.concatenate([program.b_ub, brhs])
    cblocks, crhs = _cone_rows(program)
    return lin, lin_rhs, cblocks, crhs


def _solve_clarabel(program, tol, max_iter):
    import clarabel

    n = program.n
    lin, lin_rhs, cblocks, crhs = _stacked(program)
    mats = [program.A_eq, lin] + cblocks
    a = sparse.vstack(mats).tocsc()
    b = np.concatenate([program.b_eq, lin_rhs] + crhs)
    cones = []
    if program.b_eq.size:
        cones.append(clarabel.ZeroConeT(program.b_eq.size))
    if lin_rhs.size:
        cones.append(clarabel.NonnegativeConeT(lin_rhs.size))
    for cn in program.cones:
        cones.append(clarabel.SecondOrderConeT(cn.size))
    st = clarabel.DefaultSettings()
    st.verbose = False
    st.max_iter = max_iter
    inner = min(tol.feas_tol, tol.opt_tol) * 1e-2
    st.tol_feas = inner
    st.tol_gap_abs = inner
    st.tol_gap_rel = inner
    st.tol_ktratio = 1e-8
    solver = clarabel.DefaultSolver(sparse.csc_matrix((n, n)), program.c, a, b, cones, st)
    sol = solver.solve()
    name = str(sol.status)
    if name == "Solved" or name == "AlmostSolved":
        status = OPTIMAL
    elif "PrimalInfeasible" in name:
        status = INFEASIBLE
    elif "DualInfeasible" in name:
        status = UNBOUNDED
    elif name in ("MaxIterations", "MaxTime"):
        status = ITERATION_LIMIT
    else:
        status = NUMERICAL_ERROR
    cert = np.asarray(sol.z) if status in (INFEASIBLE,) else (np.asarray(sol.x) if status == UNBOUNDED else None)
    z = np.asarray(sol.x) if status in (OPTIMAL, ITERATION_LIMIT, NUMERICAL_ERROR) else None
    return _finish(program, status, z, "clarabel", sol.iterations, name,
                   float(sol.obj_val_dual) + program.offset if status == OPTIMAL else np.nan,
                   float(sol.r_dual), tol, cert)


def _solve_cvxopt(program, tol, max_iter):
    import cvxopt
    from cvxopt import solvers

    lin, lin_rhs, cblocks, crhs = _stacked(program)
    g = sparse.vstack([lin] + cblocks).toarray()
    h = np.concatenate([lin_rhs] + crhs)
    dims = {"l": int(lin_rhs.size), "q": [cn.size for cn in program.cones], "s": []}
    kwargs = {}
    if program.b_eq.size:
        kwargs = {"A": cvxopt.matrix(program.A_eq.toarray()), "b": cvxopt.matrix(program.b_eq)}
    opts = {"show_progress": False, "maxiters": max_iter,
            "abstol": tol.opt_tol * 1e-1, "reltol": tol.opt_tol * 1e-1, "feastol": tol.feas_tol * 1e-1}
    if g.shape[0] == 0:
        # cvxopt needs at least one inequality
        g = np.zeros((1, program.n))
        h = np.ones(1)
        dims["l"] = 1
    sol = solvers.conelp(cvxopt.matrix(program.c), cvxopt.matrix(g), cvxopt.matrix(h), dims,
                         options=opts, **kwargs)
    name = sol["status"]
    if name == "optimal":
        status = OPTIMAL
    elif name == "primal infeasible":
        status = INFEASIBLE
    elif name == "dual infeasible":
        status = UNBOUNDED
    else:
        # "unknown" covers the iteration cap and stalls near the tolerances;
        # a stalled point is kept when its residuals pass the check in _finish
        status = ITERATION_LIMIT if sol["iterations"] >= max_iter else OPTIMAL
    z = np.asarray(sol["x"]).ravel() if sol["x"] is not None else None
    dual = float(sol["dual objective"]) + program.offset if sol.get("dual objective") is not None else np.nan
    return _finish(program, status, z, "cvxopt", sol["iterations"], name, dual,
                   float(sol.get("dual infeasibility") or np.nan), tol)


BACKENDS = {"highs": _solve_highs, "clarabel": _solve_clarabel, "cvxopt": _solve_cvxopt}


def default_backend(program: ConicProgram) -> str:
    if program.is_lp:
        return "highs"
    try:
        import clarabel  # noqa: F401
        return "clarabel"
    except ImportError:  # pragma: no cover - depends on the environment
        return "cvxopt"


def solve(program: ConicProgram, tol: Tolerances = DEFAULT_TOLERANCES, backend: str | None = None,
          max_iter: int = 500) -> SolverResult:
    """Solve ``program``. ``status == "optimal"`` guarantees residuals within ``tol``."""
    backend = backend or default_backend(program)
    if backend not in BACKENDS:
        raise ValueError(f"unknown backend {backend!r}")
    if backend == "highs" and not program.is_lp:
        raise ProgramError("the HiGHS backend only handles linear programs")
    return BACKENDS[backend](program, tol, max_iter)


# -- text export -------------------------------------------------------------
#
# Layout (one section after another, coordinates are 1-based):
#
#   %%ConicProgram v1
#   VARIABLES <n>
#   OBJECTIVE <nnz> <offset>       then <nnz> lines "j value"
#   EQ <rows> <nnz>                then <nnz> lines "i j value", then RHS <rows> lines
#   LE <rows> <nnz>                same layout as EQ
#   BOUNDS                         then <n> lines "lb ub" (inf allowed)
#   CONES <count>                  per cone: "SOC <k> <nnz_M> <nnz_r> <s>",
#                                  <nnz_M> lines "i j value", <k> lines of q,
#                                  <nnz_r> lines "j value"

def _f(v) -> str:
    return repr(float(v))


def _write_coo(out, mat):
    coo = sparse.coo_matrix(mat)
    for i, j, v in zip(coo.row, coo.col, coo.data):
        out.write(f"{i + 1} {j + 1} {_f(v)}\n")


def dumps_program(program: ConicProgram) -> str:
    out = io.StringIO()
    out.write("%%ConicProgram v1\n")
    out.write(f"VARIABLES {program.n}\n")
    nz = np.flatnonzero(program.c)
    out.write(f"OBJECTIVE {nz.size} {_f(program.offset)}\n")
    for j in nz:
        out.write(f"{j + 1} {_f(program.c[j])}\n")
    for tag, mat, rhs in (("EQ", program.A_eq, program.b_eq), ("LE", program.A_ub, program.b_ub)):
        out.write(f"{tag} {rhs.size} {sparse.coo_matrix(mat).nnz}\n")
        _write_coo(out, mat)
        out.write("RHS\n")
        for v in rhs:
            out.write(f"{_f(v)}\n")
    out.write("BOUNDS\n")
    for lo, hi in zip(program.lb, program.ub):
        out.write(f"{_f(lo)} {_f(hi)}\n")
    out.write(f"CONES {len(program.cones)}\n")
    for cn in program.cones:
        rnz = np.flatnonzero(cn.r)
        out.write(f"SOC {cn.M.shape[0]} {sparse.coo_matrix(cn.M).nnz} {rnz.size} {_f(cn.s)}\n")
        _write_coo(out, cn.M)
        for v in cn.q:
            out.write(f"{_f(v)}\n")
        for j in rnz:
            out.write(f"{j + 1} {_f(cn.r[j])}\n")
    return out.getvalue()


def loads_program(text: str) -> ConicProgram:
    lines = iter(line for line in text.splitlines() if line.strip() and not line.startswith("%"))

    def head(tag):
        parts = next(lines).split()
        if parts[0] != tag:
            raise ProgramError(f"expected section {tag}, found {parts[0]}")
        return parts[1:]

    def coo(count, shape):
        ri, ci, v = [], [], []
        for _ in range(count):
            i, j, x = next(lines).split()
            ri.append(int(i) - 1)
            ci.append(int(j) - 1)
            v.append(float(x))
        return sparse.csr_matrix((v, (ri, ci)), shape=shape)

    n = int(head("VARIABLES")[0])
    nnz, offset = head("OBJECTIVE")
    c = np.zeros(n)
    for _ in range(int(nnz)):
        j, v = next(lines).split()
        c[int(j) - 1] = float(v)
    mats = []
    for tag in ("EQ", "LE"):
        rows, nnz = map(int, head(tag))
        mat = coo(nnz, (rows, n))
        head("RHS")
        rhs = np.array([float(next(lines)) for _ in range(rows)])
        mats.append((mat, rhs))
    head("BOUNDS")
    bnd = np.array([[float(v) for v in next(lines).split()] for _ in range(n)]).reshape(n, 2)
    cones = []
    for _ in range(int(head("CONES")[0])):
        k, nnz_m, nnz_r, s = head("SOC")
        M = coo(int(nnz_m), (int(k), n))
        q = np.array([float(next(lines)) for _ in range(int(k))])
        r = np.zeros(n)
        for _ in range(int(nnz_r)):
            j, v = next(lines).split()
            r[int(j) - 1] = float(v)
        cones.append(SOCBlock(M, q, r, float(s)))
    (a_eq, b_eq), (a_ub, b_ub) = mats
    return ConicProgram(c, a_eq, b_eq, a_ub, b_ub, tuple(cones), bnd[:, 0], bnd[:, 1], float(offset))
