"""Probability primitives: sample sets, discrete distributions, Wasserstein
distances between discrete distributions and the empirical CVaR."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy import sparse

WEIGHT_SUM_TOL = 1e-12


class DimensionError(ValueError):
    pass


def _as_matrix(samples) -> np.ndarray:
    arr = np.asarray(samples, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        # a flat list is read as N scalar samples
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise DimensionError(f"samples must be a 2-d array, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class SampleSet:
    """N observed realizations of the uncertainty, stored row-wise (N x m)."""

    samples: np.ndarray

    def __post_init__(self):
        arr = _as_matrix(self.samples)
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("a sample set needs at least one sample of positive dimension")
        if not np.all(np.isfinite(arr)):
            raise ValueError("samples must be finite")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    @property
    def count(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    def __len__(self):
        return self.count

    def __iter__(self):
        return iter(self.samples)


@dataclass(frozen=True)
class DiscreteDistribution:
    """Finitely supported probability measure. Duplicate atoms are allowed."""

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        atoms = _as_matrix(self.atoms)
        weights = np.asarray(self.weights, dtype=float).ravel()
        if atoms.shape[0] != weights.size:
            raise ValueError(f"{atoms.shape[0]} atoms but {weights.size} weights")
        if weights.size == 0:
            raise ValueError("empty distribution")
        if np.any(weights < 0):
            raise ValueError("weights must be nonnegative")
        if abs(weights.sum() - 1.0) > WEIGHT_SUM_TOL * max(1, weights.size):
            raise ValueError(f"weights sum to {weights.sum()!r}, not 1")
        atoms, weights = atoms.copy(), weights.copy()
        atoms.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]

    def __len__(self):
        return self.weights.size

    def merged(self, decimals: int = 12) -> "DiscreteDistribution":
        """Equivalent distribution with coincident atoms combined (sorted)."""
        keys = np.round(self.atoms, decimals)
        uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
        w = np.zeros(len(uniq))
        np.add.at(w, inverse.ravel(), self.weights)
        keep = w > 0
        return DiscreteDistribution(uniq[keep], w[keep] / w[keep].sum())

    def same_measure(self, other: "DiscreteDistribution", tol: float = 1e-12) -> bool:
        a, b = self.merged(), other.merged()
        if a.atoms.shape != b.atoms.shape:
            return False
        return bool(np.allclose(a.atoms, b.atoms, atol=tol) and np.allclose(a.weights, b.weights, atol=tol))

    def to_dict(self) -> dict:
        return {"atoms": self.atoms.tolist(), "weights": self.weights.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "DiscreteDistribution":
        return cls(np.asarray(doc["atoms"], dtype=float), np.asarray(doc["weights"], dtype=float))


@dataclass(frozen=True)
class AmbiguityBall:
    """Wasserstein ball of radius ``radius`` and order ``p`` around ``center``.

    The ground metric is the Euclidean norm and is not configurable.
    """

    center: DiscreteDistribution
    radius: float
    p: int = 1

    def __post_init__(self):
        if not self.radius >= 0:
            raise ValueError("radius must be nonnegative")
        if self.p not in (1, 2):
            raise ValueError("only p in {1, 2} is supported")

    def contains(self, mu: DiscreteDistribution, tol: float = 1e-9) -> bool:
        return wasserstein_distance(mu, self.center, self.p) <= self.radius + tol


@dataclass(frozen=True)
class Tolerances:
    feas_tol: float = 1e-8
    opt_tol: float = 1e-8
    oracle_tol: float = 1e-4

    def __post_init__(self):
        for name in ("feas_tol", "opt_tol", "oracle_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")


DEFAULT_TOLERANCES = Tolerances()


def empirical_distribution(s: SampleSet) -> DiscreteDistribution:
    n = s.count
    return DiscreteDistribution(s.samples, np.full(n, 1.0 / n))


def pairwise_cost(a: np.ndarray, b: np.ndarray, p: int = 1) -> np.ndarray:
    """Matrix of ``||a_i - b_j||^p`` for row sets ``a`` and ``b``."""
    diff = a[:, None, :] - b[None, :, :]
    sq = np.einsum("ijk,ijk->ij", diff, diff)
    if p == 2:
        return sq
    return np.sqrt(sq) ** p


def transport_plan(mu: DiscreteDistribution, nu: DiscreteDistribution, p: int = 1):
    """Optimal coupling between ``mu`` and ``nu`` for ground cost ``d^p``.

    Returns ``(cost, plan)`` where ``cost`` is the minimal transport cost
    (the p-th power of the distance) and ``plan`` is the ``len(mu) x len(nu)``
    coupling matrix.
    """
    if mu.dim != nu.dim:
        raise DimensionError(f"dimension mismatch: {mu.dim} vs {nu.dim}")
    if p not in (1, 2):
        raise ValueError("only p in {1, 2} is supported")
    cost = pairwise_cost(mu.atoms, nu.atoms, p)
    n1, n2 = cost.shape
    # row sums = mu, column sums = nu; the last row-sum constraint is implied
    rows = sparse.kron(sparse.eye(n1), np.ones((1, n2)))
    cols = sparse.kron(np.ones((1, n1)), sparse.eye(n2))
    a_eq = sparse.vstack([rows, cols]).tocsr()
    b_eq = np.concatenate([mu.weights, nu.weights])
    res = linprog(cost.ravel(), A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if res.status != 0:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return max(float(res.fun), 0.0), res.x.reshape(n1, n2)


def wasserstein_distance(mu: DiscreteDistribution, nu: DiscreteDistribution, p: int = 1) -> float:
    cost, _ = transport_plan(mu, nu, p)
    return cost ** (1.0 / p)


def _cvar_objective(z: np.ndarray, alpha: float, t: np.ndarray) -> np.ndarray:
    return np.maximum(z[None, :] + t[:, None], 0.0).mean(axis=1) / alpha - t


def empirical_cvar(values, alpha: float) -> float:
    """CVaR at level ``1 - alpha`` of the uniform distribution on ``values``.

    Minimizes ``mean((z + t)_+) / alpha - t`` over the breakpoints
    ``t = -z_i`` and checks the one-sided slopes at the minimizer.
    """
    z = np.asarray(values, dtype=float).ravel()
    if z.size == 0:
        raise ValueError("empirical_cvar needs at least one value")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha!r}")
    t_cand = np.unique(-z)
    vals = _cvar_objective(z, alpha, t_cand)
    n = z.size
    shifted = z[None, :] + t_cand[:, None]
    right = np.count_nonzero(shifted >= 0, axis=1) / (alpha * n) - 1.0
    left = np.count_nonzero(shifted > 0, axis=1) / (alpha * n) - 1.0
    # a breakpoint minimizes the convex objective iff left <= 0 <= right
    certified = np.flatnonzero((left <= 0) & (right >= 0))
    if certified.size == 0:
        raise ArithmeticError("no breakpoint passed the one-sided slope check")
    best = float(vals[certified[0]])
    scale = 1.0 + float(np.max(np.abs(z)))
    if best > float(vals.min()) + 1e-12 * scale / alpha:
        raise ArithmeticError("slope-certified breakpoint is not the minimum")
    return best
