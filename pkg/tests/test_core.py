import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from drccp.core import (AmbiguityBall, DimensionError, DiscreteDistribution, SampleSet, Tolerances,
                        empirical_cvar, empirical_distribution, transport_plan, wasserstein_distance)


def dist(atoms, weights=None):
    atoms = np.asarray(atoms, float)
    n = len(atoms)
    return DiscreteDistribution(atoms, np.full(n, 1.0 / n) if weights is None else weights)


def test_empirical_distribution_examples():
    e = empirical_distribution(SampleSet([0.0, 1.0]))
    assert e.atoms.ravel().tolist() == [0.0, 1.0]
    assert e.weights.tolist() == [0.5, 0.5]
    e = empirical_distribution(SampleSet([3.0]))
    assert e.weights.tolist() == [1.0]
    e = empirical_distribution(SampleSet([1.0, 1.0]))
    assert len(e) == 2 and e.weights.tolist() == [0.5, 0.5]


def test_sample_set_invariants():
    with pytest.raises(ValueError):
        SampleSet(np.zeros((0, 2)))
    with pytest.raises(ValueError):
        SampleSet([[1.0, np.nan]])
    s = SampleSet([[1.0, 2.0], [3.0, 4.0]])
    assert (s.count, s.dim) == (2, 2)


def test_distribution_invariants():
    with pytest.raises(ValueError):
        DiscreteDistribution([[0.0], [1.0]], [0.5, 0.6])
    with pytest.raises(ValueError):
        DiscreteDistribution([[0.0], [1.0]], [1.5, -0.5])
    with pytest.raises(ValueError):
        DiscreteDistribution([[0.0]], [0.5, 0.5])
    d = DiscreteDistribution.from_dict(dist([[0.0], [1.0]]).to_dict())
    assert d.same_measure(dist([[1.0], [0.0]]))


def test_ball_and_tolerances():
    with pytest.raises(ValueError):
        AmbiguityBall(dist([[0.0]]), -1.0)
    with pytest.raises(ValueError):
        AmbiguityBall(dist([[0.0]]), 1.0, p=3)
    ball = AmbiguityBall(dist([[0.0], [2.0]]), 1.0)
    assert ball.contains(dist([[1.0], [3.0]]))
    assert not ball.contains(dist([[2.0], [4.0]]))
    with pytest.raises(ValueError):
        Tolerances(feas_tol=0.0)
    assert Tolerances().oracle_tol == 1e-4


def test_wasserstein_examples():
    assert wasserstein_distance(dist([[0.0]]), dist([[1.0]]), 1) == pytest.approx(1.0)
    mu = dist([[0.0], [2.0]])
    assert wasserstein_distance(mu, mu, 2) == pytest.approx(0.0, abs=1e-12)
    assert wasserstein_distance(mu, dist([[1.0], [3.0]]), 1) == pytest.approx(1.0)
    cost, plan = transport_plan(mu, dist([[1.0], [3.0]]), 1)
    np.testing.assert_allclose(plan, [[0.5, 0.0], [0.0, 0.5]], atol=1e-12)
    with pytest.raises(DimensionError):
        wasserstein_distance(dist([[0.0]]), dist([[0.0, 1.0]]))


def test_wasserstein_p2_closed_form():
    # two point masses: W_2 equals the Euclidean distance
    assert wasserstein_distance(dist([[0.0, 0.0]]), dist([[3.0, 4.0]]), 2) == pytest.approx(5.0)


def _random_dist(rng, n, m=2):
    w = rng.uniform(0.1, 1.0, n)
    return DiscreteDistribution(rng.normal(size=(n, m)), w / w.sum())


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([1, 2]))
def test_wasserstein_metric_axioms(seed, p):
    rng = np.random.default_rng(seed)
    a, b, c = (_random_dist(rng, rng.integers(1, 6)) for _ in range(3))
    ab, ba = wasserstein_distance(a, b, p), wasserstein_distance(b, a, p)
    assert ab == pytest.approx(ba, abs=1e-7)
    assert ab <= wasserstein_distance(a, c, p) + wasserstein_distance(c, b, p) + 1e-7
    assert wasserstein_distance(a, a, p) <= 1e-7


def test_wasserstein_zero_iff_same_measure():
    a = DiscreteDistribution([[0.0], [1.0], [1.0]], [0.25, 0.25, 0.5])
    b = DiscreteDistribution([[1.0], [0.0]], [0.75, 0.25])
    assert a.same_measure(b)
    assert wasserstein_distance(a, b) <= 1e-12
    c = DiscreteDistribution([[1.0], [0.0]], [0.7, 0.3])
    assert not a.same_measure(c)
    assert wasserstein_distance(a, c) > 1e-3


def test_cvar_examples():
    assert empirical_cvar([1, 2, 3, 4], 0.25) == pytest.approx(4.0)
    assert empirical_cvar([1, 2, 3, 4], 0.5) == pytest.approx(3.5)
    assert empirical_cvar([2.5] * 7, 0.3) == pytest.approx(2.5)
    for bad in (0.0, 1.0, -0.2):
        with pytest.raises(ValueError):
            empirical_cvar([1.0, 2.0], bad)
    with pytest.raises(ValueError):
        empirical_cvar([], 0.5)


def _cvar_grid(z, alpha, step=1e-4):
    t = np.arange(-z.max(), -z.min() + step, step)
    return float(np.min(np.maximum(z[None, :] + t[:, None], 0).mean(axis=1) / alpha - t))


values = st.lists(st.floats(-50, 50, allow_nan=False), min_size=1, max_size=12)
alphas = st.floats(0.01, 0.99)


@settings(max_examples=100, deadline=None)
@given(values, alphas, st.floats(-20, 20), st.floats(0, 5))
def test_cvar_translation_and_scaling(z, alpha, shift, lam):
    z = np.array(z)
    base = empirical_cvar(z, alpha)
    assert empirical_cvar(z + shift, alpha) == pytest.approx(base + shift, abs=1e-9 * (1 + abs(base) + abs(shift)))
    assert empirical_cvar(lam * z, alpha) == pytest.approx(lam * base, abs=1e-9 * (1 + abs(lam * base)))


@settings(max_examples=100, deadline=None)
@given(values, alphas, alphas)
def test_cvar_monotone_in_alpha_and_above_mean(z, a1, a2):
    z = np.array(z)
    lo, hi = sorted((a1, a2))
    assert empirical_cvar(z, lo) >= empirical_cvar(z, hi) - 1e-9 * (1 + np.abs(z).max())
    assert empirical_cvar(z, hi) >= z.mean() - 1e-9 * (1 + np.abs(z).max())


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=1, max_size=8), alphas)
def test_cvar_matches_t_grid(z, alpha):
    z = np.array(z)
    step = 1e-3
    got = empirical_cvar(z, alpha)
    ref = _cvar_grid(z, alpha, step)
    # the grid minimum lies above the true one by at most slope * step
    assert got <= ref + 1e-12
    assert ref - got <= step * (1.0 / alpha + 1.0) + 1e-12
