import numpy as np
import pytest

from drccp.constraints import (EmptySetError, PiecewiseBilinearConstraint, PolyhedralSupport, PolytopeX,
                               UnboundedSetError, check_subgradients, concave_quadratic_oracle,
                               distance_to_violation, evaluate, grid_distance_to_violation, lipschitz_xi_bound,
                               load_oracle, log_sum_exp_oracle, sup_negative_constraint, support_grid,
                               violation_distances)

from instances import TOY_F, random_instance

TWO_PIECE = PiecewiseBilinearConstraint([[1.0], [-1.0]], [[[0.0]], [[0.0]]], [[-1.0], [-1.0]], [0.0, 0.0])
NEG_ONE = PiecewiseBilinearConstraint.affine([0.0], [[0.0]], [0.0], -1.0)


def test_evaluate_examples():
    assert evaluate(TOY_F, [1.5], [1.0]) == pytest.approx(-0.5)
    assert evaluate(TWO_PIECE, [0.0], [-2.0]) == pytest.approx(2.0)
    rng = np.random.default_rng(0)
    F, *_ = random_instance(rng, K=1)
    x, xi = rng.normal(size=2), rng.normal(size=2)
    p = F.pieces[0]
    assert evaluate(F, x, xi) == pytest.approx((p.a + p.A.T @ x) @ xi + p.d @ x + p.e)
    with pytest.raises(ValueError):
        evaluate(TOY_F, [1.0, 2.0], [0.0])


def test_lipschitz_examples():
    X = PolytopeX.box([0.0], [2.0])
    assert lipschitz_xi_bound(TOY_F, X) == pytest.approx(1.0)
    F = PiecewiseBilinearConstraint.affine([0.0], [[1.0]], [0.0], 0.0)
    assert lipschitz_xi_bound(F, X) == pytest.approx(2.0)
    F2 = PiecewiseBilinearConstraint([[1.0, 0.0], [0.0, 3.0]], np.zeros((2, 1, 2)), [[0.0], [0.0]], [0.0, 0.0])
    assert lipschitz_xi_bound(F2, X) >= 3.0
    with pytest.raises(UnboundedSetError):
        lipschitz_xi_bound(TOY_F, PolytopeX(np.array([[1.0]]), np.array([1.0])))


def test_lipschitz_bound_dominates_sampled_gradients():
    rng = np.random.default_rng(1)
    for _ in range(5):
        F, _, X, _, _ = random_instance(rng, n=3, m=2, K=2)
        bound = lipschitz_xi_bound(F, X)
        xs = X.poly.sample(rng, 10_000)
        slopes = F.a[None] + np.einsum("knm,sn->skm", F.A, xs)
        assert np.max(np.linalg.norm(slopes, axis=2)) <= bound + 1e-9


def test_distance_examples():
    free = PolyhedralSupport.free(1)
    assert distance_to_violation(TOY_F, [1.5], [0.0], 1, free) == pytest.approx(1.5)
    assert distance_to_violation(TOY_F, [0.5], [1.0], 1, free) == 0.0
    assert distance_to_violation(NEG_ONE, [0.3], [2.0], 1, free) == np.inf
    assert distance_to_violation(TOY_F, [1.5], [0.0], 2, free) == pytest.approx(2.25)
    # a zero-gradient piece with positive constant violates everywhere
    pos = PiecewiseBilinearConstraint.affine([0.0], [[0.0]], [0.0], 1.0)
    assert distance_to_violation(pos, [0.0], [5.0], 1, free) == 0.0


def test_distance_nonnegative_and_zero_iff_violating():
    rng = np.random.default_rng(2)
    free = PolyhedralSupport.free(2)
    for _ in range(200):
        F, _, _, _, _ = random_instance(rng, K=2, support="free")
        x, xi = rng.uniform(-1, 1, 2), rng.normal(size=2) * 3
        G = distance_to_violation(F, x, xi, 1, free)
        assert G >= 0
        assert (G == 0) == (evaluate(F, x, xi) >= 0)


def test_distance_on_polytope_support():
    box = PolyhedralSupport.box([-1.0], [3.0])
    assert distance_to_violation(TOY_F, [1.5], [0.0], 1, box) == pytest.approx(1.5, abs=1e-7)
    # the violating set {xi > 1.5} misses [-1, 1.2]
    assert distance_to_violation(TOY_F, [1.5], [0.0], 1, PolyhedralSupport.box([-1.0], [1.2])) == np.inf
    # halfspace closest point outside the box is not feasible; the box shifts it
    F = PiecewiseBilinearConstraint.affine([1.0, 1.0], np.zeros((1, 2)), [0.0], -1.5)
    sup = PolyhedralSupport.box([-1.0, -1.0], [1.5, 0.2])
    G = distance_to_violation(F, [0.0], [0.0, 0.0], 1, sup)
    # free-space answer would be 1.5/sqrt(2); with xi_2 <= 0.2 the nearest violating point is (1.3, 0.2)
    assert G == pytest.approx(np.hypot(1.3, 0.2), abs=1e-6)


def test_analytic_distance_matches_grid():
    rng = np.random.default_rng(3)
    res = 0.02
    for m in (1, 2):
        free = PolyhedralSupport.free(m)
        grid = support_grid(free, res, np.zeros((1, m)), radius=3.0)
        for _ in range(500):
            F, _, _, _, _ = random_instance(rng, m=m, K=rng.integers(1, 3), support="free")
            F = PiecewiseBilinearConstraint(F.a, F.A, F.d, F.e + rng.uniform(1.5, 3.0))
            x, xi = rng.uniform(-1, 1, 2), rng.uniform(-1, 1, m)
            exact = distance_to_violation(F, x, xi, 1, free)
            approx = grid_distance_to_violation(F, x, xi, 1, grid)
            if not np.isfinite(exact) or exact > 1.5:
                continue
            # the grid can only overestimate; some violating grid point lies
            # within one cell diagonal of the nearest boundary point
            assert approx >= exact - 1e-9
            assert approx - exact <= res * np.sqrt(m) + 1e-9


def test_polytope_distance_matches_grid():
    rng = np.random.default_rng(4)
    sup = PolyhedralSupport.polytope([[1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]], [1.0, 1.0, 1.0])
    grid = sup.poly.grid(0.01)
    for _ in range(30):
        F = PiecewiseBilinearConstraint.affine(rng.normal(size=2), np.zeros((1, 2)), [0.0], rng.uniform(-1, 0))
        xi = sup.poly.sample(rng, 1)[0]
        exact = distance_to_violation(F, [0.0], xi, 1, sup)
        approx = grid_distance_to_violation(F, [0.0], xi, 1, grid)
        if np.isfinite(exact):
            assert approx >= exact - 1e-6
            assert approx - exact <= 0.01 * np.sqrt(2) + 1e-6
        else:
            assert approx == np.inf


def test_violation_distances_flags_grid():
    S = np.array([[0.0], [1.0]])
    d = violation_distances(TOY_F, [1.5], S, 1, PolyhedralSupport.free(1))
    assert not d.approximate
    d = violation_distances(TOY_F, [1.5], S, 1, PolyhedralSupport.box([-1.0], [3.0]), grid_resolution=0.01)
    assert d.approximate and d.resolution == 0.01
    np.testing.assert_allclose(d.values, [1.5, 0.5], atol=0.011)


def test_empty_and_unbounded_sets():
    with pytest.raises(EmptySetError):
        PolytopeX.box([1.0], [0.0])
    with pytest.raises(EmptySetError):
        PolytopeX(np.array([[1.0], [-1.0]]), np.array([0.0, -1.0]))
    X = PolytopeX(np.array([[1.0]]), np.array([1.0]))
    assert not X.is_bounded
    with pytest.raises(UnboundedSetError):
        X.require_bounded()
    assert PolyhedralSupport.box([0.0], [1.0]).is_compact
    assert not PolyhedralSupport.free(2).is_compact
    assert not PolyhedralSupport.polytope([[1.0, 0.0]], [1.0]).is_compact


def test_serialization_round_trip():
    rng = np.random.default_rng(5)
    F, _, X, Xi, _ = random_instance(rng, K=2)
    F2 = PiecewiseBilinearConstraint.from_dict(F.to_dict())
    x, xi = rng.normal(size=2), rng.normal(size=2)
    assert evaluate(F2, x, xi) == evaluate(F, x, xi)
    X2 = PolytopeX.from_dict(X.to_dict())
    assert X2.maximize([1.0, 2.0])[0] == pytest.approx(X.maximize([1.0, 2.0])[0])
    Xi2 = PolyhedralSupport.from_dict(Xi.to_dict(), 2)
    assert Xi2.contains([1.9, -1.9]) and not Xi2.contains([2.1, 0.0])
    assert PolyhedralSupport.from_dict("free", 3).is_free


def test_vertices_and_projection():
    tri = PolyhedralSupport.polytope([[-1.0, 0.0], [0.0, -1.0], [1.0, 1.0]], [0.0, 0.0, 1.0])
    verts = {tuple(v) for v in np.round(tri.poly.vertices, 9)}
    assert verts == {(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)}
    np.testing.assert_allclose(tri.poly.project([1.0, 1.0]), [0.5, 0.5], atol=1e-6)
    np.testing.assert_allclose(PolyhedralSupport.box([0, 0], [1, 1]).poly.project([2.0, -1.0]), [1.0, 0.0])


def test_sup_negative_constraint():
    X = PolytopeX.box([0.0], [2.0])
    s = sup_negative_constraint(TOY_F, X, PolyhedralSupport.box([-1.0], [3.0]))
    assert s.value == pytest.approx(3.0) and s.exact
    assert sup_negative_constraint(NEG_ONE, X, PolyhedralSupport.box([-1.0], [3.0])).value == pytest.approx(1.0)
    assert sup_negative_constraint(TOY_F, X, PolyhedralSupport.free(1)).value == np.inf


def test_sup_negative_matches_grid():
    rng = np.random.default_rng(6)
    for _ in range(10):
        F, _, X, Xi, _ = random_instance(rng, K=1)
        s = sup_negative_constraint(F, X, Xi)
        xs, xis = X.poly.grid(0.1), Xi.poly.grid(0.25)
        brute = max(float(np.max(-F(x, xis))) for x in xs)
        assert brute <= s.value + 1e-9
        assert s.value - brute <= 0.5


@pytest.mark.parametrize("make", [
    lambda rng: concave_quadratic_oracle(rng.normal(size=2), rng.normal(size=(2, 2)), rng.normal(size=2), 0.3, 0.7),
    lambda rng: log_sum_exp_oracle(rng.normal(size=(3, 2)), rng.normal(size=(3, 2)), 0.1),
    lambda rng: random_instance(rng, K=1)[0].as_oracle(),
])
def test_subgradients_match_finite_differences(make):
    rng = np.random.default_rng(7)
    oracle = make(rng)
    X = PolytopeX.box(-np.ones(2), np.ones(2))
    res = check_subgradients(oracle, X, PolyhedralSupport.box(-np.ones(2), np.ones(2)), rng, 100)
    assert res["failures"] == 0
    assert res["max_relative_error"] <= 1e-4


def test_load_oracle_registry():
    o = load_oracle({"id": "log-sum-exp", "params": {"W": [[1.0]], "B": [[1.0]]}})
    assert o.curvature_in_xi == "convex" and o.lipschitz_xi([0.0]) == 1.0
    o = load_oracle({"id": "drccp.constraints:concave_quadratic_oracle",
                     "params": {"a": [1.0], "A": [[0.0]], "d": [-1.0], "e": 0.0}})
    assert o.curvature_in_xi == "concave"
    with pytest.raises(KeyError):
        load_oracle({"id": "nope"})


def test_grid_distance_for_oracles():
    o = concave_quadratic_oracle([1.0], [[0.0]], [-1.0], 0.0, kappa=0.0)
    grid = np.linspace(-2, 4, 601)[:, None]
    # kappa = 0 reduces the oracle to xi - x
    assert grid_distance_to_violation(o, np.array([1.5]), np.array([0.0]), 1, grid) == pytest.approx(1.51, abs=1e-9)
