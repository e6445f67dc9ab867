import numpy as np
import pytest

from core.errors import InputError, NumericalError
from core.quadratic import QuadraticProblem, convexity_level, jitter_level, regularization_floor
from core.rkhs import KernelSpec, RkhsFunction, choose_centers, evaluate, gram, zero_function
from core.rng import derive_seed, stream


def test_gram_diagonal_and_symmetry():
    spec = KernelSpec(bandwidth=0.7)
    x = np.linspace(-2, 2, 9)
    G = gram(x, x, spec)
    np.testing.assert_allclose(np.diag(G), 1.0)
    np.testing.assert_allclose(G, G.T)
    assert np.all(G > 0) and np.all(G <= 1)


def test_gram_matches_closed_form():
    spec = KernelSpec(bandwidth=0.5)
    assert gram([0.0], [1.0], spec)[0, 0] == pytest.approx(np.exp(-1.0 / (2 * 0.25)))


def test_gram_multivariate():
    spec = KernelSpec(bandwidth=1.0, dimension=2)
    value = gram([[0.0, 0.0]], [[1.0, 1.0]], spec)[0, 0]
    assert value == pytest.approx(np.exp(-1.0))


def test_gram_rejects_wrong_dimension():
    with pytest.raises(InputError):
        gram(np.zeros((3, 2)), np.zeros((2, 2)), KernelSpec(bandwidth=1.0, dimension=1))


def test_bandwidth_must_be_positive():
    with pytest.raises(InputError):
        KernelSpec(bandwidth=0.0)


def test_zero_function_evaluates_to_zero():
    h = zero_function(KernelSpec(bandwidth=1.0), [0.0, 1.0])
    np.testing.assert_array_equal(evaluate(h, np.linspace(-1, 1, 5)), 0.0)


def test_single_center_value():
    spec = KernelSpec(bandwidth=1.0)
    h = RkhsFunction(spec, [0.0], [2.0])
    assert h([0.0])[0] == pytest.approx(2.0)
    assert h([1.0])[0] == pytest.approx(2.0 * np.exp(-0.5))


def test_function_is_immutable():
    h = RkhsFunction(KernelSpec(bandwidth=1.0), [0.0, 1.0], [1.0, -1.0], provenance={0, 1})
    with pytest.raises(ValueError):
        h.coefficients[0] = 3.0
    assert h.provenance == frozenset({0, 1})
    assert h.with_coefficients([0.0, 0.0]).provenance == h.provenance


def test_coefficient_count_must_match_centers():
    with pytest.raises(InputError):
        RkhsFunction(KernelSpec(bandwidth=1.0), [0.0, 1.0], [1.0])


def test_choose_centers_is_seeded_subsample():
    pool = np.arange(20.0)
    first = choose_centers(pool, 5, seed=4)
    np.testing.assert_array_equal(first, choose_centers(pool, 5, seed=4))
    assert first.shape == (5, 1)
    assert len(set(first.ravel())) == 5
    assert set(first.ravel()) <= set(pool)


def test_choose_centers_bounds():
    with pytest.raises(InputError):
        choose_centers(np.arange(3.0), 4, seed=0)
    with pytest.raises(InputError):
        choose_centers(np.arange(3.0), 0, seed=0)


def test_quadratic_solution_is_stationary_and_minimal():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(6, 3))
    problem = QuadraticProblem(quad=X.T @ X + np.eye(3), linear=rng.normal(size=3), constant=1.0)
    beta = problem.solve()
    assert np.linalg.norm(problem.gradient(beta)) <= 1e-8 * max(1.0, np.linalg.norm(problem.linear))
    for _ in range(20):
        assert problem.objective(beta) <= problem.objective(beta + 0.1 * rng.normal(size=3))
    assert problem.objective(beta) <= problem.objective(np.zeros(3)) + 1e-12


def test_quadratic_scalar_matches_grid():
    problem = QuadraticProblem(quad=[[0.8]], linear=[1.3], constant=0.2)
    beta = problem.solve()[0]
    grid = np.linspace(beta - 1, beta + 1, 200_001)
    values = 0.2 - 1.3 * grid + 0.8 * grid**2
    assert grid[np.argmin(values)] == pytest.approx(beta, abs=1e-4)


def test_indefinite_quadratic_raises_with_remedy():
    problem = QuadraticProblem(quad=[[1.0, 0.0], [0.0, -1.0]], linear=[0.0, 0.0])
    with pytest.raises(NumericalError, match="increase lambda"):
        problem.solve(remedy="increase lambda")


def test_jitter_scales_with_trace():
    G = np.diag([2.0, 4.0])
    assert jitter_level(G, 1e-8) == pytest.approx(3e-8)
    assert jitter_level(np.zeros((2, 2)), 1e-8) == pytest.approx(1e-8)


def test_streams_are_reproducible_and_distinct():
    assert stream(1, 2, 3).normal() == stream(1, 2, 3).normal()
    assert stream(1, 2, 3).normal() != stream(1, 2, 4).normal()
    assert derive_seed(5, 6) == derive_seed(5, 6)


@pytest.mark.parametrize("L", [2, 20, 200])
def test_gram_is_positive_semidefinite(L):
    x = np.random.default_rng(L).normal(scale=2.0, size=(L, 2))
    G = gram(x, x, KernelSpec(bandwidth=0.4, dimension=2))
    assert np.linalg.eigvalsh(G)[0] >= -1e-10 * L


def test_evaluation_is_linear_in_coefficients():
    spec = KernelSpec(bandwidth=0.6)
    centers = [-1.0, 0.2, 1.5]
    c1, c2 = np.array([0.3, -1.2, 0.8]), np.array([2.0, 0.1, -0.4])
    points = np.linspace(-3, 3, 25)
    combined = RkhsFunction(spec, centers, 1.5 * c1 - 0.7 * c2)
    expected = 1.5 * RkhsFunction(spec, centers, c1)(points) - 0.7 * RkhsFunction(spec, centers, c2)(points)
    np.testing.assert_allclose(combined(points), expected, atol=1e-12)


def test_gram_is_translation_invariant():
    rng = np.random.default_rng(3)
    spec = KernelSpec(bandwidth=0.8, dimension=2)
    a, b = rng.normal(size=(7, 2)), rng.normal(size=(4, 2))
    shift = np.array([3.5, -1.25])
    np.testing.assert_allclose(gram(a + shift, b + shift, spec), gram(a, b, spec), atol=1e-12)


def test_convexity_level():
    assert convexity_level(np.diag([-1.0, 2.0]), np.eye(2)) == pytest.approx(1.0)
    assert convexity_level(np.diag([-1.0, 2.0]), np.diag([4.0, 1.0])) == pytest.approx(0.25)
    assert convexity_level(np.eye(2), np.eye(2)) == 0.0
    with pytest.raises(NumericalError):
        convexity_level(np.eye(2), -np.eye(2))


def test_regularization_floor_lifts_only_when_needed():
    curvature = np.diag([-0.1, 0.3])
    G = np.eye(2)
    assert regularization_floor(0.05, curvature, G, jitter=1e-12) == pytest.approx(0.2)
    assert regularization_floor(0.5, curvature, G, jitter=1e-12) == 0.5
    lifted = regularization_floor(0.0, curvature, G, jitter=1e-12)
    assert np.linalg.eigvalsh(curvature + lifted * G)[0] > 0
