import numpy as np
import pytest
from pydantic import ValidationError

from sampling.simulate import (
    ContinuousDgpParams,
    ExactIdDgpParams,
    dgp_continuous,
    dgp_exact_id,
    h_star,
    theta_star_quadrature,
)


def _exact_uniform_mean(center: float, half_width: float) -> float:
    lo, hi = center - half_width, center + half_width
    mean_sin = (np.cos(lo) - np.cos(hi)) / (hi - lo)
    above = np.clip((hi - 0.25) / (hi - lo), 0.0, 1.0)
    return center + mean_sin + above


def test_h_star_values():
    np.testing.assert_allclose(h_star([0.0, 0.25, 1.0]), [0.0, 0.25 + np.sin(0.25), 2.0 + np.sin(1.0)])


def test_continuous_shapes_and_metadata():
    D, Dnew, theta = dgp_continuous(ContinuousDgpParams(K=5, n=6, n_new=7, seed=3))
    assert (D.K, D.n, D.N, Dnew.n_new) == (5, 6, 30, 7)
    assert D.metadata["dgp"] == "continuous"
    assert np.isfinite(theta)


def test_continuous_is_deterministic_per_seed_and_rep():
    p = ContinuousDgpParams(K=3, n=4, n_new=5, seed=9, rep=2)
    first, second = dgp_continuous(p), dgp_continuous(p)
    np.testing.assert_array_equal(first[0].S, second[0].S)
    np.testing.assert_array_equal(first[1].S_new, second[1].S_new)
    other = dgp_continuous(p.model_copy(update={"rep": 3}))
    assert not np.array_equal(first[0].S, other[0].S)


def test_arms_do_not_depend_on_arm_count():
    small = dgp_continuous(ContinuousDgpParams(K=2, n=4, n_new=5, seed=1))[0]
    large = dgp_continuous(ContinuousDgpParams(K=4, n=4, n_new=5, seed=1))[0]
    np.testing.assert_array_equal(small.S, large.S[: small.N])


def test_no_confounding_gives_structural_outcomes():
    D, _, _ = dgp_continuous(ContinuousDgpParams(K=3, n=5, n_new=5, sigma_u=0.0, seed=2))
    np.testing.assert_allclose(D.Y, h_star(D.S[:, 0]))


def test_continuous_theta_closed_form_without_noise():
    p = ContinuousDgpParams(K=1, n=1, n_new=1, sigma_u=0.0, gamma_new=1.0)
    expected = 1.0 + (np.cos(0.5) - np.cos(1.5)) + 1.0
    assert theta_star_quadrature(p) == pytest.approx(expected, abs=1e-10)


def test_continuous_theta_matches_monte_carlo():
    p = ContinuousDgpParams(K=1, n=1, n_new=1)
    rng = np.random.default_rng(0)
    draws = 400_000
    s = rng.uniform(0.5, 1.5, size=draws) + rng.normal(size=draws)
    values = h_star(s)
    se = values.std() / np.sqrt(draws)
    assert abs(theta_star_quadrature(p) - values.mean()) < 4 * se


def test_exact_id_theta_is_uniform_mixture():
    p = ExactIdDgpParams(K=1, n=1, n_new=1)
    expected = sum(w * _exact_uniform_mean(s, 0.2) for w, s in zip(p.mu_new, p.support))
    assert theta_star_quadrature(p) == pytest.approx(expected, abs=1e-9)


def test_exact_id_support_and_confounding():
    p = ExactIdDgpParams(K=4, n=10, n_new=20, seed=5)
    D, Dnew, _ = dgp_exact_id(p)
    support = np.asarray(p.support)
    offsets = D.S[:, 0][:, None] - support[None, :]
    assert np.all(np.min(np.abs(offsets), axis=1) <= 0.2 + 1e-12)
    U = D.S[:, 0] - support[np.argmin(np.abs(offsets), axis=1)]
    np.testing.assert_allclose(D.Y, h_star(D.S[:, 0]) - 10.0 * U)
    new_offsets = Dnew.S_new[:, 0][:, None] - support[None, :]
    # the novel arm never draws the first support point
    assert np.all(np.argmin(np.abs(new_offsets), axis=1) > 0)


def test_exact_id_params_validation():
    with pytest.raises(ValidationError):
        ExactIdDgpParams(K=1, n=1, n_new=1, mu_new=[0.5, 0.5, 0.0, 0.0, 0.1])
    with pytest.raises(ValidationError):
        ExactIdDgpParams(K=1, n=1, n_new=1, support=[0.0, 0.0, 1.0, 2.0, 3.0])
    with pytest.raises(ValidationError):
        ExactIdDgpParams(K=1, n=1, n_new=1, mu_new=[0.5, 0.5])
    with pytest.raises(ValidationError):
        ContinuousDgpParams(K=0, n=1, n_new=1)


def _confounder(D) -> np.ndarray:
    # continuous design: Y = h*(S) - U
    return h_star(D.S[:, 0]) - D.Y


def test_confounder_is_independent_of_the_arm():
    D, _, _ = dgp_continuous(ContinuousDgpParams(K=200, n=50, n_new=1, seed=4))
    rho = np.corrcoef(_confounder(D), D.A)[0, 1]
    assert abs(rho) < 3 / np.sqrt(D.N)


def test_confounding_sign():
    D, _, _ = dgp_continuous(ContinuousDgpParams(K=200, n=50, n_new=1, seed=5))
    U = _confounder(D)
    assert np.corrcoef(U, D.S[:, 0])[0, 1] > 0.2
    assert np.corrcoef(U, D.Y - h_star(D.S[:, 0]))[0, 1] < -0.99


def test_moment_restriction_holds_per_arm():
    D, _, _ = dgp_continuous(ContinuousDgpParams(K=5, n=4000, n_new=1, seed=6))
    residual = D.Y - h_star(D.S[:, 0])
    for a in range(D.K):
        r = residual[D.A == a]
        assert abs(r.mean()) < 4 * r.std(ddof=1) / np.sqrt(r.shape[0])
