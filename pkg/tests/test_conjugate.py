import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from heavytails.conjugate import normal_conjugate_posterior
from heavytails.model import ConjugatePrior, Dataset, simulate_dataset


def test_zero_data():
    post = normal_conjugate_posterior(Dataset(np.ones((5, 2)), np.zeros(5)), ConjugatePrior(2.0, 3.0))
    np.testing.assert_array_equal(post.beta_hat, [0.0, 0.0])
    assert post.ig_scale == 3.0


def test_hand_example():
    post = normal_conjugate_posterior(Dataset([[1.0]], [2.0]), ConjugatePrior(2.0, 2.0))
    assert post.beta_hat[0] == pytest.approx(1.0, rel=1e-15)
    assert post.ig_shape == 2.5
    assert post.ig_scale == pytest.approx(3.0, rel=1e-15)


def test_unit_ridge_solution():
    d = simulate_dataset(20, 1)
    ridge = np.linalg.solve(d.X.T @ d.X + np.eye(2), d.X.T @ d.y)
    np.testing.assert_allclose(normal_conjugate_posterior(d).beta_hat, ridge, rtol=1e-12)


def test_sigma2_mean():
    post = normal_conjugate_posterior(simulate_dataset(20, 1))
    assert post.sigma2_mean == pytest.approx(post.ig_scale / (post.ig_shape - 1))


def test_log_density_normalizes():
    from scipy import integrate

    post = normal_conjugate_posterior(Dataset(np.ones((4, 1)), [0.5, 1.5, 0.9, 1.2]))
    c = float(post.beta_hat[0])
    half = lambda g: 15 * math.exp(g / 2) / math.sqrt(post.precision[0, 0])
    val, _ = integrate.dblquad(lambda b, g: math.exp(post.log_density(np.array([b]), g)),
                               -8, 14, lambda g: c - half(g), lambda g: c + half(g),
                               epsabs=1e-12, epsrel=1e-12)
    assert val == pytest.approx(1.0, abs=1e-8)


def test_exact_draws_match_moments():
    post = normal_conjugate_posterior(simulate_dataset(20, 2))
    draws = post.sample(200_000, seed=0)
    se = post.beta_sd / math.sqrt(draws.shape[0])
    assert np.all(np.abs(draws[:, :2].mean(0) - post.beta_hat) < 5 * se)
    assert np.exp(draws[:, 2]).mean() == pytest.approx(post.sigma2_mean, rel=0.02)


def test_sigma_and_gamma_means():
    post = normal_conjugate_posterior(simulate_dataset(20, 2))
    draws = post.sample(200_000, seed=1)
    assert np.exp(draws[:, 2] / 2).mean() == pytest.approx(post.sigma_mean, rel=5e-3)
    assert draws[:, 2].mean() == pytest.approx(post.gamma_mean, abs=5e-3)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 30).flatmap(lambda n: st.tuples(
    arrays(float, (n, 2), elements=st.floats(-100, 100)),
    arrays(float, (n,), elements=st.floats(-1e3, 1e3)))))
def test_residual_identity(xy):
    X, y = xy
    d = Dataset(X, y)
    post = normal_conjugate_posterior(d, ConjugatePrior(1.0, 1.0))
    lhs = y @ y - post.beta_hat @ post.precision @ post.beta_hat
    rhs = (y - X @ post.beta_hat) @ y
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-9 * max(1.0, y @ y))
    assert rhs >= -1e-9 * max(1.0, y @ y)
    assert post.ig_scale > 0


def test_non_finite_rejected():
    with pytest.raises(ValueError):
        normal_conjugate_posterior(Dataset(np.ones((2, 1)), [1.0, math.inf]))
