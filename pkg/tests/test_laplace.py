import numpy as np
import pytest

from jointred.diagnostics import hellinger_gaussian
from jointred.exceptions import DegenerateLaplaceWarning, InvalidConfigError
from jointred.laplace import LaplaceApproximation, build_laplace, find_map
from jointred.models import make_model


@pytest.fixture(scope="module")
def linear_laplace(linear_small):
    return LaplaceApproximation(linear_small, optimizer={"gtol": 1e-12}).fit()


def _normal_equations(model):
    # (Gamma_pr^{-1} + J^T Gamma^{-1} J) x = Gamma_pr^{-1} mu + J^T Gamma^{-1} y
    J = model.jacobian
    P = model.prior.prec(np.eye(model.param_dim))
    A = P + J.T @ model.noise.prec(J)
    b = P @ model.prior.mean + J.T @ model.noise.prec(model.y_obs)
    return np.linalg.solve(A, b), np.linalg.inv(A)


def test_linear_map_solves_normal_equations(linear_small, linear_laplace):
    x_ne, _ = _normal_equations(linear_small)
    err = np.linalg.norm(linear_laplace.map_point_ - x_ne) / np.linalg.norm(x_ne)
    assert err <= 1e-6


def test_low_rank_update_is_exact_at_full_rank(linear_small, linear_laplace):
    _, C = _normal_equations(linear_small)
    assert linear_laplace.eigvals_.size == np.linalg.matrix_rank(linear_small.hessian())
    C_lr = linear_laplace.dense_cov()
    assert np.linalg.norm(C_lr - C) / np.linalg.norm(C) <= 1e-8


def test_laplace_hellinger_to_exact_posterior_vanishes(linear_small, linear_laplace):
    x_ne, C = _normal_equations(linear_small)
    rep = hellinger_gaussian(linear_laplace.map_point_, linear_laplace.dense_cov(), x_ne, C)
    assert rep.value <= 1e-8


def test_prec_inverts_cov(linear_laplace):
    v = np.random.default_rng(0).standard_normal(linear_laplace.dim)
    # prior spectrum spans ~1e6, so allow for conditioning
    back = linear_laplace.prec(linear_laplace.cov(v))
    assert np.linalg.norm(back - v) <= 1e-6 * np.linalg.norm(v)


def test_samples_follow_laplace_covariance(linear_laplace):
    X = linear_laplace.sample(20000, seed=1)
    C = linear_laplace.dense_cov()
    assert np.allclose(np.cov(X.T), C, atol=0.05 * np.abs(C).max())


def test_score_samples_matches_scipy(linear_laplace):
    from scipy import stats
    X = linear_laplace.sample(4, seed=2)
    ref = stats.multivariate_normal(linear_laplace.map_point_, linear_laplace.dense_cov()).logpdf(X)
    assert np.allclose(linear_laplace.score_samples(X), ref, rtol=1e-8)


def test_nonlinear_map_is_stationary(elliptic_small):
    x, log = find_map(elliptic_small)
    assert log["converged"]
    eta, g, _ = elliptic_small.misfit_and_gradient(x)
    g_post = g + elliptic_small.prior.prec(x - elliptic_small.prior.mean)
    g0 = elliptic_small.misfit_and_gradient(elliptic_small.prior.mean)[1]
    # whitened gradient is small relative to the start
    lt = elliptic_small.prior.factor.Lt
    assert np.linalg.norm(lt(g_post)) <= 1e-5 * np.linalg.norm(lt(g0))


def test_uninformative_data_gives_prior_and_warns():
    m = make_model("toy2d", dict(noise_std=1e8, truth=[0.0, 0.0]))
    with pytest.warns(DegenerateLaplaceWarning):
        lap = build_laplace(m, m.prior.mean, eig_tol=1e-3)
    assert np.allclose(lap.dense_cov(), m.prior.cov(np.eye(2)))


def test_unknown_optimizer_option(linear_small):
    with pytest.raises(InvalidConfigError):
        find_map(linear_small, opts={"nope": 1})
