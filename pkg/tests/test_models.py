import numpy as np
import pytest
from scipy.special import erf

from conftest import fd_grad
from jointred.exceptions import InvalidConfigError
from jointred.models import make_model, onion_geometry, synthetic_data, toy2d_response


def _models(request):
    return request.getfixturevalue(request.param)


@pytest.fixture(params=["linear_small", "elliptic_small", "gomos_small"])
def model(request):
    return _models(request)


def test_misfit_gradient_matches_finite_differences(model):
    rng = np.random.default_rng(0)
    x = model.prior.sample(1, seed=rng)[0]
    eta, g, _ = model.misfit_and_gradient(x)
    g_fd = fd_grad(lambda z: model.misfit(z), x, h=1e-6)
    assert np.linalg.norm(g - g_fd) <= 1e-5 * max(1.0, np.linalg.norm(g))


def test_jvp_vjp_adjoint(model):
    rng = np.random.default_rng(1)
    x = model.prior.sample(1, seed=rng)[0]
    v = rng.standard_normal(model.param_dim)
    w = rng.standard_normal(model.data_dim)
    lhs = w @ model.jvp(x, v)
    rhs = v @ model.vjp(x, w)
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-12)


def test_gnh_action_symmetric_psd(model):
    rng = np.random.default_rng(2)
    x = model.prior.sample(1, seed=rng)[0]
    V = rng.standard_normal((model.param_dim, 3))
    H = np.column_stack([model.gnh_action(x, V[:, k]) for k in range(3)])
    G = V.T @ H
    assert np.allclose(G, G.T, rtol=1e-9, atol=1e-10 * np.abs(G).max())
    assert np.all(np.linalg.eigvalsh(0.5 * (G + G.T)) >= -1e-10 * np.abs(G).max())


def test_misfit_is_half_whitened_norm(model):
    x = model.prior.mean
    r = model.noise.whiten(model.forward(x) - model.y_obs)
    assert model.misfit(x) == pytest.approx(0.5 * r @ r)


def test_toy2d_response_closed_form():
    x1, x2 = 0.3, -1.2
    g = lambda t: (erf(t + 1) + 1) * (t + 1)
    expect = 0.5 * (g(x1) + g(x2) + (1 - erf(x1 + 1)) * np.cos(x2))
    assert toy2d_response(x1, x2) == pytest.approx(expect)
    m = make_model("toy2d", dict(noise_std=0.25, truth=[3.0, 3.0]))
    assert m.misfit(np.array([3.0, 3.0])) == pytest.approx(0.0)
    grad = m.gradient(np.array([x1, x2]))
    fd = fd_grad(lambda z: float(toy2d_response(*z)), np.array([x1, x2]))
    assert np.allclose(grad, fd, atol=1e-7)


def test_linear_model_structure(linear_small):
    m = linear_small
    x = m.prior.sample(1, seed=0)[0]
    assert np.allclose(m.solve(x), m.state_operator @ x)
    assert np.allclose(m.forward(x), (m.state_operator @ x)[m.obs_index])
    assert np.linalg.matrix_rank(m.hessian()) == m.data_dim


def test_linear_prescribed_prior_spectrum():
    m = make_model("random-linear", dict(n=200, d=20))
    ev = np.sort(np.linalg.eigvalsh(m.prior.cov(np.eye(200))))[::-1]
    i = np.arange(1, 201)
    assert np.allclose(ev, 10.0 * (i / 10.0) ** -4.0, rtol=1e-8)


def test_gomos_transmissions_and_geometry(gomos_small):
    m = gomos_small
    x = m.prior.sample(1, seed=0)[0]
    y = m.forward(x)
    assert np.all((y > 0) & (y <= 1))
    A = onion_geometry(np.linspace(10, 90, 6))
    assert np.all(A >= 0)
    assert np.allclose(A, np.triu(A)) or np.allclose(A, np.tril(A))


def test_elliptic_dirichlet_and_shapes(elliptic_small):
    m = elliptic_small
    x = m.prior.mean
    u = m.solve(x)
    assert u.shape == (m.state_dim,)
    assert np.all(np.isfinite(u))
    assert m.forward(x).shape == (13,)


def test_synthetic_data_snr_and_determinism():
    m = make_model("elliptic", dict(nx=12, ny=6, marginal_std=0.3, length_scale=3000.0))
    m1, t1, c1 = synthetic_data(m, seed=4, snr=50)
    m2, t2, c2 = synthetic_data(m, seed=4, snr=50)
    assert np.array_equal(m1.y_obs, m2.y_obs)
    assert m1.noise_std == pytest.approx(np.sqrt(np.var(c1) / 50))
    with pytest.raises(InvalidConfigError):
        synthetic_data(m, seed=0, snr=1, noise_std=1)


def test_make_model_rejects_unknown():
    with pytest.raises(InvalidConfigError):
        make_model("nope")
    with pytest.raises(InvalidConfigError):
        make_model("toy2d", {"bogus": 1})
