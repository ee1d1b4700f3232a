import numpy as np
import pytest
import scipy.linalg as sla

from jointred.exceptions import InvalidConfigError
from jointred.param_reduce import (
    LikelihoodInformedSubspace,
    PriorKL,
    ReducedParamBasis,
    complement_prior_sample,
    estimate_expected_gnh,
    lips_from_expected_gnh,
    prior_kl_basis,
)


def _exact_lips(model):
    """Generalized eigenpairs of (H, Gamma_pr^{-1}) by dense linear algebra."""
    H = model.hessian()
    P = model.prior.prec(np.eye(model.param_dim))
    w, V = sla.eigh(H, P)
    return w[::-1], V[:, ::-1]


def test_linear_lips_matches_generalized_eigenproblem(linear_small):
    m = linear_small
    X = m.prior.sample(3, seed=0)
    S = estimate_expected_gnh(m, X, actions_per_sample=20, seed=1)
    basis = lips_from_expected_gnh(S, m.prior, tau_g=1e-8)
    w, V = _exact_lips(m)
    assert basis.dim == m.data_dim
    assert np.allclose(basis.eigvals, w[: basis.dim], rtol=1e-8)
    # same subspace: projectors agree
    P1 = basis.phi @ basis.xi.T
    Vr = V[:, : basis.dim]
    P2 = Vr @ (Vr.T @ m.prior.prec(np.eye(m.param_dim)))
    assert np.allclose(P1, P2, atol=1e-8 * np.abs(P2).max())


def test_tau_and_rmax_truncation(linear_small):
    S = estimate_expected_gnh(linear_small, linear_small.prior.sample(2, seed=0),
                              actions_per_sample=20, seed=1)
    full = lips_from_expected_gnh(S, linear_small.prior, tau_g=0.0)
    cut = lips_from_expected_gnh(S, linear_small.prior, tau_g=full.eigvals[3] * 0.999)
    assert cut.dim == 4
    capped = lips_from_expected_gnh(S, linear_small.prior, tau_g=0.0, r_max=2)
    assert capped.dim == 2
    assert np.all(np.diff(full.eigvals) <= 0)


def test_weighted_expected_gnh_ignores_zero_weights(elliptic_small):
    m = elliptic_small
    X = m.prior.sample(3, seed=2)
    lw = np.array([0.0, -np.inf, -np.inf])
    S_w = estimate_expected_gnh(m, X, log_weights=lw, actions_per_sample=m.data_dim, seed=3)
    S_1 = estimate_expected_gnh(m, X[:1], actions_per_sample=m.data_dim, seed=3)
    v = np.random.default_rng(0).standard_normal(m.param_dim)
    assert np.allclose(S_w.matvec(v), S_1.matvec(v), rtol=1e-8, atol=1e-10)


@pytest.fixture(params=["linear_small", "elliptic_small", "gomos_small"])
def prior_and_basis(request):
    m = request.getfixturevalue(request.param)
    return m.prior


def test_projector_invariants_on_random_bases(prior_and_basis):
    prior = prior_and_basis
    n = prior.dim
    rng = np.random.default_rng(5)
    for trial in range(100):
        r = int(rng.integers(1, min(n, 8) + 1))
        # random prior-orthonormal basis: Phi = L Q with Q orthonormal
        Q, _ = np.linalg.qr(rng.standard_normal((n, r)))
        phi = prior.factor.L(Q)
        b = ReducedParamBasis(phi, prior)
        Pi = b.phi @ b.xi.T
        assert np.allclose(Pi @ Pi, Pi, atol=1e-8 * max(1, np.abs(Pi).max()))
        # Gamma-orthogonality: Pi Gamma = Gamma Pi^T
        G = prior.cov(np.eye(n))
        assert np.allclose(Pi @ G, G @ Pi.T, atol=1e-8 * np.abs(G).max())
        assert np.allclose(b.xi.T @ G @ b.xi, np.eye(r), atol=1e-8)
        comp = complement_prior_sample(b, rng_seed=trial, count=3)
        assert np.abs(b.reduce(comp)).max() <= 1e-8 * max(1, np.abs(comp).max())


def test_affine_lift_anchored_at_prior_mean(elliptic_small):
    prior = elliptic_small.prior
    b = prior_kl_basis(prior, 5)
    x = prior.sample(1, seed=0)[0]
    assert np.allclose(b.project_affine(prior.mean), prior.mean)
    assert np.allclose(b.reduce(b.lift(b.reduce(x))), b.reduce(x))
    assert np.allclose(b.reduced_prior_mean, b.reduce(prior.mean))


def test_prior_kl_spectrum_is_leading_covariance(linear_small):
    prior = linear_small.prior
    b = prior_kl_basis(prior, 4)
    ev = np.sort(np.linalg.eigvalsh(prior.cov(np.eye(prior.dim))))[::-1][:4]
    assert np.allclose(b.eigvals, ev, rtol=1e-8)


def test_basis_save_load_roundtrip(tmp_path, elliptic_small):
    b = prior_kl_basis(elliptic_small.prior, 4)
    b.save(tmp_path / "basis")
    c = ReducedParamBasis.load(tmp_path / "basis", elliptic_small.prior)
    assert np.array_equal(b.phi, c.phi) and np.array_equal(b.xi, c.xi)
    assert c.method_tag == b.method_tag


def test_invalid_method_tag(elliptic_small):
    with pytest.raises(InvalidConfigError):
        ReducedParamBasis(np.zeros((elliptic_small.param_dim, 1)), elliptic_small.prior, method_tag="x")


def test_estimators_fit_transform(linear_small):
    lis = LikelihoodInformedSubspace(model=linear_small, tau_g=1e-6, actions_per_sample=20)
    X = linear_small.prior.sample(4, seed=0)
    Z = lis.fit(X).transform(X)
    assert Z.shape == (4, lis.n_components_)
    assert np.allclose(lis.transform(lis.inverse_transform(Z)), Z)
    kl = PriorKL(prior=linear_small.prior, n_components=3).fit()
    assert kl.transform(X).shape == (4, 3)
