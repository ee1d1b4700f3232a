import numpy as np
import pytest
from scipy import stats

from jointred.exceptions import ChainFailedError, InvalidConfigError
from jointred.joint import JointPosterior, misfit_cap
from jointred.models import make_model, toy2d_response
from jointred.param_reduce import prior_kl_basis
from jointred.samplers import MalaOptions, adaptive_mala, reference_full_mcmc, sample_joint
from jointred.state_reduce import ProjectedModel


def _std_normal(x):
    return -0.5 * float(x @ x), -x


def test_mala_standard_gaussian_mean_within_three_se():
    ch = adaptive_mala(_std_normal, np.zeros(2), 100_000, MalaOptions(thin=10), seed=0)
    X = ch.draws
    # batch means standard error
    bm = np.array([b.mean(0) for b in np.array_split(X, 50)])
    se = bm.std(0, ddof=1) / np.sqrt(50)
    assert np.all(np.abs(X.mean(0)) <= 3 * se)
    assert np.allclose(X.var(0), 1.0, atol=0.1)
    assert abs(ch.accept_rate - 0.574) < 0.1


def test_zero_step_accepts_nothing():
    ch = adaptive_mala(_std_normal, np.ones(2), 500, MalaOptions(step_size=0.0, burn_in=0.0, thin=1), seed=1)
    assert ch.accept_rate == 0.0
    assert np.allclose(ch.draws, 1.0)


def test_tiny_step_without_adaptation_accepts_everything():
    ch = adaptive_mala(_std_normal, np.zeros(3), 500,
                       MalaOptions(step_size=1e-4, burn_in=0.0, thin=1), seed=2)
    assert ch.accept_rate > 0.99


def test_flat_target_adapts_toward_target_acceptance():
    # uniform on [-1, 1]^2 with a soft wall; gradient vanishes inside
    def target(x):
        excess = np.clip(np.abs(x) - 1.0, 0, None)
        return -1e3 * float(excess @ excess), -2e3 * excess * np.sign(x)

    ch = adaptive_mala(target, np.zeros(2), 20_000, MalaOptions(thin=1, burn_in=1.0, adapt_cov=False), seed=3)
    assert abs(ch.accept_rate - 0.574) < 0.05


def test_chain_failed_on_persistent_failures():
    calls = {"n": 0}

    def target(x):
        calls["n"] += 1
        return (0.0, np.zeros_like(x)) if calls["n"] == 1 else (-np.inf, np.zeros_like(x))

    with pytest.raises(ChainFailedError):
        adaptive_mala(target, np.zeros(2), 1000, MalaOptions(thin=1), seed=0)
    with pytest.raises(ChainFailedError):
        adaptive_mala(lambda x: (-np.inf, x), np.zeros(2), 10, seed=0)


def test_options_validation():
    with pytest.raises(InvalidConfigError):
        MalaOptions(target_accept=1.5)
    with pytest.raises(InvalidConfigError):
        adaptive_mala(_std_normal, np.zeros(2), 0)


def test_sample_joint_reduced_coordinates_and_complement():
    m = make_model("random-linear", dict(n=20, d=5, rho0=0.1, kappa0=1.0, seed=1))
    from jointred.models import synthetic_data
    m, _, _ = synthetic_data(m, seed=0, noise_std=0.5)
    basis = prior_kl_basis(m.prior, 3)
    jp = JointPosterior(ProjectedModel(m, basis), misfit_cap(m.data_dim, 1e-4), m.y_obs)
    X, chain = sample_joint(jp, 3000, rng_seed=4, return_chain=True)
    assert np.allclose(basis.reduce(X), chain.draws, atol=1e-10)
    # complement part is prior distributed with covariance (I - Pi) Gamma (I - Pi)^T
    comp = basis.complement(X - m.prior.mean)
    G = m.prior.cov(np.eye(m.param_dim))
    Pi = basis.phi @ basis.xi.T
    Cc = (np.eye(m.param_dim) - Pi) @ G @ (np.eye(m.param_dim) - Pi).T
    assert np.allclose(np.cov(comp.T), Cc, atol=0.1 * np.abs(Cc).max())
    # and independent of the reduced chain
    c = np.corrcoef(np.column_stack([chain.draws, comp @ np.random.default_rng(0).standard_normal(m.param_dim)]).T)
    assert np.abs(c[-1, :3]).max() < 0.1


def test_toy2d_reduced_marginals_match_grid():
    m = make_model("toy2d", dict(noise_std=0.25, truth=[3.0, 3.0]))
    basis = prior_kl_basis(m.prior, 2)
    jp = JointPosterior(ProjectedModel(m, basis), np.inf, m.y_obs)
    X = sample_joint(jp, 10_000, rng_seed=0, mcmc_opts={"thin": 10})
    # grid truth
    g = np.linspace(-4, 8, 1201)
    G1, G2 = np.meshgrid(g, g, indexing="ij")
    resid = (toy2d_response(G1, G2) - m.y_obs[0]) / m.noise_std
    lp = -0.5 * resid**2 - 0.5 * (G1**2 + G2**2)
    p = np.exp(lp - lp.max())
    p /= p.sum()
    for ax in range(2):
        marg = p.sum(axis=1 - ax)
        cdf = np.cumsum(marg)
        ks = stats.kstest(X[:, ax], lambda t: np.interp(t, g, cdf)).statistic
        assert ks < 0.02, ks


def test_reference_chain_linear_mean(linear_soft):
    mean, cov = linear_soft.exact_posterior()
    ch = reference_full_mcmc(linear_soft, steps=20_000, opts={"thin": 10, "adapt_cov": False}, seed=5)
    X = ch.draws
    bm = np.array([b.mean(0) for b in np.array_split(X, 20)])
    se = bm.std(0, ddof=1) / np.sqrt(20)
    z = (X.mean(0) - mean) / se
    # 30 components: allow the usual 3-sigma band on all but a rare one
    assert np.mean(np.abs(z) <= 3) >= 0.95
