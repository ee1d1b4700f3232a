import numpy as np
import pytest

from jointred.exceptions import InvalidConfigError
from jointred.experiments import parameter_sweep, state_moment_spectra, state_sweep
from jointred.laplace import LaplaceApproximation
from jointred.models import make_model, synthetic_data
from jointred.param_reduce import estimate_expected_gnh, lips_from_expected_gnh, prior_kl_basis


def test_parameter_sweep_rows_and_full_rank_limit(linear_soft):
    m = linear_soft
    lap = LaplaceApproximation(m).fit()
    rows = parameter_sweep(m, [2, m.data_dim], ["laplace", "kl"],
                           samples={"laplace": lap.sample(10, seed=0)}, n_is=400, seed=1)
    assert {(r["method"], r["dim"]) for r in rows} == {("laplace", 2), ("kl", 2),
                                                      ("laplace", 8), ("kl", 8)}
    assert all(0 <= r["hellinger2"] <= 1 for r in rows)
    # at r = d the likelihood-informed subspace is complete for a linear model
    full = next(r for r in rows if r["method"] == "laplace" and r["dim"] == m.data_dim)
    assert full["hellinger2"] < 1e-8


def test_parameter_sweep_requires_samples(linear_soft):
    with pytest.raises(InvalidConfigError):
        parameter_sweep(linear_soft, [2], ["posterior"])
    with pytest.raises(InvalidConfigError):
        parameter_sweep(linear_soft, [2], ["bogus"])


def test_state_sweep_full_bases_are_exact(linear_soft):
    m = linear_soft
    S = estimate_expected_gnh(m, m.prior.sample(5, seed=0), actions_per_sample=10, seed=1)
    basis = lips_from_expected_gnh(S, m.prior, 1e-10)
    rows = state_sweep(m, basis, {"prior": m.prior.sample(60, seed=2)}, state_dims=[None, 2], n_is=300)
    exact = next(r for r in rows if r["s"] > 2)
    assert exact["hellinger2"] < 1e-8
    coarse = next(r for r in rows if r["s"] == 2)
    assert coarse["hellinger2"] > exact["hellinger2"]


def test_linear_reduced_spectra_vanish_beyond_data_dimension():
    m = make_model("random-linear", dict(n=200, d=20, kappa0=100.0, a_L=2.0, b_L=2.0,
                                         rho0=10.0, a_pr=10.0, b_pr=4.0))
    m, _, _ = synthetic_data(m, seed=1, noise_std=1.0)
    S = estimate_expected_gnh(m, m.prior.sample(2, seed=0), actions_per_sample=30, seed=1)
    basis = lips_from_expected_gnh(S, m.prior, 1e-12)
    assert basis.dim == 20
    spec = state_moment_spectra(m, basis, k=25)
    for label in ("reduced-prior", "reduced-posterior"):
        s = spec[label]
        assert np.all(s[20:] <= 1e-8 * s[0])
    for label in ("prior", "posterior"):
        s = spec[label]
        assert s[20] / s[19] > 1e-3


def test_sample_based_spectra(elliptic_small):
    X = elliptic_small.prior.sample(30, seed=0)
    spec = state_moment_spectra(elliptic_small, None, k=10, samples={"prior": X})
    assert spec["prior"].shape == (10,) and np.all(np.diff(spec["prior"]) <= 0)
    with pytest.raises(InvalidConfigError):
        state_moment_spectra(elliptic_small, prior_kl_basis(elliptic_small.prior, 2))
