"""Benchmark sweeps built from the reduction and diagnostic primitives.

These are the pipelines behind ``jointred compare`` and ``jointred spectra``:
Hellinger distance as a function of the parameter dimension for several
subspace constructions, the same for state/output bases at a fixed
parameter subspace, and second-moment spectra of the state under full and
parameter-reduced distributions.
"""

import logging
import time

import numpy as np

from ._validation import check_count, check_samples
from .diagnostics import hellinger_is, hellinger_reduced, kl_coordinates, marginal_tv
from .exceptions import InvalidConfigError
from .joint import JointPosterior, log_omega_weights, misfit_cap
from .param_reduce import estimate_expected_gnh, lips_from_expected_gnh, prior_kl_basis
from .state_reduce import (
    ProjectedModel,
    build_reduced_model,
    collect_snapshots,
    deim_from_snapshots,
    pod_from_snapshots,
)

__all__ = [
    "PARAM_METHODS",
    "parameter_sweep",
    "state_sweep",
    "state_moment_spectra",
    "reference_marginal_comparison",
]

logger = logging.getLogger(__name__)

PARAM_METHODS = ("posterior", "laplace", "prior", "kl")


def parameter_sweep(model, dims, methods=PARAM_METHODS, samples=None, n_is=2000,
                    actions_per_sample=30, tau_d=1e-4, seed=0, jobs=None):
    """Hellinger distance of parameter-reduced posteriors against the full one.

    Parameters
    ----------
    dims : sequence of int
        Reduced parameter dimensions ``r``.
    methods : sequence of str
        ``"posterior"``, ``"laplace"`` and ``"prior"`` build likelihood-informed
        subspaces from the expected GNH over the matching sample set;
        ``"kl"`` uses the leading prior KL modes.
    samples : dict
        Sample rows for every LIPS method, keyed by method name.

    Returns
    -------
    list of dict
        Rows with keys ``method, dim, hellinger2, se, estimator``.
    """
    dims = [check_count(r, "dim") for r in dims]
    unknown = set(methods) - set(PARAM_METHODS)
    if unknown:
        raise InvalidConfigError(f"unknown parameter-reduction methods {sorted(unknown)}")
    samples = dict(samples or {})
    r_max = max(dims)
    bases = {}
    for k, name in enumerate(methods):
        if name == "kl":
            bases[name] = prior_kl_basis(model.prior, r_max)
            continue
        if name not in samples:
            raise InvalidConfigError(f"method {name!r} needs a sample set")
        X = check_samples(samples[name], model.param_dim, f"{name} samples")
        S = estimate_expected_gnh(model, X, actions_per_sample=actions_per_sample,
                                  seed=seed + 101 * (k + 1), jobs=jobs)
        bases[name] = lips_from_expected_gnh(S, model.prior, 0.0, r_max, method_tag=f"{name}-lips")
    K = misfit_cap(model.data_dim, tau_d)
    rows = []
    for r in dims:
        for name in methods:
            basis = bases[name]
            if basis.dim < r:
                logger.warning("%s basis has only %d directions; skipping r=%d", name, basis.dim, r)
                continue
            jp = JointPosterior(ProjectedModel(model, basis.truncate(r)), K, model._data(None),
                                tag=name)
            t0 = time.perf_counter()
            rep = hellinger_is(model, None, jp, n_is, seed=seed + 7, jobs=jobs)
            rows.append({"method": name, "dim": r, "hellinger2": rep.value, "se": rep.std_error,
                         "estimator": rep.method, "seconds": time.perf_counter() - t0})
    return rows


def state_sweep(model, param_basis, sources, deim_dims=(None,), output_dims=(None,),
                state_dims=(None,), n_is=2000, tau_d=1e-4, seed=0, jobs=None):
    """Hellinger error of jointly-reduced posteriors against the parameter-reduced one.

    The parameter subspace is held fixed; snapshot sets differ by source.

    Parameters
    ----------
    sources : dict
        Name to sample rows; each set is projected onto ``param_basis`` and
        solved with the full model to form snapshots.
    deim_dims, output_dims, state_dims : sequences
        Basis sizes to sweep; ``None`` leaves that reduction out (or, for
        DEIM, uses the full snapshot rank). Sizes are capped at the snapshot
        rank.

    Returns
    -------
    list of dict
        Rows with ``method, dim`` (a ``t/o/s`` label), ``hellinger2, se``.
    """
    K = misfit_cap(model.data_dim, tau_d)
    y = model._data(None)
    rows = []
    for name, X in sources.items():
        snaps = collect_snapshots(model, param_basis, X, jobs=jobs)
        needs_state = model.kind in ("random-linear", "elliptic")
        needs_deim = model.kind in ("elliptic", "gomos")
        for s in (state_dims if needs_state else (None,)):
            state = pod_from_snapshots(snaps.states, tol=0.0 if s is None else None, dim=s) if needs_state else None
            for t in (deim_dims if needs_deim else (None,)):
                deim = (deim_from_snapshots(np.exp(snaps.params.T), tol=0.0 if t is None else None, dim=t)
                        if needs_deim else None)
                for o in (output_dims if model.kind == "gomos" else (None,)):
                    out = None
                    if o is not None:
                        from .data_reduce import output_basis_from_samples

                        out = output_basis_from_samples(snaps.outputs, model.noise, y, dim=o)
                    rom = build_reduced_model(model, param_basis, state, deim, out, y)
                    jp = JointPosterior(rom, K, y, tag=name)
                    rep = hellinger_reduced(jp, model, n_is, seed=seed + 3, jobs=jobs)
                    label = "/".join(f"{k}{v}" for k, v in rom.dims.items() if k != "r")
                    rows.append({"method": name, "dim": label, "hellinger2": rep.value,
                                 "se": rep.std_error, "estimator": rep.method, **rom.dims})
    return rows


def _second_moment(model, mean, cov):
    L = model.state_operator
    return L @ (cov + np.outer(mean, mean)) @ L.T


def state_moment_spectra(model, basis, k=None, samples=None):
    """Spectra of state second-moment matrices ``E[u u^T]``.

    For the linear model the four matrices are exact: under the prior, the
    posterior, and the two parameter-reduced counterparts (the affine lift of
    the reduced prior and of the reduced posterior). For other models pass
    ``samples`` (a mapping of label to parameter rows) and the spectra are the
    squared singular values of the state snapshot matrix divided by the count.

    Returns
    -------
    dict
        Label to descending eigenvalues.
    """
    if samples is not None:
        out = {}
        for label, X in samples.items():
            X = check_samples(X, model.param_dim, label)
            U = np.column_stack([model.solve(x) for x in X])
            sv = np.linalg.svd(U, compute_uv=False)
            out[label] = (sv**2 / X.shape[0])[:k]
        return out
    if model.kind != "random-linear":
        raise InvalidConfigError("closed-form spectra need the linear model; pass samples otherwise")
    prior = model.prior
    n = model.param_dim
    mu = prior.mean
    Gpr = prior.cov(np.eye(n))
    m_post, G_post = model.exact_posterior()
    phi = basis.phi
    H = model.hessian()
    J = model.jacobian
    P_r = np.eye(basis.dim) + phi.T @ H @ phi
    shift = np.linalg.solve(P_r, phi.T @ (J.T @ model.noise.prec(model._data(None) - J @ mu)))
    red_post_mean = mu + phi @ shift
    red_post_cov = phi @ np.linalg.solve(P_r, phi.T)
    mats = {
        "prior": _second_moment(model, mu, Gpr),
        "posterior": _second_moment(model, m_post, G_post),
        "reduced-prior": _second_moment(model, mu, phi @ phi.T),
        "reduced-posterior": _second_moment(model, red_post_mean, red_post_cov),
    }
    return {label: np.linalg.eigvalsh(0.5 * (M + M.T))[::-1][:k] for label, M in mats.items()}


def reference_marginal_comparison(jp, model, reference_draws, n_draws, modes=8, seed=0,
                                  mcmc_opts=None, jobs=None):
    """Importance-corrected approximate-posterior summaries against reference draws.

    Returns the relative L2 error of the mean field, both raw and relative to
    the reference deviation from the prior mean, the per-mode marginal TV on
    the leading prior KL coordinates, and the weight ESS.
    """
    R = check_samples(reference_draws, model.param_dim, "reference_draws")
    X = jp.sample(n_draws, seed, mcmc_opts)
    lw = log_omega_weights(jp, model, X, jobs)
    finite = np.isfinite(lw)
    w = np.where(finite, np.exp(lw - lw[finite].max()), 0.0)
    w /= w.sum()
    mean_is = w @ X
    m_ref = R.mean(axis=0)
    mu = model.prior.mean
    err = np.linalg.norm(mean_is - m_ref)
    ca = kl_coordinates(X, model.prior, modes)
    cb = kl_coordinates(R, model.prior, modes)
    tv = [marginal_tv(ca[:, j], cb[:, j], weights_a=w) for j in range(modes)]
    return {
        "mean_rel_error": float(err / np.linalg.norm(m_ref)),
        "mean_rel_error_centered": float(err / max(np.linalg.norm(m_ref - mu), 1e-300)),
        "marginal_tv": tv,
        "ess": float(1.0 / np.sum(w**2)),
        "n_draws": int(X.shape[0]),
        "mean": mean_is,
    }
