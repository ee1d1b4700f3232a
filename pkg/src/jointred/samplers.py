"""Adaptive MALA, product-form sampling and a full-space reference sampler."""

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.optimize as sopt

from ._validation import as_generator, check_count, check_vector
from .binio import write_json, write_matrix
from .exceptions import ChainFailedError, InvalidConfigError, JointRedError

__all__ = [
    "Chain",
    "MalaOptions",
    "adaptive_mala",
    "reduced_mode_and_covariance",
    "sample_reduced",
    "sample_joint",
    "reference_full_mcmc",
]

logger = logging.getLogger(__name__)


@dataclass
class MalaOptions:
    """Sampler settings.

    ``steps`` counts post-burn-in iterations; ``burn_in`` is a fraction of
    ``steps`` run first and discarded. Step size and (optionally) the
    preconditioner adapt only during burn-in, so the kept chain is a
    time-homogeneous Markov chain.
    """

    target_accept: float = 0.574
    adapt_rate: float = 1.0
    adapt_decay: float = 0.6
    thin: int = 10
    burn_in: float = 0.2
    step_size: float = None
    adapt_cov: bool = True
    max_failure_frac: float = 0.5
    failure_window: int = 100

    def __post_init__(self):
        if not 0 < self.target_accept < 1:
            raise InvalidConfigError("target_accept must lie in (0, 1)")
        check_count(self.thin, "thin")
        if not 0 <= self.burn_in < 10:
            raise InvalidConfigError("burn_in must be a nonnegative fraction of steps")

    @classmethod
    def coerce(cls, opts):
        if opts is None:
            return cls()
        if isinstance(opts, cls):
            return opts
        return cls(**dict(opts))


@dataclass
class Chain:
    """Thinned post-burn-in draws, one per row."""

    draws: np.ndarray
    accept_rate: float
    step_trace: np.ndarray
    seed: object = None
    target_tag: str = ""
    logpdf: np.ndarray = None
    info: dict = field(default_factory=dict)

    @property
    def n_draws(self):
        return self.draws.shape[0]

    def save(self, stem, opts=None):
        write_matrix(str(stem) + ".bin", self.draws)
        write_json(str(stem) + ".json", {
            "n_draws": self.n_draws, "dim": self.draws.shape[1],
            "accept_rate": self.accept_rate, "seed": self.seed,
            "target": self.target_tag, "opts": opts, **self.info,
        })


def adaptive_mala(logpdf_and_grad, x0, steps, opts=None, seed=None, precond=None,
                  target_tag=""):
    """Preconditioned MALA with Robbins-Monro step-size adaptation.

    Proposal ``x' = x + (h^2/2) C g(x) + h C^{1/2} xi`` with ``C = S S^T``.
    During burn-in ``log h`` moves by ``rate * t^{-decay} (a - target)`` and
    ``C`` tracks the empirical covariance of the chain.

    Parameters
    ----------
    logpdf_and_grad : callable
        ``x -> (logpdf, grad)``; may return a non-finite value, which rejects
        the proposal.
    x0 : ndarray of shape (dim,)
    steps : int
        Number of post-burn-in iterations (before thinning).
    opts : MalaOptions or dict, optional
    precond : ndarray of shape (dim, dim), optional
        Initial proposal covariance ``C``; identity when omitted.

    Returns
    -------
    Chain
    """
    opts = MalaOptions.coerce(opts)
    steps = check_count(steps, "steps")
    x = check_vector(x0, name="x0").copy()
    dim = x.size
    rng = as_generator(seed)
    lp, g = logpdf_and_grad(x)
    if not np.isfinite(lp):
        raise ChainFailedError("log density is not finite at the starting point")
    C = np.eye(dim) if precond is None else 0.5 * (np.asarray(precond, float) + np.asarray(precond, float).T)
    S = _chol(C)
    C = S @ S.T
    h = opts.step_size if opts.step_size is not None else 1.6 / dim ** (1 / 6)
    log_h = np.log(h) if h > 0 else -np.inf
    n_burn = int(round(opts.burn_in * steps))
    total = n_burn + steps

    draws = np.empty((steps // opts.thin, dim))
    lps = np.empty(draws.shape[0])
    trace = np.empty(total)
    accepted = 0
    recent_fail = np.zeros(opts.failure_window, dtype=bool)
    # running moments for covariance adaptation
    mean = x.copy()
    cov_acc = np.zeros((dim, dim))
    n_mom = 1
    keep = 0

    for t in range(total):
        h = np.exp(log_h) if np.isfinite(log_h) else 0.0
        drift = 0.5 * h * h * (C @ g)
        prop = x + drift + h * (S @ rng.standard_normal(dim))
        failed = False
        try:
            lp_p, g_p = logpdf_and_grad(prop)
            failed = not (np.isfinite(lp_p) and np.all(np.isfinite(g_p)))
        except JointRedError as exc:
            logger.debug("proposal rejected: %s", exc)
            failed = True
        if failed or h <= 0:
            # a zero step never moves, so nothing counts as accepted
            alpha = 0.0
        else:
            fwd = prop - x - drift
            bwd = x - prop - 0.5 * h * h * (C @ g_p)
            lq_fwd = -0.5 * _quad(S, fwd) / (h * h)
            lq_bwd = -0.5 * _quad(S, bwd) / (h * h)
            log_a = lp_p - lp + lq_bwd - lq_fwd
            alpha = 1.0 if log_a >= 0 else float(np.exp(log_a))
        recent_fail[t % opts.failure_window] = failed
        if t >= opts.failure_window and recent_fail.mean() > opts.max_failure_frac:
            raise ChainFailedError(
                f"{recent_fail.mean():.0%} of the last {opts.failure_window} proposals failed"
            )
        if rng.uniform() < alpha:
            x, lp, g = prop, lp_p, g_p
            if t >= n_burn:
                accepted += 1
        if t < n_burn:
            log_h += opts.adapt_rate * (t + 1) ** (-opts.adapt_decay) * (alpha - opts.target_accept)
            if opts.adapt_cov:
                n_mom += 1
                delta = x - mean
                mean += delta / n_mom
                cov_acc += np.outer(delta, x - mean)
                if n_mom >= max(50, 2 * dim) and (t + 1) % 50 == 0:
                    emp = cov_acc / (n_mom - 1) + 1e-10 * np.trace(cov_acc) / (n_mom * dim) * np.eye(dim)
                    new_S = _chol(emp, fail_ok=True)
                    if new_S is not None:
                        C, S = emp, new_S
        trace[t] = np.exp(log_h)
        if t >= n_burn and (t - n_burn + 1) % opts.thin == 0:
            k = (t - n_burn + 1) // opts.thin - 1
            if k < draws.shape[0]:
                draws[keep] = x
                lps[keep] = lp
                keep += 1

    return Chain(draws[:keep], accepted / steps, trace, seed, target_tag, lps[:keep],
                 info={"burn_in": n_burn, "thin": opts.thin, "final_step": float(np.exp(log_h))})


def _chol(C, fail_ok=False):
    try:
        return np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        if fail_ok:
            return None
        w, V = np.linalg.eigh(C)
        w = np.clip(w, 1e-10 * max(w.max(), 1e-300), None)
        return np.linalg.cholesky((V * w) @ V.T)


def _quad(S, v):
    z = sla.solve_triangular(S, v, lower=True)
    return float(z @ z)


def reduced_mode_and_covariance(logpdf_and_grad, x0, fd_step=1e-5):
    """Mode of a low-dimensional density and the inverse of its FD Hessian.

    Used to start and precondition reduced-space chains. The Hessian is
    symmetrized and its eigenvalues floored so the result is SPD.
    """
    x0 = check_vector(x0, name="x0")

    def obj(x):
        lp, g = logpdf_and_grad(x)
        if not np.isfinite(lp):
            return 1e300, np.zeros_like(x)
        return -lp, -g

    res = sopt.minimize(obj, x0, jac=True, method="L-BFGS-B",
                        options={"maxiter": 500, "gtol": 1e-8})
    mode = res.x if np.isfinite(res.fun) and res.fun < obj(x0)[0] + 1e-12 else x0
    dim = mode.size
    H = np.empty((dim, dim))
    for i in range(dim):
        e = np.zeros(dim)
        step = fd_step * max(1.0, abs(mode[i]))
        e[i] = step
        H[:, i] = (obj(mode + e)[1] - obj(mode - e)[1]) / (2 * step)
    H = 0.5 * (H + H.T)
    w, V = np.linalg.eigh(H)
    # the reduced prior contributes an identity, so curvature is at least ~1
    w = np.clip(w, 1.0, None) if np.all(np.isfinite(w)) else np.ones(dim)
    return mode, (V / w) @ V.T


def sample_reduced(jp, n_draws, seed=None, opts=None, x0=None):
    """Chain on the jointly-reduced density, started at its mode."""
    opts = MalaOptions.coerce(opts)
    n_draws = check_count(n_draws, "n_draws")
    if jp.dim == 0:
        return Chain(np.zeros((n_draws, 0)), 1.0, np.zeros(0), seed, "reduced")
    start = jp.reduced_prior_mean if x0 is None else x0
    mode, cov = reduced_mode_and_covariance(jp.logpdf_and_grad, start)
    return adaptive_mala(jp.logpdf_and_grad, mode, n_draws * opts.thin, opts, seed=seed,
                         precond=cov, target_tag="jointly-reduced")


def sample_joint(jp, n_draws, rng_seed=None, mcmc_opts=None, return_chain=False):
    """Draws of the product-form approximate posterior in full parameter space.

    ``x = lift(x_r) + (I - Pi)(x_pr - mean)`` with ``x_r`` from a reduced
    chain and ``x_pr`` independent prior draws.
    """
    rng = as_generator(rng_seed)
    chain_seed, comp_seed = rng.integers(0, 2**63 - 1, size=2)
    chain = sample_reduced(jp, n_draws, seed=int(chain_seed), opts=mcmc_opts)
    basis = jp.param_basis
    comp = basis.prior.sample(chain.n_draws, seed=int(comp_seed)) - basis.prior.mean
    comp = comp - basis.project(comp)
    X = basis.lift(chain.draws) + comp if basis.dim else basis.prior.mean + comp
    return (X, chain) if return_chain else X


def reference_full_mcmc(model, y_obs=None, steps=10000, opts=None, seed=None, laplace=None,
                        l_max=None):
    """Full-space MALA preconditioned by a Laplace covariance.

    Intended for desk-scale ground truth. The preconditioner is the dense
    Laplace covariance; with ``opts.adapt_cov`` off (the default here) only
    the step size adapts.
    """
    from .laplace import LaplaceApproximation

    if model.param_dim > 5000:
        raise InvalidConfigError("reference sampler is limited to desk-scale models")
    opts = MalaOptions.coerce(opts if opts is not None else {"adapt_cov": False})
    y = model._data(y_obs)
    if laplace is None:
        laplace = LaplaceApproximation(model.with_data(y), l_max=l_max or min(model.param_dim, model.data_dim)).fit()
    C = laplace.dense_cov()

    def target(x):
        try:
            eta, g, _ = model.misfit_and_gradient(x, y)
        except JointRedError:
            return -np.inf, np.zeros_like(x)
        z = model.prior.whiten(x)
        return -eta - 0.5 * float(z @ z), -g - model.prior.prec(x - model.prior.mean)

    chain = adaptive_mala(target, laplace.map_point_, steps, opts, seed=seed, precond=C,
                          target_tag="full-posterior")
    return chain
