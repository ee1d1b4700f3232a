"""Jointly-reduced posteriors, capped importance weights and the iterative
posterior-driven construction of parameter, state and data bases.

A :class:`JointPosterior` pairs a reduced model (a ROM or a parameter-only
projection) with the Gaussian prior. In reduced coordinates its density is

    log pi(x_r) = -min(eta_r(x_r), K) - 0.5 * ||x_r - Xi^T mean||^2

and in full space it is the product with the prior on the complement of the
reduced subspace. ``K`` bounds every surrogate misfit, which caps the
importance weights ``omega``/``upsilon`` at ``exp(K)``.
"""

import logging
import time
import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from ._parallel import pmap
from ._validation import as_generator, check_count, check_samples, check_vector, effective_sample_size
from .binio import write_json
from .exceptions import (
    DegenerateWeightsError,
    DegenerateWeightsWarning,
    InvalidConfigError,
    JointRedError,
    ModelEvalError,
    WeightEvalError,
)
from .param_reduce import estimate_expected_gnh, lips_from_expected_gnh, prior_kl_basis
from .state_reduce import (
    ProjectedModel,
    build_reduced_model,
    collect_snapshots,
    deim_from_snapshots,
    pod_from_snapshots,
)

__all__ = [
    "misfit_cap",
    "JointPosterior",
    "jointly_reduced_logpdf",
    "omega_weight",
    "upsilon_weight",
    "log_omega_weights",
    "is_expectation",
    "JointSettings",
    "build_joint_posterior",
    "posterior_joint_iterate",
    "run_posterior_joint",
    "JointPosteriorApproximation",
]

logger = logging.getLogger(__name__)

CAP_CONVENTIONS = ("eta", "2eta")


def misfit_cap(d, tau_d, convention="eta"):
    """Upper-tail chi-square quantile used to bound surrogate misfits.

    ``convention="eta"`` returns ``K`` with ``P[z > K] = tau_d`` for
    ``z ~ chi2(d)`` and compares it with ``eta`` directly; ``"2eta"`` treats
    ``2 eta`` as the chi-square variable, which halves ``K``.
    """
    d = check_count(d, "d")
    tau_d = float(tau_d)
    if not 0 < tau_d < 1:
        raise InvalidConfigError(f"tau_d must lie in (0, 1), got {tau_d}")
    if convention not in CAP_CONVENTIONS:
        raise InvalidConfigError(f"cap convention must be one of {CAP_CONVENTIONS}")
    K = float(stats.chi2.isf(tau_d, d))
    return K if convention == "eta" else 0.5 * K


class JointPosterior:
    """Jointly-reduced posterior over reduced coordinates.

    Parameters
    ----------
    reduced_model : ReducedModel
        Provides ``misfit_and_gradient(x_r)`` and ``param_basis``.
    cap : float
        Misfit cap ``K``; ``inf`` disables capping.
    y_obs : ndarray, optional
        Data the full model is compared with in importance weights.
    """

    def __init__(self, reduced_model, cap=np.inf, y_obs=None, iteration=0, tag="", info=None):
        self.rom = reduced_model
        self.param_basis = reduced_model.param_basis
        self.cap = float(cap)
        if not self.cap > 0:
            raise InvalidConfigError("misfit cap must be positive")
        self.y_obs = y_obs
        self.iteration = iteration
        self.tag = tag
        self.info = dict(info or {})
        self.n_failed = 0

    @property
    def dim(self):
        return self.param_basis.dim

    @property
    def reduced_prior_mean(self):
        return self.param_basis.reduced_prior_mean

    @property
    def dims(self):
        return dict(self.rom.dims)

    def capped_misfit(self, x_r):
        return min(self.rom.misfit(x_r), self.cap)

    def logpdf_and_grad(self, x_r):
        x_r = np.asarray(x_r, dtype=float)
        dx = x_r - self.reduced_prior_mean
        try:
            eta, g = self.rom.misfit_and_gradient(x_r)
        except JointRedError as exc:
            self.n_failed += 1
            logger.debug("reduced evaluation failed: %s", exc)
            return -np.inf, np.zeros_like(x_r)
        if not np.isfinite(eta):
            return -np.inf, np.zeros_like(x_r)
        if eta >= self.cap:
            return -self.cap - 0.5 * float(dx @ dx), -dx
        return -eta - 0.5 * float(dx @ dx), -g - dx

    def logpdf(self, x_r):
        x_r = np.asarray(x_r, dtype=float)
        dx = x_r - self.reduced_prior_mean
        try:
            eta = self.rom.misfit(x_r)
        except JointRedError as exc:
            self.n_failed += 1
            logger.debug("reduced evaluation failed: %s", exc)
            return -np.inf
        return -min(eta, self.cap) - 0.5 * float(dx @ dx)

    def logpdf_full(self, x):
        """Unnormalized log density of the product-form approximation at ``x``."""
        x = check_vector(x, self.param_basis.param_dim, "x")
        x_r = self.param_basis.reduce(x)
        z = self.param_basis.prior.whiten(x)
        try:
            eta = self.capped_misfit(x_r)
        except JointRedError:
            return -np.inf
        return -eta - 0.5 * float(z @ z)

    def log_omega(self, model, x):
        """``min(eta_r(Xi^T x), K) - eta(x)``; bounded above by ``K``."""
        x = check_vector(x, model.param_dim, "x")
        try:
            eta_full = model.misfit(x, self.y_obs)
        except ModelEvalError as exc:
            raise WeightEvalError(f"full misfit failed: {exc}", getattr(exc, "diagnostics", None)) from exc
        try:
            eta_r = self.capped_misfit(self.param_basis.reduce(x))
        except JointRedError:
            eta_r = self.cap
        lw = eta_r - eta_full
        assert lw <= self.cap + 1e-9 * max(1.0, self.cap), "importance weight exceeds exp(K)"
        return lw

    def sample(self, n_draws, seed=None, mcmc_opts=None, return_chain=False):
        from .samplers import sample_joint

        return sample_joint(self, n_draws, seed, mcmc_opts, return_chain=return_chain)

    def manifest(self):
        return {"tag": self.tag, "iteration": self.iteration, "cap": self.cap,
                "dims": self.dims, **self.info}

    def save(self, stem):
        from .state_reduce import save_reduced_model

        self.param_basis.save(str(stem) + ".param")
        if not isinstance(self.rom, ProjectedModel):
            save_reduced_model(self.rom, str(stem) + ".rom")
        write_json(str(stem) + ".json", self.manifest())

    @classmethod
    def load(cls, stem, model):
        """Rebuild a posterior written by :meth:`save` for ``model`` (which carries the data)."""
        from .binio import read_json
        from .param_reduce import ReducedParamBasis
        from .state_reduce import load_reduced_model

        stem = str(stem)
        meta = read_json(stem + ".json")
        basis = ReducedParamBasis.load(stem + ".param", model.prior)
        try:
            rom = load_reduced_model(stem + ".rom", model, basis)
        except FileNotFoundError:
            rom = ProjectedModel(model, basis, model._data(None))
        info = {k: v for k, v in meta.items() if k not in ("tag", "iteration", "cap", "dims")}
        return cls(rom, meta["cap"], model._data(None), meta["iteration"], meta["tag"], info)

    def __repr__(self):
        return f"JointPosterior(tag={self.tag!r}, dims={self.dims}, K={self.cap:.4g})"


def jointly_reduced_logpdf(jp, x_r):
    return jp.logpdf(x_r)


def omega_weight(jp, model, x):
    """``exp(min(eta_r(Xi^T x), K) - eta(x))``."""
    return float(np.exp(jp.log_omega(model, x)))


def upsilon_weight(jp_old, param_basis_new, model, x):
    """Snapshot weight for the new projection and the evaluation it needs.

    Returns ``(upsilon, record)`` where ``record`` holds the full solve at the
    newly projected parameter; with ``jp_old=None`` the weight is 1.
    """
    x = check_vector(x, model.param_dim, "x")
    xp = param_basis_new.project_affine(x)
    y = None if jp_old is None else jp_old.y_obs
    try:
        record = model.evaluate(xp, y)
    except ModelEvalError as exc:
        raise WeightEvalError(f"full solve failed: {exc}") from exc
    if jp_old is None:
        return 1.0, record
    try:
        eta_r = jp_old.capped_misfit(jp_old.param_basis.reduce(x))
    except JointRedError:
        eta_r = jp_old.cap
    lw = eta_r - record.misfit
    assert lw <= jp_old.cap + 1e-9 * max(1.0, jp_old.cap), "importance weight exceeds exp(K)"
    return float(np.exp(lw)), record


def log_omega_weights(jp, model, X, jobs=None):
    """Log ``omega`` for sample rows; failed evaluations get ``-inf``."""
    X = check_samples(X, model.param_dim, "X")

    def one(x):
        try:
            return jp.log_omega(model, x)
        except WeightEvalError as exc:
            logger.warning("weight evaluation failed: %s", exc)
            return -np.inf

    return np.array(pmap(one, X, jobs))


def _checked_weights(log_w, floor, what):
    """Self-normalized weights; uniform with a warning when the ESS is too small."""
    if log_w is None:
        return None, float("nan")
    finite = np.isfinite(log_w)
    if not finite.any():
        raise DegenerateWeightsError(f"all {what} weights failed")
    w = np.exp(np.where(finite, log_w - log_w[finite].max(), -np.inf))
    ess = effective_sample_size(w)
    if ess < floor * log_w.size:
        warnings.warn(f"{what} weights have ESS {ess:.1f} of {log_w.size}; using uniform weights",
                      DegenerateWeightsWarning, stacklevel=3)
        return np.where(finite, 0.0, -np.inf), ess
    return log_w, ess


def is_expectation(g, samples, model, jp, jobs=None, log_weights=None):
    """Self-normalized importance-sampling estimate of ``E[g(x)]`` under the
    full posterior from draws of ``jp``.

    Returns
    -------
    estimate : ndarray or float
    ess : float
    """
    X = check_samples(samples, model.param_dim, "samples")
    if X.shape[0] < 2:
        raise InvalidConfigError("at least two samples are needed")
    lw = log_omega_weights(jp, model, X, jobs) if log_weights is None else np.asarray(log_weights)
    finite = np.isfinite(lw)
    if not finite.any():
        raise DegenerateWeightsError("all importance weights failed")
    w = np.exp(np.where(finite, lw - lw[finite].max(), -np.inf))
    w /= w.sum()
    vals = np.array([np.asarray(g(x), dtype=float) for x in X])
    est = np.tensordot(w, vals, axes=1)
    return est, effective_sample_size(w)


# --- construction ---------------------------------------------------------------
@dataclass
class JointSettings:
    """Budgets and truncation thresholds for building a jointly-reduced posterior."""

    n_gnh: int = 100
    n_snap: int = 200
    actions_per_sample: int = 30
    tau_g: float = 0.1
    r_max: int = None
    pod_tol: float = 1e-8
    s_max: int = None
    deim_tol: float = 1e-8
    t_max: int = None
    data_tol: float = None
    tau_d: float = 1e-4
    cap_convention: str = "eta"
    ess_floor: float = 0.01
    thin: int = 10
    mcmc: dict = None
    gnh_method: str = "auto"

    @classmethod
    def coerce(cls, settings):
        if settings is None:
            return cls()
        if isinstance(settings, cls):
            return settings
        return cls(**dict(settings))


def _state_bases(model, snaps, settings):
    state_basis = deim = out_basis = None
    weights = snaps.weights
    if model.kind in ("random-linear", "elliptic"):
        state_basis = pod_from_snapshots(snaps.states, tol=settings.pod_tol, weights=weights)
        if settings.s_max is not None and state_basis.dim > settings.s_max:
            state_basis = pod_from_snapshots(snaps.states, dim=settings.s_max, weights=weights)
    if model.kind in ("elliptic", "gomos"):
        F = np.exp(snaps.params.T)
        deim = deim_from_snapshots(F, tol=settings.deim_tol, weights=weights)
        if settings.t_max is not None and deim.dim > settings.t_max:
            deim = deim_from_snapshots(F, dim=settings.t_max, weights=weights)
    if model.kind == "gomos" and settings.data_tol is not None:
        from .data_reduce import output_basis_from_samples

        out_basis = output_basis_from_samples(snaps.outputs, model.noise, model._data(None),
                                              tol=settings.data_tol, weights=weights)
    return state_basis, deim, out_basis


def build_joint_posterior(model, param_basis, snap_samples, settings=None, jp_old=None,
                          jobs=None, iteration=0, tag="", info=None):
    """Snapshots at projected samples, state/DEIM/data bases, and the ROM.

    With ``jp_old`` the snapshots are reweighted by ``upsilon``; otherwise
    they carry uniform weights.
    """
    settings = JointSettings.coerce(settings)
    y = model._data(None)
    snaps = collect_snapshots(model, param_basis, snap_samples, jobs=jobs)
    ess = float("nan")
    if jp_old is not None:
        X_ok = check_samples(snap_samples, model.param_dim)[snaps.sample_index]

        def old(x):
            try:
                return jp_old.capped_misfit(jp_old.param_basis.reduce(x))
            except JointRedError:
                return jp_old.cap

        log_u = np.array([old(x) for x in X_ok]) - snaps.misfits
        assert np.all(log_u <= jp_old.cap + 1e-9 * max(1.0, jp_old.cap)), \
            "importance weight exceeds exp(K)"
        log_u, ess = _checked_weights(log_u, settings.ess_floor, "snapshot")
        snaps.reweight(log_u)
    state_basis, deim, out_basis = _state_bases(model, snaps, settings)
    rom = build_reduced_model(model, param_basis, state_basis, deim, out_basis)
    cap = misfit_cap(model.data_dim, settings.tau_d, settings.cap_convention)
    meta = {"snapshot_ess": ess, "snapshots": snaps.count, "failed_snapshots": len(snaps.failed)}
    meta.update(info or {})
    return JointPosterior(rom, cap, y, iteration=iteration, tag=tag, info=meta)


def _initial_samples(model, init, count, seed, laplace=None):
    if init == "prior":
        return model.prior.sample(count, seed=seed)
    if init == "laplace":
        return laplace.sample(count, seed=seed)
    raise InvalidConfigError(f"unknown initial distribution {init!r}")


def posterior_joint_iterate(jp_k, model, settings=None, seed=0, init="prior", laplace=None,
                            jobs=None):
    """One pass of the iterative posterior-driven construction.

    At the first pass (``jp_k is None``) samples come directly from the prior
    or the Laplace approximation and all importance weights are 1. Later
    passes sample ``jp_k`` by reduced MCMC times complement prior draws and
    reweight the GNH average by ``omega`` and the snapshots by ``upsilon``.

    Returns
    -------
    JointPosterior
        Its ``info`` holds dimensions, effective sample sizes, seeds and
        wall-clock time.
    """
    settings = JointSettings.coerce(settings)
    t0 = time.perf_counter()
    rng = as_generator(seed)
    s_gnh, s_snap, s_omega = (int(v) for v in rng.integers(0, 2**63 - 1, size=3))
    k = 0 if jp_k is None else jp_k.iteration
    mcmc = dict(settings.mcmc or {})
    mcmc.setdefault("thin", settings.thin)
    if jp_k is None:
        X_gnh = _initial_samples(model, init, settings.n_gnh, s_gnh, laplace)
        X_snap = _initial_samples(model, init, settings.n_snap, s_snap, laplace)
        log_w, ess_w = None, float("nan")
    else:
        X_gnh = jp_k.sample(settings.n_gnh, s_gnh, mcmc)
        X_snap = jp_k.sample(settings.n_snap, s_snap, mcmc)
        log_w = log_omega_weights(jp_k, model, X_gnh, jobs)
        log_w, ess_w = _checked_weights(log_w, settings.ess_floor, "GNH")
    S = estimate_expected_gnh(model, X_gnh, log_w, settings.actions_per_sample, s_omega,
                              method=settings.gnh_method, jobs=jobs)
    tag = "posterior-lips" if jp_k is not None else f"{init}-lips"
    basis = lips_from_expected_gnh(S, model.prior, settings.tau_g, settings.r_max, tag)
    jp = build_joint_posterior(model, basis, X_snap, settings, jp_old=jp_k, jobs=jobs,
                               iteration=k + 1, tag=tag,
                               info={"gnh_ess": ess_w, "seed": seed, "init": init})
    jp.info["seconds"] = time.perf_counter() - t0
    logger.info("iteration %d: dims %s", k + 1, jp.dims)
    return jp


def run_posterior_joint(model, iterations, settings=None, seed=0, init="laplace", laplace=None,
                        jobs=None, callback=None, common_seeds=True):
    """Run the iterative construction and return every iterate.

    With ``common_seeds`` every pass reuses the same random streams (chain
    proposals, complement draws, GNH test matrix), so consecutive iterates
    differ only through the change of target; this damps Monte Carlo jitter
    in the truncated basis dimensions.
    """
    iterations = check_count(iterations, "iterations")
    if init == "laplace" and laplace is None:
        from .laplace import LaplaceApproximation

        laplace = LaplaceApproximation(model, l_max=min(model.param_dim, model.data_dim)).fit()
    seeds = np.random.SeedSequence(seed).generate_state(iterations)
    if common_seeds:
        seeds[:] = seeds[0]
    history = []
    jp = None
    for it in range(iterations):
        try:
            jp = posterior_joint_iterate(jp, model, settings, int(seeds[it]), init, laplace, jobs)
        except JointRedError as exc:
            # surfaced by the command line runner
            exc.iteration = it + 1
            raise
        history.append(jp)
        if callback is not None:
            callback(jp)
    return history


def prior_kl_joint(model, r, settings=None, seed=0, jobs=None):
    """Prior KL modes with state bases from projected prior snapshots."""
    settings = JointSettings.coerce(settings)
    basis = prior_kl_basis(model.prior, r)
    X = model.prior.sample(settings.n_snap, seed=seed)
    return build_joint_posterior(model, basis, X, settings, jobs=jobs, tag="prior-kl")


class JointPosteriorApproximation:
    """Estimator wrapper around the construction strategies.

    Parameters
    ----------
    model : ForwardModel
        Carries the observed data.
    strategy : {"kl-pod", "prior-joint", "laplace-joint", "posterior-joint"}
    iterations : int
        Passes of the iterative construction (``posterior-joint`` only).
    init : {"laplace", "prior"}
        Initial distribution for ``posterior-joint``.
    settings : JointSettings or dict
    """

    def __init__(self, model=None, strategy="posterior-joint", iterations=3, init="laplace",
                 settings=None, r=10, random_state=0, jobs=None):
        self.model = model
        self.strategy = strategy
        self.iterations = iterations
        self.init = init
        self.settings = settings
        self.r = r
        self.random_state = random_state
        self.jobs = jobs

    def get_params(self, deep=False):
        return {k: getattr(self, k) for k in ("model", "strategy", "iterations", "init",
                                              "settings", "r", "random_state", "jobs")}

    def set_params(self, **params):
        for k, v in params.items():
            if k not in self.get_params():
                raise InvalidConfigError(f"unknown parameter {k!r}")
            setattr(self, k, v)
        return self

    def fit(self, X=None, y=None):
        settings = JointSettings.coerce(self.settings)
        model = self.model if y is None else self.model.with_data(y)
        seed = self.random_state
        if self.strategy == "kl-pod":
            self.history_ = [prior_kl_joint(model, self.r, settings, seed, self.jobs)]
        elif self.strategy == "prior-joint":
            self.history_ = run_posterior_joint(model, 1, settings, seed, "prior", jobs=self.jobs)
        elif self.strategy == "laplace-joint":
            self.history_ = run_posterior_joint(model, 1, settings, seed, "laplace", jobs=self.jobs)
        elif self.strategy == "posterior-joint":
            self.history_ = run_posterior_joint(model, self.iterations, settings, seed, self.init,
                                                jobs=self.jobs)
        else:
            raise InvalidConfigError(f"unknown strategy {self.strategy!r}")
        self.posterior_ = self.history_[-1]
        self.settings_ = asdict(settings)
        return self

    def sample(self, n_draws, seed=None):
        return self.posterior_.sample(n_draws, seed, (self.settings_.get("mcmc") or {}))

    def score_samples(self, X):
        X = check_samples(X, self.model.param_dim)
        return np.array([self.posterior_.logpdf_full(x) for x in X])
