"""MAP estimation and the low-rank Laplace approximation.

The MAP point minimizes ``eta(x) + 0.5 * ||x - mean||^2_Gamma`` and is found
by an inexact Gauss-Newton trust-region method (Steihaug conjugate gradients)
in whitened coordinates ``x = mean + L z``, where the prior preconditions
the Newton system for free.

The Laplace covariance is the low-rank update
``Gamma_pos = Gamma_pr - sum_i gamma_i / (gamma_i + 1) phi_i phi_i^T`` with
``(gamma_i, phi_i)`` the leading generalized eigenpairs of the Gauss-Newton
Hessian at the MAP point against the prior precision.
"""

import logging
import warnings

import numpy as np
import scipy.sparse.linalg as spla
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import as_generator, check_count, check_samples, check_vector
from .binio import write_json
from .exceptions import (
    DegenerateLaplaceWarning,
    InvalidConfigError,
    ModelEvalError,
    NotConvergedWarning,
)

__all__ = ["find_map", "build_laplace", "laplace_sample", "laplace_logpdf", "LaplaceApproximation"]

logger = logging.getLogger(__name__)

_DEFAULT_OPTS = {
    "max_newton": 50,
    "max_cg": 50,
    "gtol": 1e-6,
    "gtol_abs": 1e-10,
    "tr_radius": None,
    "tr_max": 1e6,
    "eta_accept": 1e-4,
}


def _steihaug(hess, g, radius, max_iter, tol):
    """Approximately minimize ``g.p + 0.5 p.Bp`` within ``||p|| <= radius``."""
    p = np.zeros_like(g)
    r = g.copy()
    d = -r
    rr = r @ r
    actions = 0
    if np.sqrt(rr) <= tol:
        return p, actions, "tolerance"
    for _ in range(max_iter):
        Bd = hess(d)
        actions += 1
        dBd = d @ Bd
        if dBd <= 0:
            return p + _to_boundary(p, d, radius) * d, actions, "negative-curvature"
        alpha = rr / dBd
        p_next = p + alpha * d
        if np.linalg.norm(p_next) >= radius:
            return p + _to_boundary(p, d, radius) * d, actions, "boundary"
        p = p_next
        r = r + alpha * Bd
        rr_new = r @ r
        if np.sqrt(rr_new) <= tol:
            return p, actions, "tolerance"
        d = -r + (rr_new / rr) * d
        rr = rr_new
    return p, actions, "max-iter"


def _to_boundary(p, d, radius):
    a, b, c = d @ d, 2 * p @ d, p @ p - radius**2
    return (-b + np.sqrt(max(b * b - 4 * a * c, 0.0))) / (2 * a)


def find_map(model, y_obs=None, x0=None, opts=None):
    """Minimize the negative log-posterior.

    Parameters
    ----------
    model : ForwardModel
    y_obs : ndarray, optional
        Defaults to the data attached to the model.
    x0 : ndarray, optional
        Starting point; the prior mean by default.
    opts : dict, optional
        ``max_newton``, ``max_cg``, ``gtol`` (relative to the initial
        gradient), ``gtol_abs``, ``tr_radius`` (initial, whitened units),
        ``tr_max``, ``eta_accept``.

    Returns
    -------
    x_map : ndarray
    log : dict
        ``converged`` flag, ``iterations`` (list of per-iteration records with
        objective, misfit, gradient norm, radius and Hessian actions) and
        ``hessian_actions`` total.
    """
    opts = {**_DEFAULT_OPTS, **(opts or {})}
    unknown = set(opts) - set(_DEFAULT_OPTS)
    if unknown:
        raise InvalidConfigError(f"unknown optimizer options {sorted(unknown)}")
    prior = model.prior
    y = model._data(y_obs)
    x0 = prior.mean.copy() if x0 is None else check_vector(x0, prior.dim, "x0")
    if not np.all(np.isfinite(x0)):
        raise InvalidConfigError("x0 must be finite")
    L = prior.factor

    def state(z):
        x = prior.unwhiten(z)
        eta, grad_x, lin = model.misfit_and_gradient(x, y)
        return eta + 0.5 * z @ z, eta, L.Lt(grad_x) + z, lin

    z = prior.whiten(x0)
    f, eta, g, lin = state(z)
    g0 = np.linalg.norm(g)
    radius = opts["tr_radius"] or max(1.0, np.sqrt(prior.dim))
    log = {"iterations": [], "hessian_actions": 0, "converged": False}
    log["iterations"].append(dict(iteration=0, objective=f, misfit=eta, grad_norm=g0,
                                  radius=radius, hessian_actions=0, accepted=True))
    target = max(opts["gtol"] * g0, opts["gtol_abs"])
    if g0 <= target:
        log["converged"] = True
        return x0, log

    for it in range(1, opts["max_newton"] + 1):
        x_cur = prior.unwhiten(z)

        def hess(v, lin=lin, x_cur=x_cur):
            return L.Lt(model.gnh_action(x_cur, L.L(v), lin=lin)) + v

        gnorm = np.linalg.norm(g)
        cg_tol = min(0.5, np.sqrt(gnorm / g0)) * gnorm
        p, actions, stop = _steihaug(hess, g, radius, opts["max_cg"], cg_tol)
        log["hessian_actions"] += actions
        pred = -(g @ p + 0.5 * p @ hess(p))
        log["hessian_actions"] += 1
        try:
            f_new, eta_new, g_new, lin_new = state(z + p)
        except ModelEvalError:
            f_new = np.inf
        ratio = (f - f_new) / pred if pred > 0 else -np.inf
        accepted = ratio > opts["eta_accept"]
        if ratio < 0.25:
            radius *= 0.5
        elif ratio > 0.75 and np.linalg.norm(p) >= 0.99 * radius:
            radius = min(2.0 * radius, opts["tr_max"])
        if accepted:
            z, f, eta, g, lin = z + p, f_new, eta_new, g_new, lin_new
        log["iterations"].append(dict(
            iteration=it, objective=f, misfit=eta, grad_norm=float(np.linalg.norm(g)),
            radius=radius, hessian_actions=actions, accepted=bool(accepted), cg_stop=stop,
        ))
        if np.linalg.norm(g) <= target:
            log["converged"] = True
            break
        if radius < 1e-12:
            break
    if not log["converged"]:
        warnings.warn(
            f"MAP search stopped after {len(log['iterations']) - 1} iterations with "
            f"gradient norm {np.linalg.norm(g):.3g} (target {target:.3g})",
            NotConvergedWarning,
            stacklevel=2,
        )
    logger.info("MAP: %d iterations, objective %.6g", len(log["iterations"]) - 1, f)
    return prior.unwhiten(z), log


def _whitened_gnh_eig(model, x, l_max, eig_tol, seed=0):
    """Eigenpairs of ``L^T H(x) L`` in descending order."""
    prior = model.prior
    n, d = model.param_dim, model.data_dim
    lin = model.linearize(x)
    if min(n, d) <= 2000:
        if d <= n:
            B = prior.factor.Lt(lin.vjp(model.noise.factor.Lt_inv(np.eye(d))))
        else:
            B = model.noise.factor.L_inv(lin.jvp(prior.factor.L(np.eye(n)))).T
        U, s, _ = np.linalg.svd(B, full_matrices=False)
        lam = s**2
    else:
        k = min(l_max or 100, n - 1)

        def mv(v):
            return prior.factor.Lt(model.gnh_action(x, prior.factor.L(v), lin=lin))

        op = spla.LinearOperator((n, n), matvec=mv, dtype=float)
        v0 = as_generator(seed).standard_normal(n)
        lam, U = spla.eigsh(op, k=k, which="LA", v0=v0)
        order = np.argsort(lam)[::-1]
        lam, U = lam[order], U[:, order]
    keep = lam >= eig_tol
    if l_max is not None:
        keep &= np.arange(lam.size) < l_max
    return lam[keep], U[:, keep]


class LaplaceApproximation(BaseEstimator):
    """Gaussian approximation at the MAP point with a low-rank covariance update.

    Parameters
    ----------
    model : ForwardModel
    l_max : int, optional
        Maximum number of retained eigenpairs.
    eig_tol : float
        Eigenvalues below this are dropped.
    optimizer : dict, optional
        Options forwarded to :func:`find_map`.

    Attributes
    ----------
    map_point_ : ndarray of shape (n,)
    eigvals_ : ndarray of shape (l,)
    eigvecs_ : ndarray of shape (n, l)
        Prior-orthonormal ``phi_i``.
    whitened_eigvecs_ : ndarray of shape (n, l)
    diagnostics_ : dict
    """

    def __init__(self, model=None, l_max=None, eig_tol=1e-6, optimizer=None):
        self.model = model
        self.l_max = l_max
        self.eig_tol = eig_tol
        self.optimizer = optimizer

    def fit(self, X=None, y=None, x0=None):
        """Find the MAP point (from ``x0`` or the prior mean) and the spectrum."""
        x_map, log = find_map(self.model, None, x0, self.optimizer)
        return self._build(x_map, log)

    def _build(self, x_map, log=None):
        prior = self.model.prior
        x_map = check_vector(x_map, prior.dim, "x_map")
        lam, psi = _whitened_gnh_eig(self.model, x_map, self.l_max, self.eig_tol)
        if lam.size == 0:
            warnings.warn("empty Laplace spectrum; covariance equals the prior",
                          DegenerateLaplaceWarning, stacklevel=3)
        self.prior_ = prior
        self.map_point_ = x_map
        self.eigvals_ = lam
        self.whitened_eigvecs_ = psi
        self.eigvecs_ = prior.factor.L(psi)
        self.diagnostics_ = log or {}
        self._contract = 1.0 - 1.0 / np.sqrt(lam + 1.0)
        return self

    @property
    def dim(self):
        return self.prior_.dim

    def whitened_sqrt(self, Z):
        """``(I - sum_i (1 - 1/sqrt(gamma_i + 1)) psi_i psi_i^T) Z`` for columns ``Z``."""
        psi = self.whitened_eigvecs_
        coef = psi.T @ Z
        scale = self._contract if coef.ndim == 1 else self._contract[:, None]
        return Z - psi @ (scale * coef)

    def sample(self, count, seed=None):
        """Rows ``x_map + L S z`` with ``S`` the whitened square root."""
        check_is_fitted(self, "map_point_")
        count = check_count(count, "count")
        Z = as_generator(seed).standard_normal((self.dim, count))
        X = self.prior_.factor.L(self.whitened_sqrt(Z))
        return (X + self.map_point_[:, None]).T

    @property
    def logdet(self):
        """``log det Gamma_pos``."""
        return self.prior_.factor.logdet - float(np.sum(np.log1p(self.eigvals_)))

    def score_samples(self, X):
        """Normalized Gaussian log-density of rows of ``X``."""
        check_is_fitted(self, "map_point_")
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X = check_samples(X, self.dim)
        Z = self.prior_.factor.L_inv((X - self.map_point_).T)
        proj = self.whitened_eigvecs_.T @ Z
        quad = np.sum(Z * Z, axis=0) + np.sum(self.eigvals_[:, None] * proj**2, axis=0)
        out = -0.5 * quad - 0.5 * self.logdet - 0.5 * self.dim * np.log(2 * np.pi)
        return float(out[0]) if single else out

    def logpdf(self, x):
        return self.score_samples(x)

    def cov(self, v):
        """``Gamma_pos v``."""
        v = np.asarray(v, dtype=float)
        phi = self.eigvecs_
        w = self.eigvals_ / (self.eigvals_ + 1.0)
        coef = phi.T @ v
        scale = w if coef.ndim == 1 else w[:, None]
        return self.prior_.cov(v) - phi @ (scale * coef)

    def prec(self, v):
        """``Gamma_pos^{-1} v``."""
        v = np.asarray(v, dtype=float)
        xi = self.prior_.factor.Lt_inv(self.whitened_eigvecs_)
        coef = xi.T @ v
        scale = self.eigvals_ if coef.ndim == 1 else self.eigvals_[:, None]
        return self.prior_.prec(v) + xi @ (scale * coef)

    def dense_cov(self):
        return self.cov(np.eye(self.dim))

    def save(self, path):
        write_json(path, {
            "map_point": self.map_point_,
            "eigvals": self.eigvals_,
            "converged": self.diagnostics_.get("converged"),
            "iterations": len(self.diagnostics_.get("iterations", [])),
        })


def build_laplace(model, x_map, l_max=None, eig_tol=1e-6, log=None):
    """Laplace approximation at a given MAP point."""
    return LaplaceApproximation(model, l_max=l_max, eig_tol=eig_tol)._build(x_map, log)


def laplace_sample(lap, rng_seed=None, count=1):
    return lap.sample(count, rng_seed)


def laplace_logpdf(lap, x):
    return lap.score_samples(x)
