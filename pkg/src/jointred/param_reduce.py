"""Likelihood-informed and Karhunen-Loeve parameter bases.

A :class:`ReducedParamBasis` holds ``Phi`` (prior-orthonormal columns,
``Phi^T Gamma^{-1} Phi = I``) and its dual ``Xi = Gamma^{-1} Phi``, so that
``Pi = Phi Xi^T`` is the prior-orthogonal projector. Reduced coordinates are
``x_r = Xi^T x`` and the reduced prior is ``N(Xi^T mean, I)``.

Parameters restricted to the subspace are anchored at the prior mean:
``lift(x_r) = Phi x_r + (I - Pi) mean``. This is the mean of the complement
prior, so the full-space density of ``Phi x_r + complement draw`` is
unchanged while a non-zero prior mean is preserved.
"""

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._parallel import pmap
from ._validation import (
    as_generator,
    check_count,
    check_positive,
    check_samples,
    check_vector,
    normalized_log_weights,
)
from .binio import read_json, read_matrix, write_json, write_matrix
from .exceptions import (
    DegenerateWeightsError,
    EmptyBasisError,
    InvalidConfigError,
    ShapeError,
)
from .gaussian import GaussianMeasure, SparsePrecision, Spectral

__all__ = [
    "METHOD_TAGS",
    "ReducedParamBasis",
    "WhitenedLowRank",
    "estimate_expected_gnh",
    "lips_from_expected_gnh",
    "prior_kl_basis",
    "split_params",
    "complement_prior_sample",
    "LikelihoodInformedSubspace",
    "PriorKL",
]

METHOD_TAGS = ("posterior-lips", "laplace-lips", "prior-lips", "prior-kl", "custom")


def _sign_fix(vectors):
    """Flip columns so the largest-magnitude entry is positive."""
    if vectors.shape[1] == 0:
        return vectors
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


class ReducedParamBasis:
    """Prior-orthonormal parameter basis with its dual.

    Parameters
    ----------
    phi : ndarray of shape (n, r)
    prior : GaussianMeasure
    eigvals : ndarray of shape (r,), optional
    method_tag : str
    xi : ndarray of shape (n, r), optional
        Dual basis; computed as ``Gamma^{-1} phi`` when omitted.
    info : dict, optional
        Provenance (truncation threshold, sample counts, ...).
    """

    def __init__(self, phi, prior, eigvals=None, method_tag="custom", xi=None, info=None):
        phi = np.asarray(phi, dtype=float)
        if phi.ndim != 2 or phi.shape[0] != prior.dim:
            raise ShapeError(f"phi must be ({prior.dim}, r), got {phi.shape}")
        if method_tag not in METHOD_TAGS:
            raise InvalidConfigError(f"unknown method tag {method_tag!r}")
        self.phi = phi
        self.prior = prior
        self.xi = prior.prec(phi) if xi is None else np.asarray(xi, dtype=float)
        if self.xi.shape != phi.shape:
            raise ShapeError("xi must have the same shape as phi")
        r = phi.shape[1]
        self.eigvals = np.zeros(r) if eigvals is None else np.asarray(eigvals, dtype=float)
        if self.eigvals.shape != (r,):
            raise ShapeError(f"eigvals must have length {r}")
        self.method_tag = method_tag
        self.info = dict(info or {})
        self.reduced_prior_mean = self.xi.T @ prior.mean
        self.anchor = prior.mean - phi @ self.reduced_prior_mean
        for a in (self.phi, self.xi, self.eigvals, self.reduced_prior_mean, self.anchor):
            a.setflags(write=False)

    @property
    def dim(self):
        return self.phi.shape[1]

    @property
    def param_dim(self):
        return self.phi.shape[0]

    def reduce(self, x):
        """``Xi^T x`` for a vector or rows of a matrix."""
        x = np.asarray(x, dtype=float)
        return x @ self.xi

    def lift(self, x_r):
        """``Phi x_r + (I - Pi) mean`` for a vector or rows of a matrix."""
        x_r = np.asarray(x_r, dtype=float)
        return x_r @ self.phi.T + self.anchor

    def project(self, x):
        """``Pi x`` (linear projector)."""
        return self.reduce(x) @ self.phi.T

    def project_affine(self, x):
        """``mean + Pi (x - mean)``: the parameter seen by reduced models."""
        return self.lift(self.reduce(x))

    def complement(self, x):
        """``(I - Pi) x``."""
        x = np.asarray(x, dtype=float)
        return x - self.project(x)

    def whitened(self):
        """Orthonormal columns ``L^{-1} Phi`` of the whitened basis."""
        return self.prior.factor.L_inv(self.phi)

    def truncate(self, r):
        r = check_count(r, "r", 0)
        if r > self.dim:
            raise ShapeError(f"cannot truncate a basis of dimension {self.dim} to {r}")
        return ReducedParamBasis(
            self.phi[:, :r], self.prior, self.eigvals[:r], self.method_tag,
            xi=self.xi[:, :r], info=dict(self.info, truncated_from=self.dim),
        )

    def save(self, stem):
        """Write ``<stem>.phi.bin``, ``<stem>.xi.bin`` and ``<stem>.json``."""
        stem = str(stem)
        write_matrix(stem + ".phi.bin", self.phi)
        write_matrix(stem + ".xi.bin", self.xi)
        write_json(stem + ".json", {
            "method_tag": self.method_tag,
            "eigvals": self.eigvals,
            "dim": self.dim,
            "param_dim": self.param_dim,
            **self.info,
        })

    @classmethod
    def load(cls, stem, prior):
        stem = str(stem)
        meta = read_json(stem + ".json")
        phi = read_matrix(stem + ".phi.bin")[:, : meta["dim"]]
        xi = read_matrix(stem + ".xi.bin")[:, : meta["dim"]]
        info = {k: v for k, v in meta.items() if k not in ("method_tag", "eigvals", "dim", "param_dim")}
        return cls(phi, prior, np.asarray(meta["eigvals"]), meta["method_tag"], xi=xi, info=info)

    def __repr__(self):
        return f"ReducedParamBasis(r={self.dim}, n={self.param_dim}, method={self.method_tag!r})"


class WhitenedLowRank:
    """Symmetric PSD operator ``U diag(eigvals) U^T`` with orthonormal ``U``."""

    def __init__(self, vectors, eigvals, dim):
        self.vectors = np.asarray(vectors, dtype=float).reshape(dim, -1)
        self.eigvals = np.asarray(eigvals, dtype=float)
        self.dim = dim

    @classmethod
    def from_factor(cls, F, dim, rtol=1e-14):
        """From ``S = F F^T``."""
        F = np.asarray(F, dtype=float).reshape(dim, -1)
        if F.shape[1] == 0:
            return cls(np.zeros((dim, 0)), np.zeros(0), dim)
        U, s, _ = sla.svd(F, full_matrices=False, lapack_driver="gesvd")
        lam = s**2
        keep = lam > rtol * max(lam[0], np.finfo(float).tiny) if lam.size else lam > 0
        return cls(_sign_fix(U[:, keep]), lam[keep], dim)

    @classmethod
    def from_dense(cls, S):
        S = np.asarray(S, dtype=float)
        S = 0.5 * (S + S.T)
        lam, U = np.linalg.eigh(S)
        order = np.argsort(lam)[::-1]
        lam, U = lam[order], U[:, order]
        keep = lam > 1e-14 * max(abs(lam[0]), np.finfo(float).tiny) if lam.size else lam > 0
        return cls(_sign_fix(U[:, keep]), lam[keep], S.shape[0])

    @property
    def rank(self):
        return self.eigvals.size

    def matvec(self, v):
        coef = self.vectors.T @ v
        scale = self.eigvals if coef.ndim == 1 else self.eigvals[:, None]
        return self.vectors @ (scale * coef)

    def dense(self):
        return (self.vectors * self.eigvals) @ self.vectors.T

    def factor(self):
        return self.vectors * np.sqrt(self.eigvals)


def _sample_factor(model, x, prior, actions, omega, method):
    """Whitened GNH square-root factor ``B`` with ``L^T H(x) L ~ B B^T``."""
    n, d = model.param_dim, model.data_dim
    lin = model.linearize(x)
    noise = model.noise.factor
    if method == "dense":
        H = model.gnh_action(x, prior.factor.L(np.eye(n)), lin=lin)
        S = prior.factor.Lt(H)
        return WhitenedLowRank.from_dense(S).factor()
    if method == "exact" or (method == "auto" and d <= actions):
        # L^T J^T Gamma_obs^{-1/2}: one adjoint action per output
        return prior.factor.Lt(lin.vjp(noise.Lt_inv(np.eye(d))))
    # Nystrom approximation from ``actions`` GNH products on a shared test matrix
    Y = prior.factor.Lt(model.gnh_action(x, prior.factor.L(omega), lin=lin))
    nu = np.sqrt(n) * np.finfo(float).eps * max(np.linalg.norm(Y), np.finfo(float).tiny)
    Y = Y + nu * omega
    C = omega.T @ Y
    C = 0.5 * (C + C.T)
    try:
        chol = np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        lam, V = np.linalg.eigh(C)
        lam = np.maximum(lam, nu)
        chol = V * np.sqrt(lam)
        Bt = np.linalg.lstsq(chol, Y.T, rcond=None)[0]
    else:
        Bt = sla.solve_triangular(chol, Y.T, lower=True)
    U, s, _ = sla.svd(Bt.T, full_matrices=False)
    lam = np.maximum(s**2 - nu, 0.0)
    return U * np.sqrt(lam)


def estimate_expected_gnh(model, samples, log_weights=None, actions_per_sample=30,
                          seed=0, method="auto", jobs=None):
    """Weighted average of whitened Gauss-Newton Hessians over samples.

    ``S = sum_k w_k L^T H(x_k) L`` with self-normalized weights ``w``.

    Parameters
    ----------
    model : ForwardModel
    samples : ndarray of shape (N, n)
    log_weights : ndarray of shape (N,), optional
        Unnormalized log importance weights; uniform when absent.
    actions_per_sample : int
        GNH products per sample. When the data dimension does not exceed this
        budget, each sample's factor is exact (computed from ``d`` adjoint
        actions); otherwise a Nystrom approximation with a test matrix shared
        by all samples is used.
    method : {"auto", "exact", "nystrom", "dense"}
        ``"dense"`` assembles every per-sample Hessian (only for ``n <= 512``).

    Returns
    -------
    WhitenedLowRank
    """
    prior = model.prior
    n = prior.dim
    X = check_samples(samples, n, "samples")
    actions = check_count(actions_per_sample, "actions_per_sample")
    if method not in ("auto", "exact", "nystrom", "dense"):
        raise InvalidConfigError(f"unknown GNH method {method!r}")
    if method == "dense" and n > 512:
        raise InvalidConfigError("dense GNH assembly is limited to n <= 512")
    w = normalized_log_weights(log_weights, X.shape[0])
    if not np.all(np.isfinite(w)) or w.sum() <= 0:
        raise DegenerateWeightsError("weights are not usable")
    omega = as_generator(seed).standard_normal((n, min(actions, n)))
    active = np.flatnonzero(w > 0)

    def one(k):
        return np.sqrt(w[k]) * _sample_factor(model, X[k], prior, actions, omega, method)

    blocks = []
    width = 0
    for F in pmap(one, active, jobs):
        blocks.append(F)
        width += F.shape[1]
        if width > 4 * n:
            # compress to keep memory bounded; exact since S = F F^T
            comp = WhitenedLowRank.from_factor(np.hstack(blocks), n).factor()
            blocks, width = [comp], comp.shape[1]
    out = WhitenedLowRank.from_factor(np.hstack(blocks) if blocks else np.zeros((n, 0)), n)
    out.n_samples = int(active.size)
    out.ess = float(1.0 / np.sum(w**2))
    return out


def lips_from_expected_gnh(S_hat, prior, tau_g, r_max=None, method_tag="posterior-lips", info=None):
    """Leading eigenvectors of the whitened expected GNH, mapped back by ``L``.

    Keeps eigenvalues ``>= tau_g`` (ties within 1e-12 included), at most
    ``r_max`` of them.
    """
    tau_g = check_positive(tau_g, "tau_g", allow_zero=True)
    if isinstance(S_hat, WhitenedLowRank):
        op = S_hat
    else:
        op = WhitenedLowRank.from_dense(S_hat)
    if op.dim != prior.dim:
        raise ShapeError(f"operator has dimension {op.dim}, prior has {prior.dim}")
    lam = op.eigvals
    keep = lam >= tau_g - 1e-12 * max(1.0, abs(tau_g))
    keep &= lam > 0
    r = int(np.sum(keep))
    if r_max is not None:
        r = min(r, int(r_max))
    if r == 0:
        top = lam[0] if lam.size else 0.0
        raise EmptyBasisError(f"no eigenvalue above tau_g={tau_g:g} (largest {top:.3g})")
    psi = op.vectors[:, :r]
    phi = prior.factor.L(psi)
    xi = prior.factor.Lt_inv(psi)
    meta = {"tau_g": tau_g, "r_max": r_max, "spectrum": lam}
    if hasattr(op, "n_samples"):
        meta["n_samples"] = op.n_samples
    meta.update(info or {})
    return ReducedParamBasis(phi, prior, lam[:r], method_tag, xi=xi, info=meta)


def prior_kl_basis(prior, r):
    """Leading ``r`` Karhunen-Loeve modes ``sqrt(rho_i) psi_i`` of the prior."""
    n = prior.dim
    r = check_count(r, "r", 0)
    if r > n:
        raise ShapeError(f"r={r} exceeds the parameter dimension {n}")
    fac = prior.factor
    if isinstance(fac, Spectral):
        order = np.argsort(fac.rho, kind="stable")[::-1][:r]
        rho = fac.rho[order]
        psi = np.eye(n)[:, order] if fac.psi is None else fac.psi[:, order]
    elif isinstance(fac, SparsePrecision) and n > 2000 and r < n // 4:
        P = fac.precision_matrix()
        mu, psi = spla.eigsh(P, k=max(r, 1), sigma=0.0, which="LM")
        order = np.argsort(mu)[:r]
        rho, psi = 1.0 / mu[order], psi[:, order]
    else:
        lam, V = np.linalg.eigh(fac.dense_cov())
        order = np.argsort(lam)[::-1][:r]
        rho, psi = lam[order], V[:, order]
    psi = _sign_fix(psi)
    phi = psi * np.sqrt(rho)
    xi = psi / np.sqrt(rho)
    return ReducedParamBasis(phi, prior, rho, "prior-kl", xi=xi, info={"r": r})


def split_params(basis, x):
    """``(Xi^T x, (I - Pi) x)``; ``Phi x_r + x_comp`` reconstructs ``x``."""
    x = check_vector(x, basis.param_dim)
    x_r = basis.reduce(x)
    return x_r, x - basis.phi @ x_r


def complement_prior_sample(basis, prior=None, rng_seed=None, count=1):
    """Rows ``(I - Pi) zeta`` with ``zeta`` drawn from the prior."""
    prior = basis.prior if prior is None else prior
    zeta = prior.sample(check_count(count, "count"), rng_seed)
    return basis.complement(zeta)


class LikelihoodInformedSubspace(TransformerMixin, BaseEstimator):
    """Likelihood-informed parameter subspace estimated from samples.

    ``fit`` takes samples of a reference distribution (prior, Laplace or
    posterior) and optional log importance weights. ``transform`` maps rows
    of parameters to reduced coordinates and ``inverse_transform`` lifts them.

    Parameters
    ----------
    model : ForwardModel
    tau_g : float
        Eigenvalue truncation threshold.
    max_rank : int, optional
    actions_per_sample : int
    method_tag : str
    gnh_method : str
    random_state : int or None
    """

    def __init__(self, model=None, tau_g=0.1, max_rank=None, actions_per_sample=30,
                 method_tag="posterior-lips", gnh_method="auto", random_state=0):
        self.model = model
        self.tau_g = tau_g
        self.max_rank = max_rank
        self.actions_per_sample = actions_per_sample
        self.method_tag = method_tag
        self.gnh_method = gnh_method
        self.random_state = random_state

    def fit(self, X, y=None, log_weights=None):
        if self.model is None:
            raise InvalidConfigError("a forward model is required")
        S = estimate_expected_gnh(
            self.model, X, log_weights, self.actions_per_sample,
            seed=self.random_state, method=self.gnh_method,
        )
        self.expected_gnh_ = S
        self.spectrum_ = S.eigvals
        self.basis_ = lips_from_expected_gnh(
            S, self.model.prior, self.tau_g, self.max_rank, self.method_tag,
            info={"n_samples": int(np.asarray(X).shape[0])},
        )
        self.n_components_ = self.basis_.dim
        return self

    def transform(self, X):
        check_is_fitted(self, "basis_")
        return self.basis_.reduce(check_samples(X, self.basis_.param_dim))

    def inverse_transform(self, X_r):
        check_is_fitted(self, "basis_")
        return self.basis_.lift(check_samples(X_r, self.basis_.dim, "X_r"))


class PriorKL(TransformerMixin, BaseEstimator):
    """Truncated Karhunen-Loeve basis of a Gaussian prior.

    ``fit`` ignores its data argument; it exists for pipeline compatibility.
    """

    def __init__(self, prior=None, n_components=10):
        self.prior = prior
        self.n_components = n_components

    def fit(self, X=None, y=None):
        if not isinstance(self.prior, GaussianMeasure):
            raise InvalidConfigError("a GaussianMeasure prior is required")
        self.basis_ = prior_kl_basis(self.prior, self.n_components)
        self.n_components_ = self.basis_.dim
        return self

    def transform(self, X):
        check_is_fitted(self, "basis_")
        return self.basis_.reduce(check_samples(X, self.basis_.param_dim))

    def inverse_transform(self, X_r):
        check_is_fitted(self, "basis_")
        return self.basis_.lift(check_samples(X_r, self.basis_.dim, "X_r"))
