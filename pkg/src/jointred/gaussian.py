"""Gaussian measures with factorized covariances.

A :class:`GaussianMeasure` pairs a mean with a :class:`CovarianceFactorization`
``Gamma = L L^T``. Three factorization kinds are supported:

``dense-cholesky``
    ``L`` is the lower Cholesky factor of a dense covariance.
``spectral``
    ``Gamma = Psi diag(rho) Psi^T`` with ``Psi`` square orthogonal (or the
    identity when omitted, i.e. a diagonal covariance); ``L = Psi diag(sqrt(rho))``.
``sparse-precision``
    The precision is given through a sparse root, ``P = R^T R``, and
    ``L = R^{-1}`` is applied by a sparse LU solve.

Vectors passed to factor actions may be ``(n,)`` or ``(n, k)`` (columns).
Samples returned by :func:`prior_sample` are rows, ``(count, n)``.
"""

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ._fem import q1_element_matrices
from ._validation import as_generator, check_count, check_positive, check_vector
from .exceptions import FactorizationError, InvalidConfigError, ShapeError

__all__ = [
    "CovarianceFactorization",
    "DenseCholesky",
    "Spectral",
    "SparsePrecision",
    "GaussianMeasure",
    "jittered_cholesky",
    "build_squared_exp_prior",
    "build_spde_prior",
    "spde_precision_root",
    "whiten",
    "unwhiten",
    "prior_inner",
    "prior_sample",
]


def _check_rows(v, n):
    v = np.asarray(v, dtype=float)
    if v.shape[0] != n or v.ndim > 2:
        raise ShapeError(f"expected leading dimension {n}, got shape {v.shape}")
    return v


class CovarianceFactorization:
    """Square-root factorization ``Gamma = L L^T`` of an SPD matrix.

    Subclasses implement the six actions below; everything else is derived.
    """

    kind = None
    dim = 0

    def L(self, v):
        """Apply ``L``."""
        raise NotImplementedError

    def Lt(self, v):
        """Apply ``L^T``."""
        raise NotImplementedError

    def L_inv(self, v):
        """Apply ``L^{-1}``."""
        raise NotImplementedError

    def Lt_inv(self, v):
        """Apply ``L^{-T}``."""
        raise NotImplementedError

    def cov(self, v):
        """Apply ``Gamma``."""
        return self.L(self.Lt(v))

    def prec(self, v):
        """Apply ``Gamma^{-1}``."""
        return self.Lt_inv(self.L_inv(v))

    @property
    def logdet(self):
        """``log det Gamma``."""
        raise NotImplementedError

    def dense_cov(self):
        return self.cov(np.eye(self.dim))

    def dense_factor(self):
        return self.L(np.eye(self.dim))

    def scaled(self, factor):
        """Factorization of ``factor**2 * Gamma``."""
        raise NotImplementedError


class DenseCholesky(CovarianceFactorization):
    kind = "dense-cholesky"

    def __init__(self, chol, jitter=0.0):
        chol = np.asarray(chol, dtype=float)
        if chol.ndim != 2 or chol.shape[0] != chol.shape[1]:
            raise ShapeError(f"Cholesky factor must be square, got {chol.shape}")
        if np.any(np.diag(chol) <= 0):
            raise FactorizationError("Cholesky factor has non-positive pivots")
        self.chol = chol
        self.jitter = float(jitter)
        self.dim = chol.shape[0]

    @classmethod
    def from_covariance(cls, cov, max_jitter_rel=1e-6):
        chol, jitter = jittered_cholesky(cov, max_jitter_rel=max_jitter_rel)
        return cls(chol, jitter)

    def L(self, v):
        return self.chol @ _check_rows(v, self.dim)

    def Lt(self, v):
        return self.chol.T @ _check_rows(v, self.dim)

    def L_inv(self, v):
        return sla.solve_triangular(self.chol, _check_rows(v, self.dim), lower=True)

    def Lt_inv(self, v):
        return sla.solve_triangular(
            self.chol, _check_rows(v, self.dim), lower=True, trans="T"
        )

    @property
    def logdet(self):
        return 2.0 * float(np.sum(np.log(np.diag(self.chol))))

    def dense_factor(self):
        return self.chol.copy()

    def scaled(self, factor):
        return DenseCholesky(self.chol * factor, self.jitter * factor**2)


class Spectral(CovarianceFactorization):
    kind = "spectral"

    def __init__(self, eigvals, eigvecs=None):
        rho = np.asarray(eigvals, dtype=float).ravel()
        if np.any(rho <= 0) or not np.all(np.isfinite(rho)):
            raise FactorizationError("spectral covariance needs positive eigenvalues")
        if eigvecs is not None:
            eigvecs = np.asarray(eigvecs, dtype=float)
            if eigvecs.shape != (rho.size, rho.size):
                raise ShapeError(
                    f"eigenvector matrix must be {rho.size}x{rho.size}, got {eigvecs.shape}"
                )
        self.rho = rho
        self.psi = eigvecs
        self.dim = rho.size
        self._sqrt = np.sqrt(rho)

    def _scale(self, v, s):
        return v * (s if v.ndim == 1 else s[:, None])

    def L(self, v):
        v = self._scale(_check_rows(v, self.dim), self._sqrt)
        return v if self.psi is None else self.psi @ v

    def Lt(self, v):
        v = _check_rows(v, self.dim)
        if self.psi is not None:
            v = self.psi.T @ v
        return self._scale(v, self._sqrt)

    def L_inv(self, v):
        v = _check_rows(v, self.dim)
        if self.psi is not None:
            v = self.psi.T @ v
        return self._scale(v, 1.0 / self._sqrt)

    def Lt_inv(self, v):
        v = self._scale(_check_rows(v, self.dim), 1.0 / self._sqrt)
        return v if self.psi is None else self.psi @ v

    @property
    def logdet(self):
        return float(np.sum(np.log(self.rho)))

    def scaled(self, factor):
        return Spectral(self.rho * factor**2, self.psi)


class SparsePrecision(CovarianceFactorization):
    """Precision ``P = R^T R`` given through a sparse, invertible root ``R``."""

    kind = "sparse-precision"

    def __init__(self, root):
        root = sp.csc_matrix(root, dtype=float)
        if root.shape[0] != root.shape[1]:
            raise ShapeError(f"precision root must be square, got {root.shape}")
        self.root = root
        self.dim = root.shape[0]
        try:
            self._lu = spla.splu(root)
        except RuntimeError as exc:
            raise FactorizationError(f"sparse LU of precision root failed: {exc}") from exc
        diag_u = self._lu.U.diagonal()
        if np.any(diag_u == 0) or not np.all(np.isfinite(diag_u)):
            raise FactorizationError("precision root is singular")
        self._logabsdet = float(np.sum(np.log(np.abs(diag_u))))

    @classmethod
    def from_precision(cls, precision):
        """Root ``R = C^T`` from the Cholesky factor ``C`` of a precision matrix."""
        dense = precision.toarray() if sp.issparse(precision) else np.asarray(precision)
        try:
            chol = np.linalg.cholesky(dense)
        except np.linalg.LinAlgError as exc:
            raise FactorizationError("precision matrix is not positive definite") from exc
        return cls(sp.csc_matrix(chol.T))

    def _solve(self, v, trans):
        return self._lu.solve(np.asarray(v, dtype=float), trans=trans)

    def L(self, v):
        return self._solve(_check_rows(v, self.dim), "N")

    def Lt(self, v):
        return self._solve(_check_rows(v, self.dim), "T")

    def L_inv(self, v):
        return self.root @ _check_rows(v, self.dim)

    def Lt_inv(self, v):
        return self.root.T @ _check_rows(v, self.dim)

    def precision_matrix(self):
        return (self.root.T @ self.root).tocsc()

    @property
    def logdet(self):
        return -2.0 * self._logabsdet

    def scaled(self, factor):
        return SparsePrecision(self.root / factor)

    def marginal_variances(self, chunk=256):
        """Exact ``diag(Gamma)`` via blocked solves with ``R^T``."""
        n = self.dim
        out = np.empty(n)
        for start in range(0, n, chunk):
            stop = min(n, start + chunk)
            rhs = np.zeros((n, stop - start))
            rhs[np.arange(start, stop), np.arange(stop - start)] = 1.0
            cols = self._solve(rhs, "T")
            out[start:stop] = np.sum(cols * cols, axis=0)
        return out


def jittered_cholesky(cov, start_rel=1e-10, max_jitter_rel=1e-6):
    """Cholesky factor with escalating diagonal jitter.

    Tries the plain factorization first, then adds ``start_rel * trace / n``
    and multiplies by 10 until ``max_jitter_rel * trace / n``.

    Returns
    -------
    chol : ndarray
        Lower-triangular factor.
    jitter : float
        Diagonal shift that was needed (0 when none).
    """
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ShapeError(f"covariance must be square, got {cov.shape}")
    cov = 0.5 * (cov + cov.T)
    n = cov.shape[0]
    scale = np.trace(cov) / n
    if not np.isfinite(scale) or scale <= 0:
        raise FactorizationError("covariance has non-positive trace")
    jitter = 0.0
    eye = np.eye(n)
    rel = start_rel
    while True:
        try:
            return np.linalg.cholesky(cov + jitter * eye), jitter
        except np.linalg.LinAlgError:
            if rel > max_jitter_rel * (1 + 1e-9):
                raise FactorizationError(
                    f"Cholesky failed with jitter up to {max_jitter_rel:g}*trace/n"
                ) from None
            jitter = rel * scale
            rel *= 10.0


class GaussianMeasure:
    """Gaussian measure ``N(mean, L L^T)``.

    Parameters
    ----------
    mean : array-like of shape (n,)
    factor : CovarianceFactorization
    """

    def __init__(self, mean, factor):
        if not isinstance(factor, CovarianceFactorization):
            raise InvalidConfigError("factor must be a CovarianceFactorization")
        self.mean = check_vector(mean, factor.dim, "mean").copy()
        self.mean.setflags(write=False)
        self.factor = factor

    @property
    def dim(self):
        return self.factor.dim

    @classmethod
    def from_covariance(cls, mean, cov):
        cov = np.asarray(cov, dtype=float)
        if cov.ndim == 1:
            return cls(mean, Spectral(cov))
        return cls(mean, DenseCholesky.from_covariance(cov))

    @classmethod
    def isotropic(cls, dim, variance=1.0, mean=None):
        check_positive(variance, "variance")
        mean = np.zeros(dim) if mean is None else mean
        return cls(mean, Spectral(np.full(dim, float(variance))))

    def whiten(self, x):
        x = np.asarray(x, dtype=float)
        centered = x - (self.mean if x.ndim == 1 else self.mean[:, None])
        return self.factor.L_inv(centered)

    def unwhiten(self, z):
        z = np.asarray(z, dtype=float)
        out = self.factor.L(z)
        return out + (self.mean if out.ndim == 1 else self.mean[:, None])

    def cov(self, v):
        return self.factor.cov(v)

    def prec(self, v):
        return self.factor.prec(v)

    def inner(self, x1, x2):
        """Prior-weighted inner product ``<x1, Gamma^{-1} x2>``."""
        x1 = check_vector(x1, self.dim, "x1")
        x2 = check_vector(x2, self.dim, "x2")
        return float(x1 @ self.factor.prec(x2))

    def logpdf(self, X):
        """Log density of rows of ``X`` (or a single vector)."""
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        Z = self.whiten(X.T if not single else X)
        sq = np.sum(Z * Z, axis=0)
        out = -0.5 * sq - 0.5 * self.factor.logdet - 0.5 * self.dim * np.log(2 * np.pi)
        return float(out) if single else out

    def sample(self, count, seed=None):
        check_count(count, "count")
        rng = as_generator(seed)
        z = rng.standard_normal((self.dim, count))
        return self.unwhiten(z).T

    def scaled(self, factor):
        """Same mean, covariance multiplied by ``factor**2``."""
        return GaussianMeasure(self.mean, self.factor.scaled(factor))

    def __repr__(self):
        return f"GaussianMeasure(dim={self.dim}, kind={self.factor.kind!r})"


def whiten(measure, x):
    """``z = L^{-1}(x - mean)``."""
    return measure.whiten(check_vector(x, measure.dim))


def unwhiten(measure, z):
    """``x = L z + mean``."""
    return measure.unwhiten(check_vector(z, measure.dim, "z"))


def prior_inner(measure, x1, x2):
    return measure.inner(x1, x2)


def prior_sample(measure, count, rng_seed=None):
    """``count`` i.i.d. draws as rows of a ``(count, n)`` array."""
    return measure.sample(count, rng_seed)


def build_squared_exp_prior(grid_coords, sigmas, corr_len, means=None):
    """Block-diagonal squared-exponential prior.

    Block ``i`` has covariance ``sigmas[i] * exp(-|z - z'|^2 / (2 corr_len^2))``
    over ``grid_coords``; blocks are stacked block-major.

    Parameters
    ----------
    grid_coords : array-like of shape (k,)
        Positions shared by all blocks.
    sigmas : sequence of float
        Kernel amplitude (marginal variance) per block.
    corr_len : float
    means : float, sequence or array, optional
        Per-block constant means or a full mean vector. Defaults to zero.
    """
    grid = np.asarray(grid_coords, dtype=float).ravel()
    if grid.size == 0:
        raise InvalidConfigError("grid must be nonempty")
    sigmas = np.atleast_1d(np.asarray(sigmas, dtype=float))
    if np.any(~np.isfinite(sigmas)) or np.any(sigmas <= 0):
        raise InvalidConfigError(f"sigmas must be positive, got {sigmas}")
    try:
        corr_len = check_positive(corr_len, "corr_len")
    except (TypeError, ValueError) as exc:
        raise InvalidConfigError(str(exc)) from None
    k = grid.size
    diff = grid[:, None] - grid[None, :]
    kernel = np.exp(-(diff**2) / (2.0 * corr_len**2))
    chol1, jitter = jittered_cholesky(kernel)
    # every block is a scaled copy of the same kernel, so factor once
    n = k * sigmas.size
    chol = np.zeros((n, n))
    for i, s in enumerate(sigmas):
        chol[i * k:(i + 1) * k, i * k:(i + 1) * k] = np.sqrt(s) * chol1
    if means is None:
        mean = np.zeros(n)
    else:
        means = np.asarray(means, dtype=float)
        if means.size == n:
            mean = means.ravel()
        elif means.size in (1, sigmas.size):
            mean = np.repeat(np.broadcast_to(means.ravel(), sigmas.shape), k)
        else:
            raise ShapeError(f"means has {means.size} entries, expected 1, {sigmas.size} or {n}")
    return GaussianMeasure(mean, DenseCholesky(chol, jitter))


def spde_precision_root(nx, ny, hx, hy, corr_tensor, kappa):
    """Sparse ``A`` and lumped mass ``M`` for ``-div(K grad) + kappa^2``.

    Nodes sit at the ``nx * ny`` cell centres and bilinear elements join
    neighbouring centres, so boundary terms vanish (Neumann). Node index is
    ``i + nx * j``.
    """
    nodes = nx * ny
    if nx == 1 or ny == 1:
        raise InvalidConfigError("SPDE prior needs at least 2 cells per direction")
    stiff, mass_e = q1_element_matrices(hx, hy, corr_tensor)
    ii, jj = np.meshgrid(np.arange(nx - 1), np.arange(ny - 1), indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    base = ii + nx * jj
    conn = np.stack([base, base + 1, base + 1 + nx, base + nx], axis=1)
    rows = np.repeat(conn, 4, axis=1).ravel()
    cols = np.tile(conn, (1, 4)).ravel()
    vals = np.tile(stiff.ravel(), conn.shape[0])
    S = sp.csc_matrix((vals, (rows, cols)), shape=(nodes, nodes))
    mass = np.bincount(conn.ravel(), weights=np.tile(mass_e, conn.shape[0]), minlength=nodes)
    A = (S + kappa**2 * sp.diags(mass)).tocsc()
    return A, mass


def build_spde_prior(mesh, corr_tensor, kappa, prior_mean, length_scale=1.0, marginal_std=None):
    """Gaussian prior whose precision is ``A M^{-1} A``.

    ``A`` discretizes ``-div(K grad) + kappa^2`` with bilinear elements on the
    cell-centre grid and ``M`` is the lumped mass, so the sparse root is
    ``R = M^{-1/2} A``.

    Parameters
    ----------
    mesh : tuple (nx, ny, width, height)
        Rectangular grid of ``nx * ny`` cells over ``[0, width] x [0, height]``.
        Unknowns are ordered ``i + nx * j``.
    corr_tensor : array-like of shape (2, 2)
        SPD anisotropy tensor ``K``.
    kappa : float
    prior_mean : float
        Constant mean.
    length_scale : float
        Physical lengths are divided by this before discretizing, so
        ``kappa`` is in units of ``1 / length_scale``.
    marginal_std : float, optional
        When given, the covariance is rescaled so the average pointwise
        variance equals ``marginal_std**2``.
    """
    try:
        nx, ny, width, height = mesh
    except (TypeError, ValueError):
        raise InvalidConfigError("mesh must be (nx, ny, width, height)") from None
    nx, ny = check_count(nx, "nx", 2), check_count(ny, "ny", 2)
    tensor = np.asarray(corr_tensor, dtype=float)
    if tensor.shape != (2, 2) or not np.allclose(tensor, tensor.T):
        raise InvalidConfigError("corr_tensor must be a symmetric 2x2 matrix")
    if np.any(np.linalg.eigvalsh(tensor) <= 0):
        raise InvalidConfigError("corr_tensor must be positive definite")
    kappa = check_positive(kappa, "kappa")
    length_scale = check_positive(length_scale, "length_scale")
    hx = float(width) / nx / length_scale
    hy = float(height) / ny / length_scale
    A, mass = spde_precision_root(nx, ny, hx, hy, tensor, kappa)
    root = sp.diags(1.0 / np.sqrt(mass)) @ A
    factor = SparsePrecision(root)
    if marginal_std is not None:
        check_positive(marginal_std, "marginal_std")
        avg = float(np.mean(factor.marginal_variances()))
        factor = factor.scaled(marginal_std / np.sqrt(avg))
    mean = np.full(nx * ny, float(prior_mean))
    return GaussianMeasure(mean, factor)
