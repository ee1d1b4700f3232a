"""Squared Hellinger distances, spectra and KL-mode marginals."""

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla
from scipy import stats

from ._validation import check_count, check_samples, check_vector
from .exceptions import BoxTooSmallError, DegenerateWeightsError, InvalidConfigError, ShapeError

__all__ = [
    "HellingerReport",
    "hellinger_grid",
    "hellinger_gaussian",
    "hellinger_from_log_weights",
    "hellinger_is",
    "hellinger_reduced",
    "spectrum_report",
    "write_spectra_csv",
    "kl_marginals",
    "marginal_tv",
    "write_hellinger_csv",
]


@dataclass
class HellingerReport:
    value: float
    method: str
    std_error: float = 0.0
    n_samples: int = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.value = float(min(max(self.value, 0.0), 1.0))

    def as_row(self, label="", dim=None):
        return {"method": label or self.method, "dim": dim, "hellinger2": self.value,
                "se": self.std_error, "estimator": self.method}


def _eval_density(logpdf, pts):
    try:
        vals = np.asarray(logpdf(pts), dtype=float).reshape(-1)
        if vals.size == pts.shape[0]:
            return vals
    except Exception:  # noqa: BLE001 - fall back to pointwise evaluation
        pass
    return np.array([float(logpdf(p)) for p in pts])


def hellinger_grid(logpdf_p, logpdf_q, box, resolution=200, tail_tol=1e-6):
    """Squared Hellinger distance of two unnormalized densities by midpoint quadrature.

    Parameters
    ----------
    logpdf_p, logpdf_q : callable
        Log densities (up to constants) taking an ``(k, dim)`` array of
        points, or a single point.
    box : sequence of (low, high)
        One interval per dimension, ``dim <= 3``.
    resolution : int or sequence of int
        Cells per dimension.
    tail_tol : float
        Largest normalized mass allowed in the outermost layer of cells.

    Raises
    ------
    BoxTooSmallError
        When either density puts more than ``tail_tol`` of its mass on the
        boundary layer of the box.
    """
    box = np.asarray(box, dtype=float).reshape(-1, 2)
    dim = box.shape[0]
    if dim > 3:
        raise InvalidConfigError("grid quadrature is limited to three dimensions")
    res = np.broadcast_to(np.asarray(resolution, dtype=int), (dim,))
    axes = []
    vol = 1.0
    for (lo, hi), k in zip(box, res):
        if not hi > lo:
            raise InvalidConfigError("box intervals must have positive length")
        h = (hi - lo) / k
        axes.append(lo + h * (np.arange(k) + 0.5))
        vol *= h
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    lp = _eval_density(logpdf_p, pts)
    lq = _eval_density(logpdf_q, pts)
    out = {}
    for name, vals in (("p", lp), ("q", lq)):
        finite = np.isfinite(vals)
        if not finite.any():
            raise BoxTooSmallError(f"density {name} vanishes on the whole box")
        dens = np.exp(np.where(finite, vals - vals[finite].max(), -np.inf)).reshape(mesh[0].shape)
        dens /= dens.sum() * vol
        edge = np.zeros(dens.shape, dtype=bool)
        for ax in range(dim):
            sl = [slice(None)] * dim
            sl[ax] = 0
            edge[tuple(sl)] = True
            sl[ax] = -1
            edge[tuple(sl)] = True
        tail = float(dens[edge].sum() * vol)
        if tail > tail_tol:
            raise BoxTooSmallError(f"density {name} has mass {tail:.2e} on the box boundary")
        out[name] = (dens, tail)
    bc = float(np.sum(np.sqrt(out["p"][0] * out["q"][0])) * vol)
    return HellingerReport(1.0 - min(bc, 1.0), "grid",
                           info={"box": box.tolist(), "resolution": res.tolist(),
                                 "tail_p": out["p"][1], "tail_q": out["q"][1]})


def _dense_cov(cov, dim):
    if callable(cov):
        if dim is None:
            raise InvalidConfigError("dim is required for covariance actions")
        C = np.asarray(cov(np.eye(dim)), dtype=float)
    else:
        C = np.asarray(cov, dtype=float)
        if C.ndim == 0:
            C = np.full(dim, float(C))
        if C.ndim == 1:
            C = np.diag(C)
    return 0.5 * (C + C.T)


def _chol_logdet(C, what):
    try:
        c = sla.cholesky(C, lower=True)
    except (sla.LinAlgError, ValueError) as exc:
        raise InvalidConfigError(f"{what} covariance is not SPD") from exc
    return c, 2.0 * float(np.sum(np.log(np.diag(c))))


def hellinger_gaussian(mean1, cov1, mean2, cov2, dim=None):
    """Closed-form squared Hellinger distance between two Gaussians.

    ``1 - det(C1)^{1/4} det(C2)^{1/4} / det(C)^{1/2} exp(-dm^T C^{-1} dm / 8)``
    with ``C = (C1 + C2) / 2``. Covariances may be dense matrices, diagonals
    or callables acting on column blocks (then ``dim`` is required).
    """
    m1, m2 = np.atleast_1d(np.asarray(mean1, float)), np.atleast_1d(np.asarray(mean2, float))
    dim = dim or m1.size
    m1 = check_vector(np.broadcast_to(m1, (dim,)), dim, "mean1")
    m2 = check_vector(np.broadcast_to(m2, (dim,)), dim, "mean2")
    C1, C2 = _dense_cov(cov1, dim), _dense_cov(cov2, dim)
    if C1.shape != (dim, dim) or C2.shape != (dim, dim):
        raise ShapeError("covariances do not match the mean dimension")
    _, ld1 = _chol_logdet(C1, "first")
    _, ld2 = _chol_logdet(C2, "second")
    c, ld = _chol_logdet(0.5 * (C1 + C2), "average")
    z = sla.solve_triangular(c, m1 - m2, lower=True)
    log_bc = 0.25 * ld1 + 0.25 * ld2 - 0.5 * ld - 0.125 * float(z @ z)
    return HellingerReport(-np.expm1(min(log_bc, 0.0)), "gaussian")


def _bhattacharyya(lw):
    m = lw.max()
    w = np.exp(lw - m)
    return float(np.mean(np.sqrt(w)) / np.sqrt(np.mean(w)))


def hellinger_from_log_weights(log_weights, batches=20):
    """Hellinger estimate from log ratios ``log p_u(x_i) - log q_u(x_i)``, ``x_i ~ q``.

    ``B = mean(sqrt(w)) / sqrt(mean(w))`` and ``D^2 = 1 - B``. The standard
    error uses contiguous batch means, which also absorbs chain correlation.
    """
    lw = np.asarray(log_weights, dtype=float).reshape(-1)
    finite = np.isfinite(lw)
    if not finite.any():
        raise DegenerateWeightsError("no finite importance weights")
    lw = np.where(finite, lw, -np.inf)
    B = _bhattacharyya(lw)
    assert B <= 1.0 + 1e-12, "Bhattacharyya estimate exceeds one"
    se = 0.0
    nb = min(int(batches), lw.size // 2)
    if nb >= 2:
        parts = [p for p in np.array_split(lw, nb) if np.isfinite(p).any()]
        vals = np.array([1.0 - _bhattacharyya(p) for p in parts])
        se = float(vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0
    w = np.exp(lw - lw.max())
    ess = float(w.sum() ** 2 / np.sum(w * w))
    return HellingerReport(1.0 - min(B, 1.0), "is", se, lw.size,
                           info={"bhattacharyya": B, "ess": ess})


def hellinger_is(model, y_obs, approx, n_samples, seed=None, mcmc_opts=None, batches=20,
                 jobs=None, samples=None):
    """Squared Hellinger distance between the full posterior and an approximation.

    Parameters
    ----------
    approx : JointPosterior or LaplaceApproximation
        Anything with ``sample`` and either ``log_omega`` (product-form
        approximations) or ``logpdf`` (a normalized or unnormalized density).
    samples : ndarray, optional
        Pre-drawn samples of ``approx`` (rows).
    """
    from ._parallel import pmap
    from .exceptions import JointRedError

    n_samples = check_count(n_samples, "n_samples", 2)
    mdl = model if y_obs is None else model.with_data(y_obs)
    if samples is None:
        if hasattr(approx, "log_omega"):
            samples = approx.sample(n_samples, seed, mcmc_opts)
        else:
            samples = approx.sample(n_samples, seed)
    X = check_samples(samples, model.param_dim)

    if hasattr(approx, "log_omega"):
        approx.y_obs = mdl._data(None) if approx.y_obs is None else approx.y_obs

        def one(x):
            try:
                return approx.log_omega(mdl, x)
            except JointRedError:
                return -np.inf
    else:
        def one(x):
            try:
                return mdl.log_posterior(x) - float(approx.logpdf(x))
            except JointRedError:
                return -np.inf

    lw = np.array(pmap(one, X, jobs))
    return hellinger_from_log_weights(lw, batches)


def hellinger_reduced(jp, model, n_samples, seed=None, mcmc_opts=None, batches=20, jobs=None,
                      samples=None):
    """Squared Hellinger distance between the parameter-reduced posterior
    (full model at lifted reduced parameters) and a jointly-reduced posterior,
    both over the reduced coordinates.

    Draws come from ``jp``; log weights are
    ``min(eta_r(x_r), K) - eta(lift(x_r))``.
    """
    from ._parallel import pmap
    from .exceptions import JointRedError
    from .samplers import sample_reduced

    n_samples = check_count(n_samples, "n_samples", 2)
    if samples is None:
        samples = sample_reduced(jp, n_samples, seed, mcmc_opts).draws
    Z = np.asarray(samples, dtype=float).reshape(-1, jp.dim)
    basis = jp.param_basis

    def one(z):
        try:
            return jp.capped_misfit(z) - model.misfit(basis.lift(z), jp.y_obs)
        except JointRedError:
            return -np.inf

    lw = np.array(pmap(one, Z, jobs))
    return hellinger_from_log_weights(lw, batches)


# --- spectra -------------------------------------------------------------------
def spectrum_report(op, k, kind="auto", dim=None):
    """Leading ``k`` eigenvalues (descending).

    ``kind="operator"`` treats ``op`` as a symmetric matrix (or a callable
    acting on column blocks with ``dim``); ``kind="snapshots"`` returns the
    eigenvalues ``sigma_i^2`` of ``U U^T`` for a snapshot matrix ``U``.
    ``"auto"`` picks ``operator`` for square symmetric input.
    """
    k = check_count(k, "k")
    if callable(op):
        if dim is None:
            raise InvalidConfigError("dim is required for operator actions")
        if k < dim - 1 and dim > 500:
            lin = spla.LinearOperator((dim, dim), matvec=lambda v: op(v.reshape(-1)), dtype=float)
            vals = spla.eigsh(lin, k=k, which="LA", return_eigenvectors=False)
            return np.sort(vals)[::-1]
        op = op(np.eye(dim))
    A = np.asarray(op, dtype=float)
    if kind == "auto":
        kind = "operator" if A.ndim == 2 and A.shape[0] == A.shape[1] and np.allclose(A, A.T) else "snapshots"
    if kind == "operator":
        vals = sla.eigvalsh(0.5 * (A + A.T))[::-1]
    elif kind == "snapshots":
        vals = sla.svd(A, compute_uv=False) ** 2
    else:
        raise InvalidConfigError(f"unknown spectrum kind {kind!r}")
    out = np.zeros(k)
    out[: min(k, vals.size)] = vals[:k]
    return out


def write_spectra_csv(path, spectra):
    """``spectra``: mapping of label to descending values; one column each."""
    labels = list(spectra)
    length = max(len(v) for v in spectra.values())
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", *labels])
        for i in range(length):
            w.writerow([i + 1, *(f"{spectra[l][i]:.17g}" if i < len(spectra[l]) else "" for l in labels)])


def write_hellinger_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["method", "dim", "hellinger2", "se", "estimator"])
        w.writeheader()
        for row in rows:
            w.writerow(row)


# --- marginals -------------------------------------------------------------------
def kl_coordinates(samples, prior, n_modes):
    """Whitened coordinates of samples on the leading prior KL modes."""
    from .param_reduce import prior_kl_basis

    X = check_samples(samples, prior.dim)
    basis = prior_kl_basis(prior, n_modes)
    return (X - prior.mean) @ basis.xi


def kl_marginals(samples, prior, modes, bins="fd", weights=None, kde_points=200, coords=None):
    """Per-mode histograms and kernel density curves of KL coordinates.

    Parameters
    ----------
    modes : sequence of int
        Zero-based KL mode indices.
    bins : str or int
        Passed to ``numpy.histogram_bin_edges`` (Freedman-Diaconis by default).
    weights : ndarray, optional
        Sample weights (e.g. importance weights).

    Returns
    -------
    list of dict
        ``mode``, ``edges``, ``density``, ``grid``, ``kde``.
    """
    modes = [int(m) for m in modes]
    if not modes:
        raise InvalidConfigError("no modes requested")
    Z = kl_coordinates(samples, prior, max(modes) + 1) if coords is None else np.asarray(coords)
    if Z.shape[0] == 0:
        raise ShapeError("no samples")
    out = []
    for m in modes:
        z = Z[:, m]
        if z.size == 1 or np.ptp(z) == 0:
            edges = np.array([z[0] - 0.5, z[0] + 0.5])
            out.append({"mode": m, "edges": edges, "density": np.array([1.0]),
                        "grid": z[:1], "kde": np.array([np.inf])})
            continue
        edges = np.histogram_bin_edges(z, bins=bins)
        dens, _ = np.histogram(z, bins=edges, weights=weights, density=True)
        grid = np.linspace(edges[0], edges[-1], kde_points)
        kde = stats.gaussian_kde(z, weights=weights)(grid)
        out.append({"mode": m, "edges": edges, "density": dens, "grid": grid, "kde": kde})
    return out


def marginal_tv(a, b, weights_a=None, weights_b=None, points=512):
    """Total-variation distance of two 1-D samples via kernel density estimates."""
    a, b = np.asarray(a, float).ravel(), np.asarray(b, float).ravel()
    lo = min(a.min(), b.min())
    hi = max(a.max(), b.max())
    pad = 0.1 * (hi - lo)
    grid = np.linspace(lo - pad, hi + pad, points)
    pa = stats.gaussian_kde(a, weights=weights_a)(grid)
    pb = stats.gaussian_kde(b, weights=weights_b)(grid)
    pa /= np.trapezoid(pa, grid)
    pb /= np.trapezoid(pb, grid)
    return 0.5 * float(np.trapezoid(np.abs(pa - pb), grid))
