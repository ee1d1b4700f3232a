"""Snapshots, POD, DEIM and projection-based reduced-order models.

Reduced-order models act on reduced parameters ``x_r`` and return a reduced
data misfit with its gradient. Offline, every operator that touches the full
parameter or state dimension is projected once; online evaluation only works
with ``r``, ``s``, ``t`` and ``o`` sized arrays (except for the optional
sparse fallback used when the projected blocks would not fit in memory).
"""

import logging
import os
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._parallel import pmap
from ._validation import check_count, check_matrix, check_samples, normalized_log_weights
from .binio import read_json, read_matrix, write_json, write_matrix
from .exceptions import (
    DeimSingularError,
    EmptyBasisError,
    InvalidConfigError,
    ModelEvalError,
    ReducedSolveError,
    ShapeError,
    SnapshotCollectionError,
)

__all__ = [
    "SnapshotSet",
    "PodBasis",
    "DeimInterpolant",
    "FullDataTerm",
    "ReducedModel",
    "ProjectedModel",
    "LinearROM",
    "EllipticROM",
    "GomosROM",
    "collect_snapshots",
    "pod_from_snapshots",
    "deim_build",
    "deim_from_snapshots",
    "build_reduced_model",
    "reduced_evaluate",
    "save_reduced_model",
    "load_reduced_model",
    "POD",
    "DEIM",
]

logger = logging.getLogger(__name__)


# --- snapshots ---------------------------------------------------------------
@dataclass
class SnapshotSet:
    """Full-model evaluations at (projected) parameter samples.

    ``states`` and ``outputs`` hold one column per successful sample and are
    not weighted; ``weights`` are the self-normalized weights of those columns.
    """

    params: np.ndarray
    states: np.ndarray
    outputs: np.ndarray
    misfits: np.ndarray
    weights: np.ndarray
    failed: list = field(default_factory=list)
    sample_index: np.ndarray = None

    @property
    def count(self):
        return self.states.shape[1]

    def weighted_states(self):
        return self.states * np.sqrt(self.weights)

    def weighted_outputs(self):
        return self.outputs * np.sqrt(self.weights)

    def reweight(self, log_weights):
        """Replace the weights, given log weights per successful column."""
        self.weights = normalized_log_weights(log_weights, self.count)
        return self


def collect_snapshots(model, param_basis, samples, log_weights=None, y_obs=None,
                      jobs=None, min_success=0.8):
    """Evaluate the full model at projected samples.

    Parameters
    ----------
    model : ForwardModel
    param_basis : ReducedParamBasis or None
        Samples are mapped to ``mean + Pi (x - mean)`` first; ``None`` keeps
        them unprojected.
    samples : ndarray of shape (M, n)
    log_weights : ndarray of shape (M,), optional
    min_success : float
        Fraction of samples that must evaluate without error.

    Returns
    -------
    SnapshotSet
        Column ``k`` of ``weighted_states()`` is ``sqrt(w_k) u(Pi x_k)``.
    """
    X = check_samples(samples, model.param_dim, "samples")
    P = X if param_basis is None else param_basis.project_affine(X)
    y = model._data(y_obs) if (y_obs is not None or model.y_obs is not None) else None

    def one(k):
        try:
            x = P[k]
            state = model.solve(x)
            out = model.observe(x, state)
            eta = model._misfit_from_outputs(out, y) if y is not None else np.nan
            return state, out, eta
        except ModelEvalError as exc:
            logger.warning("snapshot %d failed: %s", k, exc)
            return None

    results = pmap(one, range(X.shape[0]), jobs)
    ok = [k for k, res in enumerate(results) if res is not None]
    failed = [k for k, res in enumerate(results) if res is None]
    if len(ok) < min_success * X.shape[0] or not ok:
        raise SnapshotCollectionError(
            f"{len(failed)} of {X.shape[0]} snapshot solves failed"
        )
    states = np.column_stack([results[k][0] for k in ok])
    outputs = np.column_stack([results[k][1] for k in ok])
    misfits = np.array([results[k][2] for k in ok])
    lw = None if log_weights is None else np.asarray(log_weights, dtype=float)[ok]
    weights = normalized_log_weights(lw, len(ok))
    return SnapshotSet(P[ok], states, outputs, misfits, weights, failed, np.array(ok))


# --- POD -----------------------------------------------------------------------
def _first_nonzero_positive(U):
    if U.shape[1] == 0:
        return U
    mag = np.abs(U)
    thresh = 1e-12 * mag.max(axis=0, keepdims=True)
    first = np.argmax(mag > thresh, axis=0)
    signs = np.sign(U[first, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs


@dataclass
class PodBasis:
    """Orthonormal POD modes with their singular values."""

    vectors: np.ndarray
    singvals: np.ndarray
    weight_sum: float = 1.0
    spectrum: np.ndarray = None
    info: dict = field(default_factory=dict)

    @property
    def dim(self):
        return self.vectors.shape[1]

    def projection_error(self, U):
        U = np.asarray(U, dtype=float)
        resid = U - self.vectors @ (self.vectors.T @ U)
        return float(np.linalg.norm(resid) / max(np.linalg.norm(U), np.finfo(float).tiny))


def pod_from_snapshots(U, tol=None, dim=None, weights=None):
    """Thin-SVD POD of a snapshot matrix (columns are snapshots).

    Snapshots are not centred. With ``tol`` the modes with
    ``sigma_i^2 / sigma_1^2 >= tol`` are kept; ``tol = 0`` keeps the numerical
    rank. With ``dim`` the leading ``dim`` modes are kept. ``weights`` (per
    column) scale columns by their square roots first.
    """
    U = check_matrix(U, name="U")
    if U.size == 0:
        raise EmptyBasisError("no snapshots")
    if (tol is None) == (dim is None):
        raise InvalidConfigError("give exactly one of tol or dim")
    wsum = 1.0
    if weights is not None:
        w = np.asarray(weights, dtype=float)
        if w.shape != (U.shape[1],) or np.any(w < 0):
            raise ShapeError("weights must be nonnegative, one per column")
        wsum = float(w.sum())
        U = U * np.sqrt(w)
    V, s, _ = sla.svd(U, full_matrices=False, lapack_driver="gesvd")
    if s.size == 0 or s[0] == 0:
        raise EmptyBasisError("all snapshots are zero")
    rank_tol = max(U.shape) * np.finfo(float).eps * s[0]
    rank = int(np.sum(s > rank_tol))
    if dim is not None:
        keep = min(check_count(dim, "dim"), s.size)
    elif tol == 0:
        keep = rank
    else:
        keep = int(np.sum((s / s[0]) ** 2 >= tol))
    keep = max(keep, 1)
    return PodBasis(
        _first_nonzero_positive(V[:, :keep]), s[:keep], wsum, spectrum=s,
        info={"tol": tol, "dim": dim, "rank": rank, "snapshots": U.shape[1]},
    )


# --- DEIM ----------------------------------------------------------------------
class DeimInterpolant:
    """Interpolation ``f ~ Theta (P^T Theta)^{-1} P^T f`` from ``t`` entries."""

    def __init__(self, basis, indices):
        self.basis = np.asarray(basis, dtype=float)
        self.indices = np.asarray(indices, dtype=int)
        if len(set(self.indices.tolist())) != self.indices.size:
            raise DeimSingularError("DEIM indices are not distinct")
        self.square = self.basis[self.indices]
        self.solve_factor = sla.lu_factor(self.square)
        self.condition = float(np.linalg.cond(self.square)) if self.square.size else 1.0

    @property
    def dim(self):
        return self.indices.size

    def coefficients(self, f_at_indices):
        """``(P^T Theta)^{-1} f[P]``; ``f_at_indices`` may hold columns."""
        return sla.lu_solve(self.solve_factor, f_at_indices)

    def coefficients_T(self, g):
        """``(P^T Theta)^{-T} g``."""
        return sla.lu_solve(self.solve_factor, g, trans=1)

    def apply(self, f):
        """Interpolate a full vector (or columns) from its sampled entries."""
        f = np.asarray(f, dtype=float)
        return self.basis @ self.coefficients(f[self.indices])


def deim_build(theta, rtol=1e-12, cond_warn=1e8):
    """Greedy DEIM index selection.

    ``p_1 = argmax |theta_1|``; ``p_j`` maximizes the residual of interpolating
    ``theta_j`` from the previous columns at the previous indices.
    """
    theta = check_matrix(theta, name="theta")
    m, t = theta.shape
    if t == 0:
        raise EmptyBasisError("DEIM basis is empty")
    if t > m:
        raise DeimSingularError("more DEIM columns than rows", column=m)
    scale = np.linalg.norm(theta, axis=0)
    if scale[0] == 0:
        raise DeimSingularError("first DEIM column is zero", column=0)
    idx = [int(np.argmax(np.abs(theta[:, 0])))]
    for j in range(1, t):
        coef = np.linalg.solve(theta[idx, :j], theta[idx, j])
        resid = theta[:, j] - theta[:, :j] @ coef
        p = int(np.argmax(np.abs(resid)))
        if abs(resid[p]) <= rtol * max(scale[j], np.finfo(float).tiny):
            raise DeimSingularError(f"DEIM column {j} is dependent on previous columns", column=j)
        idx.append(p)
    interp = DeimInterpolant(theta, idx)
    if interp.condition > cond_warn:
        warnings.warn(f"DEIM matrix condition number {interp.condition:.3g}", RuntimeWarning,
                      stacklevel=2)
    return interp


def deim_from_snapshots(F, tol=None, dim=None, weights=None):
    """POD of nonlinear-term snapshots followed by DEIM selection."""
    pod = pod_from_snapshots(F, tol=tol, dim=dim, weights=weights)
    # drop trailing modes that make the greedy singular
    for t in range(pod.dim, 0, -1):
        try:
            interp = deim_build(pod.vectors[:, :t])
        except DeimSingularError:
            continue
        interp.pod = pod
        return interp
    raise EmptyBasisError("could not build a DEIM interpolant")


# --- data terms ------------------------------------------------------------------
class FullDataTerm:
    """Misfit ``0.5 * ||y - y_obs||^2`` in the noise-precision norm."""

    reduced = False

    def __init__(self, noise, y_obs):
        self.noise = noise
        self.y_obs = np.asarray(y_obs, dtype=float)

    @property
    def dim(self):
        return self.y_obs.size

    def value_and_grad(self, y):
        resid = y - self.y_obs
        g = self.noise.prec(resid)
        return 0.5 * float(resid @ g), g


# --- reduced models ------------------------------------------------------------
class ReducedModel:
    """Common interface: ``misfit(x_r)`` and ``misfit_and_gradient(x_r)``."""

    kind = "reduced"

    def __init__(self, param_basis, model=None):
        self.param_basis = param_basis
        self.model = model

    @property
    def dim(self):
        return self.param_basis.dim

    @property
    def dims(self):
        return {"r": self.param_basis.dim}

    def evaluate(self, x_r):
        raise NotImplementedError

    def misfit(self, x_r):
        return self.misfit_and_gradient(x_r)[0]

    def misfit_and_gradient(self, x_r):
        raise NotImplementedError

    def _check(self, x_r):
        x_r = np.asarray(x_r, dtype=float).reshape(-1)
        if x_r.size != self.dim:
            raise ShapeError(f"x_r has length {x_r.size}, expected {self.dim}")
        return x_r


class ProjectedModel(ReducedModel):
    """Full model evaluated at lifted parameters (parameter reduction only)."""

    kind = "projected"

    def __init__(self, model, param_basis, y_obs=None):
        super().__init__(param_basis, model)
        self.y_obs = model._data(y_obs)

    def evaluate(self, x_r):
        x = self.param_basis.lift(self._check(x_r))
        u = self.model.solve(x)
        return self.model.observe(x, u), u

    def misfit(self, x_r):
        return self.model.misfit(self.param_basis.lift(self._check(x_r)), self.y_obs)

    def misfit_and_gradient(self, x_r):
        eta, g, _ = self.model.misfit_and_gradient(
            self.param_basis.lift(self._check(x_r)), self.y_obs)
        return eta, self.param_basis.phi.T @ g


class LinearROM(ReducedModel):
    """Galerkin reduction of ``u = L x`` onto ``V_s``: ``y = C V_s V_s^T L lift(x_r)``."""

    kind = "linear"

    def __init__(self, model, param_basis, state_basis, data_term):
        super().__init__(param_basis, model)
        V = state_basis.vectors
        self.state_basis = state_basis
        self.data = data_term
        LV = model.state_operator.T @ V
        self.reduced_operator = LV.T @ param_basis.phi
        self.reduced_offset = LV.T @ param_basis.anchor
        self.output_operator = model.observe_states(V)
        self.forward_matrix = self.output_operator @ self.reduced_operator
        self.forward_offset = self.output_operator @ self.reduced_offset

    @property
    def dims(self):
        return {"r": self.dim, "s": self.state_basis.dim}

    def evaluate(self, x_r):
        x_r = self._check(x_r)
        u_s = self.reduced_operator @ x_r + self.reduced_offset
        return self.output_operator @ u_s, u_s

    def misfit_and_gradient(self, x_r):
        y, _ = self.evaluate(x_r)
        eta, g = self.data.value_and_grad(y)
        return eta, self.forward_matrix.T @ g


class _ExpDeim:
    """DEIM approximation ``exp(lift(x_r)) ~ Theta alpha(x_r)``."""

    def __init__(self, param_basis, interp):
        self.interp = interp
        p = interp.indices
        self.rows = param_basis.phi[p]
        self.offset = param_basis.anchor[p]

    def alpha(self, x_r):
        with np.errstate(over="ignore"):
            e = np.exp(self.rows @ x_r + self.offset)
        if not np.all(np.isfinite(e)):
            raise ReducedSolveError("interpolated exponential overflows", x_r)
        return self.interp.coefficients(e), e

    def alpha_vjp(self, e, g_alpha):
        """Gradient through ``alpha`` w.r.t. ``x_r``."""
        return self.rows.T @ (e * self.interp.coefficients_T(g_alpha))


class EllipticROM(ReducedModel):
    """Affine Galerkin reduction ``(B_0 + sum_j alpha_j B_j) u_s = q_s``.

    ``B_j = V_s^T L(Theta_j) V_s`` are precomputed for every DEIM mode; when
    they would exceed ``max_block_entries`` the reduced operator is instead
    assembled from the sparse full stiffness on each call.
    """

    kind = "elliptic"

    def __init__(self, model, param_basis, state_basis, deim, data_term,
                 max_block_entries=50_000_000):
        super().__init__(param_basis, model)
        self.state_basis = state_basis
        self.data = data_term
        self.exp_deim = _ExpDeim(param_basis, deim)
        V = state_basis.vectors
        s, t = V.shape[1], deim.dim
        self.q_s = V.T @ model.rhs
        self.B0 = V.T @ (model.boundary_block() @ V)
        self.output_operator = model.observe_states(V)
        self._model = None
        if t * s * s <= max_block_entries:
            blocks = np.empty((t, s, s))
            for j in range(t):
                blocks[j] = V.T @ (model.assemble(deim.basis[:, j], dirichlet=False) @ V)
            self.blocks = blocks
        else:
            self.blocks = None
            self._model = model
            self._theta = deim.basis
            logger.info("elliptic ROM uses sparse assembly (t=%d, s=%d)", t, s)

    @property
    def dims(self):
        return {"r": self.dim, "s": self.state_basis.dim, "t": self.exp_deim.interp.dim}

    def _operator(self, alpha):
        if self.blocks is not None:
            return self.B0 + np.tensordot(alpha, self.blocks, axes=1)
        V = self.state_basis.vectors
        return self.B0 + V.T @ (self._model.assemble(self._theta @ alpha, dirichlet=False) @ V)

    def _block_actions(self, lam, u_s):
        """``lam^T B_j u_s`` for every ``j``."""
        if self.blocks is not None:
            return np.einsum("i,jik,k->j", lam, self.blocks, u_s)
        V = self.state_basis.vectors
        flux = self._model.element_flux(V @ u_s)
        lam_full = (V @ lam) * self._model.interior_mask
        per_elem = np.einsum("ek,ek->e", flux, lam_full[self._model.conn])
        return self._theta.T @ per_elem

    def _solve(self, x_r):
        alpha, e = self.exp_deim.alpha(x_r)
        Ls = self._operator(alpha)
        try:
            lu = sla.lu_factor(Ls, check_finite=True)
        except (ValueError, sla.LinAlgError) as exc:
            raise ReducedSolveError(f"reduced operator not factorizable: {exc}", x_r) from exc
        if np.any(np.abs(np.diag(lu[0])) <= 1e-14 * np.abs(lu[0]).max()):
            raise ReducedSolveError("singular reduced operator", x_r)
        u_s = sla.lu_solve(lu, self.q_s)
        if not np.all(np.isfinite(u_s)):
            raise ReducedSolveError("non-finite reduced state", x_r)
        return u_s, lu, e

    def evaluate(self, x_r):
        u_s, _, _ = self._solve(self._check(x_r))
        return self.output_operator @ u_s, u_s

    def misfit_and_gradient(self, x_r):
        x_r = self._check(x_r)
        u_s, lu, e = self._solve(x_r)
        eta, g = self.data.value_and_grad(self.output_operator @ u_s)
        lam = sla.lu_solve(lu, self.output_operator.T @ g, trans=1)
        g_alpha = -self._block_actions(lam, u_s)
        return eta, self.exp_deim.alpha_vjp(e, g_alpha)


class GomosROM(ReducedModel):
    """Reduced transmission model with DEIM on densities and, optionally, outputs.

    Without an output basis the reduced outputs are the full transmissions
    ``exp(-K Theta alpha)``; with one they are the coefficients
    ``(P_o^T Y_o)^{-1} exp(-P_o^T K Theta alpha)``.
    """

    kind = "gomos"

    def __init__(self, model, param_basis, deim, data_term):
        super().__init__(param_basis, model)
        self.data = data_term
        self.exp_deim = _ExpDeim(param_basis, deim)
        K = model.kron
        if getattr(data_term, "reduced", False):
            self.kernel = K[data_term.indices] @ deim.basis
            self._out_lu = sla.lu_factor(data_term.basis[data_term.indices])
        else:
            self.kernel = K @ deim.basis
            self._out_lu = None

    @property
    def dims(self):
        dims = {"r": self.dim, "t": self.exp_deim.interp.dim}
        if self._out_lu is not None:
            dims["o"] = self.data.dim
        return dims

    def _transmissions(self, x_r):
        with np.errstate(over="ignore", invalid="ignore"):
            alpha, e = self.exp_deim.alpha(x_r)
            trans = np.exp(-(self.kernel @ alpha))
        if not np.all(np.isfinite(trans)):
            raise ReducedSolveError("reduced transmissions overflow", x_r)
        return alpha, e, trans

    def evaluate(self, x_r):
        alpha, e, trans = self._transmissions(self._check(x_r))
        out = trans if self._out_lu is None else sla.lu_solve(self._out_lu, trans)
        return out, alpha

    def misfit_and_gradient(self, x_r):
        x_r = self._check(x_r)
        alpha, e, trans = self._transmissions(x_r)
        if self._out_lu is None:
            eta, g = self.data.value_and_grad(trans)
        else:
            beta = sla.lu_solve(self._out_lu, trans)
            with np.errstate(over="ignore", invalid="ignore"):
                eta, g_beta = self.data.value_and_grad(beta)
            if not np.isfinite(eta):
                raise ReducedSolveError("reduced misfit is not finite", x_r)
            g = sla.lu_solve(self._out_lu, g_beta, trans=1)
        with np.errstate(over="ignore", invalid="ignore"):
            g_alpha = -self.kernel.T @ (trans * g)
        if not (np.isfinite(eta) and np.all(np.isfinite(g_alpha))):
            raise ReducedSolveError("reduced misfit is not finite", x_r)
        return eta, self.exp_deim.alpha_vjp(e, g_alpha)


def build_reduced_model(model, param_basis, state_basis=None, deim_state=None,
                        out_basis=None, y_obs=None, max_block_entries=50_000_000):
    """Assemble the reduced-order model appropriate for ``model.kind``.

    Parameters
    ----------
    state_basis : PodBasis, optional
        Required for linear and elliptic models.
    deim_state : DeimInterpolant, optional
        Interpolant of ``exp(x)``; required for elliptic and transmission
        models.
    out_basis : OutputBasis, optional
        Output reduction (transmission model only).
    """
    y = model._data(y_obs)
    data = out_basis if out_basis is not None else FullDataTerm(model.noise, y)
    kind = model.kind
    if out_basis is not None and kind != "gomos":
        raise InvalidConfigError("output reduction is only available for the transmission model")
    if kind == "random-linear":
        if state_basis is None:
            raise InvalidConfigError("linear ROM needs a state basis")
        _check_rows(state_basis.vectors, model.state_dim, "state basis")
        return LinearROM(model, param_basis, state_basis, data)
    if kind == "elliptic":
        if state_basis is None or deim_state is None:
            raise InvalidConfigError("elliptic ROM needs a state basis and a DEIM interpolant")
        _check_rows(state_basis.vectors, model.state_dim, "state basis")
        _check_rows(deim_state.basis, model.param_dim, "DEIM basis")
        return EllipticROM(model, param_basis, state_basis, deim_state, data, max_block_entries)
    if kind == "gomos":
        if deim_state is None:
            raise InvalidConfigError("transmission ROM needs a DEIM interpolant")
        _check_rows(deim_state.basis, model.param_dim, "DEIM basis")
        return GomosROM(model, param_basis, deim_state, data)
    return ProjectedModel(model, param_basis, y)


def _check_rows(a, rows, name):
    if a.shape[0] != rows:
        raise ShapeError(f"{name} has {a.shape[0]} rows, expected {rows}")


def reduced_evaluate(rom, x_r):
    """``(outputs, reduced state)`` of a reduced model."""
    return rom.evaluate(x_r)


def save_reduced_model(rom, stem):
    """Bases as binary matrices plus a JSON manifest; see :func:`load_reduced_model`."""
    stem = str(stem)
    meta = {"kind": rom.kind, "model_kind": rom.model.kind, "dims": rom.dims}
    if hasattr(rom, "state_basis"):
        write_matrix(stem + ".vs.bin", rom.state_basis.vectors)
        meta["state_singvals"] = rom.state_basis.singvals
    if hasattr(rom, "exp_deim"):
        write_matrix(stem + ".theta.bin", rom.exp_deim.interp.basis)
        meta["deim_indices"] = rom.exp_deim.interp.indices
    data = getattr(rom, "data", None)
    if getattr(data, "reduced", False):
        write_matrix(stem + ".w.bin", data.whitened_basis)
        meta["output_indices"] = data.indices
    write_json(stem + ".json", meta)


def load_reduced_model(stem, model, param_basis, y_obs=None):
    """Rebuild a reduced model written by :func:`save_reduced_model`.

    Reduced operators are re-assembled from the stored bases, so the result
    agrees with the saved model to round-off.
    """
    from .data_reduce import OutputBasis

    stem = str(stem)
    meta = read_json(stem + ".json")
    if meta["model_kind"] != model.kind:
        raise InvalidConfigError(f"saved model kind {meta['model_kind']!r} does not match {model.kind!r}")
    state = deim = out = None
    if os.path.exists(stem + ".vs.bin"):
        vecs = read_matrix(stem + ".vs.bin")
        state = PodBasis(vecs, np.asarray(meta.get("state_singvals", np.ones(vecs.shape[1]))))
    if "deim_indices" in meta:
        deim = DeimInterpolant(read_matrix(stem + ".theta.bin"), meta["deim_indices"])
    if "output_indices" in meta:
        out = OutputBasis(read_matrix(stem + ".w.bin"), model.noise, model._data(y_obs),
                          indices=meta["output_indices"])
    return build_reduced_model(model, param_basis, state, deim, out, y_obs)


# --- estimators ------------------------------------------------------------------
class POD(TransformerMixin, BaseEstimator):
    """Proper orthogonal decomposition of snapshot rows.

    Parameters
    ----------
    tol : float, optional
        Relative energy threshold ``sigma_i^2 / sigma_1^2``.
    n_components : int, optional
    """

    def __init__(self, tol=None, n_components=None):
        self.tol = tol
        self.n_components = n_components

    def fit(self, X, y=None, sample_weight=None):
        X = check_matrix(X, name="X")
        tol, dim = self.tol, self.n_components
        if tol is None and dim is None:
            tol = 0.0
        self.basis_ = pod_from_snapshots(X.T, tol=tol, dim=dim, weights=sample_weight)
        self.components_ = self.basis_.vectors.T
        self.singular_values_ = self.basis_.singvals
        self.n_components_ = self.basis_.dim
        return self

    def transform(self, X):
        check_is_fitted(self, "components_")
        return check_matrix(X, (None, self.components_.shape[1]), "X") @ self.components_.T

    def inverse_transform(self, Z):
        check_is_fitted(self, "components_")
        return check_matrix(Z, (None, self.n_components_), "Z") @ self.components_


class DEIM(BaseEstimator):
    """Discrete empirical interpolation fitted to snapshot rows.

    ``fit`` computes a POD basis of the rows (``tol`` / ``n_components``) and
    greedy interpolation indices; ``predict`` reconstructs full vectors from
    their values at ``indices_``.
    """

    def __init__(self, tol=None, n_components=None):
        self.tol = tol
        self.n_components = n_components

    def fit(self, X, y=None, sample_weight=None):
        X = check_matrix(X, name="X")
        tol, dim = self.tol, self.n_components
        if tol is None and dim is None:
            tol = 0.0
        self.interpolant_ = deim_from_snapshots(X.T, tol=tol, dim=dim, weights=sample_weight)
        self.indices_ = self.interpolant_.indices
        self.n_components_ = self.interpolant_.dim
        return self

    def predict(self, F_at_indices):
        check_is_fitted(self, "interpolant_")
        F = check_matrix(F_at_indices, (None, self.n_components_), "F_at_indices")
        return (self.interpolant_.basis @ self.interpolant_.coefficients(F.T)).T

    def transform(self, X):
        """Interpolate full rows from their own sampled entries."""
        check_is_fitted(self, "interpolant_")
        X = check_matrix(X, name="X")
        return self.predict(X[:, self.indices_])
