"""Output (data-space) reduction.

Outputs are whitened by the noise factor and compressed with POD; the basis
``Y_o = L_obs W`` is orthonormal in the noise-precision inner product, so the
misfit splits exactly into a reduced term and a data-only constant:

    eta(y) = 0.5 * ||beta - Y_o^T Gamma^{-1} y_obs||^2 + c

with ``beta`` the coefficients of ``y`` in ``Y_o`` and
``c = 0.5 * ||(I - W W^T) L_obs^{-1} y_obs||^2``, provided ``y`` lies in the
span of ``Y_o``.
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_matrix, check_vector
from .binio import write_json, write_matrix
from .state_reduce import deim_build, pod_from_snapshots

__all__ = ["OutputBasis", "output_basis_from_samples", "reduced_misfit", "OutputReducer"]


class OutputBasis:
    """Noise-orthonormal output basis with DEIM indices and projected data.

    Parameters
    ----------
    whitened_basis : ndarray of shape (d, o)
        Orthonormal ``W``.
    noise : GaussianMeasure
    y_obs : ndarray of shape (d,)
    indices : array of int, optional
        Interpolation rows; chosen by DEIM on ``Y_o`` when omitted.
    """

    reduced = True

    def __init__(self, whitened_basis, noise, y_obs, indices=None, singvals=None):
        self.whitened_basis = check_matrix(whitened_basis, (noise.dim, None), "whitened_basis")
        self.noise = noise
        self.basis = noise.factor.L(self.whitened_basis)
        self.singvals = singvals
        self.indices = (deim_build(self.basis).indices if indices is None
                        else np.asarray(indices, dtype=int))
        self.set_data(y_obs)

    @property
    def dim(self):
        return self.whitened_basis.shape[1]

    def set_data(self, y_obs):
        y = check_vector(y_obs, self.noise.dim, "y_obs")
        wy = self.noise.factor.L_inv(y)
        self.y_obs = y
        self.projected_data = self.whitened_basis.T @ wy
        resid = wy - self.whitened_basis @ self.projected_data
        self.constant = 0.5 * float(resid @ resid)
        return self

    def coefficients(self, y):
        """Noise-orthogonal projection coefficients ``Y_o^T Gamma^{-1} y``."""
        return self.whitened_basis.T @ self.noise.factor.L_inv(y)

    def interpolate(self, y_at_indices):
        """Coefficients from the sampled rows: ``(P^T Y_o)^{-1} y[P]``."""
        return np.linalg.solve(self.basis[self.indices], y_at_indices)

    def reconstruct(self, beta):
        return self.basis @ beta

    def value_and_grad(self, beta):
        resid = beta - self.projected_data
        return 0.5 * float(resid @ resid) + self.constant, resid

    def save(self, stem):
        write_matrix(str(stem) + ".bin", self.basis)
        write_json(str(stem) + ".json", {"dim": self.dim, "indices": self.indices,
                                         "constant": self.constant})


def output_basis_from_samples(outputs, noise, y_obs, tol=None, dim=None, weights=None):
    """Weighted POD of whitened output snapshots (columns of ``outputs``)."""
    Y = check_matrix(outputs, (noise.dim, None), "outputs")
    pod = pod_from_snapshots(noise.factor.L_inv(Y), tol=tol, dim=dim, weights=weights)
    basis = OutputBasis(pod.vectors, noise, y_obs, singvals=pod.singvals)
    basis.pod = pod
    return basis


def reduced_misfit(beta, out_basis):
    """``0.5 * ||beta - Y_o^T Gamma^{-1} y_obs||^2 + c``."""
    return out_basis.value_and_grad(np.asarray(beta, dtype=float))[0]


class OutputReducer(TransformerMixin, BaseEstimator):
    """Fit a noise-orthonormal output basis to output rows.

    ``transform`` maps outputs to coefficients, ``inverse_transform`` back.
    """

    def __init__(self, noise=None, tol=1e-5, n_components=None):
        self.noise = noise
        self.tol = tol
        self.n_components = n_components

    def fit(self, Y, y_obs=None, sample_weight=None):
        Y = check_matrix(Y, (None, self.noise.dim), "Y")
        data = Y.mean(axis=0) if y_obs is None else y_obs
        tol = None if self.n_components is not None else self.tol
        self.basis_ = output_basis_from_samples(Y.T, self.noise, data, tol=tol,
                                                dim=self.n_components, weights=sample_weight)
        self.n_components_ = self.basis_.dim
        return self

    def transform(self, Y):
        check_is_fitted(self, "basis_")
        Y = check_matrix(Y, (None, self.noise.dim), "Y")
        return self.basis_.coefficients(Y.T).T

    def inverse_transform(self, B):
        check_is_fitted(self, "basis_")
        return self.basis_.reconstruct(check_matrix(B, (None, self.n_components_), "B").T).T
