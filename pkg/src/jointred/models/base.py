"""Forward-model interface shared by all concrete models."""

from dataclasses import dataclass

import numpy as np

from .._validation import check_vector
from ..exceptions import InvalidConfigError, ModelEvalError, ShapeError
from ..gaussian import GaussianMeasure

__all__ = [
    "EvalRecord",
    "Linearization",
    "ForwardModel",
    "data_misfit",
    "gnh_action",
    "log_posterior_unnormalized",
]


@dataclass(frozen=True)
class EvalRecord:
    """One full-model evaluation."""

    param: np.ndarray
    state: np.ndarray
    outputs: np.ndarray
    misfit: float


class Linearization:
    """Outputs, state and Jacobian actions at a fixed parameter.

    ``jvp`` and ``vjp`` accept a vector or a matrix of column directions.
    """

    def __init__(self, x, outputs, state, jvp, vjp):
        self.x = x
        self.outputs = outputs
        self.state = state
        self._jvp = jvp
        self._vjp = vjp

    def jvp(self, v):
        return self._jvp(np.asarray(v, dtype=float))

    def vjp(self, w):
        return self._vjp(np.asarray(w, dtype=float))


class ForwardModel:
    """Parameter-to-observable map ``y = F(x)`` with a Gaussian prior and noise.

    Subclasses implement :meth:`linearize` and usually override
    :meth:`solve`/:meth:`observe` with cheaper non-differentiating paths.

    Parameters
    ----------
    prior : GaussianMeasure
        Prior over the ``n`` parameters.
    noise : GaussianMeasure
        Zero-mean noise over the ``d`` outputs.
    y_obs : array-like of shape (d,), optional
        Observed data used when a method is called without explicit data.
    """

    kind = "base"

    def __init__(self, prior, noise, y_obs=None):
        if not isinstance(prior, GaussianMeasure) or not isinstance(noise, GaussianMeasure):
            raise InvalidConfigError("prior and noise must be GaussianMeasure instances")
        self.prior = prior
        self.noise = noise
        self.y_obs = None if y_obs is None else check_vector(y_obs, noise.dim, "y_obs")
        self.n_solves = 0

    @property
    def param_dim(self):
        return self.prior.dim

    @property
    def data_dim(self):
        return self.noise.dim

    @property
    def state_dim(self):
        raise NotImplementedError

    # --- evaluation ---------------------------------------------------
    def solve(self, x):
        """State at ``x``."""
        return self.linearize(x).state

    def observe(self, x, state):
        """Outputs from a state computed at ``x``."""
        raise NotImplementedError

    def forward(self, x):
        x = self._check_x(x)
        return self.observe(x, self.solve(x))

    def linearize(self, x):
        raise NotImplementedError

    def evaluate(self, x, y_obs=None):
        x = self._check_x(x)
        state = self.solve(x)
        out = self.observe(x, state)
        eta = self._misfit_from_outputs(out, self._data(y_obs))
        return EvalRecord(param=x, state=state, outputs=out, misfit=eta)

    def jvp(self, x, v):
        return self.linearize(self._check_x(x)).jvp(v)

    def vjp(self, x, w):
        return self.linearize(self._check_x(x)).vjp(w)

    # --- misfit and derivatives ---------------------------------------
    def _check_x(self, x):
        x = check_vector(x, self.param_dim, "x")
        if not np.all(np.isfinite(x)):
            raise ModelEvalError("non-finite parameter", {"x": x})
        return x

    def _data(self, y_obs):
        y = self.y_obs if y_obs is None else check_vector(y_obs, self.data_dim, "y_obs")
        if y is None:
            raise InvalidConfigError("no observed data attached to the model")
        return y

    def _misfit_from_outputs(self, outputs, y_obs):
        r = self.noise.factor.L_inv(outputs - y_obs)
        eta = 0.5 * float(r @ r)
        if not np.isfinite(eta):
            raise ModelEvalError("non-finite misfit", {"misfit": eta})
        return eta

    def misfit(self, x, y_obs=None):
        """``eta(x) = 0.5 * ||F(x) - y_obs||^2`` in the noise-precision norm."""
        x = self._check_x(x)
        return self._misfit_from_outputs(self.forward(x), self._data(y_obs))

    def misfit_and_gradient(self, x, y_obs=None):
        lin = self.linearize(self._check_x(x))
        resid = lin.outputs - self._data(y_obs)
        wres = self.noise.prec(resid)
        eta = 0.5 * float(resid @ wres)
        if not np.isfinite(eta):
            raise ModelEvalError("non-finite misfit", {"misfit": eta})
        return eta, lin.vjp(wres), lin

    def gnh_action(self, x, v, lin=None):
        """``H(x) v = J^T Gamma_obs^{-1} J v``; ``v`` may hold columns."""
        lin = lin or self.linearize(self._check_x(x))
        return lin.vjp(self.noise.prec(lin.jvp(v)))

    def log_posterior(self, x, y_obs=None):
        x = self._check_x(x)
        z = self.prior.whiten(x)
        return -self.misfit(x, y_obs) - 0.5 * float(z @ z)

    def whitened_jacobian(self, x, lin=None):
        """Dense ``Gamma_obs^{-1/2} J`` (d x n), built with the cheaper of jvp/vjp."""
        lin = lin or self.linearize(self._check_x(x))
        n, d = self.param_dim, self.data_dim
        if d <= n:
            return lin.vjp(self.noise.factor.Lt_inv(np.eye(d))).T
        return self.noise.factor.L_inv(lin.jvp(np.eye(n)))

    def with_data(self, y_obs):
        """Shallow copy carrying different observed data."""
        clone = object.__new__(type(self))
        clone.__dict__.update(self.__dict__)
        clone.y_obs = check_vector(y_obs, self.data_dim, "y_obs")
        return clone

    def with_noise(self, noise):
        """Shallow copy with a different noise measure (data are dropped)."""
        if not isinstance(noise, GaussianMeasure) or noise.dim != self.data_dim:
            raise InvalidConfigError("noise must be a GaussianMeasure over the data space")
        clone = object.__new__(type(self))
        clone.__dict__.update(self.__dict__)
        clone.noise = noise
        clone.y_obs = None
        return clone

    def __repr__(self):
        return (
            f"{type(self).__name__}(n={self.param_dim}, m={self.state_dim}, "
            f"d={self.data_dim})"
        )


def data_misfit(model, x, y_obs):
    return model.misfit(x, y_obs)


def gnh_action(model, x, v):
    v = np.asarray(v, dtype=float)
    if v.shape[0] != model.param_dim:
        raise ShapeError(f"direction has length {v.shape[0]}, expected {model.param_dim}")
    return model.gnh_action(x, v)


def log_posterior_unnormalized(model, x, y_obs):
    return model.log_posterior(x, y_obs)
