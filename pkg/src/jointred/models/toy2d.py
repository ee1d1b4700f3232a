"""Two-parameter scalar model with a strongly curved response."""

import numpy as np
from scipy.special import erf

from ..gaussian import GaussianMeasure
from .base import ForwardModel, Linearization

_TWO_OVER_SQRT_PI = 2.0 / np.sqrt(np.pi)


def _g(t):
    return (erf(t + 1.0) + 1.0) * (t + 1.0)


def _dg(t):
    return _TWO_OVER_SQRT_PI * np.exp(-((t + 1.0) ** 2)) * (t + 1.0) + erf(t + 1.0) + 1.0


def toy2d_response(x1, x2):
    """``0.5 * (g(x1) + g(x2) + (1 - erf(x1 + 1)) cos(x2))``; broadcasts."""
    return 0.5 * (_g(x1) + _g(x2) + (1.0 - erf(x1 + 1.0)) * np.cos(x2))


class Toy2DModel(ForwardModel):
    """Scalar response of two parameters under a standard normal prior.

    The state is the scalar output itself.
    """

    kind = "toy2d"

    def __init__(self, noise_std=0.25, y_obs=None, truth=None):
        prior = GaussianMeasure.isotropic(2)
        noise = GaussianMeasure.isotropic(1, noise_std**2)
        if y_obs is None and truth is not None:
            y_obs = np.atleast_1d(toy2d_response(*np.asarray(truth, dtype=float)))
        super().__init__(prior, noise, y_obs)
        self.noise_std = float(noise_std)

    @property
    def state_dim(self):
        return 1

    def solve(self, x):
        self.n_solves += 1
        return np.atleast_1d(toy2d_response(x[0], x[1]))

    def observe(self, x, state):
        return np.asarray(state, dtype=float).copy()

    def gradient(self, x):
        x1, x2 = x
        d1 = 0.5 * (_dg(x1) - _TWO_OVER_SQRT_PI * np.exp(-((x1 + 1.0) ** 2)) * np.cos(x2))
        d2 = 0.5 * (_dg(x2) - (1.0 - erf(x1 + 1.0)) * np.sin(x2))
        return np.array([d1, d2])

    def linearize(self, x):
        x = self._check_x(x)
        y = self.solve(x)
        grad = self.gradient(x)
        return Linearization(
            x,
            y,
            y,
            jvp=lambda v: np.asarray(grad @ v)[None, ...],
            vjp=lambda w: np.multiply.outer(grad, w[0]),
        )

    def misfit_grid(self, X1, X2, y_obs=None):
        """Vectorized misfit over coordinate arrays, for quadrature."""
        y = self._data(y_obs)[0]
        return 0.5 * (toy2d_response(X1, X2) - y) ** 2 / self.noise_std**2
