"""Linear state model ``u = L x``, ``y = C u`` with spectrally prescribed operators."""

import numpy as np

from .._validation import as_generator, check_count, check_positive
from ..exceptions import InvalidConfigError
from ..gaussian import GaussianMeasure, Spectral
from .base import ForwardModel, Linearization


def random_orthogonal(n, rng):
    """Orthogonal matrix from the QR factorization of a Gaussian matrix."""
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def power_law_spectrum(n, scale, knee, decay):
    """``scale * (i / knee) ** -decay`` for ``i = 1..n``."""
    i = np.arange(1, n + 1, dtype=float)
    return scale * (i / knee) ** (-decay)


class LinearModel(ForwardModel):
    """``u = L x`` and ``y = u[obs_index]`` with dense ``L``.

    Parameters
    ----------
    state_operator : ndarray of shape (m, n)
    obs_index : array-like of int, length d
        State entries that are observed.
    prior, noise : GaussianMeasure
    """

    kind = "random-linear"

    def __init__(self, state_operator, obs_index, prior, noise, y_obs=None):
        super().__init__(prior, noise, y_obs)
        self.state_operator = np.asarray(state_operator, dtype=float)
        self.obs_index = np.asarray(obs_index, dtype=int)
        if self.state_operator.shape[1] != prior.dim:
            raise InvalidConfigError("state operator columns must match the parameter dimension")
        if self.obs_index.size != noise.dim:
            raise InvalidConfigError("number of observed indices must match the data dimension")

    @property
    def state_dim(self):
        return self.state_operator.shape[0]

    @property
    def jacobian(self):
        """Dense ``C L`` (d x n)."""
        return self.state_operator[self.obs_index]

    def solve(self, x):
        self.n_solves += 1
        return self.state_operator @ x

    def observe(self, x, state):
        return state[self.obs_index]

    def observe_states(self, U):
        """Observation of state columns."""
        return U[self.obs_index]

    def linearize(self, x):
        x = self._check_x(x)
        u = self.solve(x)
        J = self.jacobian
        return Linearization(x, u[self.obs_index], u, jvp=lambda v: J @ v, vjp=lambda w: J.T @ w)

    def hessian(self):
        """Dense ``J^T Gamma_obs^{-1} J``."""
        J = self.jacobian
        return J.T @ self.noise.prec(J)

    def exact_posterior(self, y_obs=None):
        """Mean and covariance of the Gaussian posterior."""
        y = self._data(y_obs)
        J = self.jacobian
        prior_prec = self.prior.prec(np.eye(self.param_dim))
        post_prec = prior_prec + self.hessian()
        cov = np.linalg.inv(post_prec)
        cov = 0.5 * (cov + cov.T)
        rhs = J.T @ self.noise.prec(y) + prior_prec @ self.prior.mean
        return cov @ rhs, cov


def make_random_linear(
    n=200,
    d=20,
    kappa0=100.0,
    a_L=2.0,
    b_L=2.0,
    rho0=10.0,
    a_pr=10.0,
    b_pr=4.0,
    noise_std=1.0,
    seed=0,
    m=None,
    y_obs=None,
):
    """Random linear model with power-law operator and prior spectra.

    ``L = Psi_L diag(kappa) Psi_L^T`` and ``Gamma_pr = Psi_pr diag(rho) Psi_pr^T``
    use independent random orthogonal bases; ``d`` distinct state entries are
    observed.
    """
    n = check_count(n, "n")
    d = check_count(d, "d")
    if m is not None and m != n:
        raise InvalidConfigError("the random linear model needs m == n")
    if d > n:
        raise InvalidConfigError(f"cannot observe {d} of {n} states")
    for name, val in [("kappa0", kappa0), ("a_L", a_L), ("rho0", rho0), ("a_pr", a_pr)]:
        check_positive(val, name)
    check_positive(noise_std, "noise_std")
    rng = as_generator(seed)
    psi_L = random_orthogonal(n, rng)
    psi_pr = random_orthogonal(n, rng)
    kappa = power_law_spectrum(n, kappa0, a_L, b_L)
    rho = power_law_spectrum(n, rho0, a_pr, b_pr)
    L = (psi_L * kappa) @ psi_L.T
    obs_index = np.sort(rng.choice(n, size=d, replace=False))
    prior = GaussianMeasure(np.zeros(n), Spectral(rho, psi_pr))
    noise = GaussianMeasure.isotropic(d, noise_std**2)
    model = LinearModel(L, obs_index, prior, noise, y_obs)
    model.config = dict(
        n=n, d=d, kappa0=kappa0, a_L=a_L, b_L=b_L, rho0=rho0, a_pr=a_pr, b_pr=b_pr,
        noise_std=noise_std, seed=seed,
    )
    return model
