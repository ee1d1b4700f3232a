"""Stellar-occultation transmission model on an onion-peel atmosphere.

Parameters are log gas densities, stored gas-major: ``x[g * N_alts + j]`` is
gas ``g`` in layer ``j``. With ``B = exp(X)`` (layers x gases) the optical
depth is ``A B G^T`` and the transmissions are ``exp(-(G kron A) exp(x))``;
outputs are ordered wavelength-major, ``y[k * N_alts + i]`` is line of sight
``i`` at wavelength ``k``.
"""

import numpy as np

from .._validation import as_generator, check_count, check_positive
from ..exceptions import InvalidConfigError
from ..gaussian import GaussianMeasure, build_squared_exp_prior
from .base import ForwardModel, Linearization

EARTH_RADIUS_KM = 6371.0


def onion_geometry(radii, tangent_radii=None):
    """Chord lengths of lines of sight through spherical shells.

    Shell ``j`` spans ``[radii[j], radii[j + 1]]``. Line ``i`` has tangent
    radius ``tangent_radii[i]`` (default: the inner radius of shell ``i``)
    and crosses shell ``j`` over
    ``2 * (sqrt(r_j+1^2 - t_i^2) - sqrt(r_j^2 - t_i^2))`` whenever
    ``t_i <= r_j``.

    Returns
    -------
    G : ndarray of shape (lines, shells)
    """
    radii = np.asarray(radii, dtype=float)
    if radii.ndim != 1 or radii.size < 2 or np.any(np.diff(radii) <= 0):
        raise InvalidConfigError("radii must be a strictly increasing sequence")
    t = radii[:-1] if tangent_radii is None else np.asarray(tangent_radii, dtype=float)
    inner, outer = radii[:-1], radii[1:]
    t2 = t[:, None] ** 2
    hit = t[:, None] <= inner[None, :] + 1e-12
    outer_len = np.sqrt(np.maximum(outer[None, :] ** 2 - t2, 0.0))
    inner_len = np.sqrt(np.maximum(inner[None, :] ** 2 - t2, 0.0))
    return np.where(hit, 2.0 * (outer_len - inner_len), 0.0)


def synthetic_cross_sections(n_wavelengths, n_gases, seed=0, lines_per_gas=6, baseline=0.05):
    """Positive smooth spectra built from seeded Gaussian absorption lines.

    Each column is normalized to a peak value of one.
    """
    rng = as_generator(seed)
    nu = np.linspace(0.0, 1.0, n_wavelengths)
    A = np.empty((n_wavelengths, n_gases))
    for g in range(n_gases):
        centres = rng.uniform(0.0, 1.0, lines_per_gas)
        widths = rng.uniform(0.02, 0.12, lines_per_gas)
        amps = rng.uniform(0.2, 1.0, lines_per_gas)
        col = baseline + np.sum(
            amps * np.exp(-0.5 * ((nu[:, None] - centres) / widths) ** 2), axis=1
        )
        A[:, g] = col / col.max()
    return A


class GomosModel(ForwardModel):
    """Transmission model ``y = exp(-(G kron A) exp(x))``.

    The state is the density vector ``exp(x)``.

    Parameters
    ----------
    geometry : ndarray of shape (N_alts, N_alts)
    cross_sections : ndarray of shape (N_nu, N_gas)
    prior, noise : GaussianMeasure
    """

    kind = "gomos"

    def __init__(self, geometry, cross_sections, prior, noise, y_obs=None):
        super().__init__(prior, noise, y_obs)
        self.geometry = np.asarray(geometry, dtype=float)
        self.cross_sections = np.asarray(cross_sections, dtype=float)
        self.n_alts = self.geometry.shape[1]
        self.n_gas = self.cross_sections.shape[1]
        self.n_nu = self.cross_sections.shape[0]
        if self.n_alts * self.n_gas != prior.dim:
            raise InvalidConfigError("prior dimension must equal N_alts * N_gas")
        if self.geometry.shape[0] * self.n_nu != noise.dim:
            raise InvalidConfigError("noise dimension must equal lines * N_nu")
        # explicit Kronecker product; small at the sizes this is used for
        self.kron = np.kron(self.cross_sections, self.geometry)

    @property
    def state_dim(self):
        return self.param_dim

    def solve(self, x):
        self.n_solves += 1
        return np.exp(x)

    def observe(self, x, state):
        return np.exp(-(self.kron @ state))

    def observe_states(self, U):
        return np.exp(-(self.kron @ U))

    def optical_depth(self, x):
        return self.kron @ np.exp(x)

    def linearize(self, x):
        x = self._check_x(x)
        rho = self.solve(x)
        y = np.exp(-(self.kron @ rho))
        K = self.kron

        def jvp(v):
            return -(y if v.ndim == 1 else y[:, None]) * (K @ ((rho if v.ndim == 1 else rho[:, None]) * v))

        def vjp(w):
            inner = K.T @ (-(y if w.ndim == 1 else y[:, None]) * w)
            return (rho if w.ndim == 1 else rho[:, None]) * inner

        return Linearization(x, y, rho, jvp=jvp, vjp=vjp)


def make_gomos(
    n_alts=20,
    n_gas=2,
    n_nu=100,
    bottom_km=10.0,
    top_km=90.0,
    corr_len=10.0,
    sigmas=(5.22, 9.79, 23.66, 83.18),
    prior_means=0.0,
    scale_height=None,
    max_depth=(3.0, 0.3, 0.3, 0.3),
    noise_std=0.01,
    cross_section_seed=0,
    cross_sections=None,
    y_obs=None,
):
    """Desk-scale or full-scale transmission model with synthetic spectra.

    Parameters
    ----------
    sigmas : sequence of float
        Prior kernel amplitudes; the first ``n_gas`` entries are used.
    prior_means : float or sequence
        Constant prior mean of the log density per gas.
    scale_height : float, optional
        If given, the prior mean decreases linearly with altitude as
        ``prior_means - (altitude - bottom_km) / scale_height``.
    max_depth : sequence of float
        Cross-sections of gas ``g`` are scaled so that the largest optical
        depth it produces at the prior mean equals ``max_depth[g]``.
    """
    n_alts = check_count(n_alts, "n_alts", 2)
    n_gas = check_count(n_gas, "n_gas")
    n_nu = check_count(n_nu, "n_nu")
    check_positive(noise_std, "noise_std")
    if top_km <= bottom_km:
        raise InvalidConfigError("top_km must exceed bottom_km")
    sigmas = np.asarray(sigmas, dtype=float)
    if sigmas.size < n_gas:
        raise InvalidConfigError(f"need {n_gas} sigmas, got {sigmas.size}")
    sigmas = sigmas[:n_gas]
    edges = np.linspace(bottom_km, top_km, n_alts + 1)
    mid = 0.5 * (edges[:-1] + edges[1:])
    G = onion_geometry(EARTH_RADIUS_KM + edges)

    means = np.broadcast_to(np.asarray(prior_means, dtype=float), (n_gas,))
    mean = np.repeat(means, n_alts)
    if scale_height is not None:
        mean = mean - np.tile((mid - bottom_km) / float(scale_height), n_gas)
    prior = build_squared_exp_prior(mid, sigmas, corr_len, means=mean)

    if cross_sections is None:
        A = synthetic_cross_sections(n_nu, n_gas, cross_section_seed)
        depth = np.asarray(max_depth, dtype=float)
        if depth.size < n_gas:
            depth = np.resize(depth, n_gas)
        for g in range(n_gas):
            column = G @ np.exp(mean[g * n_alts:(g + 1) * n_alts])
            A[:, g] *= depth[g] / (A[:, g].max() * column.max())
    else:
        A = np.asarray(cross_sections, dtype=float)
        if A.shape != (n_nu, n_gas):
            raise InvalidConfigError(f"cross_sections must be {n_nu}x{n_gas}, got {A.shape}")
    noise = GaussianMeasure.isotropic(n_alts * n_nu, noise_std**2)
    model = GomosModel(G, A, prior, noise, y_obs)
    model.altitudes = mid
    return model
