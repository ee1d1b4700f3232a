"""Steady groundwater flow ``-div(T grad u) = q`` with log-transmissivity parameters."""

import threading

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .._fem import grid_connectivity, q1_element_matrices
from .._validation import check_count, check_positive
from ..exceptions import InvalidConfigError, ModelEvalError
from ..gaussian import GaussianMeasure, build_spde_prior
from .base import ForwardModel, Linearization

DEFAULT_PLUMES = (
    ((20.0, 20.0), -3000.0),
    ((2980.0, 20.0), 2000.0),
    ((2980.0, 980.0), 4000.0),
    ((20.0, 980.0), -300.0),
)


def default_sensors(width=3000.0, height=1000.0):
    """Thirteen wells on a staggered interior lattice."""
    xs = np.array([1, 2, 3, 4, 5]) * width / 6.0
    pts = [(x, 0.25 * height) for x in xs] + [(x, 0.75 * height) for x in xs]
    pts += [(x, 0.5 * height) for x in np.array([1, 2, 3]) * width / 4.0]
    return np.array(pts)


class EllipticModel(ForwardModel):
    """Bilinear finite elements on a rectangle with zero drawdown on the boundary.

    Parameters are element-wise log transmissivities, ``T_e = exp(x_e)``.
    The stiffness matrix is ``L(T) = L_0 + sum_e T_e L_e`` where ``L_e`` are
    element matrices with boundary rows and columns removed and ``L_0`` is the
    identity on boundary nodes.

    Parameters
    ----------
    nx, ny : int
        Elements per direction.
    width, height : float
    prior : GaussianMeasure
        Prior on the ``nx * ny`` element values.
    noise_std : float
    sensors : array-like of shape (d, 2)
        Well positions, snapped to the nearest node.
    plumes : sequence of ((cx, cy), magnitude)
    plume_width : float
    """

    kind = "elliptic"

    def __init__(self, nx, ny, width, height, prior, noise_std, sensors=None,
                 plumes=DEFAULT_PLUMES, plume_width=50.0, y_obs=None, cache=True):
        self.nx, self.ny = check_count(nx, "nx"), check_count(ny, "ny")
        self.width, self.height = float(width), float(height)
        if prior.dim != nx * ny:
            raise InvalidConfigError("prior dimension must equal nx * ny")
        sensors = default_sensors(width, height) if sensors is None else np.asarray(sensors, float)
        noise = GaussianMeasure.isotropic(len(sensors), check_positive(noise_std, "noise_std") ** 2)
        super().__init__(prior, noise, y_obs)
        self.noise_std = float(noise_std)
        self.hx, self.hy = self.width / nx, self.height / ny
        self.conn = grid_connectivity(nx, ny)
        n_nodes = (nx + 1) * (ny + 1)
        ix, iy = np.meshgrid(np.arange(nx + 1), np.arange(ny + 1), indexing="xy")
        ix, iy = ix.ravel(), iy.ravel()
        self.node_xy = np.stack([ix * self.hx, iy * self.hy], axis=1)
        boundary = (ix == 0) | (ix == nx) | (iy == 0) | (iy == ny)
        self.boundary = boundary
        self.interior_mask = (~boundary).astype(float)

        k_e, _ = q1_element_matrices(self.hx, self.hy)
        self.k_elem = k_e
        rows = np.repeat(self.conn, 4, axis=1).ravel()
        cols = np.tile(self.conn, (1, 4)).ravel()
        keep = ~(boundary[rows] | boundary[cols])
        self._rows, self._cols, self._keep = rows[keep], cols[keep], keep
        self._bnd_idx = np.flatnonzero(boundary)
        self.n_nodes = n_nodes

        self.plumes = tuple((tuple(c), float(a)) for c, a in plumes)
        self.plume_width = float(plume_width)
        self.rhs = self._load_vector()

        idx = []
        for sx, sy in sensors:
            i = int(np.clip(round(sx / self.hx), 1, nx - 1))
            j = int(np.clip(round(sy / self.hy), 1, ny - 1))
            idx.append(i + (nx + 1) * j)
        if len(set(idx)) != len(idx):
            raise InvalidConfigError("two sensors snap to the same node")
        self.obs_index = np.array(idx)
        self.sensors = self.node_xy[self.obs_index]

        self._cache_enabled = cache
        self._lock = threading.Lock()
        self._cache_key = None
        self._cache_val = None

    @property
    def state_dim(self):
        return self.n_nodes

    def _load_vector(self):
        q = np.zeros(self.n_nodes)
        for (cx, cy), mag in self.plumes:
            d2 = (self.node_xy[:, 0] - cx) ** 2 + (self.node_xy[:, 1] - cy) ** 2
            q += mag * np.exp(-0.5 * d2 / self.plume_width**2)
        # nodal quadrature with lumped areas
        area = np.bincount(self.conn.ravel(), minlength=self.n_nodes) * self.hx * self.hy / 4.0
        return q * area * self.interior_mask

    def source_field(self):
        q = np.zeros(self.n_nodes)
        for (cx, cy), mag in self.plumes:
            d2 = (self.node_xy[:, 0] - cx) ** 2 + (self.node_xy[:, 1] - cy) ** 2
            q += mag * np.exp(-0.5 * d2 / self.plume_width**2)
        return q

    # --- assembly -----------------------------------------------------
    def assemble(self, coeffs, dirichlet=True):
        """``sum_e coeffs_e L_e`` (+ boundary identity when ``dirichlet``)."""
        vals = (np.asarray(coeffs, dtype=float)[:, None] * self.k_elem.ravel()[None, :]).ravel()
        vals = vals[self._keep]
        rows, cols = self._rows, self._cols
        if dirichlet:
            rows = np.concatenate([rows, self._bnd_idx])
            cols = np.concatenate([cols, self._bnd_idx])
            vals = np.concatenate([vals, np.ones(self._bnd_idx.size)])
        return sp.csc_matrix((vals, (rows, cols)), shape=(self.n_nodes, self.n_nodes))

    def boundary_block(self):
        """The constant part ``L_0``: identity on boundary nodes."""
        d = np.zeros(self.n_nodes)
        d[self._bnd_idx] = 1.0
        return sp.diags(d).tocsc()

    def _factor(self, x):
        key = x.tobytes()
        if self._cache_enabled:
            with self._lock:
                if self._cache_key == key:
                    return self._cache_val
        T = np.exp(x)
        try:
            lu = spla.splu(self.assemble(T))
            u = lu.solve(self.rhs)
        except RuntimeError as exc:
            raise ModelEvalError(f"stiffness factorization failed: {exc}") from exc
        if not np.all(np.isfinite(u)):
            raise ModelEvalError("non-finite state", {"max_abs_x": float(np.abs(x).max())})
        self.n_solves += 1
        val = (T, lu, u)
        if self._cache_enabled:
            with self._lock:
                self._cache_key, self._cache_val = key, val
        return val

    def solve(self, x):
        return self._factor(np.asarray(x, dtype=float))[2].copy()

    def observe(self, x, state):
        return state[self.obs_index]

    def observe_states(self, U):
        return U[self.obs_index]

    def element_flux(self, state):
        """``L_e u`` restricted to each element's nodes, shape (n_elem, 4)."""
        ue = (state * self.interior_mask)[self.conn]
        return ue @ self.k_elem.T

    def linearize(self, x):
        x = self._check_x(x)
        T, lu, u = self._factor(x)
        flux = self.element_flux(u) * T[:, None]
        conn, mask, obs = self.conn, self.interior_mask, self.obs_index
        m = self.n_nodes

        def jvp(v):
            V = v.reshape(v.shape[0], -1)
            rhs = np.zeros((m, V.shape[1]))
            contrib = flux[:, :, None] * V[:, None, :]
            np.add.at(rhs, conn.ravel(), contrib.reshape(-1, V.shape[1]))
            rhs *= mask[:, None]
            du = -lu.solve(rhs)
            out = du[obs]
            return out.ravel() if v.ndim == 1 else out

        def vjp(w):
            W = w.reshape(w.shape[0], -1)
            rhs = np.zeros((m, W.shape[1]))
            rhs[obs] = W
            lam = lu.solve(rhs, trans="T") * mask[:, None]
            out = -np.einsum("ek,ekj->ej", flux, lam[conn])
            return out.ravel() if w.ndim == 1 else out

        return Linearization(x, u[obs], u, jvp=jvp, vjp=vjp)


def make_elliptic(
    nx=60,
    ny=20,
    width=3000.0,
    height=1000.0,
    corr_tensor=((0.55, -0.45), (-0.45, 0.55)),
    kappa=50.0,
    prior_mean=float(np.log(1000.0)),
    length_scale=1000.0,
    marginal_std=None,
    noise_std=1.0,
    sensors=None,
    plumes=DEFAULT_PLUMES,
    plume_width=50.0,
    y_obs=None,
):
    """Groundwater model with an SPDE log-transmissivity prior.

    ``noise_std`` is a placeholder until data are generated; see
    :func:`jointred.models.synthetic_data` for the SNR-based choice.
    """
    prior = build_spde_prior(
        (nx, ny, width, height), corr_tensor, kappa, prior_mean,
        length_scale=length_scale, marginal_std=marginal_std,
    )
    return EllipticModel(nx, ny, width, height, prior, noise_std, sensors=sensors,
                         plumes=plumes, plume_width=plume_width, y_obs=y_obs)
