"""Bilinear finite-element helpers on structured rectangular grids."""

import numpy as np


def q1_element_matrices(hx, hy, tensor=None):
    """Stiffness of ``-div(K grad)`` and lumped mass for one bilinear element.

    Two-point Gauss quadrature per direction is exact for rectangles.
    Local node order: (0,0), (1,0), (1,1), (0,1).
    """
    tensor = np.eye(2) if tensor is None else np.asarray(tensor, dtype=float)
    gauss = np.array([-1.0, 1.0]) / np.sqrt(3.0)
    corners = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], dtype=float)
    jac = np.array([hx / 2.0, hy / 2.0])
    stiff = np.zeros((4, 4))
    for gx in gauss:
        for gy in gauss:
            dxi = corners[:, 0] * (1 + corners[:, 1] * gy) / 4.0
            deta = corners[:, 1] * (1 + corners[:, 0] * gx) / 4.0
            grad = np.stack([dxi / jac[0], deta / jac[1]], axis=1)
            stiff += grad @ tensor @ grad.T * (jac[0] * jac[1])
    mass = np.full(4, hx * hy / 4.0)
    return stiff, mass


def grid_connectivity(nx, ny):
    """Node indices of each element of an ``nx`` by ``ny`` element grid.

    Nodes are numbered ``i + (nx + 1) * j``, elements ``ex + nx * ey``.
    """
    ex, ey = np.meshgrid(np.arange(nx), np.arange(ny), indexing="xy")
    ex, ey = ex.ravel(), ey.ravel()
    base = ex + (nx + 1) * ey
    return np.stack([base, base + 1, base + 2 + nx, base + 1 + nx], axis=1)
