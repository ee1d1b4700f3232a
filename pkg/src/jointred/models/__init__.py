"""Concrete forward models and the ``make_model`` factory."""

import numpy as np

from .._validation import as_generator, check_positive
from ..exceptions import InvalidConfigError
from ..gaussian import GaussianMeasure
from .base import (
    EvalRecord,
    ForwardModel,
    Linearization,
    data_misfit,
    gnh_action,
    log_posterior_unnormalized,
)
from .elliptic import EllipticModel, make_elliptic
from .gomos import GomosModel, make_gomos, onion_geometry, synthetic_cross_sections
from .linear import LinearModel, make_random_linear
from .toy2d import Toy2DModel, toy2d_response

__all__ = [
    "EvalRecord",
    "ForwardModel",
    "Linearization",
    "data_misfit",
    "gnh_action",
    "log_posterior_unnormalized",
    "EllipticModel",
    "GomosModel",
    "LinearModel",
    "Toy2DModel",
    "make_elliptic",
    "make_gomos",
    "make_random_linear",
    "make_model",
    "onion_geometry",
    "synthetic_cross_sections",
    "synthetic_data",
    "toy2d_response",
]

_BUILDERS = {
    "toy2d": Toy2DModel,
    "random-linear": make_random_linear,
    "gomos": make_gomos,
    "elliptic": make_elliptic,
}


def make_model(kind, config=None):
    """Build a forward model from a kind name and keyword configuration.

    Unknown keys raise :class:`InvalidConfigError`.
    """
    if kind not in _BUILDERS:
        raise InvalidConfigError(f"unknown model kind {kind!r}; expected one of {sorted(_BUILDERS)}")
    config = dict(config or {})
    try:
        return _BUILDERS[kind](**config)
    except TypeError as exc:
        raise InvalidConfigError(f"bad configuration for {kind}: {exc}") from None


def synthetic_data(model, seed=0, truth=None, noise_std=None, snr=None):
    """Draw a truth from the prior and simulate noisy data.

    Exactly one of ``noise_std`` / ``snr`` may be given; with ``snr`` the
    noise level is ``sqrt(Var(F(truth)) / snr)`` and is frozen into the
    returned model. Without either, the model's current noise is used.

    Returns
    -------
    model : ForwardModel
        Copy carrying the noise level and ``y_obs``.
    truth : ndarray
    clean : ndarray
        Noise-free outputs ``F(truth)``.
    """
    if noise_std is not None and snr is not None:
        raise InvalidConfigError("give either noise_std or snr, not both")
    rng = as_generator(seed)
    if truth is None:
        truth = model.prior.sample(1, rng)[0]
    truth = np.asarray(truth, dtype=float)
    clean = model.forward(truth)
    if snr is not None:
        check_positive(snr, "snr")
        noise_std = float(np.sqrt(np.var(clean) / snr))
    if noise_std is not None:
        model = model.with_noise(GaussianMeasure.isotropic(model.data_dim, noise_std**2))
        if hasattr(model, "noise_std"):
            model.noise_std = noise_std
    y = clean + model.noise.sample(1, rng)[0]
    return model.with_data(y), truth, clean
