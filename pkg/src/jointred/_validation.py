"""Input validation helpers shared by every module."""

import numpy as np

from .exceptions import InvalidConfigError, ShapeError


def check_vector(x, dim=None, name="x"):
    """Return ``x`` as a finite 1-D float array, optionally of length ``dim``."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    if x.ndim != 1:
        raise ShapeError(f"{name} must be one-dimensional, got shape {x.shape}")
    if dim is not None and x.shape[0] != dim:
        raise ShapeError(f"{name} has length {x.shape[0]}, expected {dim}")
    return x


def check_matrix(a, shape=None, name="a"):
    """Return ``a`` as a 2-D float array; ``shape`` entries of None are free."""
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be two-dimensional, got shape {a.shape}")
    if shape is not None:
        for axis, want in enumerate(shape):
            if want is not None and a.shape[axis] != want:
                raise ShapeError(
                    f"{name} has shape {a.shape}, expected axis {axis} == {want}"
                )
    return a


def check_samples(X, dim, name="X"):
    """Samples are stored one per row, ``(count, dim)``."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2 or X.shape[1] != dim:
        raise ShapeError(f"{name} must have shape (count, {dim}), got {X.shape}")
    return X


def check_positive(value, name, allow_zero=False):
    value = float(value)
    if not np.isfinite(value) or value < 0 or (value == 0 and not allow_zero):
        raise InvalidConfigError(f"{name} must be positive, got {value}")
    return value


def check_count(value, name, minimum=1):
    if int(value) != value or value < minimum:
        raise InvalidConfigError(f"{name} must be an integer >= {minimum}, got {value}")
    return int(value)


def as_generator(seed):
    """Turn a seed, ``None`` or a Generator into a ``numpy.random.Generator``."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def normalized_log_weights(log_weights, count):
    """Self-normalized weights from log weights; uniform when absent."""
    if log_weights is None:
        return np.full(count, 1.0 / count)
    lw = np.asarray(log_weights, dtype=float)
    if lw.shape != (count,):
        raise ShapeError(f"log_weights has shape {lw.shape}, expected ({count},)")
    finite = np.isfinite(lw)
    if not finite.any():
        from .exceptions import DegenerateWeightsError

        raise DegenerateWeightsError("all log weights are non-finite")
    shifted = np.where(finite, lw - lw[finite].max(), -np.inf)
    w = np.exp(shifted)
    return w / w.sum()


def effective_sample_size(weights):
    w = np.asarray(weights, dtype=float)
    s = w.sum()
    if s <= 0:
        return 0.0
    return float(s * s / np.sum(w * w))
