"""Input validation helpers shared by the estimators and the functional core."""

import numbers

import numpy as np

#: Floor applied to denominators and factors before division/normalization.
EPS = 1e-12


def check_positive_int(value, name, minimum=1):
    """Return ``value`` as an int, raising ``ValueError`` if it is below ``minimum``."""
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise TypeError(f"{name} must be an integer, got {type(value).__name__}")
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_rng(seed):
    """Turn ``seed`` into a ``numpy.random.Generator``.

    Accepts None, an int, or an existing Generator (returned unchanged).
    """
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None or isinstance(seed, numbers.Integral):
        return np.random.default_rng(seed)
    raise TypeError(f"cannot build a random generator from {seed!r}")


def check_nonnegative(X, name="X", ndim=None, normalized=False, atol=1e-9):
    """Validate a nonnegative float array and return it as float64.

    Parameters
    ----------
    X : array_like
    name : str
        Used in error messages.
    ndim : int or tuple of int, optional
        Allowed dimensionalities.
    normalized : bool
        When True, also require ``|X.sum() - 1| <= atol``.
    """
    X = np.asarray(X, dtype=np.float64)
    if ndim is not None:
        allowed = (ndim,) if isinstance(ndim, int) else tuple(ndim)
        if X.ndim not in allowed:
            raise ValueError(f"{name} must have ndim in {allowed}, got shape {X.shape}")
    if X.size == 0:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains NaN or infinite values")
    if np.any(X < 0):
        raise ValueError(f"{name} has negative entries")
    if normalized and abs(X.sum() - 1.0) > atol:
        raise ValueError(f"{name} must sum to 1, sums to {X.sum():.12g}")
    return X


def check_direction_indices(d, shape, n_directions):
    """Validate an integer direction-bin array of the given ``shape``."""
    d = np.asarray(d)
    if d.shape != tuple(shape):
        raise ValueError(f"direction field shape {d.shape} does not match {tuple(shape)}")
    if not np.issubdtype(d.dtype, np.integer):
        if not np.all(np.equal(np.mod(d, 1), 0)):
            raise ValueError("direction indices must be integers")
        d = d.astype(np.intp)
    if d.size and (d.min() < 0 or d.max() >= n_directions):
        raise ValueError(f"direction indices must lie in [0, {n_directions})")
    return d.astype(np.intp, copy=False)


def safe_ratio(p, q):
    """``p / q`` with 0 where ``q == 0``.

    Where the model is exactly zero every factor product feeding it is zero
    too, so the ratio's value there never reaches an update.
    """
    p = np.asarray(p, dtype=np.float64)
    return np.divide(p, q, out=np.zeros(np.broadcast_shapes(p.shape, np.shape(q))), where=q > 0)
