"""Per-bin direction-of-arrival estimation from inter-microphone phase differences.

For a far-field plane wave with wave vector ``k`` the phase of microphone
``i`` relative to the reference microphone satisfies
``angle(Y_i) - angle(Y_1) = (x_i - x_1) . k``.  The positions are fixed, so
the least-squares solve for every time-frequency bin reduces to one
pseudoinverse computed up front and a small matrix product per bin.

Azimuth convention: the reported direction is ``atan2(k_y, k_x)`` of ``k``
itself.  With the STFT phase convention used here, a signal that reaches
microphone ``(D, 0)`` one sample after the origin yields ``k`` pointing
along ``-x`` (azimuth pi).
"""

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._validation import check_positive_int

__all__ = [
    "ArrayGeometry",
    "DoaSolver",
    "DirectionField",
    "design_doa_solver",
    "estimate_doa",
    "quantize_direction",
    "direction_field",
    "load_geometry",
    "save_geometry",
    "save_direction_field",
    "load_direction_field",
    "bin_center",
]

SPEED_OF_SOUND = 340.29


@dataclass
class ArrayGeometry:
    positions: np.ndarray
    speed_of_sound: float = SPEED_OF_SOUND

    def __post_init__(self):
        positions = np.asarray(self.positions, dtype=np.float64)
        if positions.ndim != 2 or positions.shape[1] not in (2, 3):
            raise ValueError(f"positions must be (M, 2) or (M, 3), got {positions.shape}")
        if self.speed_of_sound <= 0:
            raise ValueError("speed_of_sound must be positive")
        self.positions = positions

    @property
    def n_mics(self):
        return self.positions.shape[0]

    @property
    def dim(self):
        return self.positions.shape[1]

    def differences(self):
        """Rows ``x_i - x_1`` for i = 2..M."""
        return self.positions[1:] - self.positions[0]


@dataclass(frozen=True)
class DoaSolver:
    """Precomputed least-squares solver mapping phase differences to ``k``."""

    pinv: np.ndarray
    geometry: ArrayGeometry

    def solve(self, phase_differences):
        """Apply the pseudoinverse along the leading axis of ``phase_differences``."""
        phase_differences = np.asarray(phase_differences, dtype=np.float64)
        return np.tensordot(self.pinv, phase_differences, axes=(1, 0))


@dataclass
class DirectionField:
    """Direction-bin index ``d[f, t]`` in ``[0, n_directions)`` per bin."""

    d: np.ndarray
    n_directions: int

    def __post_init__(self):
        self.n_directions = check_positive_int(self.n_directions, "n_directions")
        d = np.asarray(self.d)
        if d.size and (d.min() < 0 or d.max() >= self.n_directions):
            raise ValueError("direction index out of range")
        self.d = d.astype(np.intp)

    @property
    def shape(self):
        return self.d.shape


def design_doa_solver(geometry):
    """Build the pseudoinverse of the microphone-difference matrix.

    Raises ``ValueError`` ("degenerate array geometry") when the differences
    ``x_i - x_1`` do not span the geometry's dimension.
    """
    if not isinstance(geometry, ArrayGeometry):
        geometry = ArrayGeometry(geometry)
    diffs = geometry.differences()
    if diffs.shape[0] < geometry.dim or np.linalg.matrix_rank(diffs) < geometry.dim:
        raise ValueError("degenerate array geometry: microphone differences are rank deficient")
    return DoaSolver(np.linalg.pinv(diffs), geometry)


def _phase_differences(Y):
    """Wrapped ``angle(Y_i) - angle(Y_1)`` in (-pi, pi], shape (M-1, ...)."""
    # difference of angles (not angle of Y_i conj(Y_1)) keeps identical channels exactly 0
    angles = np.angle(Y)
    diff = np.mod(angles[1:] - angles[:1] + np.pi, 2 * np.pi) - np.pi
    diff[diff <= -np.pi] = np.pi
    return diff


def estimate_doa(solver, Y, frequency=None):
    """Least-squares wave vector for one bin (or a stack of bins).

    Parameters
    ----------
    solver : DoaSolver
    Y : array_like, complex, shape (M, ...)
        STFT values of every microphone in the bin(s).
    frequency : float, optional
        Bin frequency in rad/sample.  When given, ``k`` is divided by it,
        which changes only its magnitude.

    Returns
    -------
    k : ndarray, shape (dim, ...)
        NaN where the reference value ``Y[0]`` is zero (unreliable bin).
    """
    Y = np.asarray(Y, dtype=np.complex128)
    if Y.shape[0] != solver.geometry.n_mics:
        raise ValueError(f"expected {solver.geometry.n_mics} microphone values, got {Y.shape[0]}")
    k = solver.solve(_phase_differences(Y))
    if frequency is not None:
        k = k / frequency
    unreliable = Y[0] == 0
    if np.ndim(unreliable) == 0:
        if unreliable:
            k = np.full_like(k, np.nan)
    else:
        k[:, unreliable] = np.nan
    return k


def quantize_direction(k, n_directions):
    """Map the azimuth of ``k`` to one of ``n_directions`` equal arcs of [0, 2pi).

    Bin ``j`` covers azimuths ``[2 pi j / D, 2 pi (j + 1) / D)``.  ``k = 0``
    maps to bin 0.  ``k`` may be a single vector or have shape (dim, ...).
    """
    n_directions = check_positive_int(n_directions, "n_directions")
    k = np.asarray(k, dtype=np.float64)
    kx, ky = k[0], k[1]
    azimuth = np.mod(np.arctan2(ky, kx), 2 * np.pi)
    index = np.floor(azimuth * n_directions / (2 * np.pi)).astype(np.intp)
    index = np.minimum(index, n_directions - 1)
    index = np.where((kx == 0) & (ky == 0), 0, index)
    if index.ndim == 0:
        return int(index)
    return index


def bin_center(index, n_directions):
    """Azimuth (radians) at the middle of direction bin ``index``."""
    return 2 * np.pi * (np.asarray(index) + 0.5) / n_directions


def _fill_unreliable(d, reliable):
    """Give each unreliable bin the index of the nearest reliable frame at its frequency."""
    d = d.copy()
    for f in np.flatnonzero(~reliable.all(axis=1)):
        good = np.flatnonzero(reliable[f])
        bad = np.flatnonzero(~reliable[f])
        if good.size == 0:
            d[f, :] = 0
            continue
        pos = np.searchsorted(good, bad)
        left = good[np.clip(pos - 1, 0, good.size - 1)]
        right = good[np.clip(pos, 0, good.size - 1)]
        nearest = np.where(np.abs(bad - left) <= np.abs(right - bad), left, right)
        d[f, bad] = d[f, nearest]
    return d


def direction_field(solver, grid, n_directions):
    """Quantized DOA of every time-frequency bin of a multichannel STFT.

    Parameters
    ----------
    solver : DoaSolver
    grid : ComplexGrid or ndarray of shape (M, F, T)
        Channel order must match ``solver.geometry.positions``.
    n_directions : int
    """
    values = getattr(grid, "values", grid)
    if isinstance(values, (list, tuple)):
        shapes = {np.shape(v) for v in values}
        if len(shapes) != 1:
            raise ValueError(f"channel grids have mismatched shapes: {sorted(shapes)}")
    values = np.asarray(values, dtype=np.complex128)
    if values.ndim != 3:
        raise ValueError(f"expected (M, F, T) values, got shape {values.shape}")
    k = estimate_doa(solver, values)
    reliable = values[0] != 0
    k = np.where(reliable, k, 0.0)
    d = quantize_direction(k, n_directions)
    if not reliable.all():
        d = _fill_unreliable(d, reliable)
    return DirectionField(d, n_directions)


def load_geometry(path):
    """Read ``{"positions": [[x, y(, z)], ...], "speed_of_sound": c}`` from JSON."""
    with open(path) as fh:
        cfg = json.load(fh)
    return ArrayGeometry(cfg["positions"], cfg.get("speed_of_sound", SPEED_OF_SOUND))


def save_geometry(path, geometry):
    with open(path, "w") as fh:
        json.dump({"positions": geometry.positions.tolist(),
                   "speed_of_sound": geometry.speed_of_sound}, fh, indent=2)


def save_direction_field(path, field):
    """Write ``field`` as JSON (``.json``) or as a headerless CSV integer matrix."""
    path = Path(path)
    if path.suffix == ".json":
        with open(path, "w") as fh:
            json.dump({"n_directions": field.n_directions, "d": field.d.tolist()}, fh)
    else:
        with open(path, "w", newline="") as fh:
            csv.writer(fh).writerows(field.d.tolist())


def load_direction_field(path, n_directions=None):
    path = Path(path)
    if path.suffix == ".json":
        with open(path) as fh:
            obj = json.load(fh)
        return DirectionField(np.array(obj["d"], dtype=np.intp),
                              n_directions or obj["n_directions"])
    d = np.loadtxt(path, delimiter=",", dtype=np.intp, ndmin=2)
    if n_directions is None:
        raise ValueError("n_directions is required when loading a CSV direction field")
    return DirectionField(d, n_directions)
