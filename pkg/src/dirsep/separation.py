"""Soft-mask resynthesis and oracle masks."""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .nmf import _posterior
from .spectral import AudioClip, ComplexGrid, istft, write_wav

__all__ = [
    "SeparationMask",
    "apply_mask",
    "ideal_ratio_mask",
    "ideal_binary_mask",
    "save_mask",
    "load_mask",
    "write_sources",
]


@dataclass
class SeparationMask:
    """Per-source weights ``m[s, f, t]`` in [0, 1] summing to one over s."""

    m: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.m, dtype=np.float64)
        if m.ndim != 3:
            raise ValueError(f"mask must be (S, F, T), got {m.shape}")
        if np.any(m < -1e-12) or np.any(m > 1 + 1e-12):
            raise ValueError("mask entries must lie in [0, 1]")
        if not np.allclose(m.sum(axis=0), 1.0, atol=1e-9, rtol=0):
            raise ValueError("mask must sum to one over sources in every bin")
        self.m = m

    @property
    def n_sources(self):
        return self.m.shape[0]

    @property
    def shape(self):
        return self.m.shape[1:]


def _mask_array(mask):
    return mask.m if isinstance(mask, SeparationMask) else np.asarray(mask, dtype=np.float64)


def apply_mask(mix_grid, mask, spectrogram=None, channel=0):
    """Resynthesize every source from the masked mixture.

    Source ``s`` is the inverse STFT of ``|X| m[s] exp(i angle X)`` where
    ``X`` is channel ``channel`` of ``mix_grid``.  Passing the mixture's
    normalized ``spectrogram`` uses ``scale * p`` as the magnitude, which is
    the same quantity.

    Returns
    -------
    list of AudioClip
        One mono clip per source.
    """
    m = _mask_array(mask)
    X = mix_grid.values[channel]
    if m.shape[1:] != X.shape:
        raise ValueError(f"mask shape {m.shape[1:]} does not match grid shape {X.shape}")
    if spectrogram is not None:
        if spectrogram.p.shape != X.shape:
            raise ValueError("spectrogram shape does not match grid")
        magnitude = spectrogram.scale * spectrogram.p
    else:
        magnitude = np.abs(X)
    phase = np.exp(1j * np.angle(X))
    out = []
    for s in range(m.shape[0]):
        grid = ComplexGrid(magnitude * m[s] * phase, mix_grid.config,
                           mix_grid.sample_rate, mix_grid.length)
        out.append(istft(grid))
    return out


def _magnitudes(true_grids, channel=0):
    mags = []
    for g in true_grids:
        values = g.values[channel] if isinstance(g, ComplexGrid) else np.asarray(g)
        mags.append(np.abs(values))
    shapes = {m.shape for m in mags}
    if len(shapes) != 1:
        raise ValueError(f"source grids have mismatched shapes: {sorted(shapes)}")
    return np.stack(mags)


def ideal_ratio_mask(true_grids, channel=0):
    """``|G_s| / sum_s' |G_s'|``; all-zero bins get 1/S."""
    return SeparationMask(_posterior(_magnitudes(true_grids, channel)))


def ideal_binary_mask(true_grids, channel=0):
    """Indicator of the loudest source per bin; ties and empty bins go to the lowest index."""
    mags = _magnitudes(true_grids, channel)
    winner = np.argmax(mags, axis=0)  # first maximum on ties, 0 for all-zero bins
    m = (np.arange(mags.shape[0])[:, None, None] == winner).astype(np.float64)
    return SeparationMask(m)


def save_mask(path, mask):
    """Write ``mask`` as ``<path>`` (raw little-endian float64, C order) plus ``<path>.json`` header."""
    m = _mask_array(mask)
    path = Path(path)
    m.astype("<f8").tofile(path)
    header = {"dtype": "float64", "byte_order": "little", "order": "C",
              "dims": ["source", "frequency", "time"], "shape": list(m.shape)}
    with open(path.with_name(path.name + ".json"), "w") as fh:
        json.dump(header, fh, indent=2)


def load_mask(path):
    path = Path(path)
    with open(path.with_name(path.name + ".json")) as fh:
        header = json.load(fh)
    m = np.fromfile(path, dtype="<f8").reshape(header["shape"])
    return SeparationMask(m)


def write_sources(out_dir, clips, subtype="PCM_16"):
    """Write clips as ``source_<index>.wav``; returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, clip in enumerate(clips):
        if not isinstance(clip, AudioClip):
            raise TypeError("expected AudioClip")
        path = out_dir / f"source_{i}.wav"
        write_wav(path, clip, subtype)
        paths.append(path)
    return paths
