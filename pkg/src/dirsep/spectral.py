"""STFT analysis/resynthesis, magnitude normalization and WAV I/O."""

from dataclasses import dataclass, field

import numpy as np
from scipy.io import wavfile
from scipy.signal import check_COLA

__all__ = [
    "AudioClip",
    "ComplexGrid",
    "Spectrogram",
    "StftConfig",
    "stft",
    "istft",
    "normalize_magnitude",
    "read_wav",
    "write_wav",
]

WINDOWS = ("sqrt-hann", "hann", "rect")


@dataclass
class AudioClip:
    """Multichannel audio, ``samples`` has shape (channels, n_samples)."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim == 1:
            samples = samples[np.newaxis, :]
        if samples.ndim != 2 or samples.shape[0] < 1:
            raise ValueError(f"samples must be (channels, n_samples), got {samples.shape}")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        self.samples = samples
        self.sample_rate = int(self.sample_rate)

    @property
    def channels(self):
        return self.samples.shape[0]

    def __len__(self):
        return self.samples.shape[1]

    def channel(self, index):
        return AudioClip(self.samples[index], self.sample_rate)


@dataclass(frozen=True)
class StftConfig:
    """Transform parameters.

    ``window`` names an analysis/synthesis pair: ``sqrt-hann`` uses a
    square-root periodic Hann window on both sides, ``hann`` analyses with
    Hann and synthesizes with a flat window, ``rect`` is flat on both sides.
    """

    frame_size: int = 1024
    hop: int = 256
    window: str = "sqrt-hann"

    def __post_init__(self):
        if self.window not in WINDOWS:
            raise ValueError(f"unknown window {self.window!r}; choose from {WINDOWS}")
        if self.frame_size < 2 or self.frame_size % 2:
            raise ValueError("frame_size must be an even integer >= 2")
        if not 1 <= self.hop <= self.frame_size:
            raise ValueError("hop must lie in [1, frame_size]")

    @property
    def n_bins(self):
        return self.frame_size // 2 + 1

    def windows(self):
        """Return the (analysis, synthesis) window pair."""
        n = np.arange(self.frame_size)
        hann = 0.5 - 0.5 * np.cos(2 * np.pi * n / self.frame_size)
        ones = np.ones(self.frame_size)
        if self.window == "sqrt-hann":
            return np.sqrt(hann), np.sqrt(hann)
        if self.window == "hann":
            return hann, ones
        return ones, ones

    def is_cola(self):
        analysis, synthesis = self.windows()
        return bool(check_COLA(analysis * synthesis, self.frame_size,
                               self.frame_size - self.hop))

    @property
    def lead(self):
        """Zeros padded before (and at least after) the signal.

        With ``frame_size - hop`` samples of padding every real sample lies
        under the full overlap-add envelope, so masked grids are never
        divided by a near-zero window sum at the edges.
        """
        return self.frame_size - self.hop

    def n_frames(self, n_samples):
        if n_samples < self.frame_size:
            return 0
        return 1 + -(-(n_samples + 2 * self.lead - self.frame_size) // self.hop)


@dataclass
class ComplexGrid:
    """STFT coefficients with shape (channels, F, T).

    ``length`` is the number of time samples of the analysed signal; it is
    what :func:`istft` trims the resynthesis to.
    """

    values: np.ndarray
    config: StftConfig
    sample_rate: int
    length: int

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.complex128)
        if values.ndim == 2:
            values = values[np.newaxis]
        if values.ndim != 3:
            raise ValueError(f"values must be (channels, F, T), got {values.shape}")
        if values.shape[1] != self.config.n_bins:
            raise ValueError(
                f"F={values.shape[1]} inconsistent with frame_size={self.config.frame_size}")
        self.values = values

    @property
    def shape(self):
        """(F, T) of a single channel."""
        return self.values.shape[1:]

    @property
    def channels(self):
        return self.values.shape[0]

    def channel(self, index):
        return ComplexGrid(self.values[index], self.config, self.sample_rate, self.length)


@dataclass
class Spectrogram:
    """Normalized magnitude spectrogram ``p`` (F x T, sums to 1) and its ``scale``."""

    p: np.ndarray
    scale: float = 1.0
    phase: np.ndarray = field(default=None, repr=False)

    @property
    def shape(self):
        return self.p.shape

    def magnitude(self):
        return self.scale * self.p


def stft(clip, config=None):
    """Short-time Fourier transform of every channel of ``clip``.

    The signal is preceded by ``frame_size - hop`` zeros, so frame 0 ends
    ``hop`` samples into it; frames advance by ``config.hop`` and the tail
    is zero-padded to complete the last frame.

    Returns
    -------
    ComplexGrid
        ``values`` has shape (channels, frame_size // 2 + 1, n_frames).
    """
    config = config or StftConfig()
    if not isinstance(clip, AudioClip):
        raise TypeError("stft expects an AudioClip")
    n = len(clip)
    n_frames = config.n_frames(n)
    if n_frames == 0:
        raise ValueError(
            f"signal too short: {n} samples, need at least frame_size={config.frame_size}")
    padded_len = (n_frames - 1) * config.hop + config.frame_size
    x = np.zeros((clip.channels, padded_len))
    x[:, config.lead:config.lead + n] = clip.samples
    analysis, _ = config.windows()
    idx = np.arange(n_frames)[:, None] * config.hop + np.arange(config.frame_size)
    frames = x[:, idx] * analysis  # (M, T, N)
    spec = np.fft.rfft(frames, axis=-1)
    return ComplexGrid(np.swapaxes(spec, 1, 2), config, clip.sample_rate, n)


def istft(grid, config=None):
    """Weighted overlap-add inverse of :func:`stft`.

    Each sample is divided by the summed analysis*synthesis window envelope,
    which is constant over the original signal span for a COLA pair.
    """
    config = config or grid.config
    if not config.is_cola():
        raise ValueError(
            f"window {config.window!r} with frame_size={config.frame_size}, "
            f"hop={config.hop} does not satisfy the COLA condition")
    values = grid.values
    n_frames = values.shape[2]
    analysis, synthesis = config.windows()
    frames = np.fft.irfft(np.swapaxes(values, 1, 2), n=config.frame_size, axis=-1)
    frames *= synthesis
    padded_len = max((n_frames - 1) * config.hop + config.frame_size, config.lead + grid.length)
    out = np.zeros((values.shape[0], padded_len))
    envelope = np.zeros(padded_len)
    product = analysis * synthesis
    for t in range(n_frames):
        start = t * config.hop
        out[:, start:start + config.frame_size] += frames[:, t]
        envelope[start:start + config.frame_size] += product
    covered = envelope > 1e-10
    out[:, covered] /= envelope[covered]
    return AudioClip(out[:, config.lead:config.lead + grid.length], grid.sample_rate)


def normalize_magnitude(grid, channel=0):
    """Magnitude of one channel of ``grid`` scaled to sum to one.

    Raises ``ValueError`` for an all-zero grid (normalization undefined).
    """
    values = grid.values[channel] if isinstance(grid, ComplexGrid) else np.asarray(grid)
    mag = np.abs(values)
    scale = float(mag.sum())
    if scale <= 0.0:
        raise ValueError("empty spectrogram: all magnitudes are zero")
    return Spectrogram(mag / scale, scale, np.angle(values))


def read_wav(path):
    """Read PCM (8/16/32-bit) or float WAV into an :class:`AudioClip` in [-1, 1]."""
    rate, data = wavfile.read(path)
    if data.dtype == np.uint8:
        samples = (data.astype(np.float64) - 128.0) / 128.0
    elif np.issubdtype(data.dtype, np.integer):
        samples = data.astype(np.float64) / float(-np.iinfo(data.dtype).min)
    else:
        samples = data.astype(np.float64)
    if samples.ndim == 1:
        samples = samples[np.newaxis, :]
    else:
        samples = samples.T
    return AudioClip(samples, rate)


def write_wav(path, clip, subtype="PCM_16"):
    """Write ``clip`` as 16-bit PCM (``PCM_16``) or 32-bit float (``FLOAT``)."""
    samples = clip.samples.T if clip.channels > 1 else clip.samples[0]
    if subtype == "PCM_16":
        data = np.round(np.clip(samples, -1.0, 32767 / 32768) * 32768).astype(np.int16)
    elif subtype == "FLOAT":
        data = samples.astype(np.float32)
    else:
        raise ValueError(f"unsupported WAV subtype {subtype!r}")
    wavfile.write(path, clip.sample_rate, data)
