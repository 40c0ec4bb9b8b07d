"""Three-microphone mixture synthesis, end-to-end separation and reporting.

The simulated array has microphones at (0, 0), (delta, 0) and (0, delta)
with ``delta = c / sample_rate``, so a one-sample delay between channels is
exactly the travel time across the array.  Source 1 reaches the ``(delta, 0)``
microphone one sample late (arriving from the -x axis), source 2 reaches
``(0, delta)`` one sample late (from the -y axis).
"""

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .doa import SPEED_OF_SOUND, ArrayGeometry, design_doa_solver, direction_field
from .estimators import DirectionalNMF, DirectionalNTF, SupervisedNMF
from .metrics import bss_eval
from .separation import apply_mask, ideal_binary_mask, ideal_ratio_mask
from .spectral import AudioClip, StftConfig, normalize_magnitude, read_wav, stft

__all__ = [
    "ExperimentConfig",
    "MixtureScene",
    "SeparationResult",
    "ALGORITHMS",
    "scene_geometry",
    "synthesize_mixture",
    "speech_like",
    "speaker_profile",
    "chord",
    "separate",
    "run_scene",
    "run_experiment",
    "aggregate_reports",
    "format_table",
    "corpus_scenes",
]

log = logging.getLogger(__name__)

ALGORITHMS = ("irm", "ibm", "dntf", "dnmf", "supervised")
ALGORITHM_LABELS = {
    "irm": "Ideal Ratio Mask",
    "ibm": "Ideal Binary Mask",
    "dntf": "Directional NTF",
    "dnmf": "Directional NMF",
    "supervised": "Supervised NMF",
}
PEAK = 0.9


@dataclass
class MixtureScene:
    channels: AudioClip
    geometry: ArrayGeometry
    ground_truth: list

    @property
    def sample_rate(self):
        return self.channels.sample_rate


@dataclass
class ExperimentConfig:
    """Settings for one experiment run.

    With ``source_paths`` empty, two synthetic speech-like sources (and
    matching training clips) are generated from ``seed``.
    """

    source_paths: list = field(default_factory=list)
    training_paths: list = field(default_factory=list)
    seed: int = 0
    n_sources: int = 2
    n_components: int = 20
    n_directions: int = 24
    n_iter: int = 200
    frame_size: int = 1024
    hop: int = 256
    window: str = "sqrt-hann"
    mask_mode: str = "conditioned"
    filter_length: int = 512
    algorithms: list = field(default_factory=lambda: list(ALGORITHMS))
    threads: int = 1
    synthetic_duration: float = 2.0
    sample_rate: int = 16000

    def __post_init__(self):
        unknown = set(self.algorithms) - set(ALGORITHMS)
        if unknown:
            raise ValueError(f"unknown algorithms: {sorted(unknown)}")
        if self.source_paths and len(self.source_paths) != 2:
            raise ValueError("source_paths must name exactly two WAV files")
        for path in list(self.source_paths) + list(self.training_paths):
            if not Path(path).exists():
                raise FileNotFoundError(path)
        if "supervised" in self.algorithms and self.source_paths and not self.training_paths:
            raise ValueError("the supervised algorithm requires training_paths")

    @property
    def stft_config(self):
        return StftConfig(self.frame_size, self.hop, self.window)

    @classmethod
    def from_json(cls, path, **overrides):
        with open(path) as fh:
            data = json.load(fh)
        base = Path(path).parent
        for key in ("source_paths", "training_paths"):
            data[key] = [str((base / p) if not Path(p).is_absolute() else p)
                         for p in data.get(key, [])]
        data.update({k: v for k, v in overrides.items() if v is not None})
        fields = cls.__dataclass_fields__
        unknown = set(data) - set(fields)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class SeparationResult:
    sources: list
    mask: np.ndarray
    model: object = None
    seconds_per_iteration: float = 0.0
    n_iter: int = 1
    directions: list = None


def scene_geometry(sample_rate, speed_of_sound=SPEED_OF_SOUND):
    delta = speed_of_sound / sample_rate
    return ArrayGeometry([[0.0, 0.0], [delta, 0.0], [0.0, delta]], speed_of_sound)


def _delay(x, samples=1):
    out = np.zeros_like(x)
    out[samples:] = x[:-samples]
    return out


def _mono(clip):
    if isinstance(clip, AudioClip):
        if clip.channels != 1:
            raise ValueError("expected a mono clip")
        return clip.samples[0], clip.sample_rate
    raise TypeError("expected AudioClip")


def synthesize_mixture(s1, s2, peak=PEAK, speed_of_sound=SPEED_OF_SOUND):
    """Instantaneous three-channel mixture with one-sample inter-channel delays.

    ``ch0 = s1 + s2``, ``ch1 = delay(s1) + s2``, ``ch2 = s1 + delay(s2)``.
    Sources are trimmed to the shorter length and all channels share one
    gain so the loudest sample reaches ``peak``; the ground truth carries
    the same gain.
    """
    x1, rate1 = _mono(s1)
    x2, rate2 = _mono(s2)
    if rate1 != rate2:
        raise ValueError(f"sample rate mismatch: {rate1} vs {rate2}")
    n = min(len(x1), len(x2))
    x1, x2 = x1[:n], x2[:n]
    channels = np.vstack([x1 + x2, _delay(x1) + x2, x1 + _delay(x2)])
    top = np.max(np.abs(channels))
    gain = peak / top if top > 0 else 1.0
    return MixtureScene(AudioClip(gain * channels, rate1),
                        scene_geometry(rate1, speed_of_sound),
                        [AudioClip(gain * x1, rate1), AudioClip(gain * x2, rate1)])


def speaker_profile(seed):
    """Formant centers (Hz) and pitch (Hz) of a synthetic speaker."""
    rng = np.random.default_rng([seed, 7])
    formants = np.sort(rng.uniform([250, 900, 2000], [800, 2000, 3500]))
    return formants, float(rng.uniform(90, 250))


def speech_like(duration, sample_rate=16000, seed=0, speaker=None):
    """Band-limited noise bursts plus a voiced harmonic stack, syllable-modulated.

    ``speaker`` is a (formants, f0) pair from :func:`speaker_profile`
    (default: the profile of ``seed``); ``seed`` drives the utterance itself,
    so one speaker can produce several different clips.
    """
    formants, f0 = speaker if speaker is not None else speaker_profile(seed)
    rng = np.random.default_rng(seed)
    n = int(round(duration * sample_rate))
    freqs = np.fft.rfftfreq(n, 1 / sample_rate)
    envelope = sum(np.exp(-0.5 * ((freqs - fc) / (0.08 * fc + 60)) ** 2) / (i + 1)
                   for i, fc in enumerate(formants))
    envelope *= freqs < 0.45 * sample_rate
    noise = np.fft.irfft(np.fft.rfft(rng.standard_normal(n)) * envelope, n)
    t = np.arange(n) / sample_rate
    vibrato = 1 + 0.03 * np.sin(2 * np.pi * rng.uniform(3, 6) * t)
    phase = 2 * np.pi * f0 * np.cumsum(vibrato) / sample_rate
    voiced = np.zeros(n)
    for h in range(1, int(0.45 * sample_rate / f0)):
        gain = np.interp(h * f0, freqs, envelope)
        voiced += gain * np.sin(h * phase + rng.uniform(0, 2 * np.pi))
    signal = 0.3 * noise / (np.std(noise) + 1e-12) + voiced / (np.std(voiced) + 1e-12)
    # syllables of 120-350 ms separated by short pauses
    gate = np.zeros(n)
    pos = int(rng.uniform(0, 0.05) * sample_rate)
    while pos < n:
        length = int(rng.uniform(0.12, 0.35) * sample_rate)
        seg = min(length, n - pos)
        gate[pos:pos + seg] = np.hanning(length)[:seg] * rng.uniform(0.5, 1.0)
        pos += length + int(rng.uniform(0.03, 0.15) * sample_rate)
    out = signal * gate
    return AudioClip(0.5 * out / (np.max(np.abs(out)) + 1e-12), sample_rate)


def chord(frequencies, duration, sample_rate=16000, amplitudes=None):
    """Sum of sinusoids; used for near-separable test sources."""
    t = np.arange(int(round(duration * sample_rate))) / sample_rate
    amplitudes = np.ones(len(frequencies)) if amplitudes is None else amplitudes
    x = sum(a * np.sin(2 * np.pi * f * t) for f, a in zip(frequencies, amplitudes))
    return AudioClip(0.5 * x / np.max(np.abs(x)), sample_rate)


def _timed_fit(estimator, *args):
    start = time.perf_counter()
    mask = estimator.fit_transform(*args)
    elapsed = time.perf_counter() - start
    return mask, elapsed / max(estimator.n_iter_, 1)


def separate(mixture, algorithm, geometry=None, config=None, n_sources=2, n_components=20,
             n_directions=24, n_iter=200, seed=0, mask_mode="conditioned", training=None,
             references=None):
    """Separate a multichannel mixture with one of :data:`ALGORITHMS`.

    Channel 0 is the reference: its spectrogram is factored and its phase
    is used for resynthesis.  ``training`` (supervised) is one clean clip
    per source; ``references`` (oracle masks) are the true source images at
    channel 0.
    """
    config = config or StftConfig()
    grid = stft(mixture, config)
    spec = normalize_magnitude(grid, channel=0)
    if algorithm in ("dntf", "dnmf"):
        if geometry is None:
            raise ValueError(f"{algorithm} needs the array geometry")
        solver = design_doa_solver(geometry)
        field_ = direction_field(solver, grid, n_directions)
        if algorithm == "dntf":
            est = DirectionalNTF(n_sources, n_components, n_iter, mask_mode, random_state=seed)
        else:
            est = DirectionalNMF(n_sources, n_iter, mask_mode, random_state=seed)
        mask, per_iter = _timed_fit(est, spec, field_)
        summary = est.source_directions()
        return SeparationResult(apply_mask(grid, mask, spec), mask, est.model_, per_iter,
                                est.n_iter_, summary)
    if algorithm == "supervised":
        if not training:
            raise ValueError("supervised separation requires training clips")
        train_specs = [normalize_magnitude(stft(clip, config)) for clip in training]
        est = SupervisedNMF(n_components, n_iter, random_state=seed).fit(train_specs)
        start = time.perf_counter()
        model, mask, history = est.separate(spec)
        per_iter = (time.perf_counter() - start) / len(history)
        return SeparationResult(apply_mask(grid, mask, spec), mask, model, per_iter,
                                len(history))
    if algorithm in ("irm", "ibm"):
        if references is None:
            raise ValueError("oracle masks need the reference sources")
        start = time.perf_counter()
        true_grids = [stft(ref, config) for ref in references]
        maker = ideal_ratio_mask if algorithm == "irm" else ideal_binary_mask
        mask = maker(true_grids).m
        elapsed = time.perf_counter() - start
        return SeparationResult(apply_mask(grid, mask, spec), mask, None, elapsed, 1)
    raise ValueError(f"unknown algorithm {algorithm!r}")


def run_scene(scene, config, training=None):
    """Run every configured algorithm on ``scene``; returns the report mapping."""
    report = {}
    refs = np.vstack([r.samples[0] for r in scene.ground_truth])
    for algorithm in config.algorithms:
        if algorithm == "supervised" and not training:
            log.warning("skipping supervised: no training clips")
            continue
        result = separate(scene.channels, algorithm, scene.geometry, config.stft_config,
                          config.n_sources, config.n_components, config.n_directions,
                          config.n_iter, config.seed, config.mask_mode, training,
                          scene.ground_truth)
        ests = np.vstack([s.samples[0] for s in result.sources])
        scores = bss_eval(refs, ests, config.filter_length)
        report[algorithm] = {**scores.summary(),
                             "seconds_per_iteration": result.seconds_per_iteration}
        log.info("%s: SDR mean %.2f dB", algorithm, report[algorithm]["sdr_mean"])
    return report


def _load_mono(path, sample_rate=None):
    clip = read_wav(path)
    if clip.channels > 1:
        clip = AudioClip(clip.samples.mean(axis=0), clip.sample_rate)
    if sample_rate is not None and clip.sample_rate != sample_rate:
        raise ValueError(f"{path}: sample rate {clip.sample_rate} != {sample_rate}")
    return clip


def run_experiment(config):
    """Build the scene described by ``config``, separate it, score every algorithm."""
    with threadpool_limits(config.threads):
        if config.source_paths:
            sources = [_load_mono(p) for p in config.source_paths]
            training = [_load_mono(p, sources[0].sample_rate) for p in config.training_paths]
        else:
            rng = np.random.default_rng(config.seed)
            speaker_seeds = rng.integers(0, 2**31, size=2)
            sources = [speech_like(config.synthetic_duration, config.sample_rate, int(s))
                       for s in speaker_seeds]
            # a different utterance by the same speaker
            training = [speech_like(config.synthetic_duration, config.sample_rate, int(s) + 1,
                                    speaker_profile(int(s))) for s in speaker_seeds]
        scene = synthesize_mixture(*sources)
        return run_scene(scene, config, training or None)


def aggregate_reports(reports):
    """Average per-scene reports metric by metric."""
    out = {}
    for algorithm in {a for r in reports for a in r}:
        rows = [r[algorithm] for r in reports if algorithm in r]
        out[algorithm] = {k: float(np.mean([row[k] for row in rows])) for k in rows[0]}
        out[algorithm]["scenes"] = len(rows)
    return out


def format_table(report):
    header = (f"{'Algorithm':<20} {'SDR mean':>9} {'min':>7} {'SIR mean':>9} {'min':>7} "
              f"{'SAR mean':>9} {'min':>7} {'s/iter':>9}")
    lines = [header, "-" * len(header)]
    for algorithm in [a for a in ALGORITHMS if a in report]:
        r = report[algorithm]
        lines.append(
            f"{ALGORITHM_LABELS[algorithm]:<20} {r['sdr_mean']:9.2f} {r['sdr_min']:7.2f} "
            f"{r['sir_mean']:9.2f} {r['sir_min']:7.2f} {r['sar_mean']:9.2f} {r['sar_min']:7.2f} "
            f"{r['seconds_per_iteration']:9.4f}")
    return "\n".join(lines)


def config_to_dict(config):
    return asdict(config)


def corpus_scenes(directory, n_scenes=20):
    """Pair clips from a directory of ``<speaker>_<k>.wav`` files into scenes.

    Every scene mixes two different speakers; each speaker contributes one
    clip as test material and a different clip as supervised training data.

    Returns a list of ``(test_paths, training_paths)`` tuples.
    """
    by_speaker = {}
    for path in sorted(Path(directory).glob("*.wav")):
        by_speaker.setdefault(path.stem.rsplit("_", 1)[0], []).append(path)
    speakers = sorted(s for s, clips in by_speaker.items() if len(clips) >= 2)
    pairs = [(a, b) for i, a in enumerate(speakers) for b in speakers[i + 1:]]
    if not pairs:
        raise ValueError(f"{directory}: need two speakers with at least two clips each")
    scenes = []
    for k in range(n_scenes):
        a, b = pairs[k % len(pairs)]
        variant = k // len(pairs)
        pick = lambda s, j: by_speaker[s][(variant + j) % len(by_speaker[s])]
        scenes.append(([pick(a, 0), pick(b, 0)], [pick(a, 1), pick(b, 1)]))
    return scenes
