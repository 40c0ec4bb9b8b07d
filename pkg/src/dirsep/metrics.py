"""BSS_EVAL source separation metrics (SDR, SIR, SAR).

Each estimate is decomposed by least-squares projection onto time-delayed
copies (lags ``0 .. L-1``) of the reference signals:

* ``s_target``: projection onto the delays of the matched reference;
* ``e_interf``: projection onto the delays of all references, minus ``s_target``;
* ``e_artif``: what remains.

Energy ratios of these parts give SDR, SIR and SAR in dB.  Estimates are
matched to references by the permutation with the largest mean SIR.
"""

import itertools
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.signal import fftconvolve

from .spectral import AudioClip

__all__ = ["EvalScores", "bss_eval", "bss_decompose", "DB_CAP"]

#: Magnitude at which dB values are clipped; also reported for exact reconstructions.
DB_CAP = 300.0
# error energies below this fraction of the estimate energy are rounding noise
_NUMERICAL_FLOOR = 1e-20


@dataclass
class EvalScores:
    """Scores ordered by reference.

    ``permutation[j]`` is the index of the estimate matched to reference ``j``.
    """

    sdr: np.ndarray
    sir: np.ndarray
    sar: np.ndarray
    permutation: np.ndarray
    filter_length: int

    def summary(self):
        out = {}
        for name in ("sdr", "sir", "sar"):
            values = getattr(self, name)
            out[f"{name}_mean"] = float(np.mean(values))
            out[f"{name}_min"] = float(np.min(values))
        return out

    def to_dict(self):
        sources = [{"reference": j, "estimate": int(self.permutation[j]),
                    "sdr": float(self.sdr[j]), "sir": float(self.sir[j]),
                    "sar": float(self.sar[j])} for j in range(len(self.sdr))]
        return {"sources": sources, "filter_length": self.filter_length, **self.summary()}


def _as_matrix(signals, name):
    if isinstance(signals, AudioClip):
        return signals.samples
    if isinstance(signals, (list, tuple)):
        rows = [s.samples[0] if isinstance(s, AudioClip) else np.asarray(s, dtype=np.float64)
                for s in signals]
        lengths = {len(r) for r in rows}
        if len(lengths) != 1:
            raise ValueError(f"{name} have different lengths: {sorted(lengths)}")
        return np.vstack(rows)
    arr = np.asarray(signals, dtype=np.float64)
    return arr[np.newaxis] if arr.ndim == 1 else arr


class _DelayedSpan:
    """Gram matrices of the references and their delays, computed by FFT."""

    def __init__(self, refs, L):
        self.refs = refs
        self.L = L
        n_src, n = refs.shape
        self.n_fft = int(2 ** np.ceil(np.log2(n + L - 1)))
        self.spectra = np.fft.rfft(refs, n=self.n_fft, axis=1)
        lags = np.subtract.outer(np.arange(L), np.arange(L))  # a - b
        G = np.empty((n_src * L, n_src * L))
        for i in range(n_src):
            for j in range(i, n_src):
                xc = np.fft.irfft(self.spectra[i] * np.conj(self.spectra[j]), n=self.n_fft)
                block = xc[(-lags) % self.n_fft]  # <ref_i shifted a, ref_j shifted b> = xc[b - a]
                G[i * L:(i + 1) * L, j * L:(j + 1) * L] = block
                G[j * L:(j + 1) * L, i * L:(i + 1) * L] = block.T
        self.gram = G

    def correlations(self, estimate):
        est = np.fft.rfft(estimate, n=self.n_fft)
        xc = np.fft.irfft(est * np.conj(self.spectra), n=self.n_fft, axis=1)
        return xc[:, :self.L].ravel()

    def project(self, estimate, sources):
        """Projection of ``estimate`` onto the delay span of ``sources`` (length n + L - 1)."""
        idx = np.concatenate([np.arange(s * self.L, (s + 1) * self.L) for s in sources])
        coef = _solve_psd(self.gram[np.ix_(idx, idx)], self.correlations(estimate)[idx])
        n = self.refs.shape[1]
        out = np.zeros(n + self.L - 1)
        for k, s in enumerate(sources):
            out += fftconvolve(self.refs[s], coef[k * self.L:(k + 1) * self.L])[:n + self.L - 1]
        return out


def _solve_psd(G, b):
    # band-limited references make delayed copies nearly collinear; a small
    # diagonal jitter keeps the solve well posed without moving the projection
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", linalg.LinAlgWarning)
            return linalg.solve(G, b, assume_a="pos", check_finite=False)
    except (linalg.LinAlgError, linalg.LinAlgWarning, ValueError):
        jitter = 1e-10 * np.trace(G) / G.shape[0]
        return linalg.solve(G + jitter * np.eye(G.shape[0]), b, assume_a="sym",
                            check_finite=False)


def bss_decompose(references, estimate, target, filter_length=512, span=None):
    """Split ``estimate`` into (s_target, e_interf, e_artif), each of length n + L - 1."""
    refs = _as_matrix(references, "references")
    L = int(filter_length)
    span = span or _DelayedSpan(refs, L)
    est = np.zeros(refs.shape[1] + L - 1)
    est[:refs.shape[1]] = estimate
    s_target = span.project(estimate, [target])
    p_all = span.project(estimate, list(range(refs.shape[0])))
    return s_target, p_all - s_target, est - p_all


def _db(num, den, floor):
    if den <= floor:
        return DB_CAP if num > floor else -DB_CAP
    if num <= 0:
        return -DB_CAP
    return float(np.clip(10 * np.log10(num / den), -DB_CAP, DB_CAP))


def _criteria(s_target, e_interf, e_artif, floor):
    energy = lambda x: float(np.dot(x, x))
    sdr = _db(energy(s_target), energy(e_interf + e_artif), floor)
    sir = _db(energy(s_target), energy(e_interf), floor)
    sar = _db(energy(s_target + e_interf), energy(e_artif), floor)
    return sdr, sir, sar


def bss_eval(references, estimates, filter_length=512):
    """SDR/SIR/SAR of ``estimates`` against ``references``.

    Parameters
    ----------
    references, estimates : sequence of AudioClip or array (n_sources, n_samples)
    filter_length : int
        Number of delays L of the allowed distortion filter.

    Returns
    -------
    EvalScores
        Values are clipped to +-DB_CAP; an exact reconstruction scores +DB_CAP.
    """
    refs = _as_matrix(references, "references")
    ests = _as_matrix(estimates, "estimates")
    if refs.shape != ests.shape:
        raise ValueError(f"references {refs.shape} and estimates {ests.shape} differ in shape")
    L = int(filter_length)
    if L < 1:
        raise ValueError("filter_length must be >= 1")
    if np.any(np.sum(refs ** 2, axis=1) == 0):
        raise ValueError("degenerate reference: a reference source is silent")
    n_src = refs.shape[0]
    span = _DelayedSpan(refs, L)
    # scores[k, j]: estimate k judged against reference j
    scores = np.empty((n_src, n_src, 3))
    all_sources = list(range(n_src))
    for k in range(n_src):
        est = ests[k]
        floor = _NUMERICAL_FLOOR * float(np.dot(est, est))
        padded = np.concatenate([est, np.zeros(L - 1)])
        p_all = span.project(est, all_sources)
        e_artif = padded - p_all
        for j in range(n_src):
            s_target = span.project(est, [j]) if n_src > 1 else p_all
            scores[k, j] = _criteria(s_target, p_all - s_target, e_artif, floor)
    best, best_sir = None, -np.inf
    for perm in itertools.permutations(range(n_src)):
        mean_sir = np.mean([scores[perm[j], j, 1] for j in range(n_src)])
        if mean_sir > best_sir:
            best, best_sir = perm, mean_sir
    perm = np.array(best)
    chosen = scores[perm, np.arange(n_src)]
    return EvalScores(chosen[:, 0], chosen[:, 1], chosen[:, 2], perm, L)
