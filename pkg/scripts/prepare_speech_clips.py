"""Rebuild tests/data/speech from speech recordings bundled in PyPI packages.

Sources (downloaded from PyPI, nothing else is fetched):

* pyannote.audio wheel: ``pyannote/audio/sample/sample.wav`` (16 kHz, two
  speakers, with an RTTM turn list used to cut single-speaker segments);
* pysptk sdist: ``example_audio_data/arctic_a0007.wav`` (16 kHz);
* praat-parselmouth sdist: ``docs/examples/audio/{1..5}_{b,y}.wav``
  (44.1 kHz digit recordings by two speakers, resampled to 16 kHz).

Usage: python scripts/prepare_speech_clips.py [out_dir]
"""

import io
import json
import sys
import tarfile
import urllib.request
import zipfile
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

RATE = 16000


def fetch(package, kind):
    meta = json.load(urllib.request.urlopen(f"https://pypi.org/pypi/{package}/json", timeout=30))
    url = next(u for u in meta["urls"] if u["packagetype"] == kind)
    return url["filename"], urllib.request.urlopen(url["url"], timeout=120).read()


def read(data):
    rate, x = wavfile.read(io.BytesIO(data))
    x = x.astype(np.float64) / 32768.0
    if x.ndim > 1:
        x = x.mean(axis=1)
    if rate != RATE:
        g = np.gcd(rate, RATE)
        x = resample_poly(x, RATE // g, rate // g)
    return x


def trim(x, floor_db=-40.0, frame=320):
    n = len(x) // frame
    energy = (x[: n * frame].reshape(n, frame) ** 2).mean(axis=1)
    active = np.flatnonzero(10 * np.log10(energy + 1e-20) > 10 * np.log10(energy.max()) + floor_db)
    return x[active[0] * frame:(active[-1] + 1) * frame]


def segments(x, spans):
    return [x[int(a * RATE):int(b * RATE)] for a, b in spans]


def main(out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    clips = {}

    _, whl = fetch("pyannote.audio", "bdist_wheel")
    sample = read(zipfile.ZipFile(io.BytesIO(whl)).read("pyannote/audio/sample/sample.wav"))
    # single-speaker stretches derived from sample.rttm (overlaps removed)
    clips["pyannote90"] = segments(sample, [(11.05, 12.75), (12.75, 14.45), (18.6, 20.5),
                                       (8.35, 9.9)])
    clips["pyannote91"] = segments(sample, [(14.72, 16.3), (16.3, 17.9), (21.8, 23.8),
                                       (23.8, 25.8), (25.8, 27.8)])

    _, sdist = fetch("pysptk", "sdist")
    tar = tarfile.open(fileobj=io.BytesIO(sdist))
    member = next(m for m in tar.getmembers() if m.name.endswith("arctic_a0007.wav"))
    arctic = trim(read(tar.extractfile(member).read()))
    half = len(arctic) // 2
    clips["arctic"] = [arctic[:half], arctic[half:]]

    _, sdist = fetch("praat-parselmouth", "sdist")
    tar = tarfile.open(fileobj=io.BytesIO(sdist))
    for who in ("b", "y"):
        digits = []
        for k in range(1, 6):
            member = next(m for m in tar.getmembers()
                          if m.name.endswith(f"docs/examples/audio/{k}_{who}.wav"))
            digits.append(trim(read(tar.extractfile(member).read())))
        gap = np.zeros(int(0.05 * RATE))
        clips[f"digits_{who}"] = [np.concatenate([digits[0], gap, digits[1], gap, digits[2]]),
                                  np.concatenate([digits[3], gap, digits[4]])]

    for speaker, items in clips.items():
        for i, x in enumerate(items):
            x = 0.5 * x / np.max(np.abs(x))
            wavfile.write(out_dir / f"{speaker}_{i}.wav", RATE,
                          np.round(x * 32767).astype(np.int16))
            print(f"{speaker}_{i}.wav {len(x) / RATE:.2f} s")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else Path(__file__).resolve().parents[1]
         / "tests" / "data" / "speech")
