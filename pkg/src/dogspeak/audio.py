"""Waveform container and PCM WAV file I/O.

All audio entering the pipeline is converted to mono float64 in [-1, 1]
at a single project sample rate so features are comparable across domains.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

PROJECT_SAMPLE_RATE = 16000


@dataclass(frozen=True)
class Waveform:
    """Mono audio signal with samples in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise ValueError("waveform must be a non-empty 1-D array")
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform contains non-finite samples")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def rms_dbfs(self) -> float:
        """RMS level in dB relative to full scale (-inf for digital silence)."""
        rms = float(np.sqrt(np.mean(self.samples**2)))
        if rms == 0.0:
            return float("-inf")
        return 20.0 * np.log10(rms)


def _pcm_to_float(data: np.ndarray) -> np.ndarray:
    if data.dtype == np.int16:
        return data / 32768.0
    if data.dtype == np.int32:
        return data / 2147483648.0
    if data.dtype == np.uint8:
        return (data.astype(np.float64) - 128.0) / 128.0
    if data.dtype in (np.float32, np.float64):
        return data.astype(np.float64)
    raise ValueError(f"unsupported WAV sample format: {data.dtype}")


def resample(wave: Waveform, target_rate: int) -> Waveform:
    if wave.sample_rate == target_rate:
        return wave
    ratio = Fraction(target_rate, wave.sample_rate)
    out = resample_poly(wave.samples, ratio.numerator, ratio.denominator)
    return Waveform(np.clip(out, -1.0, 1.0), target_rate)


def load_wav(path: str | os.PathLike, target_rate: int | None = None) -> Waveform:
    """Read a PCM WAV file as mono floats, optionally resampling."""
    rate, data = wavfile.read(os.fspath(path))
    data = _pcm_to_float(np.atleast_1d(data))
    if data.ndim == 2:
        data = data.mean(axis=1)
    wave = Waveform(np.clip(data, -1.0, 1.0), int(rate))
    if target_rate is not None:
        wave = resample(wave, target_rate)
    return wave


def save_wav(path: str | os.PathLike, wave: Waveform) -> None:
    """Write 16-bit PCM WAV."""
    pcm = np.clip(wave.samples, -1.0, 1.0)
    wavfile.write(os.fspath(path), wave.sample_rate, (pcm * 32767.0).astype(np.int16))
