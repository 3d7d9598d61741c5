"""Deterministic signal analysis: STFT, mel-spectrogram, F0, spectral
envelope, mel-cepstral coefficients, and feature normalization.

Two feature front-ends are produced here:

* ``melspec`` -- log mel-filterbank energies of the short-time power
  spectrum (keeps harmonic structure),
* ``mcc`` -- mel-warped cepstral coefficients of a smooth spectral
  envelope (vocal-tract shape only).

Everything in this module is a pure function of its inputs plus an
:class:`ExtractionConfig`; identical input and config give bit-identical
output.
"""

from __future__ import annotations

import hashlib
import json
import struct
import warnings
from dataclasses import dataclass, field, asdict, replace

import numpy as np
from scipy.signal import get_window

from .audio import Waveform

LOG_FLOOR = 1e-10
ENVELOPE_FLOOR = 1e-12

FEATURE_MAGIC = b"DGF1"
_KIND_CODES = {"melspec": 1, "mcc": 2}
_CODE_KINDS = {v: k for k, v in _KIND_CODES.items()}


@dataclass(frozen=True)
class ExtractionConfig:
    """Analysis settings shared by both feature paths.

    Defaults: 64 ms frames with an 8 ms hop at 16 kHz, so a typical
    sub-500 ms bark still spans over 50 frames.
    """

    sample_rate: int = 16000
    frame_len: int = 1024
    hop: int = 128
    n_fft: int = 1024
    window: str = "hann"
    n_mels: int = 80
    fmin: float = 40.0
    fmax: float = 8000.0
    log_floor: float = LOG_FLOOR
    mcc_order: int = 35
    alpha: float = 0.42
    f0_floor: float = 60.0
    f0_ceil: float = 1200.0
    voicing_threshold: float = 0.5
    unvoiced_smooth_hz: float = 300.0

    def config_hash(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()

    @property
    def frame_hop_seconds(self) -> float:
        return self.hop / self.sample_rate

    def feature_dim(self, kind: str) -> int:
        if kind == "melspec":
            return self.n_mels
        if kind == "mcc":
            return self.mcc_order + 1
        raise ValueError(f"unknown feature kind: {kind!r}")


@dataclass(frozen=True)
class FeatureSequence:
    """Time-major matrix of acoustic features (T x F)."""

    frames: np.ndarray
    kind: str
    frame_hop: float
    meta: str = ""
    alpha: float | None = None

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[0] < 1:
            raise ValueError("frames must be a T x F matrix with T >= 1")
        if not np.all(np.isfinite(frames)):
            raise ValueError("features contain non-finite values")
        if self.kind not in _KIND_CODES:
            raise ValueError(f"unknown feature kind: {self.kind!r}")
        object.__setattr__(self, "frames", frames)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


@dataclass(frozen=True)
class F0Track:
    """Per-frame fundamental frequency; 0 Hz marks unvoiced frames."""

    f0: np.ndarray
    voiced_mask: np.ndarray
    frame_hop: float

    def __post_init__(self):
        f0 = np.asarray(self.f0, dtype=np.float64)
        mask = np.asarray(self.voiced_mask, dtype=bool)
        if f0.shape != mask.shape or f0.ndim != 1:
            raise ValueError("f0 and voiced_mask must be equal-length vectors")
        if np.any((f0 > 0) != mask):
            raise ValueError("f0 > 0 must hold exactly on voiced frames")
        object.__setattr__(self, "f0", f0)
        object.__setattr__(self, "voiced_mask", mask)

    def median_voiced(self) -> float:
        """Median F0 over voiced frames, 0.0 if fully unvoiced."""
        if not self.voiced_mask.any():
            return 0.0
        return float(np.median(self.f0[self.voiced_mask]))


@dataclass(frozen=True)
class NormStats:
    """Per-dimension mean and standard deviation for feature scaling."""

    mean: np.ndarray
    std: np.ndarray
    domain: str = "global"

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        std = np.asarray(self.std, dtype=np.float64)
        if mean.shape != std.shape or mean.ndim != 1:
            raise ValueError("mean and std must be equal-length vectors")
        if np.any(std <= 0):
            raise ValueError("std must be strictly positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)


# ---------------------------------------------------------------------------
# framing / STFT


def frame_signal(samples: np.ndarray, frame_len: int, hop: int) -> np.ndarray:
    """Slice a signal into T x frame_len rows without padding.

    T = 1 + floor((len - frame_len) / hop).  A signal shorter than one
    frame yields a single zero-padded frame and a warning.
    """
    if not frame_len >= hop > 0:
        raise ValueError("require frame_len >= hop > 0")
    samples = np.asarray(samples, dtype=np.float64)
    n = samples.size
    if n < frame_len:
        warnings.warn("signal shorter than one frame; zero-padding", stacklevel=2)
        out = np.zeros((1, frame_len))
        out[0, :n] = samples
        return out
    t = 1 + (n - frame_len) // hop
    idx = np.arange(frame_len)[None, :] + hop * np.arange(t)[:, None]
    return samples[idx]


def stft(wave: Waveform, frame_len: int, hop: int, window: str = "hann",
         n_fft: int | None = None) -> np.ndarray:
    """Short-time Fourier transform, complex T x (n_fft/2 + 1).

    No reflection padding: frame k covers samples [k*hop, k*hop+frame_len).
    """
    n_fft = frame_len if n_fft is None else n_fft
    if n_fft < frame_len:
        raise ValueError("n_fft must be >= frame_len")
    frames = frame_signal(wave.samples, frame_len, hop)
    win = window_array(window, frame_len)
    return np.fft.rfft(frames * win, n=n_fft, axis=1)


def window_array(window: str, frame_len: int) -> np.ndarray:
    if window == "rect":
        return np.ones(frame_len)
    return get_window(window, frame_len, fftbins=True)


def istft(spec: np.ndarray, frame_len: int, hop: int, window: str = "hann",
          length: int | None = None) -> np.ndarray:
    """Overlap-add inverse of :func:`stft` with squared-window normalization."""
    spec = np.asarray(spec)
    t, n_bins = spec.shape
    n_fft = 2 * (n_bins - 1)
    win = window_array(window, frame_len)
    frames = np.fft.irfft(spec, n=n_fft, axis=1)[:, :frame_len]
    total = frame_len + hop * (t - 1)
    out = np.zeros(total)
    norm = np.zeros(total)
    for k in range(t):
        sl = slice(k * hop, k * hop + frame_len)
        out[sl] += frames[k] * win
        norm[sl] += win**2
    out /= np.maximum(norm, 1e-12)
    if length is not None:
        out = out[:length] if out.size >= length else np.pad(out, (0, length - out.size))
    return out


# ---------------------------------------------------------------------------
# mel filterbank / mel-spectrogram


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_fft: int, n_mels: int, fmin: float, fmax: float,
                   sr: int) -> np.ndarray:
    """Triangular mel filterbank, shape n_mels x (n_fft/2 + 1).

    Filter centers are mel-to-Hz images of linearly spaced mel points;
    every filter covers at least one FFT bin or construction fails.
    """
    if not (0 <= fmin < fmax <= sr / 2):
        raise ValueError("require 0 <= fmin < fmax <= sr/2")
    n_bins = n_fft // 2 + 1
    bin_freqs = np.arange(n_bins) * sr / n_fft
    mel_pts = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    fb = np.zeros((n_mels, n_bins))
    for m in range(n_mels):
        lo, center, hi = hz_pts[m], hz_pts[m + 1], hz_pts[m + 2]
        up = (bin_freqs - lo) / (center - lo)
        down = (hi - bin_freqs) / (hi - center)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
    if np.any(fb.sum(axis=1) == 0):
        raise ValueError(
            f"n_mels={n_mels} too large for n_fft={n_fft}: some filters cover no bin")
    return fb


def filterbank_centers(n_mels: int, fmin: float, fmax: float) -> np.ndarray:
    """Center frequencies (Hz) of :func:`mel_filterbank` filters."""
    mel_pts = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2)
    return mel_to_hz(mel_pts[1:-1])


def mel_spectrogram(wave: Waveform, cfg: ExtractionConfig) -> FeatureSequence:
    """Log mel power spectrogram: log(max(fb . |STFT|^2, floor))."""
    spec = stft(wave, cfg.frame_len, cfg.hop, cfg.window, cfg.n_fft)
    power = np.abs(spec) ** 2
    fb = mel_filterbank(cfg.n_fft, cfg.n_mels, cfg.fmin, cfg.fmax, cfg.sample_rate)
    mel = np.log(np.maximum(power @ fb.T, cfg.log_floor))
    return FeatureSequence(mel, "melspec", cfg.frame_hop_seconds,
                           meta=cfg.config_hash())


# ---------------------------------------------------------------------------
# F0


def estimate_f0(wave: Waveform, f0_floor: float | None = None,
                f0_ceil: float | None = None,
                cfg: ExtractionConfig | None = None) -> F0Track:
    """Frame-wise F0 by normalized autocorrelation with parabolic peak
    interpolation.  Frames whose peak correlation falls below the voicing
    threshold are marked unvoiced (f0 = 0).
    """
    cfg = cfg or ExtractionConfig(sample_rate=wave.sample_rate)
    f0_floor = cfg.f0_floor if f0_floor is None else f0_floor
    f0_ceil = cfg.f0_ceil if f0_ceil is None else f0_ceil
    sr = wave.sample_rate
    if not (0 < f0_floor < f0_ceil <= sr / 2):
        raise ValueError("require 0 < f0_floor < f0_ceil <= sr/2")
    frames = frame_signal(wave.samples, cfg.frame_len, cfg.hop)
    frames = frames - frames.mean(axis=1, keepdims=True)
    n = cfg.frame_len
    lag_min = max(2, int(np.floor(sr / f0_ceil)))
    lag_max = min(n - 2, int(np.ceil(sr / f0_floor)))

    # autocorrelation via the power spectrum, unbiased-normalized so a pure
    # tone peaks at exactly cos-shaped maxima
    spec = np.fft.rfft(frames, n=2 * n, axis=1)
    ac = np.fft.irfft(np.abs(spec) ** 2, axis=1)[:, :n]
    energy = ac[:, 0]
    counts = n - np.arange(n)
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = (ac / counts) / (energy[:, None] / n)
    rho[~np.isfinite(rho)] = 0.0

    t = frames.shape[0]
    f0 = np.zeros(t)
    voiced = np.zeros(t, dtype=bool)
    for k in range(t):
        if energy[k] < 1e-10:
            continue
        seg = rho[k, lag_min:lag_max + 1]
        best = float(seg.max())
        if best < cfg.voicing_threshold:
            continue
        # A periodic signal peaks at every multiple of its period, all at
        # nearly the same height; taking the earliest strong peak instead
        # of the global argmax avoids locking onto a subharmonic lag.
        cut = max(cfg.voicing_threshold, 0.9 * best)
        peak_rel = int(np.flatnonzero(seg >= cut)[0])
        while peak_rel + 1 < seg.size and seg[peak_rel + 1] > seg[peak_rel]:
            peak_rel += 1
        peak = peak_rel + lag_min
        lag = _parabolic_peak(rho[k], peak)
        cand = sr / lag
        f0[k] = float(np.clip(cand, f0_floor, f0_ceil))
        voiced[k] = True
    return F0Track(f0, voiced, cfg.frame_hop_seconds)


def _parabolic_peak(values: np.ndarray, idx: int) -> float:
    if idx <= 0 or idx >= values.size - 1:
        return float(idx)
    a, b, c = values[idx - 1], values[idx], values[idx + 1]
    denom = a - 2 * b + c
    if denom == 0:
        return float(idx)
    return idx + 0.5 * (a - c) / denom


# ---------------------------------------------------------------------------
# spectral envelope


def spectral_envelope(wave: Waveform, f0_track: F0Track,
                      cfg: ExtractionConfig) -> np.ndarray:
    """Smooth positive spectral envelope per frame, T x (n_fft/2 + 1).

    Voiced frames: an upper envelope through harmonic peaks interpolated
    in the log domain.  Unvoiced frames: a moving average of the power
    spectrum.  Both are floored so the result is strictly positive.
    """
    spec = stft(wave, cfg.frame_len, cfg.hop, cfg.window, cfg.n_fft)
    power = np.abs(spec) ** 2
    t, n_bins = power.shape
    if f0_track.f0.size != t:
        raise ValueError("F0 track not aligned to the analysis frame grid")
    bin_hz = cfg.sample_rate / cfg.n_fft
    env = np.empty_like(power)
    for k in range(t):
        if f0_track.voiced_mask[k]:
            env[k] = _harmonic_envelope(power[k], f0_track.f0[k], bin_hz)
        else:
            width = max(1, int(round(cfg.unvoiced_smooth_hz / bin_hz)))
            env[k] = _moving_average(power[k], width)
    return np.maximum(env, ENVELOPE_FLOOR)


def _moving_average(x: np.ndarray, width: int) -> np.ndarray:
    kernel = np.ones(2 * width + 1) / (2 * width + 1)
    padded = np.pad(x, width, mode="edge")
    return np.convolve(padded, kernel, mode="valid")


def _harmonic_envelope(power: np.ndarray, f0: float, bin_hz: float) -> np.ndarray:
    n_bins = power.size
    nyq = (n_bins - 1) * bin_hz
    half = max(1, int(round(f0 / 2 / bin_hz)))
    centers = []
    values = []
    h = 1
    while h * f0 < nyq - bin_hz:
        c = int(round(h * f0 / bin_hz))
        lo, hi = max(0, c - half), min(n_bins, c + half + 1)
        j = lo + int(np.argmax(power[lo:hi]))
        centers.append(j)
        values.append(power[j])
        h += 1
    if not centers:
        return _moving_average(power, max(1, int(round(f0 / bin_hz))))
    log_vals = np.log(np.maximum(np.asarray(values), ENVELOPE_FLOOR))
    log_env = np.interp(np.arange(n_bins), centers, log_vals)
    smooth = _moving_average(log_env, max(1, half // 2))
    return np.exp(smooth)


# ---------------------------------------------------------------------------
# mel-cepstral coefficients


def warp_frequency(omega: np.ndarray, alpha: float) -> np.ndarray:
    """First-order all-pass frequency warp on [0, pi].

    The inverse map is the same function with -alpha.
    """
    omega = np.asarray(omega, dtype=np.float64)
    return omega + 2.0 * np.arctan2(alpha * np.sin(omega), 1.0 - alpha * np.cos(omega))


def mcc_from_envelope(env: np.ndarray, order: int, alpha: float,
                      frame_hop: float = 0.0, meta: str = "") -> FeatureSequence:
    """Mel-warped cepstrum of the log envelope, coefficients 0..order.

    The log envelope is resampled onto a uniformly spaced grid in warped
    frequency and inverse-DFT'd; the reconstruction convention is
    log E(w) = c0 + 2 * sum_m c_m cos(m * warp(w)).
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    if not abs(alpha) < 1:
        raise ValueError("|alpha| must be < 1")
    env = np.atleast_2d(np.asarray(env, dtype=np.float64))
    t, n_bins = env.shape
    log_env = np.log(np.maximum(env, ENVELOPE_FLOOR))
    omega_tilde = np.linspace(0.0, np.pi, n_bins)
    omega_src = warp_frequency(omega_tilde, -alpha)
    grid = np.linspace(0.0, np.pi, n_bins)
    warped = np.empty_like(log_env)
    for k in range(t):
        warped[k] = np.interp(omega_src, grid, log_env[k])
    cep = np.fft.irfft(warped, n=2 * (n_bins - 1), axis=1)
    coeffs = cep[:, :order + 1].copy()
    fs = FeatureSequence(coeffs, "mcc", frame_hop, meta=meta, alpha=alpha)
    return fs


def envelope_from_mcc(mcc: FeatureSequence, n_fft: int) -> np.ndarray:
    """Evaluate the cepstral cosine series back to a positive envelope."""
    if mcc.kind != "mcc":
        raise ValueError(f"expected mcc features, got {mcc.kind!r}")
    alpha = 0.0 if mcc.alpha is None else mcc.alpha
    n_bins = n_fft // 2 + 1
    omega = np.linspace(0.0, np.pi, n_bins)
    omega_tilde = warp_frequency(omega, alpha)
    order = mcc.dim - 1
    m = np.arange(1, order + 1)
    basis = 2.0 * np.cos(np.outer(omega_tilde, m))  # n_bins x order
    log_env = mcc.frames[:, :1] + mcc.frames[:, 1:] @ basis.T
    return np.exp(log_env)


# ---------------------------------------------------------------------------
# normalization


def fit_norm(frame_sets, domain: str = "global", eps: float = 1e-8) -> NormStats:
    """Per-dimension mean/std over one or more feature matrices."""
    mats = [fs.frames if isinstance(fs, FeatureSequence) else np.asarray(fs)
            for fs in (frame_sets if isinstance(frame_sets, (list, tuple)) else [frame_sets])]
    stacked = np.concatenate(mats, axis=0)
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)
    if np.any(std < eps):
        warnings.warn("zero-variance feature dimension; flooring std", stacklevel=2)
        std = np.maximum(std, eps)
    return NormStats(mean, std, domain)


def apply_norm(stats: NormStats, x: FeatureSequence) -> FeatureSequence:
    if x.dim != stats.mean.size:
        raise ValueError("feature dimension does not match normalization stats")
    return replace(x, frames=(x.frames - stats.mean) / stats.std)


def invert_norm(stats: NormStats, x: FeatureSequence) -> FeatureSequence:
    if x.dim != stats.mean.size:
        raise ValueError("feature dimension does not match normalization stats")
    return replace(x, frames=x.frames * stats.std + stats.mean)


# ---------------------------------------------------------------------------
# feature files: 32-byte header + row-major float32, little-endian


def save_features(path, fs: FeatureSequence) -> None:
    t, f = fs.frames.shape
    hop_us = int(round(fs.frame_hop * 1e6))
    digest = bytes.fromhex(fs.meta[:24]) if fs.meta else b"\x00" * 12
    header = struct.pack("<4sB3xIII12s", FEATURE_MAGIC, _KIND_CODES[fs.kind],
                         t, f, hop_us, digest)
    assert len(header) == 32
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(fs.frames.astype("<f4").tobytes(order="C"))


def load_features(path, cfg: ExtractionConfig | None = None) -> FeatureSequence:
    with open(path, "rb") as fh:
        header = fh.read(32)
        if len(header) != 32 or header[:4] != FEATURE_MAGIC:
            raise ValueError(f"not a feature file: {path}")
        magic, kind_code, t, f, hop_us, digest = struct.unpack("<4sB3xIII12s", header)
        data = np.frombuffer(fh.read(t * f * 4), dtype="<f4").reshape(t, f)
    kind = _CODE_KINDS.get(kind_code)
    if kind is None:
        raise ValueError(f"unknown feature kind code {kind_code}")
    meta = digest.hex()
    alpha = None
    if cfg is not None:
        if not cfg.config_hash().startswith(meta):
            raise ValueError("feature file was extracted with a different config")
        meta = cfg.config_hash()
        if kind == "mcc":
            alpha = cfg.alpha
    return FeatureSequence(data.astype(np.float64), kind, hop_us / 1e6,
                           meta=meta, alpha=alpha)
