"""Feature-domain conversion and waveform synthesis.

The file-level pipeline: load audio, extract features, normalize with
the training statistics stored in the checkpoint, map through the
trained model toward the target domain, denormalize, and resynthesize
with one of three backends:

* ``source_filter`` -- excitation/filter synthesis from an envelope and
  a transformed fundamental-frequency track (cepstral features),
* ``phase_recon`` -- non-negative inversion of the mel filterbank plus
  iterative phase reconstruction (spectrogram features),
* ``neural`` -- a small trainable spectral decoder plus the same
  phase reconstruction (spectrogram features).

Every output wav gets a JSON sidecar recording the provenance chain.
"""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import nnls

from . import autodiff as ad
from . import dsp, nets
from .audio import Waveform, load_wav, save_wav
from .autodiff import Tensor
from .corpus import DomainSet
from .dsp import ExtractionConfig, F0Track, FeatureSequence
from .extraction import extract_waveform

PEAK_LIMIT = 0.99
BACKENDS = ("source_filter", "phase_recon", "neural")


@dataclass
class ConversionRequest:
    source: str
    checkpoint: str
    source_domain: str
    target_domain: str
    output: str
    backend: str = "auto"
    seed: int = 0
    vocoder_path: str | None = None
    config_path: str | None = None

    def __post_init__(self):
        if self.backend not in BACKENDS + ("auto",):
            raise ValueError(f"unknown backend: {self.backend!r}")


class RunBundle:
    """A trained model plus the statistics and config needed to use it."""

    def __init__(self, model, extra, run_config):
        self.model = model
        self.model.mode = "infer"
        self.extra = extra
        self.run_config = run_config
        self.method = run_config["train"]["method"]
        self.kind = run_config["feature_kind"]
        ext = dict(run_config["extraction"])
        self.extraction = ExtractionConfig(**ext)
        dom = run_config["domains"]
        self.domains = DomainSet(tuple(dom["names"]),
                                 {k: tuple(v) for k, v in dom["composites"].items()})

    @classmethod
    def load(cls, checkpoint, config_path=None) -> "RunBundle":
        checkpoint = Path(checkpoint)
        model, extra = nets.load_checkpoint(checkpoint)
        if config_path is None:
            for cand in (checkpoint.parent.parent / "config.json",
                         checkpoint.parent / "config.json"):
                if cand.exists():
                    config_path = cand
                    break
        if config_path is None:
            raise FileNotFoundError(
                f"no config.json found near {checkpoint}; pass config_path")
        with open(config_path, encoding="utf-8") as fh:
            run_config = json.load(fh)
        return cls(model, extra, run_config)

    def norm_stats(self, domain: str):
        """(mean, std) for a label name; composite labels without their own
        extraction statistics fall back to the global ones."""
        mean = self.extra.get(f"norm.{domain}.mean")
        std = self.extra.get(f"norm.{domain}.std")
        if mean is None or std is None:
            mean = self.extra["norm.global.mean"]
            std = self.extra["norm.global.std"]
        return np.asarray(mean), np.maximum(np.asarray(std), 1e-8)

    def f0_stats(self, domain: str):
        """(log-mean, log-std) or None where extraction saw no voiced frames."""
        names = [domain]
        if self.domains.is_composite(domain):
            names = list(self.domains.clip_domains(domain)) + names
        pooled = [self.extra[f"f0.{n}"] for n in names if f"f0.{n}" in self.extra]
        if not pooled:
            return None
        arr = np.mean(np.stack(pooled), axis=0)
        return float(arr[0]), float(arr[1])


def convert_features(model, frames: np.ndarray, src_label, tgt_label,
                     method: str) -> np.ndarray:
    """Map normalized features (T x F) to the target domain, same shape.

    ``acvae`` uses the posterior mean through encoder and decoder;
    ``stargan`` applies the generator directly.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2:
        raise ValueError("expected a T x F feature matrix")
    x = Tensor(frames.T[None, :, :])
    if method == "acvae":
        post = model.encoder_forward(x, src_label)
        out = model.decoder_forward(post.mean, tgt_label).mean
    elif method == "stargan":
        out = model.generator_forward(x, tgt_label)
    else:
        raise ValueError(f"unknown method: {method!r}")
    result = out.data[0].T
    return result[:frames.shape[0]]


def transform_f0(track: F0Track, src_stats, tgt_stats) -> F0Track:
    """Log-Gaussian pitch mapping; unvoiced frames stay unvoiced.

    log f' = (log f - mu_src) / sigma_src * sigma_tgt + mu_tgt.
    """
    mu_s, sd_s = float(src_stats[0]), float(src_stats[1])
    mu_t, sd_t = float(tgt_stats[0]), float(tgt_stats[1])
    if sd_s <= 0:
        raise ValueError("source F0 log-std is zero; cannot scale pitch spread")
    if sd_t < 0:
        raise ValueError("target F0 log-std must be non-negative")
    f0 = track.f0.copy()
    mask = track.voiced_mask
    logs = (np.log(f0[mask]) - mu_s) / sd_s * sd_t + mu_t
    f0[mask] = np.exp(logs)
    return F0Track(f0, mask.copy(), track.frame_hop)


# ---------------------------------------------------------------------------
# backends


def synthesize_source_filter(env: np.ndarray, track: F0Track,
                             cfg: ExtractionConfig, seed: int = 0) -> np.ndarray:
    """Excitation/filter synthesis from a power envelope (T x bins) and F0.

    Voiced frames drive a phase-accumulator pulse train, unvoiced frames
    white noise; each frame is shaped by the square root of its envelope
    and overlap-added.  Identical inputs and seed give identical output.
    """
    env = np.asarray(env, dtype=np.float64)
    t, n_bins = env.shape
    if n_bins != cfg.n_fft // 2 + 1:
        raise ValueError("envelope bins do not match n_fft")
    if track.f0.size != t:
        raise ValueError("F0 track not aligned to the envelope frames")
    total = cfg.frame_len + cfg.hop * (t - 1)

    # per-sample excitation parameters, held constant inside each hop
    frame_of = np.minimum(np.arange(total) // cfg.hop, t - 1)
    f0_per_sample = track.f0[frame_of]
    voiced = track.voiced_mask[frame_of]

    rng = np.random.default_rng(seed)
    excitation = np.zeros(total)
    phase = 0.0
    for i in range(total):
        if voiced[i]:
            phase += f0_per_sample[i] / cfg.sample_rate
            if phase >= 1.0:
                phase -= 1.0
                excitation[i] = np.sqrt(cfg.sample_rate / f0_per_sample[i])
        else:
            phase = 0.0
    noise = rng.standard_normal(total)
    excitation[~voiced] = noise[~voiced]

    frames = dsp.frame_signal(excitation, cfg.frame_len, cfg.hop)
    win = dsp.window_array(cfg.window, cfg.frame_len)
    spec = np.fft.rfft(frames * win, n=cfg.n_fft, axis=1)
    shaped = spec * np.sqrt(env)
    out = dsp.istft(shaped, cfg.frame_len, cfg.hop, cfg.window, length=total)
    return _peak_guard(out)


def mel_to_linear(mel_log: np.ndarray, cfg: ExtractionConfig) -> np.ndarray:
    """Invert the mel filterbank by non-negative least squares.

    Returns linear magnitudes (T x bins); each frame solves
    min ||fb p - mel_power|| with p >= 0.
    """
    mel_log = np.atleast_2d(np.asarray(mel_log, dtype=np.float64))
    fb = dsp.mel_filterbank(cfg.n_fft, cfg.n_mels, cfg.fmin, cfg.fmax,
                            cfg.sample_rate)
    mel_power = np.exp(mel_log)
    power = np.empty((mel_log.shape[0], fb.shape[1]))
    for k in range(mel_log.shape[0]):
        power[k], _ = nnls(fb, mel_power[k])
    return np.sqrt(power)


def griffin_lim(mag: np.ndarray, cfg: ExtractionConfig, n_iters: int = 60,
                seed: int = 0, length: int | None = None) -> np.ndarray:
    """Iterative phase reconstruction from linear magnitudes (T x bins)."""
    mag = np.asarray(mag, dtype=np.float64)
    t = mag.shape[0]
    if length is None:
        length = cfg.frame_len + cfg.hop * (t - 1)
    rng = np.random.default_rng(seed)
    phase = np.exp(2j * np.pi * rng.random(mag.shape))
    spec = mag * phase
    for _ in range(n_iters):
        x = dsp.istft(spec, cfg.frame_len, cfg.hop, cfg.window, length=length)
        re = dsp.stft(Waveform(x, cfg.sample_rate), cfg.frame_len, cfg.hop,
                      cfg.window, cfg.n_fft)[:t]
        if re.shape[0] < t:
            re = np.pad(re, ((0, t - re.shape[0]), (0, 0)))
        angles = np.angle(re)
        spec = mag * np.exp(1j * angles)
    out = dsp.istft(spec, cfg.frame_len, cfg.hop, cfg.window, length=length)
    return _peak_guard(out)


def _peak_guard(samples: np.ndarray, limit: float = PEAK_LIMIT) -> np.ndarray:
    peak = float(np.max(np.abs(samples))) if samples.size else 0.0
    if peak > limit:
        samples = samples * (limit / peak)
    return samples


# ---------------------------------------------------------------------------
# trainable spectral decoder (mel -> linear log-magnitude)


class NeuralVocoder:
    """Two-layer gated convolutional decoder from log mel to log magnitude."""

    def __init__(self, cfg: ExtractionConfig, hidden: int = 96,
                 kernel: int = 5, seed: int = 0):
        self.cfg = cfg
        self.hidden = hidden
        self.kernel = kernel
        n_bins = cfg.n_fft // 2 + 1
        rng = np.random.default_rng(seed)

        def init(shape):
            bound = np.sqrt(1.0 / (shape[1] * shape[2]))
            return Tensor(rng.uniform(-bound, bound, size=shape),
                          requires_grad=True)

        self.params = {
            "w1": init((2 * hidden, cfg.n_mels, kernel)),
            "b1": Tensor(np.zeros(2 * hidden), requires_grad=True),
            "w2": init((n_bins, hidden, kernel)),
            "b2": Tensor(np.zeros(n_bins), requires_grad=True),
        }

    def forward(self, mel_log: np.ndarray) -> Tensor:
        """(T x n_mels) log mel -> (T x bins) log magnitude."""
        x = Tensor(np.atleast_2d(mel_log).T[None, :, :])
        pad = self.kernel // 2
        h = ad.conv1d(ad.pad_last(x, pad, pad), self.params["w1"],
                      self.params["b1"])
        a = ad.narrow(h, 1, 0, self.hidden)
        g = ad.narrow(h, 1, self.hidden, self.hidden)
        h = ad.mul(a, ad.sigmoid(g))
        out = ad.conv1d(ad.pad_last(h, pad, pad), self.params["w2"],
                        self.params["b2"])
        return ad.reshape(out, out.shape[1:])  # (bins, T) -> via transpose below

    def predict_log_magnitude(self, mel_log: np.ndarray) -> np.ndarray:
        out = self.forward(mel_log)
        return out.data.T

    def save(self, path) -> None:
        arrays = {k: v.data for k, v in self.params.items()}
        np.savez(path, hidden=self.hidden, kernel=self.kernel,
                 n_mels=self.cfg.n_mels, n_fft=self.cfg.n_fft, **arrays)

    @classmethod
    def restore(cls, path, cfg: ExtractionConfig) -> "NeuralVocoder":
        data = np.load(path)
        if int(data["n_mels"]) != cfg.n_mels or int(data["n_fft"]) != cfg.n_fft:
            raise ValueError("vocoder was trained with a different analysis config")
        voc = cls(cfg, hidden=int(data["hidden"]), kernel=int(data["kernel"]))
        for k in ("w1", "b1", "w2", "b2"):
            voc.params[k] = Tensor(np.asarray(data[k], dtype=np.float64),
                                   requires_grad=True)
        return voc


def train_neural_vocoder(waves, cfg: ExtractionConfig, steps: int = 300,
                         lr: float = 3e-3, crop: int = 48, seed: int = 0,
                         hidden: int = 96):
    """Fit the spectral decoder on (log mel, log |STFT|) pairs.

    Returns (vocoder, per-step L1 losses).
    """
    from .train import Adam  # local import to avoid a cycle

    pairs = []
    for wave in waves:
        spec = dsp.stft(wave, cfg.frame_len, cfg.hop, cfg.window, cfg.n_fft)
        target = np.log(np.maximum(np.abs(spec), np.sqrt(cfg.log_floor)))
        mel = dsp.mel_spectrogram(wave, cfg).frames
        pairs.append((mel, target))
    voc = NeuralVocoder(cfg, hidden=hidden, seed=seed)
    opt = Adam(voc.params, lr=lr, clip_norm=10.0)
    rng = np.random.default_rng(seed)
    losses = []
    for _ in range(steps):
        mel, target = pairs[rng.integers(len(pairs))]
        t = mel.shape[0]
        if t > crop:
            start = int(rng.integers(0, t - crop + 1))
            mel, target = mel[start:start + crop], target[start:start + crop]
        pred = voc.forward(mel)
        loss = ad.mean(ad.absolute(pred - Tensor(target.T)))
        for p in voc.params.values():
            p.zero_grad()
        loss.backward()
        opt.step()
        losses.append(loss.item())
    return voc, losses


def neural_vocoder_waveform(voc: NeuralVocoder, mel_log: np.ndarray,
                            cfg: ExtractionConfig, seed: int = 0,
                            length: int | None = None) -> np.ndarray:
    mag = np.exp(voc.predict_log_magnitude(mel_log))
    return griffin_lim(mag, cfg, seed=seed, length=length)


def phase_recon_waveform(mel_log: np.ndarray, cfg: ExtractionConfig,
                         seed: int = 0, length: int | None = None) -> np.ndarray:
    """Spectrogram baseline: filterbank inversion then phase reconstruction."""
    mag = mel_to_linear(mel_log, cfg)
    return griffin_lim(mag, cfg, seed=seed, length=length)


# ---------------------------------------------------------------------------
# end-to-end file conversion


def convert_file(request: ConversionRequest) -> dict:
    """Run the full conversion chain; returns the provenance record.

    Writes the converted wav at ``request.output`` plus a ``.json``
    sidecar with source/checkpoint hashes and every knob that shaped
    the result.
    """
    bundle = RunBundle.load(request.checkpoint, request.config_path)
    cfg = bundle.extraction
    wav = load_wav(request.source, target_rate=cfg.sample_rate)
    feats = extract_waveform(wav, cfg, bundle.kind)

    src_mean, src_std = bundle.norm_stats(request.source_domain)
    tgt_mean, tgt_std = bundle.norm_stats(request.target_domain)
    normalized = (feats.frames - src_mean) / src_std
    src_label = bundle.domains.label(request.source_domain)
    tgt_label = bundle.domains.label(request.target_domain)
    converted = convert_features(bundle.model, normalized, src_label,
                                 tgt_label, bundle.method)
    converted = converted * tgt_std + tgt_mean

    backend = request.backend
    if backend == "auto":
        backend = "source_filter" if bundle.kind == "mcc" else "phase_recon"
    if (backend == "source_filter") != (bundle.kind == "mcc"):
        raise ValueError(f"backend {backend!r} does not fit {bundle.kind} features")

    if bundle.kind == "mcc":
        mcc = FeatureSequence(converted, "mcc", cfg.frame_hop_seconds,
                              alpha=cfg.alpha)
        env = dsp.envelope_from_mcc(mcc, cfg.n_fft)
        track = dsp.estimate_f0(wav, cfg=cfg)
        src_f0 = bundle.f0_stats(request.source_domain)
        tgt_f0 = bundle.f0_stats(request.target_domain)
        if src_f0 and tgt_f0 and src_f0[1] > 0:
            track = transform_f0(track, src_f0, tgt_f0)
        else:
            warnings.warn("missing F0 statistics; keeping source pitch",
                          stacklevel=2)
        samples = synthesize_source_filter(env, track, cfg, seed=request.seed)
    elif backend == "neural":
        if not request.vocoder_path:
            raise ValueError("neural backend needs vocoder_path")
        voc = NeuralVocoder.restore(request.vocoder_path, cfg)
        samples = neural_vocoder_waveform(voc, converted, cfg, seed=request.seed,
                                          length=len(wav))
    else:
        samples = phase_recon_waveform(converted, cfg, seed=request.seed,
                                       length=len(wav))

    out_path = Path(request.output)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_wav(out_path, Waveform(_peak_guard(samples), cfg.sample_rate))

    record = {
        "source": str(request.source),
        "source_sha256": _sha256_file(request.source),
        "checkpoint": str(request.checkpoint),
        "checkpoint_sha256": _sha256_file(request.checkpoint),
        "arch_hash": bundle.model.cfg.arch_hash(),
        "kernel_delta": bundle.model.cfg.kernel_delta,
        "method": bundle.method,
        "feature_kind": bundle.kind,
        "source_domain": request.source_domain,
        "target_domain": request.target_domain,
        "backend": backend,
        "seed": request.seed,
        "extraction_hash": cfg.config_hash(),
        "output": str(out_path),
        "created_utc": _dt.datetime.now(_dt.timezone.utc).isoformat(),
    }
    with open(str(out_path) + ".json", "w", encoding="utf-8") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
    return record


def _sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def mel_l1(a: Waveform, b: Waveform, cfg: ExtractionConfig) -> float:
    """Mean absolute log-mel difference over the overlapping frames."""
    ma = dsp.mel_spectrogram(a, cfg).frames
    mb = dsp.mel_spectrogram(b, cfg).frames
    t = min(ma.shape[0], mb.shape[0])
    return float(np.mean(np.abs(ma[:t] - mb[:t])))
