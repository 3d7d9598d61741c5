"""Shared helpers for the demo scripts: deterministic harmonic tones and a
tiny two-domain corpus that stands in for real human/dog recordings.

The "human" domain is low-pitched with a rich harmonic stack; the "dog"
domain is high-pitched and spectrally sparse.  Every clip is generated
from a fixed seed, so each demo produces the same artifacts on each run.
"""

from pathlib import Path

import numpy as np

from dogspeak.audio import Waveform, save_wav
from dogspeak.corpus import Manifest, ingest_directory, make_split
from dogspeak.dsp import ExtractionConfig

# Small analysis settings so a demo trains in seconds, not minutes.
DEMO_CFG = ExtractionConfig(
    sample_rate=16000, frame_len=256, hop=64, n_fft=256,
    n_mels=16, fmin=60.0, fmax=7800.0, mcc_order=12,
    f0_floor=80.0, f0_ceil=1000.0,
)

DEMO_ARCH = {
    "num_domains": 2,
    "latent_dim": 4,
    "networks": {
        "generator": [
            {"op": "conv", "kernel": 3, "channels": 16, "stride": 1,
             "norm": "none", "activation": "glu", "padding": "same"},
            {"op": "conv", "kernel": 3, "channels": 16, "stride": 2,
             "norm": "batch", "activation": "glu", "padding": "same"},
            {"op": "deconv", "kernel": 4, "channels": 16, "stride": 2,
             "norm": "batch", "activation": "glu"},
            {"op": "conv", "kernel": 3, "channels": "feature_dim",
             "stride": 1, "norm": "none", "activation": "none",
             "padding": "same"},
        ],
        "discriminator": [
            {"op": "conv", "kernel": 3, "channels": 12, "stride": 2,
             "norm": "none", "activation": "glu", "padding": "valid"},
            {"op": "conv", "kernel": 3, "channels": 12, "stride": 1,
             "norm": "batch", "activation": "glu", "padding": "valid"},
            {"op": "conv", "kernel": 3, "channels": 1, "stride": 1,
             "norm": "none", "activation": "none", "padding": "valid"},
        ],
        "classifier": [
            {"op": "conv", "kernel": 3, "channels": 12, "stride": 2,
             "norm": "none", "activation": "glu", "padding": "valid"},
            {"op": "conv", "kernel": 3, "channels": 12, "stride": 1,
             "norm": "batch", "activation": "glu", "padding": "valid"},
            {"op": "conv", "kernel": 3, "channels": "num_domains",
             "stride": 1, "norm": "none", "activation": "none",
             "padding": "valid"},
        ],
        "encoder": [
            {"op": "conv", "kernel": 3, "channels": 24, "stride": 1,
             "norm": "none", "activation": "glu", "padding": "same"},
            {"op": "conv", "kernel": 3, "channels": 24, "stride": 2,
             "norm": "batch", "activation": "glu", "padding": "same"},
            {"op": "conv", "kernel": 3, "channels": "gaussian_latent",
             "stride": 1, "norm": "none", "activation": "none",
             "padding": "same"},
        ],
        "decoder": [
            {"op": "conv", "kernel": 3, "channels": 24, "stride": 1,
             "norm": "none", "activation": "glu", "padding": "same"},
            {"op": "deconv", "kernel": 4, "channels": 24, "stride": 2,
             "norm": "batch", "activation": "glu"},
            {"op": "conv", "kernel": 3, "channels": "gaussian_feature",
             "stride": 1, "norm": "none", "activation": "none",
             "padding": "same"},
        ],
        "aux_classifier": [
            {"op": "conv", "kernel": 3, "channels": 12, "stride": 2,
             "norm": "none", "activation": "glu", "padding": "valid"},
            {"op": "conv", "kernel": 3, "channels": 12, "stride": 1,
             "norm": "batch", "activation": "glu", "padding": "valid"},
            {"op": "conv", "kernel": 3, "channels": "num_domains",
             "stride": 1, "norm": "none", "activation": "none",
             "padding": "valid"},
        ],
    },
}


def tone(freq, duration=0.5, sr=16000, harmonics=(1.0,), amp=0.3, phase=0.0):
    """A harmonic tone; ``harmonics`` holds relative partial amplitudes."""
    t = np.arange(int(duration * sr)) / sr
    x = np.zeros_like(t)
    for k, rel in enumerate(harmonics, start=1):
        x += rel * np.sin(2 * np.pi * freq * k * t + phase)
    return Waveform(amp * x / np.max(np.abs(x)), sr)


def write_demo_corpus(root) -> Manifest:
    """24 clips across two tone domains, already split into train/eval."""
    root = Path(root)
    rng = np.random.default_rng(2024)
    specs = {
        "human": [(160 + 8 * i, (1.0, 0.6, 0.35, 0.2)) for i in range(12)],
        "dog": [(560 + 24 * i, (1.0, 0.4)) for i in range(12)],
    }
    clips = []
    for domain, entries in specs.items():
        ddir = root / domain
        ddir.mkdir(parents=True, exist_ok=True)
        for i, (freq, harm) in enumerate(entries):
            wav = tone(freq, duration=0.6, harmonics=harm,
                       amp=0.25 + 0.02 * (i % 4),
                       phase=float(rng.uniform(0, 2 * np.pi)))
            save_wav(ddir / f"clip{i:02d}.wav", wav)
        ingested, _ = ingest_directory(ddir, domain)
        clips.extend(ingested)
    return make_split(Manifest(clips), n_eval=2, seed=7)


def output_dir(script_file) -> Path:
    """demos/output/<script name>/ next to the script, created fresh."""
    path = Path(script_file).resolve().parent / "output" / Path(script_file).stem
    path.mkdir(parents=True, exist_ok=True)
    return path
