"""Shared fixtures: synthetic tone corpora, a tiny architecture file, and
session-scoped training runs reused by the pipeline and acceptance tests.

Everything here is deterministic: fixed seeds, fixed tone tables, and
fixed training configs, so any test that consumes these fixtures sees
the same artifacts on every run.
"""

from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np
import pytest

from dogspeak import corpus as corpus_mod
from dogspeak import extraction, train
from dogspeak.audio import Waveform, save_wav
from dogspeak.corpus import Manifest, make_split
from dogspeak.dsp import ExtractionConfig

@pytest.hookimpl(tryfirst=True, hookwrapper=True)
def pytest_runtest_makereport(item, call):
    """Expose each phase's report on the item so teardown fixtures can see
    whether the test body passed (used for the acceptance verdict lines)."""
    outcome = yield
    rep = outcome.get_result()
    setattr(item, "rep_" + rep.when, rep)


# Analysis settings small enough that a 0.6 s clip trains in milliseconds
# per step but still leaves >100 frames per clip.
TOY_CFG = ExtractionConfig(
    sample_rate=16000, frame_len=256, hop=64, n_fft=256,
    n_mels=16, fmin=60.0, fmax=7800.0, mcc_order=12,
    f0_floor=80.0, f0_ceil=1000.0,
)

TOY_DOMAINS = ("human", "dog")

TOY_ARCH = {
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
            {"op": "conv", "kernel": 3, "channels": "feature_dim", "stride": 1,
             "norm": "none", "activation": "none", "padding": "same"},
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
            {"op": "conv", "kernel": 3, "channels": "num_domains", "stride": 1,
             "norm": "none", "activation": "none", "padding": "valid"},
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
            {"op": "conv", "kernel": 3, "channels": "num_domains", "stride": 1,
             "norm": "none", "activation": "none", "padding": "valid"},
        ],
    },
}


def tone(freq: float, duration: float = 0.5, sr: int = 16000,
         harmonics=(1.0,), amp: float = 0.3, phase: float = 0.0) -> Waveform:
    """Deterministic harmonic tone; ``harmonics`` holds relative amplitudes."""
    t = np.arange(int(duration * sr)) / sr
    x = np.zeros_like(t)
    for k, rel in enumerate(harmonics, start=1):
        x += rel * np.sin(2 * np.pi * freq * k * t + phase)
    peak = np.max(np.abs(x))
    return Waveform(amp * x / peak, sr)


def write_toy_corpus(root: Path) -> Manifest:
    """Two tone domains (low-pitch rich vs high-pitch sparse), 24 clips."""
    rng = np.random.default_rng(2024)
    clips = []
    specs = {
        "human": [(160 + 8 * i, (1.0, 0.6, 0.35, 0.2)) for i in range(12)],
        "dog": [(560 + 24 * i, (1.0, 0.4)) for i in range(12)],
    }
    for domain, entries in specs.items():
        ddir = root / domain
        ddir.mkdir(parents=True, exist_ok=True)
        for i, (freq, harm) in enumerate(entries):
            wav = tone(freq, duration=0.6, harmonics=harm,
                       amp=0.25 + 0.02 * (i % 4),
                       phase=float(rng.uniform(0, 2 * np.pi)))
            save_wav(ddir / f"clip{i:02d}.wav", wav)
        ingested, skipped = corpus_mod.ingest_directory(ddir, domain)
        assert not skipped
        clips.extend(ingested)
    return make_split(Manifest(clips), n_eval=2, seed=7)


@pytest.fixture(scope="session")
def toy_cfg() -> ExtractionConfig:
    return TOY_CFG


@pytest.fixture(scope="session")
def toy_arch_path(tmp_path_factory) -> Path:
    path = tmp_path_factory.mktemp("arch") / "toy_arch.json"
    path.write_text(json.dumps(TOY_ARCH))
    return path


@pytest.fixture(scope="session")
def toy_manifest(tmp_path_factory) -> Manifest:
    root = tmp_path_factory.mktemp("toy_corpus")
    return write_toy_corpus(root)


@pytest.fixture(scope="session")
def toy_mel_featdir(tmp_path_factory, toy_manifest) -> Path:
    featdir = tmp_path_factory.mktemp("feat_mel")
    extraction.extract_corpus(toy_manifest, featdir, TOY_CFG, kind="melspec")
    return featdir


@pytest.fixture(scope="session")
def toy_mcc_featdir(tmp_path_factory, toy_manifest) -> Path:
    featdir = tmp_path_factory.mktemp("feat_mcc")
    extraction.extract_corpus(toy_manifest, featdir, TOY_CFG, kind="mcc")
    return featdir


def toy_train_config(method: str, kind: str, arch_path, **kw) -> train.TrainConfig:
    base = dict(method=method, feature_kind=kind, lr=3e-3,
                lr_discriminator=3e-3, batch=4, crop_frames=32, steps=30,
                seed=3, checkpoint_every=1000, arch_path=str(arch_path),
                domain_names=TOY_DOMAINS)
    base.update(kw)
    return train.TrainConfig(**base)


def run_training(manifest, featdir, cfg, out_dir):
    out_dir = Path(out_dir)
    started = time.perf_counter()
    final = train.train_loop(manifest, featdir, cfg, out_dir)
    return {"rundir": out_dir, "final": final, "config": cfg,
            "seconds": time.perf_counter() - started}


@pytest.fixture(scope="session")
def acvae_mel_run(tmp_path_factory, toy_manifest, toy_mel_featdir,
                  toy_arch_path):
    """The long variational run used for convergence and conversion tests."""
    cfg = toy_train_config("acvae", "melspec", toy_arch_path, steps=500,
                           lr=5e-3, lambda_kl=0.01, batch=12, crop_frames=16)
    return run_training(toy_manifest, toy_mel_featdir, cfg,
                        tmp_path_factory.mktemp("run_acvae_mel"))


@pytest.fixture(scope="session")
def stargan_mcc_run(tmp_path_factory, toy_manifest, toy_mcc_featdir,
                    toy_arch_path):
    """The long adversarial run used for convergence and conversion tests."""
    cfg = toy_train_config("stargan", "mcc", toy_arch_path, steps=200,
                           lr=1e-3, lr_discriminator=3e-3)
    return run_training(toy_manifest, toy_mcc_featdir, cfg,
                        tmp_path_factory.mktemp("run_stargan_mcc"))


@pytest.fixture(scope="session")
def acvae_mcc_run(tmp_path_factory, toy_manifest, toy_mcc_featdir,
                  toy_arch_path):
    cfg = toy_train_config("acvae", "mcc", toy_arch_path, steps=25)
    return run_training(toy_manifest, toy_mcc_featdir, cfg,
                        tmp_path_factory.mktemp("run_acvae_mcc"))


@pytest.fixture(scope="session")
def stargan_mel_run(tmp_path_factory, toy_manifest, toy_mel_featdir,
                    toy_arch_path):
    cfg = toy_train_config("stargan", "melspec", toy_arch_path, steps=25,
                           lr=1e-3)
    return run_training(toy_manifest, toy_mel_featdir, cfg,
                        tmp_path_factory.mktemp("run_stargan_mel"))


@pytest.fixture(scope="session")
def delta_runs(tmp_path_factory, toy_manifest, toy_mcc_featdir,
               toy_arch_path):
    """Five short adversarial runs, one per discriminator kernel offset."""
    runs = {}
    for delta in (2, 1, 0, -1, -2):
        cfg = toy_train_config("stargan", "mcc", toy_arch_path, steps=20,
                               lr=1e-3, kernel_delta=delta)
        out = tmp_path_factory.mktemp(f"run_delta_{delta + 2}")
        runs[delta] = run_training(toy_manifest, toy_mcc_featdir, cfg, out)
    return runs


# ---------------------------------------------------------------------------
# study-grid runs shared by the report tests and the acceptance gate

EXP1_LISTENING = {
    "mos": {
        "stargan/melspec": {"dog_likeness": [5, 4, 4], "sound_quality": [3, 3]},
        "original/target": {"dog_likeness": [5, 5]},
    },
    "cer": {
        "stargan/melspec": [0.25, 0.5],
        "original/source": [0.0, 0.125],
    },
}


def exp1_grid(out_dir, manifest, runs):
    from dogspeak.evaluate import EXP1_CELLS, ExperimentGrid
    return ExperimentGrid(
        manifest=manifest,
        cells={cell: runs[cell]["rundir"] for cell in EXP1_CELLS},
        out_dir=out_dir, source="human", target="dog",
        listening=EXP1_LISTENING)


def exp2_grid(out_dir, manifest, runs):
    from dogspeak.evaluate import EXP2_DELTAS, ExperimentGrid
    return ExperimentGrid(
        manifest=manifest,
        cells={d: runs[d]["rundir"] for d in EXP2_DELTAS},
        out_dir=out_dir, source="human", target="dog")


@pytest.fixture(scope="session")
def exp1_runs(stargan_mcc_run, stargan_mel_run, acvae_mcc_run, acvae_mel_run):
    return {("stargan", "mcc"): stargan_mcc_run,
            ("stargan", "melspec"): stargan_mel_run,
            ("acvae", "mcc"): acvae_mcc_run,
            ("acvae", "melspec"): acvae_mel_run}


@pytest.fixture(scope="session")
def exp1_result(tmp_path_factory, toy_manifest, exp1_runs):
    from dogspeak.evaluate import run_experiment1
    out = tmp_path_factory.mktemp("exp1")
    grid = exp1_grid(out, toy_manifest, exp1_runs)
    return grid, run_experiment1(grid)


@pytest.fixture(scope="session")
def exp2_result(tmp_path_factory, toy_manifest, delta_runs):
    from dogspeak.evaluate import run_experiment2
    out = tmp_path_factory.mktemp("exp2")
    grid = exp2_grid(out, toy_manifest, delta_runs)
    return grid, run_experiment2(grid)
