"""Batch acoustic-feature extraction over a curated manifest.

Writes one feature file per clip into a feature directory plus a
``stats.json`` sidecar holding per-domain and global normalization
statistics (train split only) and per-domain fundamental-frequency
log statistics, all keyed to the extraction-config hash.
"""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import dsp
from .corpus import Manifest
from .dsp import ExtractionConfig, FeatureSequence


def extract_clip(clip, cfg: ExtractionConfig, kind: str) -> FeatureSequence:
    """Features of one manifest clip: ``melspec`` or ``mcc``."""
    return extract_waveform(clip.load(), cfg, kind)


def extract_waveform(wave, cfg: ExtractionConfig, kind: str) -> FeatureSequence:
    if wave.sample_rate != cfg.sample_rate:
        raise ValueError(f"clip rate {wave.sample_rate} != config {cfg.sample_rate}")
    if kind == "melspec":
        return dsp.mel_spectrogram(wave, cfg)
    if kind == "mcc":
        f0 = dsp.estimate_f0(wave, cfg=cfg)
        env = dsp.spectral_envelope(wave, f0, cfg)
        return dsp.mcc_from_envelope(env, cfg.mcc_order, cfg.alpha,
                                     frame_hop=cfg.frame_hop_seconds,
                                     meta=cfg.config_hash())
    raise ValueError(f"unknown feature kind: {kind!r}")


def clip_f0_stats(clip, cfg: ExtractionConfig):
    """(log-mean, log-std, n_voiced) of voiced frames, or None if unvoiced."""
    track = dsp.estimate_f0(clip.load(), cfg=cfg)
    voiced = track.f0[track.voiced_mask]
    if voiced.size == 0:
        return None
    logs = np.log(voiced)
    return float(logs.mean()), float(logs.std()), int(voiced.size)


def extract_corpus(manifest: Manifest, featdir, cfg: ExtractionConfig,
                   kind: str = "melspec") -> dict:
    """Extract every manifest clip into ``featdir`` and write stats.json.

    Normalization statistics are computed over train-split frames only so
    evaluation clips never leak into them.  Returns the stats dict.
    """
    featdir = Path(featdir)
    featdir.mkdir(parents=True, exist_ok=True)
    sums: dict[str, np.ndarray] = {}
    sqsums: dict[str, np.ndarray] = {}
    counts: dict[str, int] = {}
    f0_logs: dict[str, list[np.ndarray]] = {}
    feature_dim = cfg.feature_dim(kind)

    for clip in manifest.clips:
        fs = extract_clip(clip, cfg, kind)
        dsp.save_features(featdir / f"{clip.id}.dgf", fs)
        if manifest.split.get(clip.id, "train") != "train":
            continue
        dom = clip.domain
        if dom not in sums:
            sums[dom] = np.zeros(feature_dim)
            sqsums[dom] = np.zeros(feature_dim)
            counts[dom] = 0
        sums[dom] += fs.frames.sum(axis=0)
        sqsums[dom] += (fs.frames ** 2).sum(axis=0)
        counts[dom] += fs.frames.shape[0]
        track = dsp.estimate_f0(clip.load(), cfg=cfg)
        voiced = track.f0[track.voiced_mask]
        if voiced.size:
            f0_logs.setdefault(dom, []).append(np.log(voiced))

    if not counts:
        raise ValueError("manifest has no training clips to compute stats from")

    stats = {
        "kind": kind,
        "feature_dim": feature_dim,
        "config_hash": cfg.config_hash(),
        "config": _config_dict(cfg),
        "domains": {},
    }
    total = np.zeros(feature_dim)
    total_sq = np.zeros(feature_dim)
    total_n = 0
    for dom in sorted(counts):
        mean, std = _finalize(sums[dom], sqsums[dom], counts[dom])
        entry = {"mean": mean.tolist(), "std": std.tolist(),
                 "frames": counts[dom]}
        if dom in f0_logs:
            logs = np.concatenate(f0_logs[dom])
            entry["f0_log_mean"] = float(logs.mean())
            entry["f0_log_std"] = float(logs.std())
            entry["f0_frames"] = int(logs.size)
        stats["domains"][dom] = entry
        total += sums[dom]
        total_sq += sqsums[dom]
        total_n += counts[dom]
    g_mean, g_std = _finalize(total, total_sq, total_n)
    stats["global"] = {"mean": g_mean.tolist(), "std": g_std.tolist(),
                       "frames": total_n}

    with open(featdir / "stats.json", "w", encoding="utf-8") as fh:
        json.dump(stats, fh, indent=2, sort_keys=True)
    return stats


def _finalize(s: np.ndarray, sq: np.ndarray, n: int):
    mean = s / n
    var = np.maximum(sq / n - mean**2, 0.0)
    return mean, np.sqrt(var)


def _config_dict(cfg: ExtractionConfig) -> dict:
    return asdict(cfg)


def load_stats(featdir) -> dict:
    with open(Path(featdir) / "stats.json", encoding="utf-8") as fh:
        return json.load(fh)
