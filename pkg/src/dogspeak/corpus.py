"""Corpus construction: ingest raw audio, curate it, split dog clips by
pitch, and emit reproducible train/eval manifests.

Clip ids are content-addressed (domain name + 16 hex chars of the file's
SHA-256) so re-ingesting the same directory yields the same ids on any
machine.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import dsp
from .audio import PROJECT_SAMPLE_RATE, Waveform, load_wav

DEFAULT_F0_SPLIT_HZ = 450.0


@dataclass(frozen=True)
class DomainLabel:
    """One slot of the categorical speaker/creature domain set."""

    name: str
    index: int
    num_domains: int

    def __post_init__(self):
        if not 0 <= self.index < self.num_domains:
            raise ValueError("index must lie in [0, num_domains)")

    @property
    def onehot(self) -> np.ndarray:
        vec = np.zeros(self.num_domains)
        vec[self.index] = 1.0
        return vec


class DomainSet:
    """Ordered label slots plus composite-domain membership.

    Composite domains (``people``, ``dogs``) keep their own label slot but
    resolve to the clip sets of their member atomic domains; clips are
    always tagged with an atomic domain name.
    """

    def __init__(self, names, composites=None):
        self.names = tuple(names)
        self.composites = {k: tuple(v) for k, v in (composites or {}).items()}
        if len(set(self.names)) != len(self.names):
            raise ValueError("duplicate domain names")
        for comp in self.composites:
            if comp not in self.names:
                raise ValueError(f"composite {comp!r} is not a label slot")

    def __len__(self) -> int:
        return len(self.names)

    def label(self, name: str) -> DomainLabel:
        return DomainLabel(name, self.names.index(name), len(self.names))

    def is_composite(self, name: str) -> bool:
        return name in self.composites

    def clip_domains(self, name: str) -> tuple[str, ...]:
        """Atomic domain names whose clips realize this label."""
        return self.composites.get(name, (name,))

    def atomic_names(self) -> tuple[str, ...]:
        return tuple(n for n in self.names if n not in self.composites)


def default_domains() -> DomainSet:
    """The six training domains: two announcers, their union, adult dogs,
    puppies, and the dog union."""
    return DomainSet(
        ("FKN", "MMY", "people", "adult_dog", "puppy", "dogs"),
        composites={
            "people": ("FKN", "FTK", "MMY", "MTK"),
            "dogs": ("adult_dog", "puppy"),
        },
    )


@dataclass(frozen=True)
class AudioClip:
    """A curated audio item with attribution."""

    id: str
    domain: str
    path: str
    sample_rate: int
    duration: float
    source: str = ""
    license_tag: str = ""

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")

    def load(self) -> Waveform:
        return load_wav(self.path, target_rate=self.sample_rate)


@dataclass(frozen=True)
class SkipRecord:
    path: str
    reason: str


@dataclass(frozen=True)
class Rejection:
    clip: AudioClip
    reason: str  # soft | loud | noisy


@dataclass
class Manifest:
    clips: list[AudioClip]
    split: dict[str, str] = field(default_factory=dict)
    seed: int = 0
    config_hash: str = ""

    def __post_init__(self):
        ids = [c.id for c in self.clips]
        if len(set(ids)) != len(ids):
            raise ValueError("clip ids must be unique within a manifest")
        for clip in self.clips:
            self.split.setdefault(clip.id, "train")

    def subset(self, split: str) -> list[AudioClip]:
        return [c for c in self.clips if self.split[c.id] == split]

    def domains(self) -> tuple[str, ...]:
        return tuple(sorted({c.domain for c in self.clips}))

    def by_domain(self, domain: str) -> list[AudioClip]:
        return [c for c in self.clips if c.domain == domain]


# ---------------------------------------------------------------------------
# ingest


def clip_id(domain: str, file_bytes: bytes) -> str:
    return f"{domain}-{hashlib.sha256(file_bytes).hexdigest()[:16]}"


def ingest_directory(root, domain, sample_rate: int = PROJECT_SAMPLE_RATE,
                     source: str = "", license_tag: str = ""):
    """Scan a directory for PCM WAV files and build one clip per decodable
    file.

    Returns (clips, skipped); non-audio and corrupt files land in the skip
    list with a reason instead of aborting the ingest.
    """
    root = Path(root)
    if not root.is_dir():
        raise NotADirectoryError(f"not a readable directory: {root}")
    domain_name = domain.name if isinstance(domain, DomainLabel) else str(domain)
    clips: list[AudioClip] = []
    skipped: list[SkipRecord] = []
    for path in sorted(root.rglob("*")):
        if not path.is_file():
            continue
        if path.suffix.lower() != ".wav":
            skipped.append(SkipRecord(str(path), "non-audio"))
            continue
        try:
            wave = load_wav(path, target_rate=sample_rate)
        except Exception:
            skipped.append(SkipRecord(str(path), "corrupt"))
            continue
        clips.append(AudioClip(
            id=clip_id(domain_name, path.read_bytes()),
            domain=domain_name,
            path=str(path),
            sample_rate=sample_rate,
            duration=wave.duration,
            source=source,
            license_tag=license_tag,
        ))
    return clips, skipped


# ---------------------------------------------------------------------------
# curation


def estimate_snr_db(wave: Waveform, frame_len: int = 1024, hop: int = 256) -> float:
    """Noisiness heuristic: spectral flatness mapped to a pseudo-SNR.

    Tonal/structured audio has low flatness (high value here); wideband
    noise has flatness near 1 (value near 0 dB).  This is a declared
    heuristic, not a calibrated SNR.
    """
    frame_len = min(frame_len, max(64, len(wave)))
    hop = min(hop, frame_len)
    spec = dsp.stft(wave, frame_len, hop, "hann")
    power = np.abs(spec) ** 2
    energies = power.sum(axis=1)
    active = energies > 1e-12
    if not active.any():
        return 0.0
    p = power[active]
    p = p / np.maximum(p.mean(axis=1, keepdims=True), 1e-300)
    flatness = np.exp(np.mean(np.log(np.maximum(p, 1e-12)), axis=1))
    return float(-10.0 * np.log10(max(np.mean(flatness), 1e-12)))


def curate(clips, loud_db_min: float, loud_db_max: float, snr_min: float,
           waveforms=None):
    """Partition clips into kept and rejected per the level/noise rules.

    Rejection reasons: ``soft`` (RMS below loud_db_min), ``loud`` (RMS
    above loud_db_max), ``noisy`` (estimated SNR below snr_min), checked
    in that order.  kept + rejected is always a partition of the input.
    """
    if not loud_db_min < loud_db_max:
        raise ValueError("require loud_db_min < loud_db_max")
    kept: list[AudioClip] = []
    rejected: list[Rejection] = []
    for clip in clips:
        wave = waveforms[clip.id] if waveforms else clip.load()
        level = wave.rms_dbfs()
        if level < loud_db_min:
            rejected.append(Rejection(clip, "soft"))
        elif level > loud_db_max:
            rejected.append(Rejection(clip, "loud"))
        elif estimate_snr_db(wave) < snr_min:
            rejected.append(Rejection(clip, "noisy"))
        else:
            kept.append(clip)
    return kept, rejected


# ---------------------------------------------------------------------------
# pitch split


@dataclass(frozen=True)
class PitchSplit:
    low_pitch: list[AudioClip]
    high_pitch: list[AudioClip]
    unvoiced_ids: frozenset[str]

    def __iter__(self):
        return iter((self.low_pitch, self.high_pitch))


def split_by_pitch(clips, f0_threshold: float = DEFAULT_F0_SPLIT_HZ,
                   waveforms=None) -> PitchSplit:
    """Partition dog clips by median voiced F0.

    A clip goes to high_pitch iff its median voiced F0 exceeds the
    threshold; clips with no voiced frames land in low_pitch and are
    flagged in ``unvoiced_ids``.
    """
    if f0_threshold <= 0:
        raise ValueError("f0_threshold must be positive")
    low: list[AudioClip] = []
    high: list[AudioClip] = []
    unvoiced: set[str] = set()
    for clip in clips:
        wave = waveforms[clip.id] if waveforms else clip.load()
        track = dsp.estimate_f0(wave)
        median = track.median_voiced()
        if median == 0.0:
            unvoiced.add(clip.id)
            low.append(clip)
        elif median > f0_threshold:
            high.append(clip)
        else:
            low.append(clip)
    return PitchSplit(low, high, frozenset(unvoiced))


# ---------------------------------------------------------------------------
# train/eval split


def make_split(manifest: Manifest, n_eval: int, seed: int) -> Manifest:
    """Assign exactly min(n_eval, domain size) eval clips per atomic domain
    via a seeded deterministic shuffle; everything else trains."""
    if n_eval < 0:
        raise ValueError("n_eval must be >= 0")
    split: dict[str, str] = {}
    for domain in manifest.domains():
        ids = sorted(c.id for c in manifest.by_domain(domain))
        rng = random.Random(f"{seed}:{domain}")
        rng.shuffle(ids)
        for i, cid in enumerate(ids):
            split[cid] = "eval" if i < n_eval else "train"
    return Manifest(list(manifest.clips), split, seed=seed,
                    config_hash=manifest.config_hash)


# ---------------------------------------------------------------------------
# persistence: JSON Lines, header line + one clip per line


def save_manifest(path, manifest: Manifest) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        header = {"seed": manifest.seed, "config_hash": manifest.config_hash}
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for clip in manifest.clips:
            row = {
                "id": clip.id,
                "domain": clip.domain,
                "path": clip.path,
                "sample_rate": clip.sample_rate,
                "duration": clip.duration,
                "source": clip.source,
                "license": clip.license_tag,
                "split": manifest.split[clip.id],
            }
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def load_manifest(path) -> Manifest:
    with open(path, encoding="utf-8") as fh:
        lines = [line for line in fh.read().splitlines() if line.strip()]
    if not lines:
        raise ValueError(f"empty manifest: {path}")
    header = json.loads(lines[0])
    clips: list[AudioClip] = []
    split: dict[str, str] = {}
    for line in lines[1:]:
        row = json.loads(line)
        clips.append(AudioClip(
            id=row["id"], domain=row["domain"], path=row["path"],
            sample_rate=row["sample_rate"], duration=row["duration"],
            source=row.get("source", ""), license_tag=row.get("license", ""),
        ))
        split[row["id"]] = row["split"]
    return Manifest(clips, split, seed=header.get("seed", 0),
                    config_hash=header.get("config_hash", ""))
