"""
Curating a two-domain corpus
============================

Walk a directory of recordings, screen out clips that are too quiet,
clipped, or noisy, split what survives into train/eval, and save the
manifest that every later stage consumes.
"""

from pathlib import Path

import numpy as np

from dogspeak.audio import Waveform, save_wav
from dogspeak.corpus import (Manifest, curate, ingest_directory,
                             load_manifest, make_split, save_manifest,
                             split_by_pitch)

from _tones import output_dir, tone

out = output_dir(__file__)

# ---------------------------------------------------------------------------
# Synthesize a small raw collection.  Most clips are fine; we also plant
# one nearly-silent clip and one buried in noise so curation has
# something to reject.

raw = out / "raw"
for domain, base_freq in (("human", 170.0), ("dog", 600.0)):
    ddir = raw / domain
    ddir.mkdir(parents=True, exist_ok=True)
    for i in range(6):
        wav = tone(base_freq + 15 * i, harmonics=(1.0, 0.5, 0.25))
        save_wav(ddir / f"take{i:02d}.wav", wav)

quiet = tone(200.0, amp=0.001)
save_wav(raw / "human" / "too_quiet.wav", quiet)

rng = np.random.default_rng(0)
noisy = tone(230.0, amp=0.05)
noisy = Waveform(noisy.samples + rng.normal(scale=0.05, size=len(noisy.samples)),
                 noisy.sample_rate)
save_wav(raw / "human" / "too_noisy.wav", noisy)

# ---------------------------------------------------------------------------
# Ingest: each clip gets a content-hash id and a domain label.  Files that
# cannot be decoded are skipped with a reason rather than aborting.

clips = []
for domain in ("human", "dog"):
    ingested, skipped = ingest_directory(raw / domain, domain)
    print(f"{domain}: ingested {len(ingested)} clips, skipped {len(skipped)}")
    clips.extend(ingested)

# ---------------------------------------------------------------------------
# Curate: level window plus a noise screen.  kept + rejected is always a
# partition of the input, and each rejection carries its reason.

kept, rejected = curate(clips, loud_db_min=-40.0, loud_db_max=-3.0, snr_min=5.0)
print(f"\nkept {len(kept)} of {len(clips)}")
for rej in rejected:
    print(f"  rejected {Path(rej.clip.path).name}: {rej.reason}")

# ---------------------------------------------------------------------------
# Split: per-domain eval holdout with a fixed seed, then save.  Loading
# the manifest back gives the identical object, so downstream stages can
# rely on the file alone.

manifest = make_split(Manifest(kept), n_eval=1, seed=7)
for domain in manifest.domains():
    train = [c for c in manifest.subset("train") if c.domain == domain]
    evals = [c for c in manifest.subset("eval") if c.domain == domain]
    print(f"{domain}: {len(train)} train / {len(evals)} eval")

path = out / "manifest.json"
save_manifest(path, manifest)
assert load_manifest(path).clips == manifest.clips
print(f"\nmanifest saved to {path}")

# ---------------------------------------------------------------------------
# Bonus: when one directory mixes low and high voices, a pitch threshold
# can split it into provisional domains before hand labeling.

groups = split_by_pitch(kept)
print(f"pitch split: {len(groups.low_pitch)} low clips, "
      f"{len(groups.high_pitch)} high clips, "
      f"{len(groups.unvoiced_ids)} unvoiced")
