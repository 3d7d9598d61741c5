"""
Signal analysis and resynthesis
===============================

The two feature families behind every model in this package -- log-mel
spectrograms and mel-cepstral coefficients -- plus the pitch tracker
and the two ways to get a waveform back: source-filter synthesis from
an envelope + F0, and filterbank inversion with phase reconstruction.
"""

import numpy as np

from dogspeak import dsp
from dogspeak.audio import Waveform, save_wav
from dogspeak.convert import mel_l1, phase_recon_waveform, \
    synthesize_source_filter
from dogspeak.dsp import ExtractionConfig, filterbank_centers
from dogspeak.extraction import extract_waveform

from _tones import output_dir, tone

out = output_dir(__file__)
cfg = ExtractionConfig()          # 16 kHz, 80 mel bins, 8 ms hop

# ---------------------------------------------------------------------------
# A vowel-like test signal: 220 Hz fundamental with a five-partial stack.

vowel = tone(220.0, duration=0.4, harmonics=(1.0, 0.7, 0.5, 0.3, 0.2))
print(f"signal: {vowel.duration:.2f} s at {vowel.sample_rate} Hz")

# ---------------------------------------------------------------------------
# Log-mel spectrogram.  Frames are rows; the filterbank is triangular on
# the mel scale, so a pure tone concentrates in the bin whose center
# frequency is nearest the tone.

mel = dsp.mel_spectrogram(vowel, cfg).frames
print(f"mel spectrogram: {mel.shape[0]} frames x {mel.shape[1]} bins")

tone_1k = tone(1000.0, duration=0.3)
mel_1k = dsp.mel_spectrogram(tone_1k, cfg).frames
centers = filterbank_centers(cfg.n_mels, cfg.fmin, cfg.fmax)
peak = int(np.argmax(mel_1k.mean(axis=0)))
print(f"1 kHz tone peaks in mel bin {peak} "
      f"(center {centers[peak]:.0f} Hz)")

# ---------------------------------------------------------------------------
# Mel-cepstral coefficients: a compact all-pole-style envelope summary,
# order+1 values per frame.

mcc = extract_waveform(vowel, cfg, kind="mcc").frames
print(f"mcc: {mcc.shape[0]} frames x {mcc.shape[1]} coefficients")

# ---------------------------------------------------------------------------
# Pitch tracking: frame-wise normalized autocorrelation with parabolic
# peak refinement; unvoiced frames report 0.

track = dsp.estimate_f0(vowel, cfg=cfg)
voiced = np.mean(track.f0 > 0)
print(f"f0: median {track.median_voiced():.1f} Hz, {voiced:.0%} frames voiced")

# ---------------------------------------------------------------------------
# Round trip 1: spectral envelope + F0 -> pulse/noise excitation ->
# waveform.  Pitch should survive within a few percent.

env = dsp.spectral_envelope(vowel, track, cfg)
resynth = Waveform(synthesize_source_filter(env, track, cfg, seed=0),
                   cfg.sample_rate)
back = dsp.estimate_f0(resynth, cfg=cfg)
print(f"source-filter resynthesis: median f0 {back.median_voiced():.1f} Hz "
      f"(target 220.0)")
save_wav(out / "vowel_source_filter.wav", resynth)

# ---------------------------------------------------------------------------
# Round trip 2: invert the mel filterbank to a linear magnitude guess,
# then iterate phase reconstruction.  The dominant mel bin is preserved.

recon = Waveform(
    phase_recon_waveform(mel_1k, cfg, seed=0, length=len(tone_1k.samples)),
    cfg.sample_rate)
mel_back = dsp.mel_spectrogram(recon, cfg).frames
print(f"phase reconstruction: peak bin {int(np.argmax(mel_back.mean(axis=0)))} "
      f"(was {peak}); mel L1 gap {mel_l1(tone_1k, recon, cfg):.3f}")
save_wav(out / "tone_phase_recon.wav", recon)

print(f"\nwrote wavs to {out}")
