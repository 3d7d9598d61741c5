"""Evaluation: character error rate, opinion-score aggregation, and the
two study grids.

Study 1 crosses training method (adversarial vs. variational) with
feature type (cepstral vs. spectrogram).  Study 2 sweeps the time-kernel
width of the discriminator and domain classifier from +2 to -2 around
the default.  Both runners convert the held-out clips of the source
domain, add three control rows (source originals, target originals, and
a synthetic white-noise clip), and emit a Markdown report plus a CSV
twin.  Published listening-test values are rendered as reference columns
next to ours; opinion scores are stored facts from human raters, never
computed from audio.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import unicodedata
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nets
from .audio import PROJECT_SAMPLE_RATE, Waveform, load_wav, save_wav
from .convert import ConversionRequest, RunBundle, convert_file
from .corpus import Manifest
from .extraction import extract_waveform

MOS_SCALES = ("dog_likeness", "sound_quality", "clarity")
MOS_PROMPTS = {
    "dog_likeness": "How much of the dog-like element is included?",
    "sound_quality": "How good is the sound quality?",
    "clarity": ("How intelligibly were you able to hear the spoken utterance "
                "given a written text of the content of the spoken utterance?"),
}
MOS_ANCHOR_TEXT = {
    "dog_likeness": ("completely not dog-like", "completely dog-like"),
    "sound_quality": ("completely low quality", "completely high quality"),
    "clarity": ("complete vagueness", "complete intelligibility"),
}

EXP1_CELLS = (("stargan", "mcc"), ("stargan", "melspec"),
              ("acvae", "mcc"), ("acvae", "melspec"))
CONTROL_ROWS = ("original/source", "original/target", "white_noise")
EXP1_MOS_REFERENCE = {
    "stargan/mcc": (1.20, 1.28, 0.92),
    "stargan/melspec": (4.20, 2.76, 2.04),
    "acvae/mcc": (2.04, 2.24, 1.76),
    "acvae/melspec": (4.24, 2.36, 1.36),
    "original/source": (1.00, 4.80, 5.00),
    "original/target": (5.00, 3.70, 1.00),
    "white_noise": (1.10, 1.20, 1.00),
}
EXP1_CER_REFERENCE = {
    "stargan/mcc": (1.00, 1.00),
    "stargan/melspec": (0.97, 0.95),
    "acvae/mcc": (0.97, 0.94),
    "acvae/melspec": (0.98, 0.97),
    "original/source": (0.03, 0.02),
}

EXP2_DELTAS = (2, 1, 0, -1, -2)
EXP2_MOS_REFERENCE = {
    "delta+2": (2.20, 2.40, 2.00),
    "delta+1": (2.40, 2.08, 2.12),
    "delta+0": (2.60, 2.80, 2.60),
    "delta-1": (2.28, 2.28, 3.00),
    "delta-2": (2.60, 2.48, 2.88),
    "original/source": (1.00, 4.70, 5.00),
    "original/target": (5.00, 3.20, 1.00),
    "white_noise": (1.10, 1.00, 1.00),
}
EXP2_CER_REFERENCE = {
    "delta+2": (0.93, 0.89),
    "delta+1": (0.95, 0.92),
    "delta+0": (0.97, 0.95),
    "delta-1": (0.83, 0.80),
    "delta-2": (0.87, 0.76),
    "original/source": (0.03, 0.02),
}

SOUND_COLUMNS_NOTE = (
    "The two recognition columns are modeled as two fixed evaluation "
    "utterances per condition; the original study does not define them "
    "more precisely.")


# ---------------------------------------------------------------------------
# character error rate


def normalize_text(text: str) -> str:
    """Compatibility-fold, lowercase, and drop whitespace and punctuation.

    What remains is the character sequence the error rate is scored on.
    """
    folded = unicodedata.normalize("NFKC", text).lower()
    return "".join(ch for ch in folded
                   if not (ch.isspace() or unicodedata.category(ch).startswith("P")))


@dataclass(frozen=True)
class EditStats:
    """Counted minimum-edit alignment: D + S <= N always holds."""

    substitutions: int
    deletions: int
    insertions: int
    ref_len: int

    def __post_init__(self):
        if min(self.substitutions, self.deletions, self.insertions,
               self.ref_len) < 0:
            raise ValueError("edit counts must be non-negative")
        if self.substitutions + self.deletions > self.ref_len:
            raise ValueError("substitutions + deletions cannot exceed N")

    @property
    def distance(self) -> int:
        return self.substitutions + self.deletions + self.insertions


def edit_stats(ref, hyp) -> EditStats:
    """Minimum-edit alignment by dynamic programming with unit costs.

    D + S + I equals the Levenshtein distance; ties resolve toward
    substitution rather than an insert + delete pair.
    """
    n, m = len(ref), len(hyp)
    # dp[i][j] = (cost, subs, dels, ins) aligning ref[:i] to hyp[:j]
    dp = [[(0, 0, 0, 0)] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        dp[i][0] = (i, 0, i, 0)
    for j in range(1, m + 1):
        dp[0][j] = (j, 0, 0, j)
    for i in range(1, n + 1):
        ri = ref[i - 1]
        for j in range(1, m + 1):
            c, s, d, k = dp[i - 1][j - 1]
            if ri == hyp[j - 1]:
                best = (c, s, d, k)
            else:
                best = (c + 1, s + 1, d, k)
            c, s, d, k = dp[i - 1][j]
            if c + 1 < best[0]:
                best = (c + 1, s, d + 1, k)
            c, s, d, k = dp[i][j - 1]
            if c + 1 < best[0]:
                best = (c + 1, s, d, k + 1)
            dp[i][j] = best
    _, s, d, k = dp[n][m]
    return EditStats(s, d, k, n)


def cer(ref: str, hyp: str) -> float:
    """(D + S + I) / N over normalized characters; may exceed 1.

    An empty reference (after normalization) is an error: N = 0 leaves
    the rate undefined.
    """
    ref_n = normalize_text(ref)
    hyp_n = normalize_text(hyp)
    if not ref_n:
        raise ValueError("reference transcript is empty after normalization")
    st = edit_stats(ref_n, hyp_n)
    return st.distance / st.ref_len


# ---------------------------------------------------------------------------
# opinion scores


@dataclass(frozen=True)
class RatingRecord:
    rater_id: str
    clip_id: str
    scale: str
    score: int
    timestamp: float = 0.0

    def __post_init__(self):
        if self.scale not in MOS_SCALES:
            raise ValueError(f"unknown scale: {self.scale!r}")
        if self.score not in (1, 2, 3, 4, 5):
            raise ValueError(f"score must be an integer 1..5, got {self.score!r}")


@dataclass(frozen=True)
class TranscriptRecord:
    rater_id: str
    clip_id: str
    text: str          # may be empty: counts as all deletions
    reference_id: str


@dataclass(frozen=True)
class MosSummary:
    mean: float
    n: int
    ci95: float


def summarize_scores(scores) -> MosSummary:
    """Mean of 1..5 scores with a normal-approximation 95% interval."""
    values = [float(s) for s in scores]
    if not values:
        raise ValueError("no scores to summarize")
    for v in values:
        if not 1.0 <= v <= 5.0:
            raise ValueError(f"score {v} outside the 1..5 scale")
    n = len(values)
    mean = sum(values) / n
    if n < 2:
        return MosSummary(mean, n, 0.0)
    var = sum((v - mean) ** 2 for v in values) / (n - 1)
    return MosSummary(mean, n, 1.96 * math.sqrt(var / n))


def aggregate_mos(ratings, group_by=("clip_id",)) -> dict:
    """Mean table over rating records: group key -> scale -> MosSummary.

    Groups with no ratings simply do not appear.  The mean is
    permutation-invariant over the record order.
    """
    buckets: dict[tuple, dict[str, list[int]]] = {}
    for r in ratings:
        key = tuple(getattr(r, k) if hasattr(r, k) else r[k] for k in group_by)
        buckets.setdefault(key, {}).setdefault(_field(r, "scale"), []).append(
            int(_field(r, "score")))
    return {key: {scale: summarize_scores(vals) for scale, vals in sorted(by.items())}
            for key, by in sorted(buckets.items())}


def _field(r, name):
    return getattr(r, name) if hasattr(r, name) else r[name]


# ---------------------------------------------------------------------------
# experiment grids


@dataclass
class ExperimentGrid:
    """One study: a manifest, a direction, and one run dir per cell.

    ``cells`` maps (method, feature_kind) for study 1 or the integer
    kernel offset for study 2 to a training run directory (or None for a
    missing cell, which renders as gaps).  ``listening`` optionally
    carries human data: {"mos": {row: {scale: [scores]}},
    "cer": {row: [first, second]}}.
    """

    manifest: Manifest
    cells: dict
    out_dir: Path
    source: str = "FKN"
    target: str = "adult_dog"
    split: str = "eval"
    seed: int = 0
    listening: dict | None = None

    def eval_clips(self, domain: str):
        clips = [c for c in self.manifest.subset(self.split)
                 if c.domain == domain]
        return sorted(clips, key=lambda c: c.id)


@dataclass
class RowResult:
    row: str
    config_hash: str = ""
    clips: list = field(default_factory=list)
    n_clips: int = 0
    dist_before: float | None = None
    dist_after: float | None = None
    receptive_field: int | None = None
    error: str = ""


def _short_hash(payload: bytes) -> str:
    return hashlib.sha256(payload).hexdigest()[:12]


def _final_checkpoint(rundir: Path) -> Path:
    ckpts = sorted((Path(rundir) / "checkpoints").glob("step*.ckpt"))
    if not ckpts:
        raise FileNotFoundError(f"no checkpoints under {rundir}")
    return ckpts[-1]


def _run_cell(grid: ExperimentGrid, row: str, rundir, celldir: Path) -> RowResult:
    """Convert every held-out source clip through one trained run."""
    result = RowResult(row)
    rundir = Path(rundir)
    config_path = rundir / "config.json"
    result.config_hash = _short_hash(config_path.read_bytes())
    ckpt = _final_checkpoint(rundir)
    bundle = RunBundle.load(ckpt, config_path)
    cfg = bundle.extraction
    tgt_mean, _ = bundle.norm_stats(grid.target)
    result.receptive_field = nets.receptive_field(bundle.model.cfg, "discriminator")

    clips = grid.eval_clips(grid.source)
    if not clips:
        raise ValueError(f"no {grid.split!r} clips in domain {grid.source!r}")
    celldir.mkdir(parents=True, exist_ok=True)
    before, after = [], []
    for clip in clips:
        out_wav = celldir / f"{clip.id}__to__{grid.target}.wav"
        convert_file(ConversionRequest(
            source=str(clip.path), checkpoint=str(ckpt),
            source_domain=grid.source, target_domain=grid.target,
            output=str(out_wav), seed=grid.seed, config_path=str(config_path)))
        src_feats = extract_waveform(clip.load(), cfg, bundle.kind).frames
        conv_wav = load_wav(out_wav, target_rate=cfg.sample_rate)
        conv_feats = extract_waveform(conv_wav, cfg, bundle.kind).frames
        before.append(float(np.mean(np.abs(src_feats.mean(axis=0) - tgt_mean))))
        after.append(float(np.mean(np.abs(conv_feats.mean(axis=0) - tgt_mean))))
        result.clips.append(str(out_wav))
    result.n_clips = len(clips)
    result.dist_before = float(np.mean(before))
    result.dist_after = float(np.mean(after))
    return result


def _control_rows(grid: ExperimentGrid, out_dir: Path) -> list[RowResult]:
    rows = []
    for row, domain in (("original/source", grid.source),
                        ("original/target", grid.target)):
        result = RowResult(row)
        celldir = out_dir / "cells" / row.replace("/", "_")
        celldir.mkdir(parents=True, exist_ok=True)
        for clip in grid.eval_clips(domain):
            wav = clip.load()
            path = celldir / f"{clip.id}.wav"
            save_wav(path, wav)
            result.clips.append(str(path))
        result.n_clips = len(result.clips)
        rows.append(result)

    noise_dir = out_dir / "cells" / "white_noise"
    noise_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(grid.seed)
    rate = PROJECT_SAMPLE_RATE
    noise = rng.uniform(-0.3, 0.3, size=2 * rate)
    noise_path = noise_dir / "white_noise.wav"
    save_wav(noise_path, Waveform(noise, rate))
    rows.append(RowResult("white_noise", clips=[str(noise_path)], n_clips=1))
    return rows


def _listening_tables(grid: ExperimentGrid):
    data = grid.listening or {}
    if isinstance(data, (str, Path)):
        with open(data, encoding="utf-8") as fh:
            data = json.load(fh)
    return data.get("mos", {}), data.get("cer", {})


def _grid_report(grid: ExperimentGrid, name: str, title: str,
                 rows: list[RowResult], mos_ref: dict, cer_ref: dict,
                 notes: list[str]) -> dict:
    out_dir = Path(grid.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    mos_rows, cer_rows = _listening_tables(grid)

    lines = [f"# {title}", ""]
    lines.append(f"Direction: {grid.source} -> {grid.target}; "
                 f"split: {grid.split}; seed: {grid.seed}.")
    lines.append("")
    for note in notes:
        lines.append(f"> {note}")
        lines.append("")

    csv_records = []

    def record(row, metric, ours, ref, n=""):
        gap = None if (ours is None or ref is None) else ours - ref
        csv_records.append({
            "condition": row.row, "metric": metric,
            "ours": "" if ours is None else f"{ours:.6f}",
            "reference": "" if ref is None else f"{ref:.2f}",
            "gap": "" if gap is None else f"{gap:.6f}",
            "n": n, "config": row.config_hash,
        })
        return gap

    lines.append("## Opinion scores (1-5, human raters)")
    lines.append("")
    head = "| condition | config |"
    rule = "| --- | --- |"
    for scale in MOS_SCALES:
        head += f" {scale} | ref | gap |"
        rule += " ---: | ---: | ---: |"
    lines += [head, rule]
    for row in rows:
        cells = [row.row, row.config_hash or ""]
        for si, scale in enumerate(MOS_SCALES):
            scores = mos_rows.get(row.row, {}).get(scale)
            ours = n = None
            if scores:
                summary = summarize_scores(scores)
                ours, n = summary.mean, summary.n
            ref = mos_ref.get(row.row, (None,) * 3)[si]
            gap = record(row, scale, ours, ref, n or "")
            cells += [_fmt(ours), _fmt(ref), _fmt(gap)]
        lines.append("| " + " | ".join(cells) + " |")
    lines.append("")

    lines.append("## Character error rate")
    lines.append("")
    lines += ["| condition | 1st sound | ref | gap | 2nd sound | ref | gap |",
              "| --- | ---: | ---: | ---: | ---: | ---: | ---: |"]
    for row in rows:
        if row.row not in cer_ref and row.row not in cer_rows:
            continue
        cells = [row.row]
        for idx, label in enumerate(("sound1", "sound2")):
            pair = cer_rows.get(row.row)
            ours = None if not pair else (None if pair[idx] is None
                                          else float(pair[idx]))
            ref = cer_ref.get(row.row, (None, None))[idx]
            gap = record(row, f"cer_{label}", ours, ref)
            cells += [_fmt(ours), _fmt(ref), _fmt(gap)]
        lines.append("| " + " | ".join(cells) + " |")
    lines.append("")

    lines.append("## Cell summary (objective)")
    lines.append("")
    lines += ["| condition | config | clips | feature distance to target "
              "(source) | (converted) | receptive field | error |",
              "| --- | --- | ---: | ---: | ---: | ---: | --- |"]
    for row in rows:
        lines.append("| " + " | ".join([
            row.row, row.config_hash or "", str(row.n_clips or ""),
            _fmt(row.dist_before), _fmt(row.dist_after),
            "" if row.receptive_field is None else str(row.receptive_field),
            row.error]) + " |")
        csv_records.append({
            "condition": row.row, "metric": "feature_distance_to_target",
            "ours": "" if row.dist_after is None else f"{row.dist_after:.6f}",
            "reference": "" if row.dist_before is None else f"{row.dist_before:.6f}",
            "gap": "" if None in (row.dist_after, row.dist_before)
                   else f"{row.dist_after - row.dist_before:.6f}",
            "n": row.n_clips, "config": row.config_hash,
        })
    lines.append("")

    md_path = out_dir / f"{name}.md"
    csv_path = out_dir / f"{name}.csv"
    with open(md_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines))
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["condition", "metric", "ours",
                                                "reference", "gap", "n", "config"])
        writer.writeheader()
        writer.writerows(csv_records)

    clips = {row.row: [str(Path(p).relative_to(out_dir)) for p in row.clips]
             for row in rows}
    clips_path = out_dir / f"{name}_clips.json"
    with open(clips_path, "w", encoding="utf-8") as fh:
        json.dump({"experiment": name, "source": grid.source,
                   "target": grid.target, "seed": grid.seed, "rows": clips},
                  fh, indent=2, sort_keys=True)

    return {"markdown": md_path, "csv": csv_path, "clips": clips_path,
            "rows": {row.row: row for row in rows}}


def _fmt(x) -> str:
    return "" if x is None else f"{float(x):.2f}"


def run_experiment1(grid: ExperimentGrid) -> dict:
    """Method x feature study: 4 converted cells + 3 control rows."""
    out_dir = Path(grid.out_dir)
    rows = []
    for method, kind in EXP1_CELLS:
        row_id = f"{method}/{kind}"
        rundir = grid.cells.get((method, kind))
        if rundir is None:
            rows.append(RowResult(row_id, error="cell missing"))
            continue
        celldir = out_dir / "cells" / f"{method}_{kind}"
        try:
            rows.append(_run_cell(grid, row_id, rundir, celldir))
        except Exception as exc:  # partial report with gap markers
            warnings.warn(f"cell {row_id} failed: {exc}", stacklevel=2)
            rows.append(RowResult(row_id, error=str(exc)))
    rows.extend(_control_rows(grid, out_dir))
    return _grid_report(grid, "experiment1",
                        "Study 1: training method x feature type",
                        rows, EXP1_MOS_REFERENCE, EXP1_CER_REFERENCE,
                        [SOUND_COLUMNS_NOTE,
                         "Opinion/recognition cells stay empty until "
                         "listening data is supplied; reference columns show "
                         "published values."])


def run_experiment2(grid: ExperimentGrid) -> dict:
    """Kernel-width sweep: five offsets ordered +2, +1, 0, -1, -2."""
    out_dir = Path(grid.out_dir)
    rows = []
    for delta in EXP2_DELTAS:
        row_id = f"delta{delta:+d}"
        rundir = grid.cells.get(delta)
        if rundir is None:
            row = RowResult(row_id, error="cell missing")
            rows.append(row)
            continue
        celldir = out_dir / "cells" / row_id
        try:
            row = _run_cell(grid, row_id, rundir, celldir)
        except Exception as exc:
            warnings.warn(f"cell {row_id} failed: {exc}", stacklevel=2)
            row = RowResult(row_id, error=str(exc))
        rows.append(row)
    rows.extend(_control_rows(grid, out_dir))
    return _grid_report(grid, "experiment2",
                        "Study 2: discriminator/classifier time-kernel sweep",
                        rows, EXP2_MOS_REFERENCE, EXP2_CER_REFERENCE,
                        [SOUND_COLUMNS_NOTE,
                         "The receptive-field column is the discriminator's "
                         "span in frames at each kernel offset."])
