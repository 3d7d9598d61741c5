"""Command-line front door: one subcommand per pipeline stage.

The library is the primary interface; these commands are thin wrappers
that wire files to the corresponding functions.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import corpus, extraction, train as train_mod
from .convert import ConversionRequest, convert_file
from .dsp import ExtractionConfig


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="dogspeak",
        description="Human-to-dog voice conversion research pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("curate", help="screen raw clips into a manifest")
    p.add_argument("--in", dest="indir", required=True)
    p.add_argument("--domain", required=True)
    p.add_argument("--loud-min", type=float, default=-40.0)
    p.add_argument("--loud-max", type=float, default=-3.0)
    p.add_argument("--snr-min", type=float, default=5.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_curate)

    p = sub.add_parser("split", help="assign train/eval splits in a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--n-eval", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None,
                   help="output manifest (default: rewrite in place)")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("extract", help="extract features for every clip")
    p.add_argument("--manifest", required=True)
    p.add_argument("--kind", choices=("melspec", "mcc"), default="melspec")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="train a conversion model")
    p.add_argument("--method", choices=("acvae", "stargan"), default=None)
    p.add_argument("--features", choices=("melspec", "mcc"), default=None)
    p.add_argument("--kernel-delta", type=int, default=None)
    p.add_argument("--config", required=True,
                   help="JSON with manifest/featdir paths and training knobs")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("convert", help="convert one clip to a target domain")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="source", required=True)
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--backend",
                   choices=("auto", "source_filter", "neural", "phase_recon"),
                   default="auto")
    p.add_argument("--vocoder", default=None,
                   help="trained spectral-decoder weights for --backend neural")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("evaluate", help="run a study grid and write reports")
    p.add_argument("--grid", choices=("exp1", "exp2"), required=True)
    p.add_argument("--rundir", required=True,
                   help="directory holding one training run dir per cell")
    p.add_argument("--manifest", required=True)
    p.add_argument("--src", default="FKN")
    p.add_argument("--tgt", default="adult_dog")
    p.add_argument("--split", default="eval")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--listening", default=None,
                   help="JSON with collected MOS/CER data per condition")
    p.add_argument("--out", required=True, help="report path (.md)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("serve", help="run the listening-test service")
    p.add_argument("--experiment", required=True, action="append",
                   help="published clip listing (repeatable)")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--records", required=True)
    p.set_defaults(func=cmd_serve)

    args = parser.parse_args(argv)
    return args.func(args)


def cmd_curate(args) -> int:
    clips, skipped = corpus.ingest_directory(args.indir, args.domain)
    kept, rejected = corpus.curate(clips, args.loud_min, args.loud_max,
                                   args.snr_min)
    manifest = corpus.Manifest(tuple(kept))
    corpus.save_manifest(args.out, manifest)
    for skip in skipped:
        print(f"skip {skip.path}: {skip.reason}")
    for rej in rejected:
        print(f"reject {rej.clip.id}: {rej.reason}")
    print(f"kept {len(kept)} clips -> {args.out}")
    return 0


def cmd_split(args) -> int:
    manifest = corpus.load_manifest(args.manifest)
    updated = corpus.make_split(manifest, n_eval=args.n_eval, seed=args.seed)
    out = args.out or args.manifest
    corpus.save_manifest(out, updated)
    n_eval = sum(1 for v in updated.split.values() if v == "eval")
    print(f"{n_eval} eval / {len(updated.clips) - n_eval} train -> {out}")
    return 0


def cmd_extract(args) -> int:
    manifest = corpus.load_manifest(args.manifest)
    cfg = ExtractionConfig()
    stats = extraction.extract_corpus(manifest, args.out, cfg, kind=args.kind)
    print(f"extracted {len(manifest.clips)} clips ({args.kind}, "
          f"dim {stats['feature_dim']}) -> {args.out}")
    return 0


def cmd_train(args) -> int:
    with open(args.config, encoding="utf-8") as fh:
        conf = json.load(fh)
    manifest_path = conf.pop("manifest")
    featdir = conf.pop("featdir")
    if args.method:
        conf["method"] = args.method
    if args.features:
        conf["feature_kind"] = args.features
    if args.kernel_delta is not None:
        conf["kernel_delta"] = args.kernel_delta
    if "domain_names" in conf:
        conf["domain_names"] = tuple(conf["domain_names"])
    cfg = train_mod.TrainConfig(**conf)
    manifest = corpus.load_manifest(manifest_path)
    final = train_mod.train_loop(manifest, featdir, cfg, args.out)
    print(f"trained {cfg.method}/{cfg.feature_kind} "
          f"(kernel delta {cfg.kernel_delta:+d}) -> {final}")
    return 0


def cmd_convert(args) -> int:
    record = convert_file(ConversionRequest(
        source=args.source, checkpoint=args.ckpt, source_domain=args.src,
        target_domain=args.tgt, output=args.out, backend=args.backend,
        seed=args.seed, vocoder_path=args.vocoder))
    print(f"{args.source} -> {record['output']} "
          f"({record['method']}/{record['feature_kind']}, {record['backend']})")
    return 0


EXP1_CELL_DIRS = {("stargan", "mcc"): "stargan_mcc",
                  ("stargan", "melspec"): "stargan_melspec",
                  ("acvae", "mcc"): "acvae_mcc",
                  ("acvae", "melspec"): "acvae_melspec"}
EXP2_CELL_DIRS = {d: f"delta{d:+d}" for d in (2, 1, 0, -1, -2)}


def cmd_evaluate(args) -> int:
    from . import evaluate as ev

    manifest = corpus.load_manifest(args.manifest)
    rundir = Path(args.rundir)
    layout = EXP1_CELL_DIRS if args.grid == "exp1" else EXP2_CELL_DIRS
    cells = {key: (rundir / sub if (rundir / sub).is_dir() else None)
             for key, sub in layout.items()}
    out = Path(args.out)
    grid = ev.ExperimentGrid(manifest=manifest, cells=cells,
                             out_dir=out.parent if out.suffix else out,
                             source=args.src, target=args.tgt,
                             split=args.split, seed=args.seed,
                             listening=args.listening)
    runner = ev.run_experiment1 if args.grid == "exp1" else ev.run_experiment2
    report = runner(grid)
    md, csv_twin = Path(report["markdown"]), Path(report["csv"])
    if out.suffix == ".md" and md != out:
        md.replace(out)
        csv_twin.replace(out.with_suffix(".csv"))
        md, csv_twin = out, out.with_suffix(".csv")
    print(f"report: {md}\ncsv: {csv_twin}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .listen import RecordLog, build_app, load_experiment

    experiments = {}
    for path in args.experiment:
        exp = load_experiment(path)
        experiments[exp.experiment_id] = exp
    log = RecordLog(Path(args.records) / "records.jsonl")
    app = build_app(experiments, log)
    print(f"serving {sorted(experiments)} on {args.host}:{args.port}")
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


if __name__ == "__main__":
    sys.exit(main())
