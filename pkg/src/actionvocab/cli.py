"""Command line entry point: ``actionvocab <subcommand> ...``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .classifier import SVM_C, SvmModel, svm_predict, svm_train
from .encoders import METHOD_CODES, EncodedDataset, encode_dataset, vocabulary_kind
from .evaluation import evaluate
from .features import ComponentLayout, dataset_stats, read_manifest
from .harness import ExperimentConfig, emit_results, load_records, run_grid, summary_table
from .sampler import FeaturePool, SamplingConfig, build_pool
from .synth import SynthSpec, synth_generate
from .vocabulary import VocabularySet, fit_vocabularies


def cmd_stats(args):
    m = read_manifest(args.manifest)
    st = dataset_stats(m)
    print(f"{m.name} ({m.class_count} classes)")
    for label, value in st.as_rows():
        print(f"{label:<12}{value:>14}")


def cmd_synth(args):
    spec = SynthSpec(class_count=args.classes, videos_per_class=args.videos_per_class,
                     features_per_video=args.features_per_video, count_spread=args.count_spread,
                     n_splits=args.splits, seed=args.seed, name=args.name)
    if args.small_layout:
        spec.layout = ComponentLayout.from_text(args.small_layout)
    manifest, _ = synth_generate(spec, args.out)
    print(f"wrote {len(manifest.videos)} videos to {Path(args.out) / 'manifest.tsv'}")


def cmd_sample(args):
    m = read_manifest(args.manifest)
    cfg = SamplingConfig(args.mode, args.memory_gb, args.k, args.seed)
    pool = build_pool(m, cfg, split=args.split)
    pool.save(args.out)
    counts = " ".join(str(c) for c in pool.class_counts())
    print(f"pool of {len(pool)} rows (per class: {counts}) -> {args.out}")


def cmd_fit_vocab(args):
    m = read_manifest(args.manifest)
    pool = FeaturePool.load(args.pool)
    kind, per_cat = vocabulary_kind(args.method)
    vs = fit_vocabularies(pool, args.k, args.scheme, per_cat, args.seed, kind,
                          pca_dims=args.pca_dims, restarts=args.restarts, layout=m.layout)
    vs.save(args.out)
    print(f"{kind} vocabulary ({args.scheme}, K={args.k}) -> {args.out}")


def cmd_encode(args):
    m = read_manifest(args.manifest)
    vs = VocabularySet.load(args.vocab)
    enc = encode_dataset(m, vs, args.method)
    enc.save(args.out)
    print(f"{len(enc.X)} x {enc.D} {enc.method} encodings -> {args.out}")


def _subset(enc: EncodedDataset, manifest_path, split, part):
    if manifest_path is None:
        return enc.X, enc.labels
    m = read_manifest(manifest_path)
    ids = getattr(m.splits[split], part)
    mask = np.array([v in ids for v in enc.video_ids])
    return enc.X[mask], enc.labels[mask]


def cmd_train(args):
    enc = EncodedDataset.load(args.encodings)
    X, y = _subset(enc, args.manifest, args.split, "train")
    class_count = args.classes or int(y.max()) + 1
    model = svm_train(X, y, args.kind, args.c, class_count=class_count)
    model.save(args.out)
    print(f"{args.kind} 1-vs-all SVM, {class_count} classes, {len(X)} examples -> {args.out}")


def cmd_predict(args):
    model = SvmModel.load(args.model)
    enc = EncodedDataset.load(args.encodings)
    X, y = _subset(enc, args.manifest, args.split, "test")
    pred, scores = svm_predict(model, X)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write("truth\tpredicted\t" + "\t".join(f"score{c}" for c in range(scores.shape[1]))
                     + "\n")
            for t, p, s in zip(y, pred, scores):
                fh.write(f"{t}\t{p}\t" + "\t".join(repr(float(v)) for v in s) + "\n")
    m = evaluate(pred, scores, y, model.class_count)
    print(f"Acc {100 * m.acc:.2f}  mAP {100 * m.map:.2f}  mF1 {100 * m.mf1:.2f}")


def cmd_run(args):
    cfg = ExperimentConfig.from_file(args.config)
    records = run_grid(cfg, workers=args.workers, resume=args.resume)
    emit_results(records, cfg.output_dir)
    failed = [r for r in records if r.error]
    print(f"{len(records)} cells, {len(failed)} failed; results in {cfg.output_dir}")
    if any(r.report for r in records):
        print(summary_table(records), end="")
    return 1 if failed and len(failed) == len(records) else 0


def cmd_report(args):
    records = load_records(args.dir)
    if not records:
        print(f"no records under {args.dir}", file=sys.stderr)
        return 1
    written = emit_results(records, args.dir)
    print(written["table"].read_text(), end="")
    if "summary" in written:
        print()
        print(written["summary"].read_text(), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="actionvocab", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("stats", help="per-video feature count statistics")
    s.add_argument("manifest")
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--classes", type=int, default=6)
    s.add_argument("--videos-per-class", type=int, default=40)
    s.add_argument("--features-per-video", type=int, default=150)
    s.add_argument("--count-spread", type=float, default=0.0)
    s.add_argument("--splits", type=int, default=1)
    s.add_argument("--name", default="synthetic")
    s.add_argument("--small-layout", metavar="NAME:DIMS,...",
                   help="override the default 426-dim layout")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("sample", help="build a vocabulary-learning pool")
    s.add_argument("--manifest", required=True)
    s.add_argument("--mode", choices=["balanced", "uniform", "1a", "1b"], default="balanced")
    s.add_argument("--memory-gb", type=float, default=1.6)
    s.add_argument("--k", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--split", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("fit-vocab", help="learn codebooks / PCA / GMMs from a pool")
    s.add_argument("--manifest", required=True)
    s.add_argument("--pool", required=True)
    s.add_argument("--k", type=int, required=True)
    s.add_argument("--scheme", choices=["2a", "2b"], default="2a")
    s.add_argument("--method", choices=sorted(METHOD_CODES) + sorted(METHOD_CODES.values()),
                   default="bof")
    s.add_argument("--restarts", type=int, default=8)
    s.add_argument("--pca-dims", type=int, default=24)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fit_vocab)

    s = sub.add_parser("encode", help="encode every video of a manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--vocab", required=True)
    s.add_argument("--method", default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_encode)

    s = sub.add_parser("train", help="train 1-vs-all SVMs on encodings")
    s.add_argument("--encodings", required=True)
    s.add_argument("--kind", choices=["chi2", "linear"], default="linear")
    s.add_argument("--c", type=float, default=SVM_C)
    s.add_argument("--classes", type=int, default=None)
    s.add_argument("--manifest", help="restrict to the training videos of --split")
    s.add_argument("--split", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", help="apply a model and report Acc/mAP/mF1")
    s.add_argument("--model", required=True)
    s.add_argument("--encodings", required=True)
    s.add_argument("--manifest", help="restrict to the test videos of --split")
    s.add_argument("--split", type=int, default=0)
    s.add_argument("--out", help="write per-video predictions and scores")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("run", help="run an experiment grid from a JSON config")
    s.add_argument("--config", required=True)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--resume", action="store_true", help="skip cells with a finished record")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("report", help="tabulate finished grid records")
    s.add_argument("--dir", required=True)
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args) or 0


if __name__ == "__main__":
    sys.exit(main())
