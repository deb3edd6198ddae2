"""Command-line entry point: ``rwcnn <subcommand> ...``.

Exit status is 0 on success, 1 on a usage error and 2 on a data error
(unreadable or inconsistent inputs).  ``RWC_SEED`` sets the default seed.
"""

import argparse
import logging
import os
import sys

import numpy as np
from joblib import Parallel, delayed
from scipy.io import wavfile

from . import dsp
from .cache import FeatureSet, parse_manifest, read_cache, write_cache, write_manifest, ManifestRow
from .classifiers import DEFAULT_GRID
from .datasets import DATASETS, build_manifest
from .evaluation import (ORDERINGS, EvalReport, FoldPlan, VGGBatchNorm, batch_size_anova,
                         bn_leakage_experiment, cross_validate, split_plan, stratified_folds)
from .frontends import ARCHITECTURES, MFCC, FrontEndSpec, build_frontend
from .stats import one_way_anova, pooled_t_test, welch_t_test
from .synth import TASKS, SyntheticSpec, rhythm_tempi, synth_dataset
from ._validation import CorruptionError, InvalidInputError, ManifestError

logger = logging.getLogger("rwcnn")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _default_seed():
    raw = os.environ.get("RWC_SEED")
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"RWC_SEED must be an integer, got {raw!r}") from None


def _capacity(text):
    cap = text.upper()
    if cap not in ("S", "L"):
        raise argparse.ArgumentTypeError("capacity must be s or l")
    return cap


# --------------------------------------------------------------------------
# Shared helpers
# --------------------------------------------------------------------------

def _load_clip(manifest, row):
    return dsp.prepare_waveform(dsp.load_audio(manifest.resolve(row))).samples


def _cnn_row(extractor, manifest, row):
    x = _load_clip(manifest, row)
    return extractor(extractor.prepare_input(x))


def _mfcc_row(manifest, row):
    return dsp.mfcc_vector(_load_clip(manifest, row))


def _logmel_row(manifest, row):
    return dsp.log_mel(_load_clip(manifest, row))


def _map_rows(fn, manifest, workers, *args):
    # joblib returns results in submission order, so output follows the manifest
    rows = manifest.rows
    if workers == 1:
        return [fn(*args, manifest, r) for r in rows]
    return Parallel(n_jobs=workers)(delayed(fn)(*args, manifest, r) for r in rows)


def _aligned(features, manifest):
    """Feature rows reordered to follow the manifest."""
    index = {cid: i for i, cid in enumerate(features.clip_ids)}
    missing = [cid for cid in manifest.clip_ids if cid not in index]
    if missing:
        raise InvalidInputError(
            f"{len(missing)} manifest clips have no cached features (first: {missing[0]!r})")
    return features.values[[index[cid] for cid in manifest.clip_ids]]


def _plan_from_manifest(manifest, seed):
    if manifest.is_split:
        return split_plan(manifest.folds, seed)
    folds = np.asarray(manifest.folds, dtype=np.int64)
    k = int(folds.max()) + 1
    if len(np.unique(folds)) != k:
        raise InvalidInputError(f"fold indices must cover 0..{k - 1} without gaps")
    return FoldPlan(folds, k, seed, stratified=False)


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------

def cmd_extract(args):
    manifest = parse_manifest(args.manifest)
    extractor = build_frontend(FrontEndSpec(args.arch, args.capacity, args.seed))
    rows = _map_rows(_cnn_row, manifest, args.workers, extractor)
    values = np.stack(rows) if rows else np.empty((0, extractor.dim), dtype=np.float32)
    write_cache(FeatureSet(args.arch, args.capacity, args.seed, manifest.clip_ids, values), args.out)
    print(f"wrote {len(rows)} x {extractor.dim} features to {args.out}")


def cmd_mfcc(args):
    manifest = parse_manifest(args.manifest)
    rows = _map_rows(_mfcc_row, manifest, args.workers)
    values = np.stack(rows) if rows else np.empty((0, 120), dtype=np.float32)
    write_cache(FeatureSet(MFCC, "S", 0, manifest.clip_ids, values), args.out)
    print(f"wrote {len(rows)} x 120 MFCC features to {args.out}")


def cmd_evaluate(args):
    manifest = parse_manifest(args.manifest)
    features = read_cache(args.features)
    X = _aligned(features, manifest)
    plan = _plan_from_manifest(manifest, args.seed)
    meta = {
        "dataset": manifest.name,
        "features": f"{features.arch_id}-{features.capacity}",
        "feature_seed": features.seed,
        "seed": args.seed,
    }
    report = cross_validate(X, manifest.labels, plan, args.classifier, DEFAULT_GRID,
                            runs=args.runs, seed=args.seed, metadata=meta)
    report.save(args.report)
    print(f"{args.classifier} on {meta['features']}: mean {report.mean:.4f} "
          f"(std {report.std:.4f} over {report.runs} runs, {report.grid_size} grid points)")


def cmd_grid(args):
    families = [args.classifier] if args.classifier else ["svm", "elm"]
    for fam in families:
        configs = DEFAULT_GRID.configs(fam)
        print(f"# {fam}: {len(configs)} configurations")
        for i, c in enumerate(configs):
            print(f"{fam}\t{i}\t" + ",".join(f"{k}={c[k]}" for k in sorted(c)))


def cmd_stats(args):
    reports = [EvalReport.load(p) for p in args.reports]
    groups = [r.run_means for r in reports]
    if args.test == "ttest":
        if len(groups) != 2:
            raise UsageError("ttest compares exactly two reports")
        t, p = (pooled_t_test if args.pooled else welch_t_test)(*groups)
        print(f"t = {t:.6f}\np = {p:.6g}")
    else:
        if len(groups) < 2:
            raise UsageError("anova needs at least two reports")
        F, p = one_way_anova(*groups)
        print(f"F = {F:.6f}\np = {p:.6g}")
    for path, g in zip(args.reports, groups):
        print(f"{path}\tmean={np.mean(g):.6f}\truns={len(g)}")


def cmd_bn_experiment(args):
    manifest = parse_manifest(args.manifest)
    features = read_cache(args.features)
    X = _aligned(features, manifest)
    y = manifest.labels
    normalizer = None
    if args.in_network and not args.no_bn:
        if features.arch_id != "vgg":
            raise InvalidInputError("--in-network needs features from the vgg front-end")
        extractor = build_frontend(FrontEndSpec("vgg", features.capacity, features.seed))
        mels = np.stack(_map_rows(_logmel_row, manifest, args.workers))
        normalizer = VGGBatchNorm(extractor, mels)
    rows = bn_leakage_experiment(X, y, args.batch_sizes, args.ordering, use_bn=not args.no_bn,
                                 runs=args.runs, seed=args.seed, k=args.folds,
                                 normalizer=normalizer)
    lines = ["batch_size\tordering\tuse_bn\tmean\tstd\taccuracies"]
    for r in rows:
        accs = ",".join(f"{a:.6f}" for a in r["accuracies"])
        lines.append(f"{r['batch_size']}\t{r['ordering']}\t{int(r['use_bn'])}\t"
                     f"{r['mean']:.6f}\t{r['std']:.6f}\t{accs}")
    if len(args.batch_sizes) > 1 and args.runs > 1:
        for name in args.ordering:
            F, p = batch_size_anova(rows, name)
            lines.append(f"# anova over batch sizes ({name}): F = {F:.6f}, p = {p:.6g}")
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    sys.stdout.write(text)


def _class_name(task, c, classes):
    if task == "rhythm":
        return f"tempo{int(round(rhythm_tempi(classes)[c])):03d}"
    return f"profile{c:02d}"


def cmd_synth(args):
    spec = SyntheticSpec(args.task, args.classes, args.clips_per_class, args.seed)
    clips, labels = synth_dataset(spec)
    os.makedirs(args.out, exist_ok=True)
    k = min(args.folds, args.clips_per_class)
    folds = stratified_folds(labels, k, args.seed).assignment if k >= 2 else np.zeros(len(labels), int)
    rows = []
    for w, c, f in zip(clips, labels, folds):
        name = f"{w.source_id}.wav"
        pcm = np.clip(np.round(w.samples.astype(np.float64) * 32768), -32768, 32767).astype(np.int16)
        wavfile.write(os.path.join(args.out, name), w.sample_rate, pcm)
        rows.append(ManifestRow(w.source_id, name, _class_name(args.task, int(c), args.classes), int(f)))
    write_manifest(os.path.join(args.out, "manifest.csv"), rows)
    print(f"wrote {len(rows)} clips and manifest.csv to {args.out}")


def cmd_manifest(args):
    rows = build_manifest(args.dataset, args.root, args.out, args.splits, args.seed)
    print(f"wrote {len(rows)} rows to {args.out}")


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------

def build_parser(default_seed=0):
    p = _Parser(prog="rwcnn", description="Random-CNN audio features with ELM/SVM back-ends.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("extract", help="extract random-CNN features for every clip in a manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--arch", required=True, choices=ARCHITECTURES)
    s.add_argument("--capacity", required=True, type=_capacity, help="s (~120) or l (~3500)")
    s.add_argument("--seed", type=int, default=default_seed)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("mfcc", help="extract the 120-dim MFCC baseline")
    s.add_argument("--manifest", required=True)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_mfcc)

    s = sub.add_parser("evaluate", help="cross-validate a classifier on cached features")
    s.add_argument("--features", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--classifier", required=True, choices=("svm", "elm"))
    s.add_argument("--grid", default="default", choices=("default",))
    s.add_argument("--runs", type=int, default=3)
    s.add_argument("--seed", type=int, default=default_seed)
    s.add_argument("--report", required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("grid", help="list the hyper-parameter grid")
    s.add_argument("--classifier", choices=("svm", "elm"))
    s.set_defaults(func=cmd_grid)

    s = sub.add_parser("stats", help="significance tests over evaluation reports")
    s.add_argument("test", choices=("ttest", "anova"))
    s.add_argument("--reports", nargs="+", required=True)
    s.add_argument("--pooled", action="store_true", help="pooled-variance t-test instead of Welch")
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("bn-experiment", help="batch-normalisation leakage experiment")
    s.add_argument("--features", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--batch-sizes", type=int, nargs="+", default=[2, 10, 50])
    s.add_argument("--ordering", nargs="+", choices=ORDERINGS, default=list(ORDERINGS))
    s.add_argument("--no-bn", action="store_true", help="leave features unnormalised")
    s.add_argument("--in-network", action="store_true",
                   help="normalise vgg pre-activations instead of the final features")
    s.add_argument("--runs", type=int, default=3)
    s.add_argument("--folds", type=int, default=10)
    s.add_argument("--seed", type=int, default=default_seed)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out")
    s.set_defaults(func=cmd_bn_experiment)

    s = sub.add_parser("synth", help="write a synthetic dataset and its manifest")
    s.add_argument("--task", required=True, choices=TASKS)
    s.add_argument("--classes", type=int)
    s.add_argument("--clips-per-class", type=int, default=50)
    s.add_argument("--folds", type=int, default=10)
    s.add_argument("--seed", type=int, default=default_seed)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("manifest", help="build a manifest for a locally supplied benchmark dataset")
    s.add_argument("dataset", choices=DATASETS)
    s.add_argument("--root", required=True)
    s.add_argument("--splits", help="directory with the fault-filtered GTZAN split listings")
    s.add_argument("--seed", type=int, default=default_seed)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_manifest)
    return p


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        parser = build_parser(_default_seed())
        if not argv:
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        if getattr(args, "classes", 0) is None:
            args.classes = len(rhythm_tempi(4)) if args.task == "rhythm" else 10
        if getattr(args, "workers", 1) < 1:
            raise UsageError("--workers must be at least 1")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(name)s: %(message)s")
        args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (InvalidInputError, CorruptionError, ManifestError, OSError) as exc:
        print(f"rwcnn: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
