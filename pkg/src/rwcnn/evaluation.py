"""Fold plans, cross-validated evaluation and the batch-normalisation experiment."""

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from .classifiers import DEFAULT_GRID, Standardizer, grid_search, make_model
from .frontends import VGG_POOLS
from .nn import batch_stat_normalize, conv2d, elu, global_average, max_pool
from .stats import one_way_anova
from ._validation import InvalidInputError, check_2d

logger = logging.getLogger(__name__)

SPLIT_TAGS = ("train", "valid", "test")
INNER_VALID_FRACTION = 0.2
BN_CLASSIFIER = {"kernel": "linear", "C": 2.0}
ORDERINGS = ("class_sorted", "shuffled")


# --------------------------------------------------------------------------
# Fold plans
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class FoldPlan:
    """Either a k-fold assignment (ints ``0..k-1``) or train/valid/test tags."""

    assignment: np.ndarray
    k: int
    seed: int = 0
    stratified: bool = True

    def __post_init__(self):
        a = np.asarray(self.assignment)
        if a.ndim != 1 or len(a) == 0:
            raise InvalidInputError("fold assignment must be a non-empty 1-D array")
        if a.dtype.kind in "iu":
            if a.min() < 0 or a.max() >= self.k:
                raise InvalidInputError(f"fold indices must lie in 0..{self.k - 1}")
        elif not set(a.tolist()) <= set(SPLIT_TAGS):
            raise InvalidInputError(f"split tags must be drawn from {SPLIT_TAGS}")
        object.__setattr__(self, "assignment", a)

    @property
    def is_split(self):
        return self.assignment.dtype.kind not in "iu"

    def __len__(self):
        return len(self.assignment)

    def indices(self, tag):
        return np.flatnonzero(self.assignment == tag)

    def folds(self):
        """Outer evaluation splits as ``(train_idx, test_idx)`` pairs."""
        if self.is_split:
            return [(self.indices("train"), self.indices("test"))]
        return [(np.flatnonzero(self.assignment != f), np.flatnonzero(self.assignment == f))
                for f in range(self.k)]

    def splits(self):
        """Model-selection splits: train/valid for tagged plans, every fold otherwise."""
        if self.is_split:
            return [(self.indices("train"), self.indices("valid"))]
        return self.folds()


def stratified_folds(labels, k, seed=0):
    """Seeded shuffle within each class, then round-robin over folds.

    The round-robin offset carries over between classes so overall fold sizes
    also stay within one of each other.
    """
    labels = np.asarray(labels)
    if k < 2:
        raise InvalidInputError("need at least two folds")
    classes, counts = np.unique(labels, return_counts=True)
    small = classes[counts < k]
    if len(small):
        raise InvalidInputError(f"classes {small.tolist()} have fewer than k={k} members")
    rng = np.random.default_rng(seed)
    assignment = np.empty(len(labels), dtype=np.int64)
    offset = 0
    for c in classes:
        members = rng.permutation(np.flatnonzero(labels == c))
        assignment[members] = (offset + np.arange(len(members))) % k
        offset = (offset + len(members)) % k
    return FoldPlan(assignment, k, seed, True)


def split_plan(tags, seed=0):
    return FoldPlan(np.asarray(tags, dtype=object).astype(str), 3, seed, False)


def inner_validation_plan(labels, fraction=INNER_VALID_FRACTION, seed=0):
    """Stratified train/valid carve-out used for grid search inside a fold."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    tags = np.full(len(labels), "train", dtype="<U5")
    for c in np.unique(labels):
        members = rng.permutation(np.flatnonzero(labels == c))
        n_valid = int(round(fraction * len(members)))
        if len(members) >= 2:
            n_valid = min(max(n_valid, 1), len(members) - 1)
        else:
            n_valid = 0
        tags[members[:n_valid]] = "valid"
    return FoldPlan(tags, 3, seed, True)


def accuracy(pred, truth):
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise InvalidInputError(f"length mismatch: {pred.shape} vs {truth.shape}")
    if len(truth) == 0:
        raise InvalidInputError("accuracy of an empty prediction set")
    return float(np.mean(pred == truth))


# --------------------------------------------------------------------------
# Reports
# --------------------------------------------------------------------------

@dataclass
class EvalReport:
    fold_accuracies: list
    best_params: list = field(default_factory=list)
    scaler_checksums: list = field(default_factory=list)
    grid_size: int = 0
    metadata: dict = field(default_factory=dict)
    grid_points: list = field(default_factory=list)

    @property
    def runs(self):
        return len(self.fold_accuracies)

    @property
    def run_means(self):
        return [float(np.mean(r)) for r in self.fold_accuracies]

    @property
    def mean(self):
        return float(np.mean(np.concatenate([np.asarray(r, dtype=float) for r in self.fold_accuracies])))

    @property
    def std(self):
        """Spread of the per-run mean accuracies."""
        return float(np.std(self.run_means))

    def to_text(self):
        lines = ["# rwcnn evaluation report"]
        for key in sorted(self.metadata):
            lines.append(f"{key} = {self.metadata[key]}")
        lines += [
            f"runs = {self.runs}",
            f"grid_size = {self.grid_size}",
        ]
        lines += [f"grid_point.{i} = {_format_params(p)}" for i, p in enumerate(self.grid_points)]
        lines += [
            f"mean = {self.mean:.6f}",
            f"std = {self.std:.6f}",
            "",
            "run\tfold\taccuracy\tbest_params\tscaler_checksum",
        ]
        for r, accs in enumerate(self.fold_accuracies):
            for f, acc in enumerate(accs):
                params = self.best_params[r][f] if self.best_params else {}
                check = self.scaler_checksums[r][f][:16] if self.scaler_checksums else ""
                lines.append(f"{r}\t{f}\t{acc:.6f}\t{_format_params(params)}\t{check}")
        return "\n".join(lines) + "\n"

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["run", "fold", "accuracy"])
        for r, accs in enumerate(self.fold_accuracies):
            for f, acc in enumerate(accs):
                w.writerow([r, f, f"{acc:.6f}"])
        return buf.getvalue()

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())
        with open(_csv_path(path), "w", encoding="utf-8") as fh:
            fh.write(self.to_csv())

    @classmethod
    def from_text(cls, text):
        metadata, rows = {}, {}
        in_table = False
        for line in text.splitlines():
            if not line.strip() or line.startswith("#"):
                continue
            if line.startswith("run\tfold"):
                in_table = True
                continue
            if in_table:
                r, f, acc = line.split("\t")[:3]
                rows.setdefault(int(r), {})[int(f)] = float(acc)
            else:
                key, _, value = line.partition(" = ")
                metadata[key.strip()] = value.strip()
        fold_acc = [[rows[r][f] for f in sorted(rows[r])] for r in sorted(rows)]
        grid_size = int(metadata.pop("grid_size", 0))
        points = sorted((int(k.split(".", 1)[1]), metadata.pop(k))
                        for k in list(metadata) if k.startswith("grid_point."))
        for key in ("runs", "mean", "std"):
            metadata.pop(key, None)
        return cls(fold_acc, grid_size=grid_size, metadata=metadata,
                   grid_points=[_parse_params(v) for _, v in points])

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())


def _csv_path(path):
    path = str(path)
    stem = path[:-4] if path.endswith(".txt") else path
    return stem + ".csv"


def _format_params(params):
    return ",".join(f"{k}={params[k]}" for k in sorted(params))


def _parse_value(text):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def _parse_params(text):
    if not text:
        return {}
    return {k: _parse_value(v) for k, v in (item.split("=", 1) for item in text.split(","))}


# --------------------------------------------------------------------------
# Cross-validation
# --------------------------------------------------------------------------

def _fit_and_score(X, y, train, test, family, grid, configs, seed, inner_seed):
    if len(configs) == 1:
        best = dict(configs[0])
    elif len(set(np.unique(y[train]))) < 2:
        raise InvalidInputError("training fold has a single class")
    else:
        inner = inner_validation_plan(y[train], seed=inner_seed)
        if len(inner.indices("valid")) == 0:
            # too few clips per class to hold any out: every config ties
            logger.warning("training fold too small for a validation carve-out; using %s", configs[0])
            best = dict(configs[0])
        else:
            best, _ = grid_search(X[train], y[train], inner, family, grid, seed=seed, configs=configs)
    model = make_model(family, best, seed).fit(X[train], y[train])
    scaler = model.named_steps["standardize"]
    # leakage guard: the scaler must match one fitted on the training rows alone
    reference = Standardizer().fit(X[train])
    if scaler.checksum != reference.checksum:
        raise AssertionError("standardizer statistics differ from training-fold statistics")
    acc = accuracy(model.predict(X[test]), y[test])
    return acc, best, scaler.checksum


def cross_validate(features, labels, plan, family, grid=DEFAULT_GRID, runs=3, seed=0,
                   configs=None, metadata=None):
    """Evaluate ``family`` on ``plan``, repeated over ``runs`` classifier seeds.

    k-fold plans: per fold, the grid is searched on a stratified 20 % carve-out
    of the training folds, then the best configuration is refit on all
    training folds and scored on the held-out fold.  Tagged plans: the grid is
    searched on ``valid``, the model fit on ``train``, scored on ``test``.
    """
    X = check_2d(features)
    y = np.asarray(labels)
    if len(y) != X.shape[0] or len(plan) != X.shape[0]:
        raise InvalidInputError("features, labels and fold plan disagree in length")
    if configs is None:
        configs = grid.configs(family)
    if not configs:
        raise InvalidInputError("empty hyper-parameter grid")
    fold_acc, params, checks = [], [], []
    for r in range(runs):
        run_seed = seed + r
        accs, bests, sums = [], [], []
        if plan.is_split:
            train, test = plan.folds()[0]
            if len(configs) == 1:
                best = dict(configs[0])
            else:
                best, _ = grid_search(X, y, plan, family, grid, seed=run_seed, configs=configs)
            acc, best, check = _fit_and_score(X, y, train, test, family, grid, [best], run_seed, None)
            accs.append(acc)
            bests.append(best)
            sums.append(check)
        else:
            for f, (train, test) in enumerate(plan.folds()):
                acc, best, check = _fit_and_score(
                    X, y, train, test, family, grid, configs, run_seed, [run_seed, f])
                accs.append(acc)
                bests.append(best)
                sums.append(check)
        logger.info("run %d: mean accuracy %.4f", r, np.mean(accs))
        fold_acc.append(accs)
        params.append(bests)
        checks.append(sums)
    meta = {"classifier": family}
    meta.update(metadata or {})
    return EvalReport(fold_acc, params, checks, len(configs), meta, [dict(c) for c in configs])


# --------------------------------------------------------------------------
# Batch-normalisation leakage
# --------------------------------------------------------------------------

def batch_order(labels, ordering, rng):
    """Clip order used to fill consecutive batches."""
    labels = np.asarray(labels)
    if ordering == "shuffled":
        return rng.permutation(len(labels))
    if ordering == "class_sorted":
        perm = rng.permutation(len(labels))
        return perm[np.argsort(labels[perm], kind="stable")]
    raise InvalidInputError(f"ordering must be one of {ORDERINGS}, got {ordering!r}")


def batch_slices(n, batch_size):
    """Consecutive batches; a trailing singleton is merged into the previous batch."""
    bounds = list(range(0, n, batch_size)) + [n]
    if len(bounds) > 2 and bounds[-1] - bounds[-2] == 1:
        del bounds[-2]
    return [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])]


def normalize_in_batches(features, order, batch_size):
    """Apply batch statistics batch by batch along ``order``; rows return in input order."""
    F = np.asarray(features, dtype=np.float64)
    out = np.empty_like(F)
    for sl in batch_slices(len(order), batch_size):
        idx = order[sl]
        out[idx] = batch_stat_normalize(F[idx])
    return out


class VGGBatchNorm:
    """Batch-normalised VGG features, the setting in which the leakage shows up.

    The extractor's filters are reused, but every convolution output is
    normalised per channel with the statistics of the whole batch (all clips,
    frames and bands) before the ELU.  Front-ends built by
    :func:`~rwcnn.frontends.build_frontend` never do this; the class only
    exists to measure what batch normalisation would do.

    Instances are ``normalizer`` callables for :func:`bn_leakage_experiment`.
    Features are memoised per batch composition, so repeated runs that form
    the same batches cost nothing extra.

    Parameters
    ----------
    extractor : FeatureExtractor
        A ``vgg`` front-end.
    inputs : array (n, 1376, 96)
        Log-mel spectrograms, in dataset order.
    """

    def __init__(self, extractor, inputs):
        if extractor.spec.arch_id != "vgg":
            raise InvalidInputError("batch-normalised features are only defined for the vgg front-end")
        self.extractor = extractor
        self.inputs = inputs
        self._memo = {}

    def batch_features(self, idx):
        f = self.extractor.filters
        hs = [self.extractor._check_input(self.inputs[i])[None] for i in idx]
        out = [[] for _ in idx]
        for layer, pool in enumerate(VGG_POOLS):
            z = np.stack([conv2d(h, f[f"conv{layer + 1}"]) for h in hs])
            # one channel at a time keeps the float64 temporaries small
            for c in range(z.shape[1]):
                z[:, c] = batch_stat_normalize(z[:, c], axis=(0, 1, 2))
            hs = [max_pool(elu(zz), pool) for zz in z]
            for o, h in zip(out, hs):
                o.append(global_average(h))
        return np.array([np.concatenate(o) for o in out], dtype=np.float32)

    def __call__(self, order, batch_size):
        F = np.empty((len(order), self.extractor.dim), dtype=np.float32)
        for sl in batch_slices(len(order), batch_size):
            idx = tuple(sorted(int(i) for i in order[sl]))
            if idx not in self._memo:
                self._memo[idx] = self.batch_features(idx)
            F[list(idx)] = self._memo[idx]
        return F


def bn_leakage_experiment(features, labels, batch_sizes, ordering=ORDERINGS, use_bn=True,
                          runs=3, seed=0, k=10, normalizer=None):
    """Accuracy of a fixed linear SVM (C=2) when features depend on batch mates.

    Parameters
    ----------
    features : array (n, dim)
        Features computed clip by clip (no batch dependence).
    batch_sizes : iterable of int
    ordering : str or sequence of str
        ``"class_sorted"`` fills batches class by class, ``"shuffled"`` uses a
        seeded random order.
    use_bn : bool
        When false, features are passed through unchanged.
    normalizer : callable, optional
        ``normalizer(order, batch_size) -> features`` replacing the default
        per-batch normalisation of ``features`` (used for normalising inside
        the network rather than at the feature level).

    Returns
    -------
    list of dict
        One row per (batch_size, ordering): per-run accuracies, mean, std.
    """
    X = np.asarray(features)
    y = np.asarray(labels)
    orderings = (ordering,) if isinstance(ordering, str) else tuple(ordering)
    batch_sizes = [int(b) for b in batch_sizes]
    if use_bn and min(batch_sizes) < 2:
        raise InvalidInputError("batch normalisation needs batch size >= 2")
    rows = []
    for bs in batch_sizes:
        for name in orderings:
            accs = []
            for r in range(runs):
                run_seed = seed + r
                order = batch_order(y, name, np.random.default_rng([run_seed, bs]))
                if not use_bn:
                    Xr = X
                elif normalizer is not None:
                    Xr = normalizer(order, bs)
                else:
                    Xr = normalize_in_batches(X, order, bs)
                plan = stratified_folds(y, k, seed=run_seed)
                report = cross_validate(Xr, y, plan, "svm", runs=1, seed=run_seed,
                                        configs=[dict(BN_CLASSIFIER)])
                accs.append(report.mean)
            rows.append({
                "batch_size": bs, "ordering": name, "use_bn": bool(use_bn),
                "accuracies": accs, "mean": float(np.mean(accs)), "std": float(np.std(accs)),
            })
    return rows


def batch_size_anova(rows, ordering=None):
    """ANOVA across batch sizes of the per-run accuracies in ``rows``."""
    groups = [r["accuracies"] for r in rows if ordering is None or r["ordering"] == ordering]
    return one_way_anova(*groups)
