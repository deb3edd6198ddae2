"""Back-end classifiers: feature standardisation, ELM and one-vs-rest SMO SVM.

All three follow the scikit-learn estimator protocol so they compose with
``sklearn.pipeline`` and ``sklearn.base.clone``.
"""

import hashlib
import io
import logging
import struct
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.pipeline import Pipeline

from ._validation import CorruptionError, InvalidInputError, check_2d, check_finite

logger = logging.getLogger(__name__)

PINV_RCOND = 1e-6
SMO_TOL = 1e-3
_TAU = 1e-12


def pseudoinverse(H, rcond=PINV_RCOND):
    """Moore-Penrose inverse via SVD, dropping singular values below ``rcond * s_max``."""
    H = check_finite(np.asarray(H, dtype=np.float64), "matrix")
    if H.ndim != 2:
        raise InvalidInputError(f"pseudoinverse needs a 2-D matrix, got shape {H.shape}")
    if H.size == 0:
        return np.zeros(H.shape[::-1])
    U, s, Vt = np.linalg.svd(H, full_matrices=False)
    keep = s > rcond * s.max() if s.max() > 0 else np.zeros_like(s, dtype=bool)
    inv = np.zeros_like(s)
    inv[keep] = 1.0 / s[keep]
    return (Vt.T * inv) @ U.T


# --------------------------------------------------------------------------
# Standardisation
# --------------------------------------------------------------------------

class Standardizer(TransformerMixin, BaseEstimator):
    """Per-dimension z-scoring with training statistics; constant columns get scale 1."""

    def fit(self, X, y=None):
        X = check_2d(X)
        self.mean_ = X.mean(axis=0)
        scale = X.std(axis=0)
        scale[scale == 0] = 1.0
        self.scale_ = scale
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        X = check_2d(X)
        if X.shape[1] != self.n_features_in_:
            raise InvalidInputError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return (X - self.mean_) / self.scale_

    @property
    def checksum(self):
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.mean_).tobytes())
        h.update(np.ascontiguousarray(self.scale_).tobytes())
        return h.hexdigest()


def standardize_fit(X_train):
    return Standardizer().fit(X_train)


def standardize_apply(s, X):
    return s.transform(X)


def _encode_labels(y):
    y = np.asarray(y)
    if y.ndim != 1 or len(y) == 0:
        raise InvalidInputError("labels must be a non-empty 1-D sequence")
    classes, encoded = np.unique(y, return_inverse=True)
    if len(classes) < 2:
        raise InvalidInputError("training needs at least two classes")
    return classes, encoded


# --------------------------------------------------------------------------
# Extreme learning machine
# --------------------------------------------------------------------------

def _augment(X):
    return np.hstack([X, np.ones((X.shape[0], 1))])


class ELMClassifier(ClassifierMixin, BaseEstimator):
    """Single hidden ReLU layer with frozen Uniform(-1, 1) input weights.

    The output weights are the least-squares solution ``W2 = (H^T)^+ Y`` where
    ``H = relu(W1 [X; 1]^T)`` is the hidden activation matrix (hidden x n).

    Hidden activations and scores are computed row by row (einsum, no BLAS
    blocking), so scoring a batch gives bit-identical results to scoring each
    row alone.
    """

    def __init__(self, n_hidden=100, random_state=0):
        self.n_hidden = n_hidden
        self.random_state = random_state

    def _hidden(self, X):
        X = check_2d(X)
        if X.shape[1] != self.n_features_in_:
            raise InvalidInputError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return np.maximum(np.einsum("ij,kj->ik", _augment(X), self.W1_, optimize=False), 0.0)

    def fit(self, X, y):
        X = check_2d(X)
        self.classes_, encoded = _encode_labels(y)
        if len(encoded) != X.shape[0]:
            raise InvalidInputError("X and y have different lengths")
        Y = np.eye(len(self.classes_))[encoded]
        return self._fit_targets(X, Y)

    def _fit_targets(self, X, Y):
        self.n_features_in_ = X.shape[1]
        rng = np.random.default_rng(self.random_state)
        self.W1_ = rng.uniform(-1.0, 1.0, size=(int(self.n_hidden), X.shape[1] + 1))
        HT = self._hidden(X)
        self.W2_ = pseudoinverse(HT) @ Y
        return self

    def hidden_matrix(self, X):
        """``H`` in hidden x n orientation."""
        return self._hidden(X).T

    def decision_function(self, X):
        return np.einsum("ij,jk->ik", self._hidden(X), self.W2_, optimize=False)

    def predict(self, X):
        # np.argmax breaks ties toward the lowest class index
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]


def elm_train(X, Y, hidden, seed=0):
    """Fit an ELM from one-hot targets ``Y`` (n x classes)."""
    X = check_2d(X)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim != 2 or Y.shape[0] != X.shape[0]:
        raise InvalidInputError("Y must be an n x classes one-hot matrix")
    if np.count_nonzero(Y.sum(axis=0)) < 2:
        raise InvalidInputError("training needs at least two classes")
    m = ELMClassifier(n_hidden=hidden, random_state=seed)
    m.classes_ = np.arange(Y.shape[1])
    return m._fit_targets(X, Y)


def elm_predict(m, X):
    return m.predict(X)


# --------------------------------------------------------------------------
# SMO support vector machine
# --------------------------------------------------------------------------

def kernel_matrix(A, B, kernel="linear", gamma=None):
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if kernel == "linear":
        return A @ B.T
    if kernel == "rbf":
        sq = (A * A).sum(axis=1)[:, None] + (B * B).sum(axis=1)[None, :] - 2.0 * (A @ B.T)
        return np.exp(-gamma * np.maximum(sq, 0.0))
    raise InvalidInputError(f"unknown kernel {kernel!r}")


@njit(cache=True)
def _smo_loop(K, y, C, tol, max_iter, alpha, v):
    """Second-order working-set SMO iterations; updates ``alpha`` and ``v = y * grad`` in place.

    Returns ``(n_iter, converged)``.
    """
    n = len(y)
    it = 0
    best_gap = np.inf
    stall = 0
    while it < max_iter:
        gmax = -np.inf
        i = -1
        for t in range(n):
            if (y[t] > 0 and alpha[t] < C) or (y[t] < 0 and alpha[t] > 0):
                if -v[t] >= gmax:
                    gmax = -v[t]
                    i = t
        if i == -1:
            return it, True
        gmax2 = -np.inf
        j = -1
        best = np.inf
        for t in range(n):
            if (y[t] > 0 and alpha[t] > 0) or (y[t] < 0 and alpha[t] < C):
                if v[t] >= gmax2:
                    gmax2 = v[t]
                grad_diff = gmax + v[t]
                if grad_diff > 0:
                    quad = K[i, i] + K[t, t] - 2.0 * K[i, t]
                    if quad <= 0:
                        quad = _TAU
                    obj = -(grad_diff * grad_diff) / quad
                    if obj <= best:
                        best = obj
                        j = t
        if gmax + gmax2 < tol or j == -1:
            return it, True
        # give up after 10 n iterations without a new smallest violation
        if gmax + gmax2 < best_gap:
            best_gap = gmax + gmax2
            stall = 0
        else:
            stall += 1
            if stall >= 10 * n:
                return it, False

        ai = alpha[i]
        aj = alpha[j]
        Gi = y[i] * v[i]
        Gj = y[j] * v[j]
        Qij = y[i] * y[j] * K[i, j]
        if y[i] != y[j]:
            qc = K[i, i] + K[j, j] + 2.0 * Qij
            if qc <= 0:
                qc = _TAU
            delta = (-Gi - Gj) / qc
            diff = ai - aj
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            elif alpha[i] < 0:
                alpha[i] = 0.0
                alpha[j] = -diff
            if diff > 0:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = C - diff
            elif alpha[j] > C:
                alpha[j] = C
                alpha[i] = C + diff
        else:
            qc = K[i, i] + K[j, j] - 2.0 * Qij
            if qc <= 0:
                qc = _TAU
            delta = (Gi - Gj) / qc
            total = ai + aj
            alpha[i] -= delta
            alpha[j] += delta
            if total > C:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = total - C
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = total - C
            else:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = total
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = total
        di = y[i] * (alpha[i] - ai)
        dj = y[j] * (alpha[j] - aj)
        for t in range(n):
            v[t] += K[i, t] * di + K[j, t] * dj
        it += 1
    return it, False


def smo_solve(K, y, C, tol=SMO_TOL, max_iter=None):
    """Solve the binary soft-margin dual with second-order working-set selection.

    Minimises ``0.5 a^T Q a - sum(a)`` with ``Q = (y y^T) * K``, ``0 <= a <= C``
    and ``y^T a = 0``.  Stops once the maximal KKT violation drops below
    ``tol``.

    Returns
    -------
    alpha : ndarray
    rho : float
        Decision function is ``sum_i alpha_i y_i K(x_i, x) - rho``.
    n_iter : int
    """
    y = np.ascontiguousarray(y, dtype=np.float64)
    K = np.ascontiguousarray(K, dtype=np.float64)
    n = len(y)
    if max_iter is None:
        max_iter = max(10_000_000, 100 * n)
    alpha = np.zeros(n)
    v = -y.copy()
    it, converged = _smo_loop(K, y, float(C), float(tol), int(max_iter), alpha, v)
    if not converged:
        logger.warning("SMO stopped after %d iterations without reaching the KKT tolerance", it)

    pos = y > 0
    free = (alpha > 0) & (alpha < C)
    if free.any():
        rho = v[free].mean()
    else:
        at_upper = alpha >= C
        ub_set = np.where(at_upper, ~pos, pos)
        lb_set = np.where(at_upper, pos, ~pos)
        ub = v[ub_set].min() if ub_set.any() else np.inf
        lb = v[lb_set].max() if lb_set.any() else -np.inf
        rho = 0.5 * (ub + lb) if np.isfinite(ub) and np.isfinite(lb) else (ub if np.isfinite(ub) else lb)
    return alpha, float(rho), it


class SVMClassifier(ClassifierMixin, BaseEstimator):
    """One-vs-rest soft-margin SVM trained with SMO.

    Parameters
    ----------
    kernel : {"linear", "rbf"}
    C : float
        Box constraint on every dual coefficient.
    gamma : float or "auto"
        RBF width; ``"auto"`` means ``1 / n_features``.
    tol : float
        KKT violation tolerance.
    """

    def __init__(self, kernel="linear", C=1.0, gamma="auto", tol=SMO_TOL):
        self.kernel = kernel
        self.C = C
        self.gamma = gamma
        self.tol = tol

    def _gamma(self, n_features):
        if self.kernel != "rbf":
            return None
        if self.gamma in (None, "auto"):
            return 1.0 / n_features
        return float(self.gamma)

    def fit(self, X, y):
        X = check_2d(X)
        self.classes_, encoded = _encode_labels(y)
        if len(encoded) != X.shape[0]:
            raise InvalidInputError("X and y have different lengths")
        if self.C <= 0:
            raise InvalidInputError("C must be positive")
        self.n_features_in_ = X.shape[1]
        self.gamma_ = self._gamma(X.shape[1])
        K = kernel_matrix(X, X, self.kernel, self.gamma_)
        # a two-class problem is a single binary machine; otherwise one per class
        targets = [1] if len(self.classes_) == 2 else range(len(self.classes_))
        alphas, rhos, signs = [], [], []
        for c in targets:
            yb = np.where(encoded == c, 1.0, -1.0)
            alpha, rho, _ = smo_solve(K, yb, float(self.C), self.tol)
            alphas.append(alpha)
            rhos.append(rho)
            signs.append(yb)
        self.binary_alphas_ = np.array(alphas)
        self.binary_targets_ = np.array(signs)
        support = np.flatnonzero(np.any(self.binary_alphas_ > 0, axis=0))
        self.support_ = support
        self.support_vectors_ = X[support]
        self.dual_coef_ = (self.binary_alphas_ * self.binary_targets_)[:, support]
        self.intercept_ = -np.array(rhos)
        return self

    def decision_function(self, X):
        X = check_2d(X)
        if X.shape[1] != self.n_features_in_:
            raise InvalidInputError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        K = kernel_matrix(X, self.support_vectors_, self.kernel, self.gamma_)
        scores = K @ self.dual_coef_.T + self.intercept_
        return scores[:, 0] if len(self.classes_) == 2 else scores

    def predict(self, X):
        scores = self.decision_function(X)
        if scores.ndim == 1:
            return self.classes_[(scores > 0).astype(int)]
        return self.classes_[np.argmax(scores, axis=1)]


def svm_train(X, y, kernel="linear", C=1.0, gamma="auto"):
    return SVMClassifier(kernel=kernel, C=C, gamma=gamma).fit(X, y)


# --------------------------------------------------------------------------
# Hyper-parameter grids
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class HyperGrid:
    svm_gammas: tuple = (2.0 ** -3, 2.0 ** -5, 2.0 ** -7, 2.0 ** -9, 2.0 ** -11, 2.0 ** -13, "auto")
    svm_Cs: tuple = (0.1, 2.0, 8.0, 32.0)
    elm_hidden: tuple = (100, 250, 500, 1200, 1800, 2500)
    svm_kernels: tuple = field(default=("linear", "rbf"))

    def configs(self, family):
        """Parameter dicts in declared order (linear before rbf, gamma-major)."""
        if family == "elm":
            return [{"n_hidden": h} for h in self.elm_hidden]
        if family == "svm":
            out = []
            if "linear" in self.svm_kernels:
                out += [{"kernel": "linear", "C": c} for c in self.svm_Cs]
            if "rbf" in self.svm_kernels:
                out += [{"kernel": "rbf", "gamma": g, "C": c} for g in self.svm_gammas for c in self.svm_Cs]
            return out
        raise InvalidInputError(f"unknown classifier family {family!r}")


DEFAULT_GRID = HyperGrid()


def make_model(family, params, seed=0):
    """Standardizer + classifier pipeline for one grid point."""
    if family == "elm":
        clf = ELMClassifier(random_state=seed, **params)
    elif family == "svm":
        clf = SVMClassifier(**params)
    else:
        raise InvalidInputError(f"unknown classifier family {family!r}")
    return Pipeline([("standardize", Standardizer()), ("clf", clf)])


def grid_search(features, labels, fold_plan, family, grid=DEFAULT_GRID, seed=0, configs=None):
    """Score every grid point on ``fold_plan`` and return the best.

    For a train/valid split the score is validation accuracy; for a k-fold
    plan it is the mean accuracy over folds.  Ties go to the earliest
    configuration in declared order.

    Returns
    -------
    best : dict
    scores : list of (dict, float)
    """
    X = check_2d(features)
    y = np.asarray(labels)
    if configs is None:
        configs = grid.configs(family)
    if not configs:
        raise InvalidInputError("empty hyper-parameter grid")
    splits = list(fold_plan.splits())
    scores = []
    for params in configs:
        accs = []
        for train, valid in splits:
            model = make_model(family, params, seed).fit(X[train], y[train])
            accs.append(float(np.mean(model.predict(X[valid]) == y[valid])))
        scores.append((dict(params), float(np.mean(accs))))
    best = max(range(len(scores)), key=lambda k: (scores[k][1], -k))
    return dict(scores[best][0]), scores


# --------------------------------------------------------------------------
# Model serialisation
# --------------------------------------------------------------------------

MODEL_MAGIC = b"RWCM"
MODEL_VERSION = 1
_FAMILY_TAGS = {"elm": 0, "svm": 1}
_KERNEL_TAGS = {"linear": 0, "rbf": 1}


def _write_f32(buf, a):
    buf.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def _write_classes(buf, classes):
    is_int = np.issubdtype(np.asarray(classes).dtype, np.integer)
    buf.write(struct.pack("<BI", 0 if is_int else 1, len(classes)))
    for c in classes:
        raw = str(int(c) if is_int else c).encode("utf-8")
        buf.write(struct.pack("<H", len(raw)) + raw)


def save_model(model, path):
    """Write a fitted ELM or SVM (bare or as the last step of a pipeline)."""
    steps = model.steps if isinstance(model, Pipeline) else [("clf", model)]
    clf = steps[-1][1]
    scaler = steps[0][1] if len(steps) > 1 else None
    family = "elm" if isinstance(clf, ELMClassifier) else "svm"
    buf = io.BytesIO()
    buf.write(MODEL_MAGIC + struct.pack("<II", MODEL_VERSION, _FAMILY_TAGS[family]))
    dim = clf.n_features_in_
    buf.write(struct.pack("<IB", dim, scaler is not None))
    if scaler is not None:
        _write_f32(buf, scaler.mean_)
        _write_f32(buf, scaler.scale_)
    _write_classes(buf, clf.classes_)
    if family == "elm":
        buf.write(struct.pack("<Iq", clf.W1_.shape[0], int(clf.random_state or 0)))
        _write_f32(buf, clf.W1_)
        _write_f32(buf, clf.W2_)
    else:
        n_bin, n_sv = clf.dual_coef_.shape
        buf.write(struct.pack("<IddII", _KERNEL_TAGS[clf.kernel], float(clf.C),
                              float(clf.gamma_ or 0.0), n_bin, n_sv))
        _write_f32(buf, clf.support_vectors_)
        _write_f32(buf, clf.dual_coef_)
        _write_f32(buf, clf.intercept_)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CorruptionError("model file truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def f32(self, *shape):
        n = int(np.prod(shape))
        return np.frombuffer(self.take(4 * n), dtype="<f4").astype(np.float64).reshape(shape)


def load_model(path):
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    if r.take(4) != MODEL_MAGIC:
        raise CorruptionError("not an RWCM model file")
    version, tag = r.unpack("<II")
    if version != MODEL_VERSION or tag not in _FAMILY_TAGS.values():
        raise CorruptionError(f"unsupported model version {version} / family {tag}")
    dim, has_scaler = r.unpack("<IB")
    scaler = None
    if has_scaler:
        scaler = Standardizer()
        scaler.mean_ = r.f32(dim)
        scaler.scale_ = r.f32(dim)
        scaler.n_features_in_ = dim
    kind, n_classes = r.unpack("<BI")
    labels = [r.take(r.unpack("<H")[0]).decode("utf-8") for _ in range(n_classes)]
    classes = np.array([int(v) for v in labels]) if kind == 0 else np.array(labels)
    if tag == 0:
        hidden, seed = r.unpack("<Iq")
        clf = ELMClassifier(n_hidden=hidden, random_state=seed)
        clf.W1_ = r.f32(hidden, dim + 1)
        clf.W2_ = r.f32(hidden, n_classes)
    else:
        ktag, C, gamma, n_bin, n_sv = r.unpack("<IddII")
        kernel = {v: k for k, v in _KERNEL_TAGS.items()}[ktag]
        clf = SVMClassifier(kernel=kernel, C=C, gamma=gamma if kernel == "rbf" else "auto")
        clf.gamma_ = gamma if kernel == "rbf" else None
        clf.support_vectors_ = r.f32(n_sv, dim)
        clf.dual_coef_ = r.f32(n_bin, n_sv)
        clf.intercept_ = r.f32(n_bin)
    if r.pos != len(r.data):
        raise CorruptionError("trailing bytes after model payload")
    clf.classes_ = classes
    clf.n_features_in_ = dim
    if scaler is None:
        return clf
    return Pipeline([("standardize", scaler), ("clf", clf)])


__all__ = [
    "pseudoinverse", "Standardizer", "standardize_fit", "standardize_apply",
    "ELMClassifier", "elm_train", "elm_predict", "SVMClassifier", "svm_train",
    "smo_solve", "kernel_matrix", "HyperGrid", "DEFAULT_GRID", "make_model",
    "grid_search", "save_model", "load_model",
]
