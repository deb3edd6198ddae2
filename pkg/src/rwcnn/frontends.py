"""Randomly weighted CNN front-ends and the feature vectors they emit.

Each front-end is built once from ``(arch, capacity, seed)`` and is then an
immutable function from one clip to one feature vector: the global average
of every feature map in every averaged layer, concatenated in layer order,
then filter-shape order, then channel order.
"""

from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator, TransformerMixin

from . import dsp
from .nn import (SeededRng, conv1d, conv2d, elu, global_average, init_filters,
                 max_pool, relu, residual_add)
from ._validation import InvalidInputError

ARCHITECTURES = (
    "sample_level", "frame_level", "frame_level_many", "v7x96", "v7x86",
    "timbral", "temporal", "time", "timbral_temporal", "timbral_time", "vgg",
)
MFCC = "mfcc"
ARCH_CODES = {name: i for i, name in enumerate(ARCHITECTURES + (MFCC,))}
CAPACITIES = ("S", "L")
CAPACITY_CODES = {"S": 0, "L": 1}

WAVEFORM, LOGMEL, ENVELOPE = "waveform", "logmel", "envelope"

FRAME_LENGTHS = (512, 256, 128, 64, 32)
FRAME_STRIDE = 32
TIMBRAL_SHAPES = ((7, 86), (3, 86), (1, 86), (7, 38), (3, 38), (1, 38))
TEMPORAL_LENGTHS = (165, 128, 64, 32)
TIME_LENGTHS = (64, 32, 16, 8)
VGG_POOLS = ((4, 2), (4, 3), (5, 2), (4, 2), (4, 4))

# Filters per group.  Keys name the groups each architecture allocates;
# totals land on ~120 (S) and ~3500 (L) feature maps.
ALLOCATION = {
    "S": {
        "sample_level": {"block": 17},
        "frame_level": {"front": 30, "deep": 30},
        "frame_level_many": {"front": 12, "deep": 20},
        "v7x96": {"conv": 120},
        "v7x86": {"conv": 120},
        "timbral": {"timbral": 20},
        "temporal": {"temporal": 30},
        "time": {"temporal": 30},
        "timbral_temporal": {"timbral": 10, "temporal": 15},
        "timbral_time": {"timbral": 10, "temporal": 15},
        "vgg": {"block": 24},
    },
    "L": {
        "sample_level": {"block": 500},
        "frame_level": {"front": 875, "deep": 875},
        "frame_level_many": {"front": 175, "deep": 875},
        "v7x96": {"conv": 3500},
        "v7x86": {"conv": 3500},
        "timbral": {"timbral": 583},
        "temporal": {"temporal": 875},
        "time": {"temporal": 875},
        "timbral_temporal": {"timbral": 292, "temporal": 437},
        "timbral_time": {"timbral": 292, "temporal": 437},
        "vgg": {"block": 700},
    },
}


def _dimension(arch, alloc):
    if arch == "sample_level":
        return 7 * alloc["block"]
    if arch == "frame_level":
        return alloc["front"] + 3 * alloc["deep"]
    if arch == "frame_level_many":
        return len(FRAME_LENGTHS) * alloc["front"] + 3 * alloc["deep"]
    if arch in ("v7x96", "v7x86"):
        return alloc["conv"]
    if arch == "vgg":
        return len(VGG_POOLS) * alloc["block"]
    dim = 0
    if "timbral" in alloc:
        dim += len(TIMBRAL_SHAPES) * alloc["timbral"]
    if "temporal" in alloc:
        dim += len(TEMPORAL_LENGTHS) * alloc["temporal"]
    return dim


@dataclass(frozen=True)
class FrontEndSpec:
    arch_id: str
    capacity: str = "S"
    seed: int = 0
    allocation: dict = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.arch_id not in ARCHITECTURES and self.arch_id != MFCC:
            raise InvalidInputError(f"unknown architecture {self.arch_id!r}")
        cap = str(self.capacity).upper()
        if cap not in CAPACITIES:
            raise InvalidInputError(f"capacity must be S or L, got {self.capacity!r}")
        object.__setattr__(self, "capacity", cap)
        if self.allocation is None and self.arch_id != MFCC:
            object.__setattr__(self, "allocation", dict(ALLOCATION[cap][self.arch_id]))


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    arch_id: str
    capacity: str
    clip_id: str = ""
    seed: int = 0

    @property
    def dim(self):
        return len(self.values)


def feature_dimension(spec):
    """Feature-vector length for ``spec`` without building any filters."""
    if isinstance(spec, str):
        spec = FrontEndSpec(spec)
    if spec.arch_id == MFCC:
        return 2 * 3 * dsp.N_MFCC
    return _dimension(spec.arch_id, spec.allocation)


def input_kind(arch):
    if arch in ("sample_level", "frame_level", "frame_level_many"):
        return WAVEFORM
    if arch in ("temporal", "time"):
        return ENVELOPE
    return LOGMEL


class FeatureExtractor:
    """A built front-end.  ``filters`` maps layer names to frozen filter banks."""

    def __init__(self, spec, filters, forward):
        self.spec = spec
        self.filters = filters
        self._forward = forward
        self.input_kind = input_kind(spec.arch_id)
        self.dim = feature_dimension(spec)

    def __repr__(self):
        return f"FeatureExtractor({self.spec.arch_id!r}, {self.spec.capacity!r}, seed={self.spec.seed})"

    def prepare_input(self, waveform):
        """Map a prepared waveform to this front-end's input representation."""
        x = dsp._check_prepared(waveform)
        if self.input_kind == WAVEFORM:
            return np.asarray(x, dtype=np.float32)
        spec = dsp.log_mel(x)
        if self.input_kind == ENVELOPE:
            return dsp.energy_envelope(spec)
        return spec

    def _check_input(self, x):
        x = np.asarray(x, dtype=np.float32)
        expected = {
            WAVEFORM: (dsp.CLIP_SAMPLES,),
            LOGMEL: (dsp.N_FRAMES, dsp.N_MELS),
            ENVELOPE: (dsp.N_FRAMES,),
        }[self.input_kind]
        if x.shape != expected:
            raise InvalidInputError(
                f"{self.spec.arch_id} expects {self.input_kind} input of shape {expected}, got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise InvalidInputError("input contains non-finite values")
        return x

    def __call__(self, x):
        averages = self._forward(self.filters, self._check_input(x))
        out = np.concatenate(averages).astype(np.float32)
        assert len(out) == self.dim, (len(out), self.dim)
        return out


# --------------------------------------------------------------------------
# Per-architecture blueprints
# --------------------------------------------------------------------------

class _Builder:
    def __init__(self, spec):
        self.spec = spec
        self.code = ARCH_CODES[spec.arch_id]
        self.filters = {}

    def add(self, name, shape, layer, group=0, stride=1, padding="valid"):
        stream = (self.code << 32) ^ (layer << 8) ^ group
        self.filters[name] = init_filters(shape, SeededRng(self.spec.seed, stream), stride, padding)


def _build_sample_level(b, n):
    b.add("conv1", (n, 1, 3), layer=0, stride=3)
    for i in range(2, 8):
        b.add(f"conv{i}", (n, n, 3), layer=i - 1)

    def forward(f, x):
        h = relu(conv1d(x[None, :], f["conv1"]))
        out = [global_average(h)]
        for i in range(2, 8):
            h = max_pool(relu(conv1d(h, f[f"conv{i}"])), 3, 3)
            out.append(global_average(h))
        return out

    return forward


def _build_frame_deep(b, front_channels, m):
    """Three length-7 layers; the last two residual, max-pool x2 between them."""
    b.add("conv2", (m, front_channels, 7), layer=1, padding="same")
    b.add("conv3", (m, m, 7), layer=2, padding="same")
    b.add("conv4", (m, m, 7), layer=3, padding="same")

    def forward(f, h):
        out = []
        h = relu(conv1d(h, f["conv2"]))
        out.append(global_average(h))
        h = residual_add(h, relu(conv1d(h, f["conv3"])))
        out.append(global_average(h))
        h = max_pool(h, 2, 2)
        h = residual_add(h, relu(conv1d(h, f["conv4"])))
        out.append(global_average(h))
        return out

    return forward


def _build_frame_level(b, front, deep):
    b.add("conv1", (front, 1, 512), layer=0, stride=FRAME_STRIDE)
    tail = _build_frame_deep(b, front, deep)

    def forward(f, x):
        h = relu(conv1d(x[None, :], f["conv1"]))
        return [global_average(h)] + tail(f, h)

    return forward


def _build_frame_level_many(b, front, deep):
    for g, k in enumerate(FRAME_LENGTHS):
        b.add(f"conv1_{k}", (front, 1, k), layer=0, group=g, stride=FRAME_STRIDE, padding="same")
    tail = _build_frame_deep(b, front * len(FRAME_LENGTHS), deep)

    def forward(f, x):
        maps = [relu(conv1d(x[None, :], f[f"conv1_{k}"])) for k in FRAME_LENGTHS]
        h = np.concatenate(maps, axis=0)
        return [global_average(m) for m in maps] + tail(f, h)

    return forward


def _build_v7x96(b, n):
    b.add("conv", (n, dsp.N_MELS, 7), layer=0, padding="same")

    def forward(f, x):
        return [global_average(relu(conv1d(x.T, f["conv"])))]

    return forward


def _build_v7x86(b, n):
    b.add("conv", (n, 1, 7, 86), layer=0, padding=("same", "valid"))

    def forward(f, x):
        h = relu(conv2d(x[None], f["conv"]))
        return [global_average(max_pool(h, (1, h.shape[2])))]

    return forward


def _timbral_branch(b, n, layer=0):
    names = []
    for g, (kt, kf) in enumerate(TIMBRAL_SHAPES):
        name = f"timbral_{kt}x{kf}"
        b.add(name, (n, 1, kt, kf), layer=layer, group=g, padding=("same", "valid"))
        names.append(name)

    def forward(f, spec):
        out = []
        for name in names:
            h = relu(conv2d(spec[None], f[name]))
            # pool width equals the number of frequency positions: 11 or 59
            out.append(global_average(max_pool(h, (1, h.shape[2]))))
        return out

    return forward


def _temporal_branch(b, n, lengths, layer=0, group_offset=0):
    names = []
    for g, k in enumerate(lengths):
        name = f"temporal_{k}"
        b.add(name, (n, 1, k), layer=layer, group=group_offset + g, padding="same")
        names.append(name)

    def forward(f, env):
        return [global_average(relu(conv1d(env[None], f[name]))) for name in names]

    return forward


def _build_timbral(b, n):
    return _timbral_branch(b, n)


def _build_temporal(b, n, lengths):
    return _temporal_branch(b, n, lengths)


def _build_timbral_plus(b, n_timbral, n_temporal, lengths):
    timbral = _timbral_branch(b, n_timbral)
    temporal = _temporal_branch(b, n_temporal, lengths, group_offset=len(TIMBRAL_SHAPES))

    def forward(f, spec):
        env = dsp.energy_envelope(spec)
        return timbral(f, spec) + temporal(f, env)

    return forward


def _build_vgg(b, n):
    for i in range(len(VGG_POOLS)):
        b.add(f"conv{i + 1}", (n, 1 if i == 0 else n, 3, 3), layer=i, padding="same")

    def forward(f, x):
        h = x[None]
        out = []
        for i, pool in enumerate(VGG_POOLS):
            h = max_pool(elu(conv2d(h, f[f"conv{i + 1}"])), pool)
            out.append(global_average(h))
        return out

    return forward


def build_frontend(spec):
    """Draw the random filters for ``spec`` and return an immutable extractor."""
    if isinstance(spec, str):
        spec = FrontEndSpec(spec)
    if spec.arch_id == MFCC:
        raise InvalidInputError("the MFCC baseline has no CNN front-end; use dsp.mfcc_vector")
    a = spec.allocation
    b = _Builder(spec)
    arch = spec.arch_id
    if arch == "sample_level":
        forward = _build_sample_level(b, a["block"])
    elif arch == "frame_level":
        forward = _build_frame_level(b, a["front"], a["deep"])
    elif arch == "frame_level_many":
        forward = _build_frame_level_many(b, a["front"], a["deep"])
    elif arch == "v7x96":
        forward = _build_v7x96(b, a["conv"])
    elif arch == "v7x86":
        forward = _build_v7x86(b, a["conv"])
    elif arch == "timbral":
        forward = _build_timbral(b, a["timbral"])
    elif arch == "temporal":
        forward = _build_temporal(b, a["temporal"], TEMPORAL_LENGTHS)
    elif arch == "time":
        forward = _build_temporal(b, a["temporal"], TIME_LENGTHS)
    elif arch == "timbral_temporal":
        forward = _build_timbral_plus(b, a["timbral"], a["temporal"], TEMPORAL_LENGTHS)
    elif arch == "timbral_time":
        forward = _build_timbral_plus(b, a["timbral"], a["temporal"], TIME_LENGTHS)
    else:
        forward = _build_vgg(b, a["block"])
    return FeatureExtractor(spec, b.filters, forward)


def extract_features(extractor, clip_input, clip_id=""):
    """Run one clip (already in the extractor's input representation)."""
    values = extractor(clip_input)
    s = extractor.spec
    return FeatureVector(values, s.arch_id, s.capacity, clip_id, s.seed)


# --------------------------------------------------------------------------
# Estimator wrappers
# --------------------------------------------------------------------------

def _as_waveform_array(w):
    if isinstance(w, dsp.Waveform):
        w = dsp.prepare_waveform(w).samples
    return dsp._check_prepared(w)


def _extract_one(extractor, w):
    return extractor(extractor.prepare_input(_as_waveform_array(w)))


class RandomCNNFeatures(TransformerMixin, BaseEstimator):
    """Transformer mapping prepared waveforms to random-CNN feature vectors.

    Parameters
    ----------
    arch : str
        One of ``ARCHITECTURES``.
    capacity : {"S", "L"}
        ~120 or ~3500 feature maps.
    seed : int
        Seed for the filter draws.
    n_jobs : int
        Worker processes for per-clip extraction.  Output order and values do
        not depend on it.

    ``X`` is a sequence of 350,000-sample 12 kHz waveforms (arrays or
    :class:`~rwcnn.dsp.Waveform`).  ``fit`` only draws the filters; nothing is
    learned from the data.
    """

    def __init__(self, arch="vgg", capacity="S", seed=0, n_jobs=1):
        self.arch = arch
        self.capacity = capacity
        self.seed = seed
        self.n_jobs = n_jobs

    def fit(self, X=None, y=None):
        self.extractor_ = build_frontend(FrontEndSpec(self.arch, self.capacity, self.seed))
        self.n_features_out_ = self.extractor_.dim
        return self

    def transform(self, X):
        if not hasattr(self, "extractor_"):
            self.fit()
        if self.n_jobs == 1:
            rows = [_extract_one(self.extractor_, w) for w in X]
        else:
            rows = Parallel(n_jobs=self.n_jobs)(delayed(_extract_one)(self.extractor_, w) for w in X)
        if not rows:
            return np.empty((0, self.n_features_out_), dtype=np.float32)
        return np.stack(rows)


class MFCCFeatures(TransformerMixin, BaseEstimator):
    """The 120-dim MFCC baseline as a stateless transformer."""

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        rows = [dsp.mfcc_vector(_as_waveform_array(w)) for w in X]
        if not rows:
            return np.empty((0, 120), dtype=np.float32)
        return np.stack(rows)
