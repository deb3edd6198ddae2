"""Forward-only network kernels on float32 numpy arrays.

Tensors are laid out channel-first: ``(channels, time)`` for 1-D signals and
``(channels, time, freq)`` for spectrogram maps.  Convolutions are
cross-correlations (no kernel flip) implemented as chunked im2col + GEMM, so a
given input shape always follows the same arithmetic path and repeated calls
are bit-identical.
"""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ._validation import InvalidInputError

# upper bound on im2col buffer size (float32 elements) per GEMM
_IM2COL_BUDGET = 1 << 23

BN_EPS = 1e-5


@dataclass(frozen=True)
class SeededRng:
    """Counter-based random stream identified by ``(seed, stream_id)``."""

    seed: int
    stream_id: int = 0

    def generator(self):
        key = (int(self.stream_id) % (1 << 64)) << 64 | (int(self.seed) % (1 << 64))
        return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class FilterBank:
    weights: np.ndarray
    bias: np.ndarray
    stride: tuple = (1,)
    padding: tuple = ("valid",)

    def __post_init__(self):
        k = self.weights.shape[2:]
        if not k or min(self.weights.shape) < 1:
            raise InvalidInputError(f"bad filter shape {self.weights.shape}")
        stride = _per_axis(self.stride, len(k), "stride")
        padding = _per_axis(self.padding, len(k), "padding")
        if any(int(s) < 1 for s in stride):
            raise InvalidInputError(f"stride must be >= 1, got {stride}")
        if any(p not in ("valid", "same") for p in padding):
            raise InvalidInputError(f"padding must be 'valid' or 'same', got {padding}")
        if not np.all(np.isfinite(self.weights)):
            raise InvalidInputError("filter weights must be finite")
        self.weights.setflags(write=False)
        self.bias.setflags(write=False)
        object.__setattr__(self, "stride", tuple(int(s) for s in stride))
        object.__setattr__(self, "padding", padding)

    @property
    def out_channels(self):
        return self.weights.shape[0]

    @property
    def in_channels(self):
        return self.weights.shape[1]

    @property
    def kernel(self):
        return self.weights.shape[2:]


def _per_axis(value, n, name):
    if isinstance(value, (str, int, np.integer)):
        return (value,) * n
    value = tuple(value)
    if len(value) == 1:
        return value * n
    if len(value) != n:
        raise InvalidInputError(f"{name} needs {n} entries, got {value}")
    return value


def glorot_bound(shape):
    receptive = int(np.prod(shape[2:])) if len(shape) > 2 else 1
    fan_in, fan_out = shape[1] * receptive, shape[0] * receptive
    return np.sqrt(6.0 / (fan_in + fan_out))


def init_filters(shape, rng, stride=1, padding="valid"):
    """Glorot-uniform weights, zero biases, drawn from the stream ``rng``."""
    shape = tuple(int(s) for s in shape)
    if len(shape) < 3 or min(shape) < 1:
        raise InvalidInputError(f"filter shape must be (out, in, k...) with all extents >= 1, got {shape}")
    a = glorot_bound(shape)
    w = rng.generator().uniform(-a, a, size=shape).astype(np.float32)
    return FilterBank(w, np.zeros(shape[0], dtype=np.float32), stride, padding)


def output_length(n, k, stride, padding):
    if padding == "same":
        return -(-n // stride)
    return (n - k) // stride + 1


def _pad_amounts(n, k, stride, padding):
    if padding == "valid":
        if k > n:
            raise InvalidInputError(f"kernel extent {k} exceeds input extent {n} under valid padding")
        return 0, 0
    out = -(-n // stride)
    total = max((out - 1) * stride + k - n, 0)
    return total // 2, total - total // 2


def _conv(x, f):
    nd = len(f.kernel)
    if x.ndim != nd + 1:
        raise InvalidInputError(f"expected a {nd + 1}-D tensor, got shape {x.shape}")
    if x.shape[0] != f.in_channels:
        raise InvalidInputError(
            f"input has {x.shape[0]} channels, filters expect {f.in_channels}")
    pads = [_pad_amounts(n, k, s, p) for n, k, s, p in zip(x.shape[1:], f.kernel, f.stride, f.padding)]
    x = np.asarray(x, dtype=np.float32)
    if any(sum(p) for p in pads):
        x = np.pad(x, [(0, 0)] + pads)
    axes = tuple(range(1, nd + 1))
    windows = sliding_window_view(x, f.kernel, axis=axes)
    windows = windows[(slice(None),) + tuple(slice(None, None, s) for s in f.stride)]
    out_shape = windows.shape[1:nd + 1]
    # (C_in, *out, *k) -> (*out, C_in, *k)
    order = tuple(range(1, nd + 1)) + (0,) + tuple(range(nd + 1, 2 * nd + 1))
    windows = windows.transpose(order)
    depth = f.in_channels * int(np.prod(f.kernel))
    wmat = f.weights.reshape(f.out_channels, depth)
    lead = out_shape[0]
    inner = int(np.prod(out_shape[1:])) if nd > 1 else 1
    step = max(1, _IM2COL_BUDGET // max(1, depth * inner))
    out = np.empty((f.out_channels, lead * inner), dtype=np.float32)
    for start in range(0, lead, step):
        stop = min(start + step, lead)
        cols = np.ascontiguousarray(windows[start:stop]).reshape((stop - start) * inner, depth)
        out[:, start * inner:stop * inner] = wmat @ cols.T
    out += f.bias[:, None]
    return out.reshape((f.out_channels,) + out_shape)


def conv1d(x, f):
    """Strided 1-D cross-correlation of ``(C_in, T)`` with ``(C_out, C_in, k)`` filters."""
    if len(f.kernel) != 1:
        raise InvalidInputError("conv1d needs 1-D kernels")
    return _conv(x, f)


def conv2d(x, f):
    """2-D cross-correlation of ``(C_in, T, F)`` with per-axis padding modes."""
    if len(f.kernel) != 2:
        raise InvalidInputError("conv2d needs 2-D kernels")
    return _conv(x, f)


def _pool(x, size, stride, mode):
    x = np.asarray(x)
    nd = x.ndim - 1
    size = tuple(int(s) for s in _per_axis(size, nd, "size"))
    stride = tuple(int(s) for s in _per_axis(size if stride is None else stride, nd, "stride"))
    for n, k in zip(x.shape[1:], size):
        if k > n:
            raise InvalidInputError(f"pool size {k} exceeds axis length {n}")
    if size != stride:
        windows = sliding_window_view(x, size, axis=tuple(range(1, nd + 1)))
        windows = windows[(slice(None),) + tuple(slice(None, None, s) for s in stride)]
        reduce = np.max if mode == "max" else np.mean
        return reduce(windows, axis=tuple(range(nd + 1, 2 * nd + 1))).astype(x.dtype)
    # non-overlapping: combine the k strided slices of each axis elementwise,
    # which is much faster than a multi-axis reduction over a reshaped view
    out = x if mode == "max" else x.astype(np.float64)
    for axis, k in enumerate(size, start=1):
        if k == 1:
            continue
        n = (out.shape[axis] // k) * k
        lead = (slice(None),) * axis
        acc = out[lead + (slice(0, n, k),)].copy()
        for j in range(1, k):
            part = out[lead + (slice(j, n, k),)]
            if mode == "max":
                np.maximum(acc, part, out=acc)
            else:
                acc += part
        if mode == "mean":
            acc /= k
        out = acc
    return out.astype(x.dtype, copy=False)


def max_pool(x, size, stride=None):
    return _pool(x, size, stride, "max")


def mean_pool(x, size, stride=None):
    return _pool(x, size, stride, "mean")


def relu(x):
    return np.maximum(x, 0)


def elu(x):
    x = np.asarray(x)
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0))).astype(x.dtype)


def residual_add(x, y):
    x, y = np.asarray(x), np.asarray(y)
    if x.shape != y.shape:
        raise InvalidInputError(f"residual shapes differ: {x.shape} vs {y.shape}")
    return x + y


def global_average(x):
    """One mean per channel over every non-channel axis."""
    x = np.asarray(x)
    if x.ndim == 1:
        return np.array([x.mean(dtype=np.float64)], dtype=np.float32)
    return x.reshape(x.shape[0], -1).mean(axis=1, dtype=np.float64).astype(np.float32)


def batch_stat_normalize(F, axis=0):
    """Normalise each dimension by the statistics of the batch it arrived in.

    This is the behaviour of batch normalisation at feature-extraction time:
    a clip's output depends on the other clips in its batch.

    Parameters
    ----------
    F : array
        Batch along the first axis.  For feature matrices ``(n, dim)`` the
        default ``axis=0`` normalises each dimension; for activations
        ``(n, C, T, F)`` pass ``axis=(0, 2, 3)`` to normalise each channel.
    """
    F = np.asarray(F, dtype=np.float64)
    if F.ndim < 2 or F.shape[0] < 2:
        raise InvalidInputError("batch statistics need at least two vectors")
    mu = F.mean(axis=axis, keepdims=True)
    sigma = F.std(axis=axis, keepdims=True)
    return (F - mu) / (sigma + BN_EPS)
