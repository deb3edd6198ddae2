"""Slow, obviously-correct reference implementations used by the tests."""

import itertools
import math

import numpy as np


def pad_amounts(n, k, s, mode):
    if mode == "valid":
        return 0, 0
    out = math.ceil(n / s)
    total = max((out - 1) * s + k - n, 0)
    return total // 2, total - total // 2


def naive_conv(x, w, b, stride, padding):
    """Direct nested-loop cross-correlation in float64 for 1-D or 2-D maps."""
    nd = w.ndim - 2
    stride = (stride,) * nd if np.isscalar(stride) else tuple(stride)
    padding = (padding,) * nd if isinstance(padding, str) else tuple(padding)
    pads = [pad_amounts(n, k, s, p) for n, k, s, p in zip(x.shape[1:], w.shape[2:], stride, padding)]
    xp = np.pad(x.astype(np.float64), [(0, 0)] + pads)
    out_shape = [(n - k) // s + 1 for n, k, s in zip(xp.shape[1:], w.shape[2:], stride)]
    out = np.zeros([w.shape[0]] + out_shape)
    for o in range(w.shape[0]):
        for pos in itertools.product(*[range(m) for m in out_shape]):
            acc = float(b[o])
            for c in range(w.shape[1]):
                for kpos in itertools.product(*[range(k) for k in w.shape[2:]]):
                    src = tuple(p * s + kk for p, s, kk in zip(pos, stride, kpos))
                    acc += float(w[(o, c) + kpos]) * xp[(c,) + src]
            out[(o,) + pos] = acc
    return out


def naive_pool(x, size, stride, reduce):
    nd = x.ndim - 1
    size = (size,) * nd if np.isscalar(size) else tuple(size)
    stride = size if stride is None else ((stride,) * nd if np.isscalar(stride) else tuple(stride))
    out_shape = [(n - k) // s + 1 for n, k, s in zip(x.shape[1:], size, stride)]
    out = np.zeros([x.shape[0]] + out_shape)
    for c in range(x.shape[0]):
        for pos in itertools.product(*[range(m) for m in out_shape]):
            vals = [x[(c,) + tuple(p * s + kk for p, s, kk in zip(pos, stride, kpos))]
                    for kpos in itertools.product(*[range(k) for k in size])]
            out[(c,) + pos] = reduce(np.array(vals, dtype=np.float64))
    return out


def rel_err(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12))


def random_kernel_cases(n_cases, seed=1234):
    """Random small conv / pool instances: 1-D and 2-D, strides, both paddings."""
    rng = np.random.default_rng(seed)
    cases = []
    for i in range(n_cases):
        nd = 1 + i % 2
        cin, cout = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        k = tuple(int(rng.integers(1, 5)) for _ in range(nd))
        n = tuple(int(rng.integers(kk, kk + 9)) for kk in k)
        stride = tuple(int(rng.integers(1, 4)) for _ in range(nd))
        padding = tuple(str(rng.choice(["valid", "same"])) for _ in range(nd))
        x = rng.standard_normal((cin,) + n).astype(np.float32)
        w = rng.standard_normal((cout, cin) + k).astype(np.float32)
        b = rng.standard_normal(cout).astype(np.float32)
        psize = tuple(int(rng.integers(1, min(4, m) + 1)) for m in n)
        pstride = None if rng.random() < 0.5 else tuple(int(rng.integers(1, 4)) for _ in range(nd))
        cases.append(dict(x=x, w=w, b=b, stride=stride, padding=padding, psize=psize, pstride=pstride))
    return cases


def envelope_autocorr_peak(x, sr, lo, hi, env_rate=1000):
    """Lag (s) of the largest autocorrelation peak of a rectified, decimated envelope within [lo, hi]."""
    hop = sr // env_rate
    env = np.abs(np.asarray(x, dtype=np.float64))
    env = env[: len(env) // hop * hop].reshape(-1, hop).mean(axis=1)
    env -= env.mean()
    spec = np.fft.rfft(env, 2 * len(env))
    ac = np.fft.irfft(spec * np.conj(spec))[: len(env)]
    lags = np.arange(len(env)) / env_rate
    band = (lags >= lo) & (lags <= hi)
    return lags[band][np.argmax(ac[band])]
