"""Audio loading and the three canonical model inputs.

Every clip is brought to a fixed-length 12 kHz mono waveform, from which
the log-mel spectrogram (1376 x 96), its energy envelope and the 120-dim
MFCC baseline vector are derived.
"""

from dataclasses import dataclass, field
from math import gcd

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.fft import dct
from scipy.io import wavfile

from ._validation import InvalidInputError, UnsupportedFormatError

SAMPLE_RATE = 12000
CLIP_SAMPLES = 350_000
N_FFT = 512
HOP_LENGTH = 256
N_MELS = 96
N_FRAMES = 1376
FMIN = 0.0
FMAX = SAMPLE_RATE / 2
LOG_FLOOR = 1e-10
N_MFCC = 20
DELTA_WIDTH = 2

RESAMPLE_TAPS = 64
KAISER_BETA = 8.6


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int
    source_id: str = ""

    def __len__(self):
        return len(self.samples)

    @property
    def is_canonical(self):
        return self.sample_rate == SAMPLE_RATE and len(self.samples) == CLIP_SAMPLES


@dataclass(frozen=True)
class MelFilterbank:
    """Triangular HTK-mel filters; ``weights`` has shape (fft_bins, n_mels)."""

    weights: np.ndarray
    fmin: float
    fmax: float
    centers: np.ndarray = field(repr=False)


# --------------------------------------------------------------------------
# Loading
# --------------------------------------------------------------------------

def _pcm_to_float(data):
    if data.dtype == np.uint8:
        return (data.astype(np.float64) - 128.0) / 128.0
    if data.dtype == np.int16:
        return data.astype(np.float64) / 32768.0
    if data.dtype == np.int32:
        # scipy left-justifies 24-bit samples into int32, so one scale fits both
        return data.astype(np.float64) / 2147483648.0
    if data.dtype in (np.float32, np.float64):
        return np.clip(data.astype(np.float64), -1.0, 1.0)
    raise UnsupportedFormatError(f"unsupported sample type {data.dtype}")


def load_audio(path):
    """Read a RIFF/WAV file into a mono float waveform at its native rate.

    Integer PCM is scaled asymmetrically (int16 / 32768, etc.) and channels
    are averaged.
    """
    try:
        with open(path, "rb") as fh:
            rate, data = wavfile.read(fh)
    except ValueError as exc:
        raise UnsupportedFormatError(f"{path}: {exc}") from exc
    samples = _pcm_to_float(np.asarray(data))
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    return Waveform(samples.astype(np.float32), int(rate), str(path))


# --------------------------------------------------------------------------
# Resampling and length normalisation
# --------------------------------------------------------------------------

def _sinc_table(up, cutoff):
    """Kaiser-windowed sinc taps for each of ``up`` fractional phases.

    Row p holds the weights applied to input samples base-31 .. base+32 for an
    output instant that lies p/up samples past ``base``.
    """
    half = RESAMPLE_TAPS // 2
    frac = np.arange(up)[:, None] / up
    offsets = frac + (half - 1) - np.arange(RESAMPLE_TAPS)[None, :]
    # evaluate the continuous Kaiser window at arbitrary offsets
    w = np.i0(KAISER_BETA * np.sqrt(np.clip(1.0 - (offsets / half) ** 2, 0.0, None)))
    w /= np.i0(KAISER_BETA)
    taps = 2.0 * cutoff * np.sinc(2.0 * cutoff * offsets) * w
    return taps / taps.sum(axis=1, keepdims=True)


def resample(x, orig_sr, target_sr, chunk=1 << 16):
    """Band-limited rational resampling with a 64-tap windowed-sinc kernel."""
    x = np.asarray(x, dtype=np.float64)
    if orig_sr == target_sr:
        return x.copy()
    g = gcd(int(orig_sr), int(target_sr))
    up, down = int(target_sr) // g, int(orig_sr) // g
    cutoff = 0.5 * min(1.0, target_sr / orig_sr)
    table = _sinc_table(up, cutoff)
    half = RESAMPLE_TAPS // 2
    n_out = -(-len(x) * up // down)
    padded = np.concatenate([np.zeros(half), x, np.zeros(half + 1)])
    out = np.empty(n_out)
    taps = np.arange(RESAMPLE_TAPS)
    for start in range(0, n_out, chunk):
        n = np.arange(start, min(start + chunk, n_out), dtype=np.int64)
        base, phase = np.divmod(n * down, up)
        # padded[k + half] == x[k]; window starts at x[base - 31]
        idx = base[:, None] + 1 + taps[None, :]
        out[start:start + len(n)] = np.einsum("ij,ij->i", padded[idx], table[phase])
    return out


def prepare_waveform(w):
    """Resample to 12 kHz, then tile or truncate to exactly 350,000 samples."""
    if len(w.samples) == 0:
        raise InvalidInputError("cannot prepare an empty waveform")
    if w.is_canonical:
        return w
    x = resample(w.samples, w.sample_rate, SAMPLE_RATE)
    if len(x) == 0:
        raise InvalidInputError("waveform too short to resample")
    reps = -(-CLIP_SAMPLES // len(x))
    x = np.tile(x, reps)[:CLIP_SAMPLES]
    return Waveform(x.astype(np.float32), SAMPLE_RATE, w.source_id)


def _check_prepared(w):
    if isinstance(w, Waveform):
        if w.sample_rate != SAMPLE_RATE:
            raise InvalidInputError(f"expected {SAMPLE_RATE} Hz, got {w.sample_rate}")
        x = w.samples
    else:
        x = w
    x = np.asarray(x)
    if x.shape != (CLIP_SAMPLES,):
        raise InvalidInputError(
            f"expected a prepared waveform of {CLIP_SAMPLES} samples, got shape {x.shape}")
    return x


# --------------------------------------------------------------------------
# Spectral front end
# --------------------------------------------------------------------------

def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(sr=SAMPLE_RATE, n_fft=N_FFT, n_mels=N_MELS, fmin=FMIN, fmax=FMAX):
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * sr / n_fft
    lower, center, upper = edges[:-2], edges[1:-1], edges[2:]
    rising = (freqs[:, None] - lower) / (center - lower)
    falling = (upper - freqs[:, None]) / (upper - center)
    weights = np.maximum(0.0, np.minimum(rising, falling))
    return MelFilterbank(weights, float(fmin), float(fmax), center)


_FILTERBANK = mel_filterbank()
_HANN = np.hanning(N_FFT + 1)[:-1]


def stft_power(x, n_fft=N_FFT, hop=HOP_LENGTH):
    """Power spectrogram (frames x bins) with a periodic Hann window, no centering."""
    x = np.asarray(x, dtype=np.float64)
    if len(x) < n_fft:
        raise InvalidInputError("signal shorter than one analysis window")
    frames = sliding_window_view(x, n_fft)[::hop]
    window = _HANN if n_fft == N_FFT else np.hanning(n_fft + 1)[:-1]
    spec = np.fft.rfft(frames * window, axis=1)
    return spec.real ** 2 + spec.imag ** 2


def _log_mel_frames(x):
    mel = stft_power(x) @ _FILTERBANK.weights
    return np.log(LOG_FLOOR + mel)


def log_mel(w):
    """Canonical 1376 x 96 log-mel spectrogram of a prepared waveform.

    Frames beyond the last complete STFT frame carry zero power, i.e. the
    log floor ``ln(1e-10)``.
    """
    frames = _log_mel_frames(_check_prepared(w))
    out = np.full((N_FRAMES, N_MELS), np.log(LOG_FLOOR), dtype=np.float64)
    n = min(len(frames), N_FRAMES)
    out[:n] = frames[:n]
    return out.astype(np.float32)


def energy_envelope(s):
    s = np.asarray(s)
    if s.ndim != 2 or s.shape[1] < 1 or s.shape[0] < 1:
        raise InvalidInputError(f"expected a (frames, bands) spectrogram, got {s.shape}")
    return s.astype(np.float64).mean(axis=1).astype(np.float32)


def deltas(c, width=DELTA_WIDTH):
    """Regression deltas along axis 0 with edge replication."""
    n = np.arange(1, width + 1)
    padded = np.pad(c, [(width, width)] + [(0, 0)] * (c.ndim - 1), mode="edge")
    T = c.shape[0]
    num = sum(k * (padded[width + k:width + k + T] - padded[width - k:width - k + T]) for k in n)
    return num / (2.0 * np.sum(n ** 2))


def mfcc_vector(w):
    """120-dim baseline: mean and std over time of 20 MFCCs, their deltas and delta-deltas.

    Only complete STFT frames enter the statistics; the right padding used to
    reach 1376 frames is not part of the signal.
    """
    frames = _log_mel_frames(_check_prepared(w))
    coeffs = dct(frames, type=2, norm="ortho", axis=1)[:, :N_MFCC]
    d1 = deltas(coeffs)
    d2 = deltas(d1)
    streams = np.concatenate([coeffs, d1, d2], axis=1)
    return np.concatenate([streams.mean(axis=0), streams.std(axis=0)]).astype(np.float32)
