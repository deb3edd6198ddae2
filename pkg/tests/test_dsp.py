import io
import wave

import numpy as np
import pytest
from scipy.io import wavfile

from rwcnn import dsp
from rwcnn._validation import InvalidInputError, UnsupportedFormatError


def _tone(freq, sr, n, amp=1.0):
    return amp * np.sin(2 * np.pi * freq * np.arange(n) / sr)


# --------------------------------------------------------------------------
# loading
# --------------------------------------------------------------------------

@pytest.mark.parametrize("dtype, raw, expected", [
    (np.int16, [-32768, 0, 16384, 32767], [-1.0, 0.0, 0.5, 32767 / 32768]),
    (np.uint8, [0, 128, 192, 255], [-1.0, 0.0, 0.5, 127 / 128]),
    (np.int32, [-2 ** 31, 0, 2 ** 30], [-1.0, 0.0, 0.5]),
    (np.float32, [-1.5, 0.25, 2.0], [-1.0, 0.25, 1.0]),
])
def test_pcm_scaling(tmp_path, dtype, raw, expected):
    path = tmp_path / "x.wav"
    wavfile.write(path, 8000, np.array(raw, dtype=dtype))
    w = dsp.load_audio(path)
    assert w.sample_rate == 8000
    np.testing.assert_allclose(w.samples, expected, rtol=0, atol=1e-7)


def test_24bit_pcm(tmp_path):
    path = tmp_path / "x24.wav"
    values = [-2 ** 23, 0, 2 ** 22]
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(3)
        fh.setframerate(12000)
        fh.writeframes(b"".join(v.to_bytes(3, "little", signed=True) for v in values))
    np.testing.assert_allclose(dsp.load_audio(path).samples, [-1.0, 0.0, 0.5])


def test_stereo_is_averaged(tmp_path):
    path = tmp_path / "st.wav"
    wavfile.write(path, 12000, np.array([[16384, 0], [-16384, -16384]], dtype=np.int16))
    np.testing.assert_allclose(dsp.load_audio(path).samples, [0.25, -0.5])


def test_non_wav_rejected(tmp_path):
    path = tmp_path / "x.wav"
    path.write_bytes(b"ID3 this is not a riff file at all")
    with pytest.raises(UnsupportedFormatError):
        dsp.load_audio(path)


# --------------------------------------------------------------------------
# length normalisation and resampling
# --------------------------------------------------------------------------

def test_tiling_short_clip():
    x = np.random.default_rng(0).standard_normal(1000).astype(np.float32)
    out = dsp.prepare_waveform(dsp.Waveform(x, dsp.SAMPLE_RATE)).samples
    assert out.shape == (dsp.CLIP_SAMPLES,)
    np.testing.assert_array_equal(out, x[np.arange(dsp.CLIP_SAMPLES) % 1000])


def test_truncation_long_clip():
    x = np.arange(dsp.CLIP_SAMPLES + 500, dtype=np.float32)
    out = dsp.prepare_waveform(dsp.Waveform(x, dsp.SAMPLE_RATE)).samples
    np.testing.assert_array_equal(out, x[:dsp.CLIP_SAMPLES])


def test_canonical_clip_unchanged():
    w = dsp.Waveform(np.zeros(dsp.CLIP_SAMPLES, np.float32), dsp.SAMPLE_RATE)
    assert dsp.prepare_waveform(w) is w


def test_empty_clip_rejected():
    with pytest.raises(InvalidInputError):
        dsp.prepare_waveform(dsp.Waveform(np.zeros(0, np.float32), 22050))


@pytest.mark.parametrize("sr", [44100, 22050, 16000, 8000])
def test_resampled_tone_amplitude(sr):
    # 1 kHz tone: after resampling, the DFT at 1 kHz should report unit amplitude
    x = _tone(1000.0, sr, sr)  # one second
    y = dsp.resample(x, sr, dsp.SAMPLE_RATE)
    assert len(y) == dsp.SAMPLE_RATE
    seg = y[1000:-1000]
    t = np.arange(1000, dsp.SAMPLE_RATE - 1000) / dsp.SAMPLE_RATE
    amp = 2 * np.abs(np.sum(seg * np.exp(-2j * np.pi * 1000.0 * t))) / len(seg)
    assert amp == pytest.approx(1.0, abs=2e-3)


def test_resampler_rejects_above_nyquist():
    x = _tone(9000.0, 44100, 44100)
    y = dsp.resample(x, 44100, dsp.SAMPLE_RATE)[500:-500]
    assert np.sqrt(np.mean(y ** 2)) < 10 ** (-50 / 20)


def test_resample_identity():
    x = np.random.default_rng(1).standard_normal(100)
    np.testing.assert_array_equal(dsp.resample(x, 12000, 12000), x)


# --------------------------------------------------------------------------
# spectral features
# --------------------------------------------------------------------------

def _oracle_mel_centres(n_mels=96, fmax=6000.0):
    mel = lambda f: 2595.0 * np.log10(1 + f / 700.0)
    inv = lambda m: 700.0 * (10 ** (m / 2595.0) - 1)
    return inv(np.linspace(0, mel(fmax), n_mels + 2))


def test_filterbank_shape_and_peaks():
    fb = dsp.mel_filterbank()
    assert fb.weights.shape == (257, 96)
    np.testing.assert_allclose(fb.centers, _oracle_mel_centres()[1:-1], rtol=1e-12)
    assert fb.weights.min() >= 0 and fb.weights.max() <= 1


@pytest.mark.parametrize("freq", [250.0, 1000.0, 3100.0])
def test_tone_lands_in_nearest_band(freq):
    x = _tone(freq, dsp.SAMPLE_RATE, dsp.CLIP_SAMPLES, 0.5)
    S = dsp.log_mel(x)
    band = int(np.argmax(S[:1366].mean(axis=0)))
    centres = _oracle_mel_centres()[1:-1]
    assert band == int(np.argmin(np.abs(centres - freq)))


def test_log_mel_shape_and_padding():
    x = np.random.default_rng(2).standard_normal(dsp.CLIP_SAMPLES).astype(np.float32) * 0.1
    S = dsp.log_mel(x)
    assert S.shape == (1376, 96) and S.dtype == np.float32
    n_real = (dsp.CLIP_SAMPLES - dsp.N_FFT) // dsp.HOP_LENGTH + 1
    assert n_real == 1366
    assert np.all(S[n_real:] == np.float32(np.log(1e-10)))
    assert np.all(S[:n_real] > np.log(1e-10))


def test_stft_parseval():
    x = np.random.default_rng(3).standard_normal(4096)
    P = dsp.stft_power(x)
    w = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(512) / 512)
    for f in (0, 5, len(P) - 1):
        frame = x[f * 256:f * 256 + 512] * w
        one_sided = P[f, 0] + 2 * P[f, 1:-1].sum() + P[f, -1]
        assert one_sided / 512 == pytest.approx(np.sum(frame ** 2), rel=1e-10)


def test_stft_tone_power_concentration():
    x = _tone(187.5 * 8, dsp.SAMPLE_RATE, 512 * 8)  # on a bin centre
    P = dsp.stft_power(x)[0]
    k = 64
    assert P[k - 1:k + 2].sum() / P.sum() > 0.99


def test_energy_envelope():
    S = np.arange(12, dtype=np.float32).reshape(3, 4)
    np.testing.assert_allclose(dsp.energy_envelope(S), [1.5, 5.5, 9.5])
    with pytest.raises(InvalidInputError):
        dsp.energy_envelope(np.zeros(4))


def test_deltas_of_ramp():
    c = np.arange(10.0)[:, None] * 3.0
    d = dsp.deltas(c)
    np.testing.assert_allclose(d[2:-2, 0], 3.0)


def _reference_mfcc(x):
    """Loop-based MFCC vector built only from textbook definitions."""
    x = np.asarray(x, dtype=np.float64)
    n_fft, hop = 512, 256
    win = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n_fft) / n_fft)
    n_frames = (len(x) - n_fft) // hop + 1
    edges = _oracle_mel_centres()
    freqs = np.arange(n_fft // 2 + 1) * 12000 / n_fft
    fb = np.zeros((len(freqs), 96))
    for m in range(96):
        lo, c, hi = edges[m], edges[m + 1], edges[m + 2]
        for i, f in enumerate(freqs):
            if lo < f <= c:
                fb[i, m] = (f - lo) / (c - lo)
            elif c < f < hi:
                fb[i, m] = (hi - f) / (hi - c)
    logmel = np.empty((n_frames, 96))
    for t in range(n_frames):
        spec = np.fft.rfft(x[t * hop:t * hop + n_fft] * win)
        logmel[t] = np.log(1e-10 + (np.abs(spec) ** 2) @ fb)
    n = np.arange(96)
    basis = np.array([np.sqrt((1 if k == 0 else 2) / 96) * np.cos(np.pi * k * (2 * n + 1) / 192)
                      for k in range(20)])
    c = logmel @ basis.T

    def delta(a):
        out = np.zeros_like(a)
        T = len(a)
        for t in range(T):
            num = 0.0
            for k in (1, 2):
                num = num + k * (a[min(t + k, T - 1)] - a[max(t - k, 0)])
            out[t] = num / 10.0
        return out

    d1 = delta(c)
    d2 = delta(d1)
    s = np.hstack([c, d1, d2])
    return np.concatenate([s.mean(axis=0), s.std(axis=0)])


def test_mfcc_against_reference():
    rng = np.random.default_rng(4)
    t = np.arange(dsp.CLIP_SAMPLES) / dsp.SAMPLE_RATE
    x = (0.3 * np.sin(2 * np.pi * 440 * t) * (1 + 0.5 * np.sin(2 * np.pi * 0.7 * t))
         + 0.05 * rng.standard_normal(len(t)))
    got = dsp.mfcc_vector(x.astype(np.float32))
    want = _reference_mfcc(x.astype(np.float32))
    assert got.shape == (120,) and got.dtype == np.float32
    np.testing.assert_allclose(got, want, rtol=1e-4, atol=1e-4)


def test_prepared_input_checked():
    with pytest.raises(InvalidInputError):
        dsp.log_mel(np.zeros(1000, np.float32))
    with pytest.raises(InvalidInputError):
        dsp.log_mel(dsp.Waveform(np.zeros(dsp.CLIP_SAMPLES, np.float32), 16000))
