"""Desk-scale surrogate datasets.

``timbre`` stands in for a genre task: every class is a harmonic complex
with the same pitch range and loudness, so only the harmonic amplitude
profile separates classes.  ``rhythm`` stands in for a tempo task: every
class is a click train built from the same click, so only the tempo
separates classes.  All constants below are surrogate settings, not
measurements.
"""

from dataclasses import dataclass

import numpy as np

from .dsp import CLIP_SAMPLES, SAMPLE_RATE, Waveform
from ._validation import InvalidInputError

TIMBRE_F0 = 220.0
TIMBRE_F0_JITTER = 0.03
TIMBRE_HARMONICS = 16
TIMBRE_PROFILE_WIDTH = 2.0
TIMBRE_AMP_JITTER = 1.0
TIMBRE_NOISE_DB = -30.0
TIMBRE_RMS = 0.1

RHYTHM_TEMPI = (90.0, 120.0, 150.0, 180.0)
RHYTHM_PERIOD_JITTER = 0.02
RHYTHM_CLICK_FREQ = 1500.0
RHYTHM_CLICK_DECAY = 0.008
RHYTHM_CLICK_LENGTH = 0.04
RHYTHM_NOISE_RMS = 1e-3

TASKS = ("timbre", "rhythm")


@dataclass(frozen=True)
class SyntheticSpec:
    task: str = "timbre"
    classes: int = 10
    clips_per_class: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.task not in TASKS:
            raise InvalidInputError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.classes < 2 or self.clips_per_class < 1:
            raise InvalidInputError("need >= 2 classes and >= 1 clip per class")


def rhythm_tempi(classes):
    """The four default tempi, or an even 90-180 BPM spread for other class counts."""
    if classes == len(RHYTHM_TEMPI):
        return RHYTHM_TEMPI
    return tuple(np.linspace(90.0, 180.0, classes))


def harmonic_profile(label, classes, n_harmonics=TIMBRE_HARMONICS):
    """Gaussian bump over harmonic number whose centre moves with the class."""
    h = np.arange(1, n_harmonics + 1)
    center = 1.0 + label * (n_harmonics - 1) / max(classes - 1, 1)
    return np.exp(-0.5 * ((h - center) / TIMBRE_PROFILE_WIDTH) ** 2)


def _timbre_clip(label, classes, rng):
    f0 = TIMBRE_F0 * (1.0 + rng.uniform(-TIMBRE_F0_JITTER, TIMBRE_F0_JITTER))
    amps = harmonic_profile(label, classes) * rng.lognormal(0.0, TIMBRE_AMP_JITTER, TIMBRE_HARMONICS)
    phases = rng.uniform(0.0, 2 * np.pi, TIMBRE_HARMONICS)
    # harmonic k is Im(a_k e^{i phi_k} z^k), with z^k built by repeated multiplication
    z = np.exp(2j * np.pi * f0 / SAMPLE_RATE * np.arange(CLIP_SAMPLES))
    zk = np.ones(CLIP_SAMPLES, dtype=complex)
    acc = np.zeros(CLIP_SAMPLES, dtype=complex)
    for k, (a, ph) in enumerate(zip(amps, phases), start=1):
        zk *= z
        if k * f0 < SAMPLE_RATE / 2:
            acc += (a * np.exp(1j * ph)) * zk
    x = acc.imag
    x *= TIMBRE_RMS / np.sqrt(np.mean(x ** 2))
    noise = rng.standard_normal(CLIP_SAMPLES)
    noise *= TIMBRE_RMS * 10 ** (TIMBRE_NOISE_DB / 20) / np.sqrt(np.mean(noise ** 2))
    x += noise
    return x * (TIMBRE_RMS / np.sqrt(np.mean(x ** 2)))


def click_kernel():
    n = int(RHYTHM_CLICK_LENGTH * SAMPLE_RATE)
    t = np.arange(n) / SAMPLE_RATE
    return np.sin(2 * np.pi * RHYTHM_CLICK_FREQ * t) * np.exp(-t / RHYTHM_CLICK_DECAY)


def _rhythm_clip(tempo, rng, click):
    period = 60.0 / tempo * (1.0 + rng.uniform(-RHYTHM_PERIOD_JITTER, RHYTHM_PERIOD_JITTER))
    onset = rng.uniform(0.0, period)
    times = np.arange(onset, CLIP_SAMPLES / SAMPLE_RATE, period)
    impulses = np.zeros(CLIP_SAMPLES)
    impulses[np.round(times * SAMPLE_RATE).astype(int).clip(0, CLIP_SAMPLES - 1)] = 1.0
    x = np.convolve(impulses, click)[:CLIP_SAMPLES] * 0.5
    return x + RHYTHM_NOISE_RMS * rng.standard_normal(CLIP_SAMPLES)


def synth_dataset(spec):
    """Generate ``(clips, labels)``; clips are canonical 350,000-sample waveforms.

    Clip ``i`` of class ``c`` draws from its own seeded stream, so the result
    depends only on ``spec``.
    """
    tempi = rhythm_tempi(spec.classes) if spec.task == "rhythm" else None
    click = click_kernel() if spec.task == "rhythm" else None
    clips, labels = [], []
    for c in range(spec.classes):
        for i in range(spec.clips_per_class):
            rng = np.random.default_rng([spec.seed, c, i])
            if spec.task == "timbre":
                x = _timbre_clip(c, spec.classes, rng)
            else:
                x = _rhythm_clip(tempi[c], rng, click)
            clips.append(Waveform(x.astype(np.float32), SAMPLE_RATE, f"{spec.task}_{c:02d}_{i:04d}"))
            labels.append(c)
    return clips, np.array(labels)
