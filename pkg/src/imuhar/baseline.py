"""Spectral-peak baseline classifiers.

These are fixed decision rules on raw windows: the low-level rule
thresholds AC energy and the dominant FFT frequency of the vertical
accelerometer and pitch gyro; the high-level rule is nearest-centroid on
motif-proportion vectors. They never touch the neural pipeline, so they
serve as independent references for what trained models should reach on
the synthetic datasets.
"""

from __future__ import annotations

import numpy as np

from .data import LL_DEFAULT_CLASSES, SynthSpec
from .signal import split_windows_array

# indices into the canonical (stationary, walking, running) order
STATIONARY, WALKING, RUNNING = range(3)

ENERGY_FLOOR = 0.15  # combined az+gy AC variance below this is stationary
FREQ_SPLIT_HZ = 2.5  # dominant frequency below this is walking, above running


def spectral_motif_label(window: np.ndarray, rate_hz: float) -> int:
    """Classify one raw (6, T) window as stationary/walking/running."""
    az = window[2] - window[2].mean()
    gy = window[4] - window[4].mean()
    if az.var() + gy.var() < ENERGY_FLOOR:
        return STATIONARY
    power = np.abs(np.fft.rfft(az)) ** 2 + np.abs(np.fft.rfft(gy)) ** 2
    power[0] = 0.0  # exclude DC
    freq = np.fft.rfftfreq(window.shape[1], d=1.0 / rate_hz)[int(power.argmax())]
    return WALKING if freq < FREQ_SPLIT_HZ else RUNNING


def motif_proportions(hl_window: np.ndarray, n: int, rate_hz: float) -> np.ndarray:
    """Fraction of each motif over the n low-level pieces of one window."""
    pieces = split_windows_array(hl_window[None], n)[0]
    out = np.zeros(3)
    for piece in pieces:
        out[spectral_motif_label(piece, rate_hz)] += 1
    return out / n


class SpectralHlClassifier:
    """Nearest-centroid over motif proportions, one signature per class."""

    def __init__(self, signatures: np.ndarray, n: int, rate_hz: float):
        self.signatures = np.asarray(signatures, dtype=np.float64)
        self.n = n
        self.rate_hz = rate_hz

    @classmethod
    def from_synth_spec(cls, spec: SynthSpec, n: int, rate_hz: float) -> "SpectralHlClassifier":
        sig = np.zeros((len(spec.classes), 3))
        for i, c in enumerate(spec.classes):
            for motif, w in c.motif_weights.items():
                sig[i, LL_DEFAULT_CLASSES.index(motif)] = w
            sig[i] /= sig[i].sum()
        return cls(sig, n, rate_hz)

    def classify(self, hl_window: np.ndarray) -> int:
        props = motif_proportions(hl_window, self.n, self.rate_hz)
        return int(((self.signatures - props) ** 2).sum(axis=1).argmin())

    def predict(self, samples) -> np.ndarray:
        return np.array([self.classify(s.data) for s in samples], dtype=np.int64)
