"""Deterministic IMU preprocessing.

Resampling onto a uniform grid, two-level windowing, hand-picked feature
extraction, and train-split normalization. Everything here is a pure
function of its inputs; recordings and fitted stats are immutable.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateChannelWarning,
    EmptyRecording,
    NonDivisibleWindow,
    NonIntegralWindow,
    NonMonotonicTimestamps,
)

N_CHANNELS = 6
CHANNEL_NAMES = ("ax", "ay", "az", "gx", "gy", "gz")

# per channel: mean, max, min, population variance, peak-to-peak
N_FEATURES_PER_CHANNEL = 5
N_FEATURES = N_CHANNELS * N_FEATURES_PER_CHANNEL

STD_EPSILON = 1e-8


@dataclass(frozen=True, eq=False)
class ImuRecording:
    """One participant's continuous 6-channel IMU stream.

    `channels` is a (6, N) array ordered ax, ay, az (m/s^2), gx, gy, gz
    (rad/s); `timestamps` is a strictly increasing (N,) array in seconds.
    """

    participant_id: str
    timestamps: np.ndarray
    channels: np.ndarray
    label: str | None = None

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.float64)
        ch = np.asarray(self.channels, dtype=np.float64)
        if ch.ndim != 2 or ch.shape[0] != N_CHANNELS:
            raise ValueError(f"channels must be (6, N), got {ch.shape}")
        if ts.ndim != 1 or ts.shape[0] != ch.shape[1]:
            raise ValueError("timestamp count must match channel length")
        if not (np.isfinite(ts).all() and np.isfinite(ch).all()):
            raise ValueError("recording contains NaN/Inf values")
        if ts.size >= 2 and not (np.diff(ts) > 0).all():
            raise NonMonotonicTimestamps(
                f"participant {self.participant_id}: timestamps not strictly increasing"
            )
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "channels", ch)

    @property
    def n_samples(self) -> int:
        return self.timestamps.shape[0]

    @property
    def duration_s(self) -> float:
        return float(self.timestamps[-1] - self.timestamps[0])


@dataclass(eq=False)
class WindowedSample:
    """A fixed-duration slice of a recording: (6, T) data plus provenance."""

    data: np.ndarray
    label: int
    participant_id: str
    start_time: float


def resample_linear(rec: ImuRecording, target_hz: float) -> ImuRecording:
    """Resample a recording onto a uniform grid via linear interpolation.

    The grid is anchored at the recording's first timestamp and extends to
    the last grid point <= the final timestamp, so the output has
    floor(span * target_hz) + 1 samples.
    """
    if target_hz <= 0:
        raise ValueError("target_hz must be positive")
    if rec.n_samples < 2:
        raise EmptyRecording(
            f"participant {rec.participant_id}: need >= 2 samples to resample"
        )
    t0 = rec.timestamps[0]
    span = rec.timestamps[-1] - t0
    # 1e-9 guard keeps exact-fit spans from losing their last grid point
    count = int(np.floor(span * target_hz + 1e-9)) + 1
    grid = t0 + np.arange(count, dtype=np.float64) / target_hz
    out = np.empty((N_CHANNELS, count), dtype=np.float64)
    for c in range(N_CHANNELS):
        out[c] = np.interp(grid, rec.timestamps, rec.channels[c])
    return ImuRecording(rec.participant_id, grid, out, rec.label)


def _to_sample_count(seconds: float, rate_hz: float, what: str) -> int:
    n = seconds * rate_hz
    if abs(n - round(n)) > 1e-6:
        raise NonIntegralWindow(f"{what} of {seconds}s at {rate_hz}Hz is not integral")
    return int(round(n))


def window(
    rec: ImuRecording,
    window_s: float,
    stride_s: float,
    rate_hz: float,
    label: int | None = None,
) -> list[WindowedSample]:
    """Slice a uniformly sampled recording into fixed-length windows.

    Emits windows starting every `stride_s` seconds while a full window of
    `window_s` seconds still fits. Short recordings yield an empty list.
    `label` overrides the class index attached to each window (pass the
    manifest's index for the recording's label).
    """
    t = _to_sample_count(window_s, rate_hz, "window")
    s = _to_sample_count(stride_s, rate_hz, "stride")
    if t <= 0 or s <= 0:
        raise ValueError("window and stride must be positive")
    n = rec.n_samples
    out: list[WindowedSample] = []
    lab = -1 if label is None else label
    for start in range(0, n - t + 1, s):
        out.append(
            WindowedSample(
                data=rec.channels[:, start : start + t].copy(),
                label=lab,
                participant_id=rec.participant_id,
                start_time=float(rec.timestamps[start]),
            )
        )
    return out


def split_low_level(
    hl: WindowedSample, ll_window_s: float, rate_hz: float
) -> list[WindowedSample]:
    """Partition a high-level window into contiguous non-overlapping pieces.

    Returns n = hl_window_s / ll_window_s sub-windows in temporal order;
    raises NonDivisibleWindow when the high-level length is not an integer
    multiple of the low-level one.
    """
    t_ll = _to_sample_count(ll_window_s, rate_hz, "low-level window")
    t_hl = hl.data.shape[1]
    if t_ll <= 0 or t_hl % t_ll != 0:
        raise NonDivisibleWindow(
            f"{t_hl}-sample window does not divide into {ll_window_s}s pieces at {rate_hz}Hz"
        )
    n = t_hl // t_ll
    return [
        WindowedSample(
            data=hl.data[:, i * t_ll : (i + 1) * t_ll].copy(),
            label=hl.label,
            participant_id=hl.participant_id,
            start_time=hl.start_time + i * ll_window_s,
        )
        for i in range(n)
    ]


def split_windows_array(hl_data: np.ndarray, n_splits: int) -> np.ndarray:
    """Vectorized split: (..., 6, T) -> (..., n_splits, 6, T/n_splits)."""
    t_hl = hl_data.shape[-1]
    if t_hl % n_splits != 0:
        raise NonDivisibleWindow(f"cannot split {t_hl} samples into {n_splits} windows")
    t_ll = t_hl // n_splits
    lead = hl_data.shape[:-2]
    reshaped = hl_data.reshape(lead + (N_CHANNELS, n_splits, t_ll))
    return np.moveaxis(reshaped, -3, -2)  # channels after the split axis


def extract_features(data: np.ndarray) -> np.ndarray:
    """Hand-picked statistics of one window, channel-major.

    Returns a length-30 vector: for each of the 6 channels, in order,
    [mean, max, min, variance, peak-to-peak]. Variance is population
    variance (divides by T).
    """
    if data.ndim != 2 or data.shape[0] != N_CHANNELS or data.shape[1] == 0:
        raise ValueError(f"expected non-empty (6, T) window, got {data.shape}")
    return extract_features_batch(data[None])[0]


def extract_features_batch(data: np.ndarray) -> np.ndarray:
    """Vectorized extract_features over (M, 6, T) -> (M, 30)."""
    mean = data.mean(axis=-1)
    mx = data.max(axis=-1)
    mn = data.min(axis=-1)
    var = data.var(axis=-1)  # population variance
    stacked = np.stack([mean, mx, mn, var, mx - mn], axis=-1)  # (M, 6, 5)
    return stacked.reshape(data.shape[0], N_FEATURES)


@dataclass(frozen=True)
class NormStats:
    """Per-channel or per-feature mean/std fitted on the training split only."""

    mean: np.ndarray
    std: np.ndarray
    kind: str = "channel"  # "channel" (6 stats) or "feature" (30 stats)

    def __post_init__(self):
        expected = N_CHANNELS if self.kind == "channel" else N_FEATURES
        if self.kind not in ("channel", "feature"):
            raise ValueError(f"unknown NormStats kind {self.kind!r}")
        if self.mean.shape != (expected,) or self.std.shape != (expected,):
            raise ValueError(f"{self.kind} stats must have {expected} entries")
        if not (self.std > 0).all():
            raise ValueError("std entries must be positive after flooring")


def fit_norm_stats(data: np.ndarray) -> NormStats:
    """Fit zero-mean/unit-variance stats on stacked training data.

    Accepts (M, 6, T) raw windows (per-channel stats over all windows and
    time steps) or (M, 30) feature rows (per-feature stats). Standard
    deviations below 1e-8 are floored to it with a DegenerateChannelWarning.
    """
    if data.ndim == 3 and data.shape[1] == N_CHANNELS:
        flat = data.transpose(1, 0, 2).reshape(N_CHANNELS, -1)
        mean = flat.mean(axis=1)
        std = flat.std(axis=1)
        kind = "channel"
    elif data.ndim == 2 and data.shape[1] == N_FEATURES:
        mean = data.mean(axis=0)
        std = data.std(axis=0)
        kind = "feature"
    else:
        raise ValueError(f"expected (M, 6, T) or (M, 30) data, got {data.shape}")
    low = std < STD_EPSILON
    if low.any():
        warnings.warn(
            f"{int(low.sum())} degenerate {kind}(s) with std < {STD_EPSILON}; floored",
            DegenerateChannelWarning,
        )
        std = np.where(low, STD_EPSILON, std)
    return NormStats(mean=mean, std=std, kind=kind)


def apply_norm(x: np.ndarray, stats: NormStats) -> np.ndarray:
    """Apply fitted stats: channel kind expects (..., 6, T), feature kind (..., 30)."""
    if stats.kind == "channel":
        return (x - stats.mean[:, None]) / stats.std[:, None]
    return (x - stats.mean) / stats.std
