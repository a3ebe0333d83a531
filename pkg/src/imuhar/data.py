"""Dataset ingestion, label vocabularies, and the synthetic IMU generator.

Recordings interchange as one CSV per (participant, recording) with header
t,ax,ay,az,gx,gy,gz plus a sidecar .label file holding the class name; a
JSON manifest lists the files, the class vocabulary, the sampling rate,
and the windowing defaults for its level (30 s / 10 s stride for high
level, 1 s / 1 s for low level).

The synthetic generator produces labeled recordings built from three
spectral motifs (stationary, walking, running) so the whole pipeline can
be verified at desk scale: low-level datasets are single-motif recordings;
high-level classes are motif-proportion schedules.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParseError, SpecParseError, UnknownLabel
from .signal import (
    CHANNEL_NAMES,
    N_CHANNELS,
    ImuRecording,
    WindowedSample,
    resample_linear,
    window,
)

HL_DEFAULT_CLASSES = (
    "soccer",
    "basketball",
    "dance",
    "rock_climbing",
    "body_stretch",
    "housekeeping",
    "cooking",
    "bike_repair",
    "music",
)
LL_DEFAULT_CLASSES = ("stationary", "walking", "running")

CSV_HEADER = ("t",) + CHANNEL_NAMES


@dataclass(frozen=True)
class RecordingEntry:
    path: str
    participant_id: str


@dataclass(frozen=True)
class DatasetManifest:
    level: str  # "high" | "low"
    classes: tuple[str, ...]
    recordings: tuple[RecordingEntry, ...]
    rate_hz: float = 50.0
    window_s: float | None = None  # defaults by level when None
    stride_s: float | None = None

    def __post_init__(self):
        if self.level not in ("high", "low"):
            raise SpecParseError(f"manifest level must be high or low, got {self.level!r}")
        if len(set(self.classes)) != len(self.classes):
            raise SpecParseError("manifest class names must be unique")
        if self.window_s is None:
            object.__setattr__(self, "window_s", 30.0 if self.level == "high" else 1.0)
        if self.stride_s is None:
            object.__setattr__(self, "stride_s", 10.0 if self.level == "high" else 1.0)

    def class_index(self, name: str) -> int:
        try:
            return self.classes.index(name)
        except ValueError:
            raise UnknownLabel(f"label {name!r} not in manifest vocabulary {list(self.classes)}")


_MANIFEST_KEYS = {"level", "classes", "rate_hz", "window_s", "stride_s", "recordings"}


def load_manifest(path) -> DatasetManifest:
    with open(path) as f:
        raw = json.load(f)
    unknown = set(raw) - _MANIFEST_KEYS
    if unknown:
        raise SpecParseError(f"unknown manifest key(s) {sorted(unknown)}")
    for key in ("level", "classes", "recordings"):
        if key not in raw:
            raise SpecParseError(f"manifest missing required key {key!r}")
    entries = []
    for r in raw["recordings"]:
        if set(r) != {"path", "participant_id"}:
            raise SpecParseError(f"recording entries need exactly path and participant_id: {r}")
        entries.append(RecordingEntry(path=r["path"], participant_id=r["participant_id"]))
    return DatasetManifest(
        level=raw["level"],
        classes=tuple(raw["classes"]),
        recordings=tuple(entries),
        rate_hz=float(raw.get("rate_hz", 50.0)),
        window_s=raw.get("window_s"),
        stride_s=raw.get("stride_s"),
    )


def save_manifest(manifest: DatasetManifest, path) -> None:
    doc = {
        "level": manifest.level,
        "classes": list(manifest.classes),
        "rate_hz": manifest.rate_hz,
        "window_s": manifest.window_s,
        "stride_s": manifest.stride_s,
        "recordings": [
            {"path": e.path, "participant_id": e.participant_id} for e in manifest.recordings
        ],
    }
    with open(path, "w") as f:
        json.dump(doc, f, sort_keys=True, indent=2)
        f.write("\n")


def _label_sidecar(csv_path: Path) -> Path:
    return csv_path.with_suffix(".label")


def write_recording(rec: ImuRecording, csv_path) -> None:
    """Serialize a recording; floats use repr so the round trip is lossless."""
    csv_path = Path(csv_path)
    with open(csv_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(CSV_HEADER)
        for i in range(rec.n_samples):
            w.writerow([repr(rec.timestamps[i])] + [repr(rec.channels[c, i]) for c in range(N_CHANNELS)])
    if rec.label is not None:
        _label_sidecar(csv_path).write_text(rec.label + "\n")


def read_recording(csv_path, participant_id: str, vocabulary=None) -> ImuRecording:
    """Parse one CSV recording plus its label sidecar.

    Malformed or non-finite cells raise ParseError with the offending
    line/column; labels outside `vocabulary` raise UnknownLabel.
    """
    csv_path = Path(csv_path)
    times: list[float] = []
    values: list[list[float]] = []
    with open(csv_path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
            raise ParseError(csv_path, 1, 1, f"expected header {','.join(CSV_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(CSV_HEADER):
                raise ParseError(csv_path, lineno, len(row), f"expected {len(CSV_HEADER)} columns")
            parsed = []
            for col, cell in enumerate(row, start=1):
                try:
                    v = float(cell)
                except ValueError:
                    raise ParseError(csv_path, lineno, col, f"not a number: {cell!r}")
                if not math.isfinite(v):
                    raise ParseError(csv_path, lineno, col, f"non-finite value {cell!r} in column {CSV_HEADER[col-1]}")
                parsed.append(v)
            times.append(parsed[0])
            values.append(parsed[1:])
    label = None
    sidecar = _label_sidecar(csv_path)
    if sidecar.exists():
        label = sidecar.read_text().strip()
        if vocabulary is not None and label not in vocabulary:
            raise UnknownLabel(f"{sidecar}: label {label!r} not in vocabulary {list(vocabulary)}")
    return ImuRecording(
        participant_id=participant_id,
        timestamps=np.asarray(times, dtype=np.float64),
        channels=np.asarray(values, dtype=np.float64).T,
        label=label,
    )


def ingest(manifest: DatasetManifest, base_dir) -> list[ImuRecording]:
    """Read and validate every recording listed in a manifest."""
    base = Path(base_dir)
    return [
        read_recording(base / e.path, e.participant_id, vocabulary=manifest.classes)
        for e in manifest.recordings
    ]


def windows_from_recordings(
    recordings, manifest: DatasetManifest, rate_hz: float | None = None,
    window_s: float | None = None, stride_s: float | None = None,
) -> list[WindowedSample]:
    """Resample and window labeled recordings into classifier samples."""
    rate = manifest.rate_hz if rate_hz is None else rate_hz
    win = manifest.window_s if window_s is None else window_s
    stride = manifest.stride_s if stride_s is None else stride_s
    out: list[WindowedSample] = []
    for rec in recordings:
        if rec.label is None:
            raise UnknownLabel(f"recording for {rec.participant_id} has no label sidecar")
        resampled = resample_linear(rec, rate)
        out.extend(window(resampled, win, stride, rate, label=manifest.class_index(rec.label)))
    return out


def subsample_per_class(samples, n_per_class: int, seed: int):
    """Uniform per-class subsample without replacement, deterministic.

    Classes with fewer than n_per_class samples contribute everything
    they have.
    """
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    rng = np.random.default_rng(seed)
    by_class: dict[int, list] = {}
    for s in samples:
        by_class.setdefault(s.label, []).append(s)
    out = []
    for label in sorted(by_class):
        group = by_class[label]
        if len(group) <= n_per_class:
            out.extend(group)
        else:
            idx = rng.choice(len(group), size=n_per_class, replace=False)
            out.extend(group[i] for i in sorted(idx))
    return out


# ---------------------------------------------------------------------------
# synthetic generator


@dataclass(frozen=True)
class MotifParams:
    """One low-level motion pattern: a sinusoid atop a gravity offset."""

    base_freq_hz: float
    amplitude: float  # vertical-accel peak, m/s^2 (0 for stationary)
    noise_std: float
    gravity_offset: tuple[float, float, float] = (0.0, 0.0, 9.81)


@dataclass(frozen=True)
class ActivityClass:
    """A labeled schedule mixing motifs in fixed expected proportions."""

    name: str
    motif_weights: dict[str, float]
    mean_segment_s: float


@dataclass(frozen=True)
class SynthSpec:
    level: str
    motifs: dict[str, MotifParams]
    classes: tuple[ActivityClass, ...]
    participants: int
    recordings_per_participant: int
    duration_s: float
    rate_hz: float = 100.0
    seed: int = 0

    def __post_init__(self):
        for name, m in self.motifs.items():
            if m.base_freq_hz >= self.rate_hz / 2:
                raise ValueError(f"motif {name}: frequency {m.base_freq_hz} aliases at {self.rate_hz} Hz")
            if m.amplitude < 0:
                raise ValueError(f"motif {name}: amplitude must be >= 0")

    def class_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.classes)


def default_motifs() -> dict[str, MotifParams]:
    return {
        "stationary": MotifParams(base_freq_hz=0.0, amplitude=0.0, noise_std=0.08),
        "walking": MotifParams(base_freq_hz=2.0, amplitude=1.2, noise_std=0.15),
        "running": MotifParams(base_freq_hz=3.2, amplitude=3.5, noise_std=0.25),
    }


def default_ll_spec(
    participants: int = 8,
    recordings_per_participant: int = 2,
    duration_s: float = 60.0,
    seed: int = 0,
) -> SynthSpec:
    """Single-motif recordings labeled stationary / walking / running."""
    classes = tuple(
        ActivityClass(name, {name: 1.0}, mean_segment_s=duration_s)
        for name in LL_DEFAULT_CLASSES
    )
    return SynthSpec(
        level="low",
        motifs=default_motifs(),
        classes=classes,
        participants=participants,
        recordings_per_participant=recordings_per_participant,
        duration_s=duration_s,
        seed=seed,
    )


def default_hl_spec(
    participants: int = 12,
    recordings_per_participant: int = 1,
    duration_s: float = 460.0,
    seed: int = 0,
) -> SynthSpec:
    """Three mixture classes whose separability grows with window length."""
    classes = (
        ActivityClass("focused_desk", {"stationary": 0.9, "walking": 0.1}, mean_segment_s=6.0),
        ActivityClass("errand_walk", {"walking": 0.75, "stationary": 0.25}, mean_segment_s=4.0),
        ActivityClass("interval_training", {"running": 0.5, "walking": 0.5}, mean_segment_s=3.5),
    )
    return SynthSpec(
        level="high",
        motifs=default_motifs(),
        classes=classes,
        participants=participants,
        recordings_per_participant=recordings_per_participant,
        duration_s=duration_s,
        seed=seed,
    )


def _motif_segment(m: MotifParams, t, freq_scale, amp_scale, posture, rng):
    """(6, len(t)) channels for one segment of a single motif."""
    out = np.empty((N_CHANNELS, t.size), dtype=np.float64)
    g = np.asarray(m.gravity_offset) + posture
    amp = m.amplitude * amp_scale
    f = m.base_freq_hz * freq_scale
    if amp > 0:
        phases = rng.uniform(0, 2 * np.pi, size=6)
        wt = 2 * np.pi * f * t
        # accel: dominant vertical bounce with weaker lateral components
        out[0] = g[0] + 0.45 * amp * np.sin(wt + phases[0])
        out[1] = g[1] + 0.30 * amp * np.sin(wt + phases[1])
        out[2] = g[2] + amp * np.sin(wt + phases[2])
        # gyro: pitch oscillation dominates head motion
        gyro_amp = 0.35 * amp
        out[3] = 0.50 * gyro_amp * np.sin(wt + phases[3])
        out[4] = gyro_amp * np.sin(wt + phases[4])
        out[5] = 0.25 * gyro_amp * np.sin(wt + phases[5])
    else:
        out[:3] = g[:, None]
        out[3:] = 0.0
    out += rng.normal(0.0, m.noise_std, size=out.shape)
    return out


def generate_synthetic(spec: SynthSpec) -> list[ImuRecording]:
    """Deterministic labeled recordings per the spec's motif schedules.

    Each participant gets jittered motif frequency/amplitude and a small
    posture offset on the accelerometer channels, so participant-disjoint
    splits measure real generalization.
    """
    rng = np.random.default_rng(spec.seed)
    n = int(round(spec.duration_s * spec.rate_hz)) + 1
    t_all = np.arange(n) / spec.rate_hz
    recordings = []
    for p in range(spec.participants):
        pid = f"p{p:03d}"
        freq_scale = rng.uniform(0.92, 1.08)
        amp_scale = rng.uniform(0.85, 1.15)
        posture = rng.normal(0.0, 0.15, size=3)
        for cls in spec.classes:
            names = sorted(cls.motif_weights)
            probs = np.array([cls.motif_weights[k] for k in names])
            probs = probs / probs.sum()
            for _ in range(spec.recordings_per_participant):
                channels = np.empty((N_CHANNELS, n), dtype=np.float64)
                pos = 0
                while pos < n:
                    name = names[rng.choice(len(names), p=probs)]
                    seg_s = cls.mean_segment_s * rng.uniform(0.6, 1.4)
                    seg_len = min(n - pos, max(1, int(round(seg_s * spec.rate_hz))))
                    channels[:, pos : pos + seg_len] = _motif_segment(
                        spec.motifs[name],
                        t_all[pos : pos + seg_len],
                        freq_scale,
                        amp_scale,
                        posture,
                        rng,
                    )
                    pos += seg_len
                recordings.append(
                    ImuRecording(
                        participant_id=pid,
                        timestamps=t_all.copy(),
                        channels=channels,
                        label=cls.name,
                    )
                )
    return recordings


def manifest_for_synthetic(spec: SynthSpec, window_s=None, stride_s=None) -> DatasetManifest:
    """Manifest metadata matching generate_synthetic output (no files)."""
    return DatasetManifest(
        level=spec.level,
        classes=spec.class_names(),
        recordings=(),
        rate_hz=50.0,
        window_s=window_s,
        stride_s=stride_s,
    )


def write_synthetic_dataset(spec: SynthSpec, out_dir) -> DatasetManifest:
    """Generate, serialize to CSV + sidecars, and write manifest.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    recordings = generate_synthetic(spec)
    entries = []
    counters: dict[str, int] = {}
    for rec in recordings:
        i = counters.get(rec.participant_id, 0)
        counters[rec.participant_id] = i + 1
        name = f"{rec.participant_id}_r{i:02d}.csv"
        write_recording(rec, out / name)
        entries.append(RecordingEntry(path=name, participant_id=rec.participant_id))
    manifest = DatasetManifest(
        level=spec.level,
        classes=spec.class_names(),
        recordings=tuple(entries),
        rate_hz=50.0,
    )
    save_manifest(manifest, out / "manifest.json")
    return manifest
