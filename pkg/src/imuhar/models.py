"""Model zoo: low-level encoders, high-level heads, hierarchical composition,
probing, parameter/FLOP accounting, and checkpoint serialization.

Encoder variants map one low-level window to an embedding of dimension
`embedding_dim`; heads map the per-window embedding sequence of one
high-level window to class logits. FLOPs follow the multiply-accumulate
convention: one MAC per weight-input product in a forward pass, biases,
activations, pooling and normalization excluded. Recurrent layers count
every time step.
"""

from __future__ import annotations

import binascii
import dataclasses
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import (
    CorruptCheckpoint,
    FormatVersionMismatch,
    NonDivisibleWindow,
    ShapeMismatch,
    SpecParseError,
)
from .signal import (
    N_CHANNELS,
    N_FEATURES,
    NormStats,
    WindowedSample,
    apply_norm,
    extract_features_batch,
    split_windows_array,
)

ENCODER_VARIANTS = ("mlp_features", "cnn", "imu2clip", "cnn_lstm", "cnn_gru")
HEAD_VARIANTS = ("mlp", "gru", "lstm")

DEPLOY_PARAM_LIMIT = 25_000

CHECKPOINT_MAGIC = b"IMUHARCK"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class EncoderSpec:
    """Architecture hyperparameters of a low-level encoder."""

    variant: str
    embedding_dim: int = 32
    conv_layers: int = 2
    channels_per_kernel: int = 20
    kernel_size: int = 3
    dilations: tuple[int, ...] = (1, 2, 4)
    recurrent_layers: int = 1
    hidden_dims: tuple[int, ...] = (48, 48)  # mlp_features only
    pool: str = "average"  # cnn only
    groups: int = 4  # imu2clip only

    def __post_init__(self):
        if self.variant not in ENCODER_VARIANTS:
            raise SpecParseError(f"unknown encoder variant {self.variant!r}")
        if self.embedding_dim <= 0:
            raise SpecParseError("embedding_dim must be positive")
        if self.variant == "imu2clip" and len(self.dilations) != 1:
            raise SpecParseError("imu2clip variant uses a single fixed dilation")

    @property
    def conv_out_channels(self) -> int:
        return len(self.dilations) * self.channels_per_kernel


@dataclass(frozen=True)
class HeadSpec:
    """Architecture hyperparameters of a high-level classification head."""

    variant: str
    num_classes: int
    hidden_dims: tuple[int, ...] = (64,)  # mlp only
    hidden_size: int = 64  # gru/lstm only
    recurrent_layers: int = 1

    def __post_init__(self):
        if self.variant not in HEAD_VARIANTS:
            raise SpecParseError(f"unknown head variant {self.variant!r}")
        if self.num_classes <= 0:
            raise SpecParseError("num_classes must be positive")


def default_encoder_spec() -> EncoderSpec:
    """The shipped CNN-GRU encoder: 20,928 params, inside the on-chip budget."""
    return EncoderSpec(variant="cnn_gru")


def default_mlp_encoder_spec() -> EncoderSpec:
    """Feature-MLP encoder 30->48->48->32: 5,408 params / 5,280 FLOPs."""
    return EncoderSpec(variant="mlp_features", hidden_dims=(48, 48))


def imu2clip_reference_spec() -> EncoderSpec:
    """Reconstructed fixed-dilation CNN+GRU+GroupNorm encoder.

    Sized at 32,096 params, above the 25,000 deployment ceiling; its input
    is deliberately left unnormalized by the pipeline.
    """
    return EncoderSpec(
        variant="imu2clip",
        conv_layers=2,
        channels_per_kernel=64,
        kernel_size=5,
        dilations=(1,),
        groups=4,
    )


def default_head_spec(num_classes: int = 9) -> HeadSpec:
    return HeadSpec(variant="gru", num_classes=num_classes, hidden_size=64)


# ---------------------------------------------------------------------------
# spec (de)serialization with unknown-key rejection


def _spec_to_dict(spec) -> dict:
    d = dataclasses.asdict(spec)
    for k, v in d.items():
        if isinstance(v, tuple):
            d[k] = list(v)
    return d


def _spec_from_dict(cls, d: dict):
    if not isinstance(d, dict):
        raise SpecParseError(f"{cls.__name__} must be a JSON object")
    names = {f.name for f in dataclasses.fields(cls)}
    for k in d:
        if k not in names:
            raise SpecParseError(f"unknown {cls.__name__} key {k!r}")
    kwargs = dict(d)
    for k in ("dilations", "hidden_dims"):
        if k in kwargs and isinstance(kwargs[k], list):
            kwargs[k] = tuple(kwargs[k])
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise SpecParseError(str(e)) from e


def encoder_spec_from_dict(d: dict) -> EncoderSpec:
    return _spec_from_dict(EncoderSpec, d)


def head_spec_from_dict(d: dict) -> HeadSpec:
    return _spec_from_dict(HeadSpec, d)


# ---------------------------------------------------------------------------
# builders


def _build_conv_stack(spec: EncoderSpec, with_group_norm: bool) -> list[nn.Layer]:
    layers: list[nn.Layer] = []
    in_ch = N_CHANNELS
    for _ in range(spec.conv_layers):
        layers.append(
            nn.Conv1dBank(in_ch, spec.channels_per_kernel, spec.kernel_size, spec.dilations)
        )
        if with_group_norm:
            layers.append(nn.GroupNorm(spec.groups, spec.conv_out_channels))
        layers.append(nn.Activation("relu"))
        in_ch = spec.conv_out_channels
    return layers


def build_encoder(spec: EncoderSpec) -> nn.Sequential:
    """Uninitialized network mapping one prepared window to an embedding."""
    o = spec.embedding_dim
    if spec.variant == "mlp_features":
        layers: list[nn.Layer] = []
        prev = N_FEATURES
        for h in spec.hidden_dims:
            layers += [nn.Dense(prev, h), nn.Activation("relu")]
            prev = h
        layers.append(nn.Dense(prev, o))
        return nn.Sequential(layers)
    if spec.variant == "cnn":
        layers = _build_conv_stack(spec, with_group_norm=False)
        layers += [nn.GlobalPool(spec.pool), nn.Dense(spec.conv_out_channels, o)]
        return nn.Sequential(layers)
    # recurrent variants: conv stack, then GRU/LSTM, last step is the embedding
    layers = _build_conv_stack(spec, with_group_norm=spec.variant == "imu2clip")
    layers.append(nn.TimeMajor())
    rec = nn.Lstm if spec.variant == "cnn_lstm" else nn.Gru
    size = spec.conv_out_channels
    for _ in range(spec.recurrent_layers):
        layers.append(rec(size, o))
        size = o
    layers.append(nn.LastStep())
    return nn.Sequential(layers)


def build_head(spec: HeadSpec, n: int, embedding_dim: int) -> nn.Sequential:
    """Head over the n-window embedding sequence (input (B, n, o) or (B, n*o))."""
    o = embedding_dim
    if spec.variant == "mlp":
        layers = []
        prev = n * o
        for h in spec.hidden_dims:
            layers += [nn.Dense(prev, h), nn.Activation("relu")]
            prev = h
        layers.append(nn.Dense(prev, spec.num_classes))
        return nn.Sequential(layers)
    rec = nn.Lstm if spec.variant == "lstm" else nn.Gru
    layers = []
    size = o
    for _ in range(spec.recurrent_layers):
        layers.append(rec(size, spec.hidden_size))
        size = spec.hidden_size
    layers += [nn.LastStep(), nn.Dense(spec.hidden_size, spec.num_classes)]
    return nn.Sequential(layers)


def prepare_ll_input(raw: np.ndarray, variant: str, stats: NormStats | None) -> np.ndarray:
    """Per-variant input preparation for a batch of raw (M, 6, T) windows.

    Feature-MLP extracts and normalizes the 30 hand-picked statistics; raw
    variants normalize per channel; the imu2clip variant bypasses
    normalization entirely.
    """
    if variant == "mlp_features":
        feats = extract_features_batch(raw)
        return apply_norm(feats, stats) if stats is not None else feats
    if variant == "imu2clip":
        return raw
    return apply_norm(raw, stats) if stats is not None else raw


class HierarchicalModel:
    """Low-level encoder + high-level head over n windows, trained jointly."""

    def __init__(
        self,
        encoder_spec: EncoderSpec,
        head_spec: HeadSpec,
        class_names: list[str],
        hl_window_s: float = 30.0,
        ll_window_s: float = 1.0,
        rate_hz: float = 50.0,
        seed: int = 0,
    ):
        if len(class_names) != head_spec.num_classes:
            raise ValueError("class_names length must match head num_classes")
        n = hl_window_s / ll_window_s
        if abs(n - round(n)) > 1e-9:
            raise NonDivisibleWindow(
                f"hl window {hl_window_s}s not divisible by ll window {ll_window_s}s"
            )
        self.encoder_spec = encoder_spec
        self.head_spec = head_spec
        self.class_names = list(class_names)
        self.hl_window_s = float(hl_window_s)
        self.ll_window_s = float(ll_window_s)
        self.rate_hz = float(rate_hz)
        self.n = int(round(n))
        self.encoder = build_encoder(encoder_spec)
        self.head = build_head(head_spec, self.n, encoder_spec.embedding_dim)
        self.norm_stats: NormStats | None = None
        rng = np.random.default_rng(seed)
        self.encoder.init(rng)
        self.head.init(rng)

    @property
    def ll_samples(self) -> int:
        return int(round(self.ll_window_s * self.rate_hz))

    def named_params(self):
        yield from self.encoder.named_params("encoder.")
        yield from self.head.named_params("head.")

    def param_count(self) -> int:
        return self.encoder.param_count() + self.head.param_count()

    def zero_grad(self):
        self.encoder.zero_grad()
        self.head.zero_grad()

    def prepare_hl(self, hl_raw: np.ndarray) -> np.ndarray:
        """(B, n, 6, T) raw high-level batches -> encoder-ready input."""
        b = hl_raw.shape[0]
        flat = hl_raw.reshape((b * self.n,) + hl_raw.shape[2:])
        prepared = prepare_ll_input(flat, self.encoder_spec.variant, self.norm_stats)
        return prepared.reshape((b, self.n) + prepared.shape[1:])

    def forward_logits(self, prepared: np.ndarray, train: bool = False) -> np.ndarray:
        b = prepared.shape[0]
        if prepared.shape[1] != self.n:
            raise ShapeMismatch(f"expected {self.n} low-level windows, got {prepared.shape[1]}")
        flat = prepared.reshape((b * self.n,) + prepared.shape[2:])
        emb = self.encoder.forward(flat, train=train)
        emb = emb.reshape(b, self.n, self.encoder_spec.embedding_dim)
        if self.head_spec.variant == "mlp":
            head_in = emb.reshape(b, self.n * self.encoder_spec.embedding_dim)
        else:
            head_in = emb
        return self.head.forward(head_in, train=train)

    def backward_from_logits(self, dlogits: np.ndarray):
        dhead_in = self.head.backward(dlogits)
        b = dlogits.shape[0]
        o = self.encoder_spec.embedding_dim
        demb = dhead_in.reshape(b * self.n, o)
        self.encoder.backward(demb)

    def predict_proba(self, hl_raw: np.ndarray) -> np.ndarray:
        """(B, n, 6, T) raw batches -> (B, K) class probabilities."""
        return nn.softmax(self.forward_logits(self.prepare_hl(hl_raw)))

    def classify_high_level(self, hl: WindowedSample | np.ndarray) -> np.ndarray:
        """One raw high-level window (6, T_hl) -> probability simplex (K,)."""
        data = hl.data if isinstance(hl, WindowedSample) else hl
        split = split_windows_array(data[None], self.n)  # (1, n, 6, T)
        if split.shape[-1] != self.ll_samples:
            raise ShapeMismatch(
                f"window yields {split.shape[-1]}-sample pieces, model expects {self.ll_samples}"
            )
        return self.predict_proba(split)[0]

    def encode_low_level(self, w: WindowedSample | np.ndarray) -> np.ndarray:
        """One raw low-level window (6, T) -> embedding (o,)."""
        data = w.data if isinstance(w, WindowedSample) else w
        return self.embed(data[None])[0]

    def embed(self, ll_raw: np.ndarray) -> np.ndarray:
        """(M, 6, T) raw low-level windows -> (M, o) embeddings."""
        prepared = prepare_ll_input(ll_raw, self.encoder_spec.variant, self.norm_stats)
        return self.encoder.forward(prepared)


class ProbeModel:
    """Frozen encoder + leaky ReLU + one dense layer + softmax."""

    def __init__(
        self,
        encoder_spec: EncoderSpec,
        class_names: list[str],
        norm_stats: NormStats | None,
        slope: float = 0.01,
        seed: int = 0,
    ):
        self.encoder_spec = encoder_spec
        self.class_names = list(class_names)
        self.norm_stats = norm_stats
        self.slope = float(slope)
        self.encoder = build_encoder(encoder_spec)
        self.dense = nn.Dense(encoder_spec.embedding_dim, len(class_names))
        self.dense.init(np.random.default_rng(seed))

    @classmethod
    def from_trained(
        cls, model: HierarchicalModel, class_names: list[str], slope: float = 0.01, seed: int = 0
    ) -> "ProbeModel":
        """Attach a probe to a trained model's encoder (parameters copied)."""
        probe = cls(model.encoder_spec, class_names, model.norm_stats, slope, seed)
        for (_, dst, _), (_, src, _) in zip(
            probe.encoder.named_params(), model.encoder.named_params()
        ):
            dst[...] = src
        return probe

    def probe_param_count(self) -> int:
        return self.dense.param_count()

    def embed(self, ll_raw: np.ndarray) -> np.ndarray:
        prepared = prepare_ll_input(ll_raw, self.encoder_spec.variant, self.norm_stats)
        return self.encoder.forward(prepared)

    def head_logits(self, embeddings: np.ndarray, train: bool = False) -> np.ndarray:
        return self.dense.forward(nn.leaky_relu(embeddings, self.slope), train=train)

    def probe_forward(self, w: WindowedSample | np.ndarray) -> np.ndarray:
        """One raw low-level window -> probability simplex over probe classes."""
        data = w.data if isinstance(w, WindowedSample) else w
        return nn.softmax(self.head_logits(self.embed(data[None])))[0]

    def predict_proba(self, ll_raw: np.ndarray) -> np.ndarray:
        return nn.softmax(self.head_logits(self.embed(ll_raw)))


# ---------------------------------------------------------------------------
# parameter / FLOP accounting (pure spec arithmetic)


def _conv_stack_counts(spec: EncoderSpec, t_steps: int) -> tuple[int, int]:
    params = flops = 0
    in_ch = N_CHANNELS
    for _ in range(spec.conv_layers):
        branches = len(spec.dilations)
        params += branches * (
            spec.channels_per_kernel * in_ch * spec.kernel_size + spec.channels_per_kernel
        )
        flops += branches * (t_steps * spec.channels_per_kernel * spec.kernel_size * in_ch)
        if spec.variant == "imu2clip":
            params += 2 * spec.conv_out_channels  # group-norm scale and shift
        in_ch = spec.conv_out_channels
    return params, flops


def _recurrent_counts(kind: str, input_size: int, hidden: int, layers: int, steps: int):
    gates = 3 if kind == "gru" else 4
    params = flops = 0
    size = input_size
    for _ in range(layers):
        params += gates * (size * hidden + hidden * hidden + hidden)
        flops += steps * gates * (size * hidden + hidden * hidden)
        size = hidden
    return params, flops


def count_encoder_params(spec: EncoderSpec) -> int:
    o = spec.embedding_dim
    if spec.variant == "mlp_features":
        dims = [N_FEATURES, *spec.hidden_dims, o]
        return sum(a * b + b for a, b in zip(dims, dims[1:]))
    params, _ = _conv_stack_counts(spec, t_steps=1)
    if spec.variant == "cnn":
        return params + spec.conv_out_channels * o + o
    kind = "lstm" if spec.variant == "cnn_lstm" else "gru"
    rec_params, _ = _recurrent_counts(kind, spec.conv_out_channels, o, spec.recurrent_layers, 1)
    return params + rec_params


def count_encoder_flops(spec: EncoderSpec, t_steps: int = 50) -> int:
    """MACs of one encoder forward pass over a t_steps-sample window."""
    o = spec.embedding_dim
    if spec.variant == "mlp_features":
        dims = [N_FEATURES, *spec.hidden_dims, o]
        return sum(a * b for a, b in zip(dims, dims[1:]))
    _, flops = _conv_stack_counts(spec, t_steps)
    if spec.variant == "cnn":
        return flops + spec.conv_out_channels * o
    kind = "lstm" if spec.variant == "cnn_lstm" else "gru"
    _, rec_flops = _recurrent_counts(
        kind, spec.conv_out_channels, o, spec.recurrent_layers, t_steps
    )
    return flops + rec_flops


def count_head_params(spec: HeadSpec, n: int, embedding_dim: int) -> int:
    o = embedding_dim
    if spec.variant == "mlp":
        dims = [n * o, *spec.hidden_dims, spec.num_classes]
        return sum(a * b + b for a, b in zip(dims, dims[1:]))
    params, _ = _recurrent_counts(spec.variant, o, spec.hidden_size, spec.recurrent_layers, n)
    return params + spec.hidden_size * spec.num_classes + spec.num_classes


def count_head_flops(spec: HeadSpec, n: int, embedding_dim: int) -> int:
    """MACs of one head pass over the n-window sequence (all steps counted)."""
    o = embedding_dim
    if spec.variant == "mlp":
        dims = [n * o, *spec.hidden_dims, spec.num_classes]
        return sum(a * b for a, b in zip(dims, dims[1:]))
    _, flops = _recurrent_counts(spec.variant, o, spec.hidden_size, spec.recurrent_layers, n)
    return flops + spec.hidden_size * spec.num_classes


def count_probe_params(embedding_dim: int, num_classes: int) -> int:
    return embedding_dim * num_classes + num_classes


def count_probe_flops(embedding_dim: int, num_classes: int) -> int:
    return embedding_dim * num_classes


@dataclass(frozen=True)
class BudgetReport:
    params: int
    flops: int
    limit: int
    passed: bool
    margin: int


def check_deploy_budget(spec: EncoderSpec, t_steps: int = 50) -> BudgetReport:
    """Strict on-chip gate: encoders need fewer than 25,000 parameters."""
    params = count_encoder_params(spec)
    return BudgetReport(
        params=params,
        flops=count_encoder_flops(spec, t_steps),
        limit=DEPLOY_PARAM_LIMIT,
        passed=params < DEPLOY_PARAM_LIMIT,
        margin=DEPLOY_PARAM_LIMIT - params,
    )


# ---------------------------------------------------------------------------
# checkpoints


def _norm_stats_to_json(stats: NormStats | None):
    if stats is None:
        return None
    return {"kind": stats.kind, "mean": stats.mean.tolist(), "std": stats.std.tolist()}


def _norm_stats_from_json(d) -> NormStats | None:
    if d is None:
        return None
    return NormStats(
        mean=np.asarray(d["mean"], dtype=np.float64),
        std=np.asarray(d["std"], dtype=np.float64),
        kind=d["kind"],
    )


def _model_header_and_tensors(model):
    if isinstance(model, HierarchicalModel):
        header = {
            "kind": "hierarchical",
            "encoder_spec": _spec_to_dict(model.encoder_spec),
            "head_spec": _spec_to_dict(model.head_spec),
            "class_names": model.class_names,
            "hl_window_s": model.hl_window_s,
            "ll_window_s": model.ll_window_s,
            "rate_hz": model.rate_hz,
            "norm_stats": _norm_stats_to_json(model.norm_stats),
        }
        tensors = [(name, p) for name, p, _ in model.named_params()]
    elif isinstance(model, ProbeModel):
        header = {
            "kind": "probe",
            "encoder_spec": _spec_to_dict(model.encoder_spec),
            "class_names": model.class_names,
            "slope": model.slope,
            "norm_stats": _norm_stats_to_json(model.norm_stats),
        }
        tensors = [(name, p) for name, p, _ in model.encoder.named_params("encoder.")]
        tensors += [(f"probe.{k}", v) for k, v in model.dense.params.items()]
    else:
        raise TypeError(f"cannot checkpoint {type(model).__name__}")
    header["tensors"] = [{"name": n, "shape": list(p.shape)} for n, p in tensors]
    return header, tensors


def save_model(model, path) -> None:
    """Write a checkpoint: magic, version, JSON header, float64 blob, CRC32."""
    header, tensors = _model_header_and_tensors(model)
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    blob = b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for _, p in tensors)
    crc = binascii.crc32(header_bytes + blob) & 0xFFFFFFFF
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(header_bytes)))
        f.write(header_bytes)
        f.write(blob)
        f.write(struct.pack("<I", crc))


def load_model(path):
    """Read a checkpoint back into a HierarchicalModel or ProbeModel.

    Parameter tensors round-trip bit-exactly. Raises FormatVersionMismatch
    for foreign versions and CorruptCheckpoint for truncation or checksum
    failure.
    """
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < len(CHECKPOINT_MAGIC) + 12 or raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CorruptCheckpoint(f"{path}: not a checkpoint file")
    off = len(CHECKPOINT_MAGIC)
    version, header_len = struct.unpack_from("<II", raw, off)
    if version != CHECKPOINT_VERSION:
        raise FormatVersionMismatch(f"{path}: version {version}, expected {CHECKPOINT_VERSION}")
    off += 8
    body = raw[off:-4]
    if len(body) < header_len:
        raise CorruptCheckpoint(f"{path}: truncated header")
    (crc_stored,) = struct.unpack_from("<I", raw, len(raw) - 4)
    if binascii.crc32(body) & 0xFFFFFFFF != crc_stored:
        raise CorruptCheckpoint(f"{path}: checksum mismatch")
    header = json.loads(body[:header_len].decode("utf-8"))
    blob = body[header_len:]

    enc_spec = encoder_spec_from_dict(header["encoder_spec"])
    if header["kind"] == "hierarchical":
        model = HierarchicalModel(
            enc_spec,
            head_spec_from_dict(header["head_spec"]),
            header["class_names"],
            hl_window_s=header["hl_window_s"],
            ll_window_s=header["ll_window_s"],
            rate_hz=header["rate_hz"],
        )
        targets = {name: p for name, p, _ in model.named_params()}
    elif header["kind"] == "probe":
        model = ProbeModel(
            enc_spec, header["class_names"], None, slope=header["slope"]
        )
        targets = {name: p for name, p, _ in model.encoder.named_params("encoder.")}
        targets.update({f"probe.{k}": v for k, v in model.dense.params.items()})
    else:
        raise CorruptCheckpoint(f"{path}: unknown model kind {header['kind']!r}")
    model.norm_stats = _norm_stats_from_json(header["norm_stats"])

    pos = 0
    for entry in header["tensors"]:
        name, shape = entry["name"], tuple(entry["shape"])
        if name not in targets or targets[name].shape != shape:
            raise CorruptCheckpoint(f"{path}: unexpected tensor {name} {shape}")
        nbytes = int(np.prod(shape)) * 8
        if pos + nbytes > len(blob):
            raise CorruptCheckpoint(f"{path}: truncated tensor data")
        targets[name][...] = np.frombuffer(
            blob[pos : pos + nbytes], dtype="<f8"
        ).reshape(shape)
        pos += nbytes
    if pos != len(blob):
        raise CorruptCheckpoint(f"{path}: trailing bytes after tensors")
    return model
