"""Training: weighted cross-entropy, step LR schedule, participant-stratified
splitting, k-fold plans, and the joint/probe training loops.

The optimizer is plain mini-batch gradient descent with a step learning-rate
scheduler. Models train from high-level labels only; gradients flow through
the head and the encoder jointly. Probe training freezes the encoder and
updates the single probing layer.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import DivergenceDetected, InfeasibleSplit
from .metrics import evaluate
from .models import HierarchicalModel, ProbeModel
from .signal import WindowedSample, fit_norm_stats, split_windows_array


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.3
    batch_size: int = 32
    max_epochs: int = 30
    lr_gamma: float = 0.5
    lr_step_epochs: int = 10
    seed: int = 0
    class_weights_mode: str = "inverse_frequency"  # or "uniform"

    def __post_init__(self):
        if min(self.learning_rate, self.batch_size, self.max_epochs, self.lr_step_epochs) <= 0:
            raise ValueError("learning_rate, batch_size, max_epochs, lr_step_epochs must be positive")
        if not 0 < self.lr_gamma <= 1:
            raise ValueError("lr_gamma must be in (0, 1]")
        if self.class_weights_mode not in ("inverse_frequency", "uniform"):
            raise ValueError(f"unknown class_weights_mode {self.class_weights_mode!r}")


def step_lr(epoch: int, config: TrainConfig) -> float:
    """lr0 * gamma^floor(epoch / step)."""
    return config.learning_rate * config.lr_gamma ** (epoch // config.lr_step_epochs)


def class_weights(counts: np.ndarray, mode: str = "inverse_frequency") -> np.ndarray:
    """Per-class loss weights; inverse frequency is w_c = N / (K * n_c)."""
    counts = np.asarray(counts, dtype=np.float64)
    if mode == "uniform":
        return np.ones_like(counts)
    if (counts <= 0).any():
        raise ValueError("inverse-frequency weights need every class present")
    return counts.sum() / (len(counts) * counts)


def weighted_cross_entropy(p: np.ndarray, target: int, weights: np.ndarray) -> float:
    """-w[target] * ln p[target] for one softmax output."""
    return float(-weights[target] * np.log(p[target]))


def weighted_ce_from_logits(logits, targets, weights):
    """Batch loss and its gradient w.r.t. the logits.

    Loss is the mean over samples of -w[y] ln softmax(logits)[y]; the
    per-sample gradient is w[y] * (p - onehot(y)), scaled by 1/B for the
    mean.
    """
    b = logits.shape[0]
    p = nn.softmax(logits)
    idx = np.arange(b)
    w = weights[targets]
    loss = float(-(w * np.log(p[idx, targets])).mean())
    dlogits = p * w[:, None]
    dlogits[idx, targets] -= w
    dlogits /= b
    return loss, dlogits


# ---------------------------------------------------------------------------
# participant-stratified splitting


@dataclass(frozen=True)
class SplitPlan:
    train_participants: tuple[str, ...]
    test_participants: tuple[str, ...]
    train_class_counts: np.ndarray
    test_class_counts: np.ndarray


@dataclass(frozen=True)
class FoldPlan:
    folds: tuple[tuple[str, ...], ...]
    fold_class_counts: np.ndarray  # (k, n_classes)


def _participant_class_table(samples):
    """(participants, counts) with counts of shape (P, K)."""
    k = max(s.label for s in samples) + 1
    by_pid: dict[str, np.ndarray] = {}
    for s in samples:
        row = by_pid.setdefault(s.participant_id, np.zeros(k, dtype=np.int64))
        row[s.label] += 1
    pids = sorted(by_pid)
    return pids, np.stack([by_pid[p] for p in pids]), k


def _check_feasible(counts: np.ndarray, pids):
    # a class all of whose samples come from one participant cannot be
    # represented on both sides of any participant-disjoint split
    contributors = (counts > 0).sum(axis=0)
    if len(pids) < 2:
        raise InfeasibleSplit("need at least two participants")
    bad = np.nonzero(contributors < 2)[0]
    if bad.size:
        raise InfeasibleSplit(
            f"class index(es) {bad.tolist()} contributed by a single participant"
        )


def stratified_participant_split(samples, test_fraction: float, seed: int) -> SplitPlan:
    """Greedy participant-disjoint split preserving per-class proportions.

    Participants are assigned whole; each goes to the test side only when
    doing so reduces the squared deviation of per-class test counts from
    test_fraction of the class totals. Deterministic under the seed.
    """
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must be in (0, 1)")
    pids, counts, _ = _participant_class_table(samples)
    _check_feasible(counts, pids)
    rng = np.random.default_rng(seed)
    order = np.lexsort((rng.permutation(len(pids)), -counts.sum(axis=1)))
    target = test_fraction * counts.sum(axis=0)
    test_counts = np.zeros_like(target)
    test_ids = []
    for i in order:
        stay = ((test_counts - target) ** 2).sum()
        go = ((test_counts + counts[i] - target) ** 2).sum()
        if go < stay:
            test_counts += counts[i]
            test_ids.append(pids[i])
    if not test_ids or len(test_ids) == len(pids):
        # degenerate greedy outcome on tiny inputs: force the smallest mover
        i = order[-1]
        if not test_ids:
            test_ids.append(pids[i])
            test_counts += counts[i]
        else:
            test_ids.remove(pids[i])
            test_counts -= counts[i]
    test_set = set(test_ids)
    train_ids = tuple(p for p in pids if p not in test_set)
    train_counts = counts.sum(axis=0) - test_counts
    return SplitPlan(
        train_participants=train_ids,
        test_participants=tuple(sorted(test_set)),
        train_class_counts=train_counts.astype(np.int64),
        test_class_counts=test_counts.astype(np.int64),
    )


def make_folds(samples, k: int, seed: int) -> FoldPlan:
    """Greedy k-way participant-disjoint stratified fold assignment."""
    if k < 2:
        raise ValueError("need at least 2 folds")
    pids, counts, n_classes = _participant_class_table(samples)
    if len(pids) < k:
        raise InfeasibleSplit(f"{len(pids)} participants cannot fill {k} folds")
    _check_feasible(counts, pids)
    rng = np.random.default_rng(seed)
    order = np.lexsort((rng.permutation(len(pids)), -counts.sum(axis=1)))
    target = counts.sum(axis=0) / k
    fold_counts = np.zeros((k, n_classes), dtype=np.float64)
    fold_sizes = np.zeros(k)
    folds: list[list[str]] = [[] for _ in range(k)]
    for i in order:
        deltas = ((fold_counts + counts[i] - target) ** 2).sum(axis=1) - (
            (fold_counts - target) ** 2
        ).sum(axis=1)
        best = np.lexsort((np.arange(k), fold_sizes, deltas))[0]
        fold_counts[best] += counts[i]
        fold_sizes[best] += counts[i].sum()
        folds[best].append(pids[i])
    if any(not f for f in folds):
        raise InfeasibleSplit("greedy assignment left an empty fold")
    return FoldPlan(
        folds=tuple(tuple(sorted(f)) for f in folds),
        fold_class_counts=fold_counts.astype(np.int64),
    )


def split_samples(samples, plan: SplitPlan):
    test = set(plan.test_participants)
    return (
        [s for s in samples if s.participant_id not in test],
        [s for s in samples if s.participant_id in test],
    )


# ---------------------------------------------------------------------------
# training loops


@dataclass
class EpochStats:
    epoch: int
    lr: float
    train_loss: float
    test_macro_f1: float
    test_micro_acc: float


def write_history_csv(history: list[EpochStats], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "lr", "train_loss", "test_macro_f1", "test_micro_acc"])
        for h in history:
            w.writerow([h.epoch, repr(h.lr), repr(h.train_loss), repr(h.test_macro_f1), repr(h.test_micro_acc)])


def stack_hl_samples(samples, n: int):
    """Windowed HL samples -> ((N, n, 6, T_ll) array, (N,) labels)."""
    data = np.stack([s.data for s in samples])
    labels = np.array([s.label for s in samples], dtype=np.int64)
    return split_windows_array(data, n), labels


def _sgd_step(named_params, lr: float):
    for _, p, g in named_params:
        p -= lr * g


def train_hierarchical(
    train_samples: list[WindowedSample],
    test_samples: list[WindowedSample],
    model: HierarchicalModel,
    config: TrainConfig,
) -> list[EpochStats]:
    """Jointly train encoder and head from high-level labels only.

    Fits normalization stats on the training split, then runs mini-batch
    gradient descent under the step LR schedule. Records train loss and
    test macro-F1/micro-accuracy per epoch. Deterministic under the config
    seed. Raises DivergenceDetected on a non-finite loss.
    """
    k = model.head_spec.num_classes
    x_raw, y = stack_hl_samples(train_samples, model.n)
    xt_raw, yt = stack_hl_samples(test_samples, model.n)

    if model.encoder_spec.variant == "imu2clip":
        model.norm_stats = None
    else:
        flat = x_raw.reshape((-1,) + x_raw.shape[2:])
        if model.encoder_spec.variant == "mlp_features":
            from .signal import extract_features_batch

            model.norm_stats = fit_norm_stats(extract_features_batch(flat))
        else:
            model.norm_stats = fit_norm_stats(flat)

    x = model.prepare_hl(x_raw)
    xt = model.prepare_hl(xt_raw)
    weights = class_weights(np.bincount(y, minlength=k), config.class_weights_mode)

    rng = np.random.default_rng(config.seed)
    params = list(model.named_params())
    history: list[EpochStats] = []
    for epoch in range(config.max_epochs):
        lr = step_lr(epoch, config)
        order = rng.permutation(len(y))
        losses = []
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            logits = model.forward_logits(x[idx], train=True)
            loss, dlogits = weighted_ce_from_logits(logits, y[idx], weights)
            if not np.isfinite(loss):
                raise DivergenceDetected(
                    f"non-finite loss at epoch {epoch}, batch {start // config.batch_size}, lr {lr}"
                )
            model.zero_grad()
            model.backward_from_logits(dlogits)
            _sgd_step(params, lr)
            losses.append(loss)
        preds = predict_classes(model, xt)
        report = evaluate(preds, yt, k)
        history.append(
            EpochStats(
                epoch=epoch,
                lr=lr,
                train_loss=float(np.mean(losses)),
                test_macro_f1=report.macro_f1,
                test_micro_acc=report.micro_accuracy,
            )
        )
    return history


def predict_classes(model: HierarchicalModel, prepared: np.ndarray, batch: int = 16):
    """Argmax predictions over prepared (N, n, ...) inputs, batched."""
    out = np.empty(prepared.shape[0], dtype=np.int64)
    for start in range(0, prepared.shape[0], batch):
        logits = model.forward_logits(prepared[start : start + batch])
        out[start : start + batch] = logits.argmax(axis=1)
    return out


def train_probe(
    train_samples: list[WindowedSample],
    test_samples: list[WindowedSample],
    probe: ProbeModel,
    config: TrainConfig,
) -> list[EpochStats]:
    """Train the probing layer on a frozen encoder.

    Embeddings are computed once up front (the encoder never updates);
    only the dense probing layer's parameters move, under the same loss
    and scheduler machinery as hierarchical training.
    """
    k = len(probe.class_names)
    emb = probe.embed(np.stack([s.data for s in train_samples]))
    y = np.array([s.label for s in train_samples], dtype=np.int64)
    emb_t = probe.embed(np.stack([s.data for s in test_samples])) if test_samples else None
    yt = np.array([s.label for s in test_samples], dtype=np.int64) if test_samples else None
    weights = class_weights(np.bincount(y, minlength=k), config.class_weights_mode)

    rng = np.random.default_rng(config.seed)
    params = [("probe." + n, p, probe.dense.grads[n]) for n, p in probe.dense.params.items()]
    history: list[EpochStats] = []
    for epoch in range(config.max_epochs):
        lr = step_lr(epoch, config)
        order = rng.permutation(len(y))
        losses = []
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            logits = probe.head_logits(emb[idx], train=True)
            loss, dlogits = weighted_ce_from_logits(logits, y[idx], weights)
            if not np.isfinite(loss):
                raise DivergenceDetected(f"non-finite probe loss at epoch {epoch}")
            probe.dense.zero_grad()
            probe.dense.backward(dlogits)
            _sgd_step(params, lr)
            losses.append(loss)
        if emb_t is not None and len(yt):
            preds = probe.head_logits(emb_t).argmax(axis=1)
            report = evaluate(preds, yt, k)
            f1, acc = report.macro_f1, report.micro_accuracy
        else:
            f1 = acc = float("nan")
        history.append(EpochStats(epoch, lr, float(np.mean(losses)), f1, acc))
    return history
