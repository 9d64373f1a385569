"""Head training: AdamW with decoupled weight decay, label smoothing, mixup
on feature vectors, class-weighted loss, checkpoint selection by validation
macro-F1, and k-fold orchestration.

A dataset here is a list of (f_v, f_a or None, label) triples as produced
by the alignment module; MISSING-labeled frames must be filtered out before
training.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .datamodel import ExpressionLabel, compute_class_weights, make_folds
from .errors import ShapeError, TrainingError, ValidationError
from .metrics import confusion, macro_f1
from .moe import MoEHeadParams, init_moe_params, moe_backward, moe_forward_cached
from .fusion import (
    BaselineFusionParams,
    BaselineKind,
    GatedFusionParams,
    LinearProbeParams,
    baseline_backward,
    baseline_forward_cached,
    gated_backward,
    gated_forward_cached,
    init_baseline_params,
    init_gated_params,
    init_probe_params,
    probe_backward,
    probe_forward_cached,
)
from .ndmath import Rng, weighted_soft_ce


class HeadKind(Enum):
    MOE = "moe"
    GATED = "gated"
    CONCAT_LINEAR = "concat-linear"
    CONCAT_MLP = "concat-mlp"
    PROBE_VISUAL = "probe-visual"
    PROBE_AUDIO = "probe-audio"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 12
    lr_head: float = 3e-4
    weight_decay: float = 1e-2
    batch_size: int = 64
    label_smoothing: float = 0.1
    mixup_alpha: float = 0.2
    seed: int = 0
    n_classes: int = 8
    hidden: int = 512
    moe_experts: int = 4
    dropout: float = 0.1
    select_by: str = "val_macro_f1"

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValidationError("epochs and batch_size must be >= 1")
        if self.lr_head < 0 or self.weight_decay < 0 or self.mixup_alpha < 0:
            raise ValidationError("lr, weight_decay and mixup_alpha must be >= 0")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValidationError("label_smoothing must lie in [0,1)")
        if self.select_by != "val_macro_f1":
            raise ValidationError(f"unknown selection rule {self.select_by!r}")


# ---------------------------------------------------------------------------
# AdamW
# ---------------------------------------------------------------------------


@dataclass
class AdamWState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adamw(tensors: dict[str, np.ndarray]) -> AdamWState:
    return AdamWState(
        {k: np.zeros_like(t, dtype=np.float64) for k, t in tensors.items()},
        {k: np.zeros_like(t, dtype=np.float64) for k, t in tensors.items()},
    )


def adamw_step(
    tensors: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamWState,
    lr: float,
    weight_decay: float,
) -> AdamWState:
    """One in-place update. Weight decay is decoupled: it scales the
    parameter directly instead of entering the moment estimates."""
    if set(grads) != set(tensors):
        raise ShapeError(f"gradient keys {sorted(set(tensors) ^ set(grads))} do not match parameters")
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    for k, p in tensors.items():
        g = np.asarray(grads[k], dtype=np.float64)
        if g.shape != p.shape:
            raise ShapeError(f"{k}: gradient shape {g.shape} != parameter shape {p.shape}")
        m, v = state.m[k], state.v[k]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + state.eps) + weight_decay * p
        p -= lr * update
    return state


# ---------------------------------------------------------------------------
# Targets
# ---------------------------------------------------------------------------


def soft_targets(labels, n_classes: int, epsilon: float) -> np.ndarray:
    """Label-smoothed one-hot rows: (1-eps)*onehot + eps/C."""
    idx = np.asarray([int(l) for l in labels], dtype=np.int64)
    if np.any(idx == ExpressionLabel.MISSING):
        raise ValidationError("MISSING labels must be filtered out before batching")
    if np.any((idx < 0) | (idx >= n_classes)):
        raise ValidationError("label outside class range")
    out = np.full((idx.shape[0], n_classes), epsilon / n_classes)
    out[np.arange(idx.shape[0]), idx] += 1.0 - epsilon
    return out


def mixup_batch(features, targets, lam: float, perm):
    """Convex combination of a batch with its shuffled pairing."""
    f = np.asarray(features, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    return lam * f + (1.0 - lam) * f[perm], lam * t + (1.0 - lam) * t[perm]


# ---------------------------------------------------------------------------
# Head registry: uniform init/forward/backward over the head kinds
# ---------------------------------------------------------------------------


def _init_head(kind: HeadKind, d_v: int, d_a: int, cfg: TrainConfig, rng: Rng):
    if kind is HeadKind.MOE:
        return init_moe_params(
            d_v, cfg.n_classes, m=cfg.moe_experts, dropout=cfg.dropout, rng=rng
        )
    if kind is HeadKind.GATED:
        return init_gated_params(d_v, d_a, cfg.n_classes, d=cfg.hidden, dropout=cfg.dropout, rng=rng)
    if kind is HeadKind.CONCAT_LINEAR:
        return init_baseline_params(BaselineKind.CONCAT_LINEAR, d_v, d_a, cfg.n_classes, rng=rng)
    if kind is HeadKind.CONCAT_MLP:
        return init_baseline_params(
            BaselineKind.CONCAT_MLP, d_v, d_a, cfg.n_classes, d=cfg.hidden, dropout=cfg.dropout, rng=rng
        )
    if kind is HeadKind.PROBE_VISUAL:
        return init_probe_params(d_v, cfg.n_classes, rng=rng)
    return init_probe_params(d_a, cfg.n_classes, rng=rng)


def _forward_cached(kind: HeadKind, params, f_v, f_a, rng, training):
    if kind is HeadKind.MOE:
        return moe_forward_cached(f_v, params, rng, training)
    if kind is HeadKind.GATED:
        return gated_forward_cached(f_v, f_a, params, rng, training)
    if kind in (HeadKind.CONCAT_LINEAR, HeadKind.CONCAT_MLP):
        return baseline_forward_cached(f_v, f_a, params, rng, training)
    x = f_v if kind is HeadKind.PROBE_VISUAL else f_a
    return probe_forward_cached(x, params, rng, training)


def _backward(kind: HeadKind, cache, grad_logits) -> dict[str, np.ndarray]:
    if kind is HeadKind.MOE:
        return moe_backward(cache, grad_logits)[1]
    if kind is HeadKind.GATED:
        return gated_backward(cache, grad_logits)[2]
    if kind in (HeadKind.CONCAT_LINEAR, HeadKind.CONCAT_MLP):
        return baseline_backward(cache, grad_logits)[2]
    return probe_backward(cache, grad_logits)[1]


def head_from_tensors(t: dict[str, np.ndarray], dropout: float = 0.1):
    """Reconstruct (kind, params) from a checkpoint's tensor names."""
    if any(k.startswith("moe.") for k in t):
        return HeadKind.MOE, MoEHeadParams.from_tensors(t, dropout=dropout)
    if "fuse.pv.W" in t:
        return HeadKind.GATED, GatedFusionParams.from_tensors(t, dropout=dropout)
    if "fuse.cat.W" in t:
        return HeadKind.CONCAT_LINEAR, BaselineFusionParams.from_tensors(t, dropout=dropout)
    if "fuse.mlp1.W" in t:
        return HeadKind.CONCAT_MLP, BaselineFusionParams.from_tensors(t, dropout=dropout)
    if "probe.W" in t:
        return HeadKind.PROBE_VISUAL, LinearProbeParams.from_tensors(t)
    raise ValidationError(f"cannot infer head kind from tensor names {sorted(t)[:4]}")


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


def _stack_dataset(dataset, kind: HeadKind, n_classes: int):
    if not dataset:
        raise TrainingError("empty dataset")
    labels = [triple[2] for triple in dataset]
    if any(int(l) == ExpressionLabel.MISSING for l in labels):
        raise ValidationError("dataset contains MISSING labels; filter before training")
    f_v = np.stack([np.asarray(t[0], dtype=np.float64) for t in dataset])
    d_a = next((np.asarray(t[1]).shape[0] for t in dataset if t[1] is not None), 0)
    if kind is HeadKind.PROBE_AUDIO and d_a == 0:
        raise TrainingError("audio probe requested but no frame carries audio")
    f_a = np.stack(
        [
            np.zeros(d_a) if t[1] is None else np.asarray(t[1], dtype=np.float64)
            for t in dataset
        ]
    )
    y = np.asarray([int(l) for l in labels], dtype=np.int64)
    return f_v, f_a, y


def predict_logits(kind: HeadKind, params, dataset, batch_size: int = 256) -> np.ndarray:
    """Deterministic inference over a dataset of triples; labels are ignored."""
    d_a = next((np.asarray(t[1]).shape[0] for t in dataset if t[1] is not None), 0)
    rows = []
    for start in range(0, len(dataset), batch_size):
        chunk = dataset[start : start + batch_size]
        f_v = np.stack([np.asarray(t[0], dtype=np.float64) for t in chunk])
        f_a = np.stack(
            [np.zeros(d_a) if t[1] is None else np.asarray(t[1], dtype=np.float64) for t in chunk]
        )
        logits, _ = _forward_cached(kind, params, f_v, f_a if d_a else None, None, False)
        rows.append(logits)
    return np.vstack(rows) if rows else np.zeros((0, 0))


def _val_score(kind: HeadKind, params, val, n_classes: int) -> float:
    logits = predict_logits(kind, params, val)
    pred = [int(i) for i in logits.argmax(axis=1)]
    truth = [int(t[2]) for t in val]
    score, _ = macro_f1(confusion(pred, truth, n_classes=n_classes))
    return score


def train_head(dataset, head_kind: HeadKind, cfg: TrainConfig, val):
    """Full training run; returns (best_params, history).

    All epochs always run; the returned parameters come from the epoch with
    the highest validation macro-F1 (first epoch wins ties). History is one
    dict per epoch: {"epoch", "train_loss", "val_macro_f1"}.
    """
    if not val:
        raise TrainingError("empty validation set")
    f_v, f_a, y = _stack_dataset(dataset, head_kind, cfg.n_classes)
    weights = compute_class_weights(y, cfg.n_classes)

    root = Rng(cfg.seed)
    init_rng, shuffle_rng, mix_rng, drop_rng = (root.child(i) for i in range(4))
    params = _init_head(head_kind, f_v.shape[1], f_a.shape[1], cfg, init_rng)
    tensors = params.to_tensors()
    state = init_adamw(tensors)

    n = f_v.shape[0]
    history: list[dict] = []
    best_score, best_tensors = -1.0, None
    for epoch in range(cfg.epochs):
        order = shuffle_rng.gen.permutation(n)
        total_loss, n_batches = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            bv, ba, targets = f_v[idx], f_a[idx], soft_targets(y[idx], cfg.n_classes, cfg.label_smoothing)
            if cfg.mixup_alpha > 0 and idx.shape[0] >= 2:
                lam = float(mix_rng.gen.beta(cfg.mixup_alpha, cfg.mixup_alpha))
                perm = mix_rng.gen.permutation(idx.shape[0])
                bv, mixed = mixup_batch(bv, targets, lam, perm)
                ba, _ = mixup_batch(ba, targets, lam, perm)
                targets = mixed
            logits, cache = _forward_cached(head_kind, params, bv, ba, drop_rng, True)
            loss, grad_logits = weighted_soft_ce(logits, targets, weights)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}")
            grads = _backward(head_kind, cache, grad_logits)
            adamw_step(tensors, grads, state, cfg.lr_head, cfg.weight_decay)
            total_loss += loss
            n_batches += 1
        score = _val_score(head_kind, params, val, cfg.n_classes)
        history.append(
            {"epoch": epoch, "train_loss": total_loss / n_batches, "val_macro_f1": score}
        )
        if score > best_score:
            best_score = score
            best_tensors = {k: t.copy() for k, t in tensors.items()}
    for k, t in tensors.items():
        t[...] = best_tensors[k]
    return params, history


def cross_validate(dataset_by_video: dict[str, list], k: int, head_kind: HeadKind, cfg: TrainConfig):
    """k-fold cross-validation split by video.

    Returns (mean_f1, std_f1, per_fold) where std is the population
    standard deviation over the k fold scores.
    """
    split = make_folds(sorted(dataset_by_video), k, cfg.seed)
    per_fold = []
    for fold in range(k):
        held = set(split.fold_videos(fold))
        train = [t for vid, triples in dataset_by_video.items() if vid not in held for t in triples]
        val = [t for vid in sorted(held) for t in dataset_by_video[vid]]
        fold_seed = int(Rng(cfg.seed).child(1000 + fold).seed)
        _, history = train_head(train, head_kind, replace(cfg, seed=fold_seed), val)
        per_fold.append(max(h["val_macro_f1"] for h in history))
    arr = np.asarray(per_fold)
    return float(arr.mean()), float(arr.std()), per_fold
