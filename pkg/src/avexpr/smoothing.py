"""Inference-time temporal smoothing of per-frame logits.

Four strategies over a centered odd window truncated at sequence edges:
MEAN, lower-MEDIAN, Gaussian-weighted mean, and hard VOTE over argmax
decisions. Window 1 short-circuits to the identity for every strategy
(VOTE would otherwise one-hot-ify its input, which nothing downstream
wants from a no-op window).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .datamodel import ExpressionLabel
from .errors import CorruptionError, FormatError, ValidationError

LGT1_MAGIC = b"LGT1"


class Strategy(Enum):
    MEAN = "mean"
    MEDIAN = "median"
    GAUSSIAN = "gaussian"
    VOTE = "vote"


@dataclass(frozen=True)
class SmoothingConfig:
    strategy: Strategy
    window: int
    gaussian_sigma: float | None = None

    def __post_init__(self):
        if self.window < 1 or self.window % 2 == 0:
            raise ValidationError(f"window must be odd and >= 1, got {self.window}")
        if self.gaussian_sigma is not None and self.gaussian_sigma <= 0:
            raise ValidationError(f"gaussian_sigma must be > 0, got {self.gaussian_sigma}")

    @property
    def sigma(self) -> float:
        """Effective Gaussian width; defaults to window/6 so +-3 sigma spans it."""
        return self.gaussian_sigma if self.gaussian_sigma is not None else self.window / 6.0


def _as_logits(logits) -> np.ndarray:
    x = np.asarray(logits, dtype=np.float64)
    if x.ndim != 2:
        raise ValidationError(f"logits must be [T,C], got shape {x.shape}")
    return x


def _weighted_window_mean(x: np.ndarray, weights: np.ndarray) -> np.ndarray:
    # Zero-pad, then renormalize by the weight mass of in-range entries;
    # padding contributes nothing, so this equals the truncated-window mean.
    t = x.shape[0]
    k = weights.shape[0] // 2
    padded = np.pad(x, ((k, k), (0, 0)))
    win = sliding_window_view(padded, weights.shape[0], axis=0)  # [T, C, win]
    valid = sliding_window_view(np.pad(np.ones(t), (k, k)), weights.shape[0])  # [T, win]
    mass = valid * weights
    return (win * mass[:, None, :]).sum(axis=-1) / mass.sum(axis=-1)[:, None]


def _lower_median(seg: np.ndarray) -> np.ndarray:
    # order statistic at index (n-1)//2, per class column
    n = seg.shape[0]
    idx = (n - 1) // 2
    return np.partition(seg, idx, axis=0)[idx]


def _median_filter(x: np.ndarray, window: int) -> np.ndarray:
    t = x.shape[0]
    k = window // 2
    out = np.empty_like(x)
    if t >= window:
        # interior windows are always full (odd length), so np.median agrees
        # with the lower median used at the truncated edges
        win = sliding_window_view(x, window, axis=0)
        out[k : t - k] = np.median(win, axis=-1)
    for i in range(min(k, t)):
        out[i] = _lower_median(x[: min(i + k + 1, t)])
    for i in range(max(t - k, 0), t):
        out[i] = _lower_median(x[max(i - k, 0) :])
    return out


def _vote_filter(x: np.ndarray, window: int) -> np.ndarray:
    t, c = x.shape
    k = window // 2
    onehot = np.zeros((t, c))
    onehot[np.arange(t), x.argmax(axis=1)] = 1.0
    csum = np.vstack([np.zeros(c), onehot.cumsum(axis=0)])
    lo = np.maximum(np.arange(t) - k, 0)
    hi = np.minimum(np.arange(t) + k + 1, t)
    counts = csum[hi] - csum[lo]
    winners = counts.argmax(axis=1)  # first max, i.e. the smaller class on ties
    out = np.zeros_like(x)
    out[np.arange(t), winners] = 1.0
    return out


def smooth_logits(logits, cfg: SmoothingConfig) -> np.ndarray:
    """Smooth a [T,C] logit matrix per class channel over centered windows."""
    x = _as_logits(logits)
    if x.shape[0] < 1:
        raise ValidationError("need at least one frame")
    if cfg.window == 1:
        return x.copy()
    if cfg.strategy is Strategy.MEAN:
        return _weighted_window_mean(x, np.ones(cfg.window))
    if cfg.strategy is Strategy.GAUSSIAN:
        deltas = np.arange(cfg.window) - cfg.window // 2
        return _weighted_window_mean(x, np.exp(-(deltas**2) / (2.0 * cfg.sigma**2)))
    if cfg.strategy is Strategy.MEDIAN:
        return _median_filter(x, cfg.window)
    return _vote_filter(x, cfg.window)


def decide(logits) -> list[ExpressionLabel]:
    """Per-row argmax decisions; ties resolve to the smaller class index."""
    x = np.asarray(logits, dtype=np.float64)
    if x.size == 0:
        return []
    return [ExpressionLabel(int(i)) for i in x.argmax(axis=1)]


def sweep_windows(
    logits,
    labels,
    strategy: Strategy,
    windows,
    gaussian_sigma: float | None = None,
) -> list[tuple[int, float]]:
    """Macro-F1 after smoothing, for each window size.

    `logits` may be a single [T,C] matrix or a list of per-video matrices;
    `labels` matches elementwise. Smoothing never crosses video boundaries.
    """
    from .metrics import confusion, macro_f1

    if isinstance(logits, np.ndarray) and logits.ndim == 2:
        logits, labels = [logits], [labels]
    seqs = [_as_logits(m) for m in logits]
    label_lists = [list(l) for l in labels]
    if len(seqs) != len(label_lists) or any(
        m.shape[0] != len(l) for m, l in zip(seqs, label_lists)
    ):
        raise ValidationError("logits and labels must pair up per video")
    n_classes = seqs[0].shape[1] if seqs else 0

    rows = []
    for window in windows:
        cfg = SmoothingConfig(strategy, int(window), gaussian_sigma)
        pred, truth = [], []
        for mat, labs in zip(seqs, label_lists):
            pred.extend(decide(smooth_logits(mat, cfg)))
            truth.extend(labs)
        score, _ = macro_f1(confusion(pred, truth, n_classes=n_classes))
        rows.append((int(window), score))
    return rows


# ---------------------------------------------------------------------------
# LGT1 logits files: magic "LGT1" | T u64 | C u32 | f32 row-major
# ---------------------------------------------------------------------------


def write_logits(logits, path) -> None:
    x = _as_logits(logits)
    with open(path, "wb") as f:
        f.write(LGT1_MAGIC)
        f.write(struct.pack("<QI", x.shape[0], x.shape[1]))
        f.write(np.ascontiguousarray(x, dtype="<f4").tobytes())


def read_logits(path) -> np.ndarray:
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:4] != LGT1_MAGIC:
        raise FormatError(f"not an LGT1 file: bad magic {buf[:4]!r}")
    try:
        t, c = struct.unpack_from("<QI", buf, 4)
    except struct.error as exc:
        raise CorruptionError(f"truncated LGT1 header: {exc}") from exc
    expect = 16 + 4 * t * c
    if len(buf) != expect:
        raise CorruptionError(f"LGT1 file is {len(buf)} bytes, header implies {expect}")
    return np.frombuffer(buf, "<f4", t * c, 16).astype(np.float64).reshape(t, c)
