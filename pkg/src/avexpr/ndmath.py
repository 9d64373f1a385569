"""Dense numeric core: every differentiable layer used by the heads, as an
explicit forward/backward pair, plus the deterministic RNG wrapper and the
NTC1 named-tensor checkpoint container.

All math runs in float64; checkpoint payloads are stored as float32.
There is no autodiff graph here on purpose: each backward is the closed-form
gradient of its forward, which keeps the finite-difference checks sharp.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .errors import CorruptionError, FormatError, ShapeError, ValidationError

NTC1_MAGIC = b"NTC1"

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass
class Rng:
    """Deterministic PCG64 stream.

    Identical seed gives an identical draw sequence on every platform, so
    dropout masks, mixup draws and fold shuffles are reproducible.
    """

    seed: int
    algorithm: str = "pcg64"

    def __post_init__(self):
        if self.algorithm != "pcg64":
            raise ValidationError(f"unknown rng algorithm: {self.algorithm!r}")
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.seed)))

    @property
    def gen(self) -> np.random.Generator:
        return self._gen

    def child(self, tag: int) -> "Rng":
        """Independent substream; stable function of (seed, tag)."""
        derived = np.random.SeedSequence((self.seed, tag)).generate_state(1, np.uint64)[0]
        return Rng(int(derived))


def as_finite_f64(x, name: str = "array") -> np.ndarray:
    """Promote to float64 and reject NaN/Inf at the layer boundary."""
    a = np.asarray(x, dtype=np.float64)
    if a.size and not np.all(np.isfinite(a)):
        raise ValidationError(f"{name} contains non-finite entries")
    return a


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------

def linear(x, W, b) -> np.ndarray:
    """Affine map x @ W + b, with b broadcast over rows."""
    x = as_finite_f64(x, "x")
    W = as_finite_f64(W, "W")
    b = as_finite_f64(b, "b")
    if x.ndim != 2 or W.ndim != 2 or b.ndim != 1:
        raise ShapeError("linear expects x[B,n], W[n,m], b[m]")
    if x.shape[1] != W.shape[0] or W.shape[1] != b.shape[0]:
        raise ShapeError(f"linear shapes do not conform: {x.shape} @ {W.shape} + {b.shape}")
    return x @ W + b


def linear_backward(x, W, grad_out):
    """Gradients of linear(): (grad_x, grad_W, grad_b)."""
    x = np.asarray(x, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    g = np.asarray(grad_out, dtype=np.float64)
    return g @ W.T, x.T @ g, g.sum(axis=0)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> np.ndarray:
    """Per-row normalization with biased (divide-by-n) variance."""
    x = as_finite_f64(x, "x")
    gain = as_finite_f64(gain, "gain")
    bias = as_finite_f64(bias, "bias")
    if eps <= 0:
        raise ValidationError("layer_norm eps must be > 0")
    if x.ndim != 2 or gain.shape != (x.shape[1],) or bias.shape != (x.shape[1],):
        raise ShapeError("layer_norm expects x[B,n], gain[n], bias[n]")
    mu = x.mean(axis=1, keepdims=True)
    var = np.mean((x - mu) ** 2, axis=1, keepdims=True)
    xhat = (x - mu) / np.sqrt(var + eps)
    return xhat * gain + bias


def layer_norm_backward(x, gain, eps, grad_out):
    """Gradients of layer_norm(): (grad_x, grad_gain, grad_bias)."""
    x = np.asarray(x, dtype=np.float64)
    gain = np.asarray(gain, dtype=np.float64)
    g = np.asarray(grad_out, dtype=np.float64)
    n = x.shape[1]
    mu = x.mean(axis=1, keepdims=True)
    var = np.mean((x - mu) ** 2, axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv_std
    grad_gain = (g * xhat).sum(axis=0)
    grad_bias = g.sum(axis=0)
    dxhat = g * gain
    grad_x = (inv_std / n) * (
        n * dxhat
        - dxhat.sum(axis=1, keepdims=True)
        - xhat * (dxhat * xhat).sum(axis=1, keepdims=True)
    )
    return grad_x, grad_gain, grad_bias


def softmax(x, axis: int = -1) -> np.ndarray:
    """Stable softmax (max-subtracted) along `axis`."""
    x = as_finite_f64(x, "x")
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(y, grad_out, axis: int = -1) -> np.ndarray:
    """Gradient through softmax given its output `y`."""
    y = np.asarray(y, dtype=np.float64)
    g = np.asarray(grad_out, dtype=np.float64)
    dot = (y * g).sum(axis=axis, keepdims=True)
    return y * (g - dot)


def sigmoid(x) -> np.ndarray:
    """Elementwise logistic function, computed without overflow."""
    x = as_finite_f64(x, "x")
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_backward(y, grad_out) -> np.ndarray:
    """Gradient through sigmoid given its output `y`."""
    y = np.asarray(y, dtype=np.float64)
    return np.asarray(grad_out, dtype=np.float64) * y * (1.0 - y)


def gelu(x) -> np.ndarray:
    """Exact (erf-based) GELU."""
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def gelu_backward(x, grad_out) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    phi = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    return np.asarray(grad_out, dtype=np.float64) * (cdf + x * phi)


def dropout_mask(shape, p: float, rng: Rng) -> np.ndarray:
    """Inverted-dropout mask: zeros with prob p, survivors scaled 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ValidationError(f"dropout rate must be in [0, 1), got {p}")
    if p == 0.0:
        return np.ones(shape)
    keep = rng.gen.random(shape) >= p
    return keep.astype(np.float64) / (1.0 - p)


def dropout(x, p: float, rng: Rng | None, training: bool) -> np.ndarray:
    """Inverted dropout; identity at inference. Consumes no draws when inactive."""
    x = as_finite_f64(x, "x")
    if not 0.0 <= p < 1.0:
        raise ValidationError(f"dropout rate must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    return x * dropout_mask(x.shape, p, rng)


def weighted_soft_ce(logits, targets, w):
    """Class-weighted soft-target cross-entropy, averaged over the batch.

    loss = mean_rows( -sum_c w_c * t_c * log softmax(logits)_c )

    Returns (loss, grad_logits) with the exact analytic gradient.
    """
    logits = as_finite_f64(logits, "logits")
    targets = as_finite_f64(targets, "targets")
    if logits.ndim != 2 or logits.shape != targets.shape:
        raise ShapeError(f"logits {logits.shape} and targets {targets.shape} must match as [B,C]")
    row_sums = targets.sum(axis=1)
    if np.any(np.abs(row_sums - 1.0) > 1e-6):
        raise ValidationError("each target row must sum to 1 (within 1e-6)")
    w = np.asarray(getattr(w, "w", w), dtype=np.float64)
    if w.shape != (logits.shape[1],):
        raise ShapeError(f"weight vector shape {w.shape} does not match C={logits.shape[1]}")

    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    wt = w * targets
    loss = float(-(wt * logp).sum(axis=1).mean())

    b = logits.shape[0]
    p = np.exp(logp)
    s = wt.sum(axis=1, keepdims=True)
    grad = (p * s - wt) / b
    return loss, grad


# ---------------------------------------------------------------------------
# NTC1 named-tensor container
# ---------------------------------------------------------------------------
#
# Layout (little-endian):
#   magic "NTC1" | tensor_count u32
#   per tensor: name_len u16 | name utf-8 | rank u8 | dims u32[rank]
#               | payload binary32, row-major

def write_named_tensors(tensors: dict[str, np.ndarray], path) -> None:
    """Serialize named arrays to an NTC1 file, preserving insertion order."""
    chunks = [NTC1_MAGIC, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        if not raw or len(raw) > 0xFFFF:
            raise ValidationError(f"bad tensor name: {name!r}")
        # astype (not ascontiguousarray) so 0-d arrays keep their rank
        a = np.asarray(arr, dtype=np.float64).astype(np.float32)
        if a.ndim > 255:
            raise ValidationError("tensor rank exceeds 255")
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<B", a.ndim))
        chunks.append(struct.pack(f"<{a.ndim}I", *a.shape))
        chunks.append(a.tobytes(order="C"))
    with open(path, "wb") as f:
        f.write(b"".join(chunks))


def read_named_tensors(path) -> dict[str, np.ndarray]:
    """Read an NTC1 file; payloads are promoted to float64."""
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:4] != NTC1_MAGIC:
        raise FormatError(f"not an NTC1 file: bad magic {buf[:4]!r}")
    off = 4
    try:
        (count,) = struct.unpack_from("<I", buf, off)
        off += 4
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", buf, off)
            off += 2
            name = buf[off : off + name_len].decode("utf-8")
            off += name_len
            (rank,) = struct.unpack_from("<B", buf, off)
            off += 1
            dims = struct.unpack_from(f"<{rank}I", buf, off)
            off += 4 * rank
            n = int(np.prod(dims, dtype=np.int64)) if rank else 1
            payload = np.frombuffer(buf, dtype="<f4", count=n, offset=off)
            off += 4 * n
            out[name] = payload.astype(np.float64).reshape(dims)
    except (struct.error, ValueError) as exc:
        raise CorruptionError(f"truncated NTC1 file: {exc}") from exc
    if off != len(buf):
        raise CorruptionError(f"{len(buf) - off} trailing bytes after last tensor")
    return out
