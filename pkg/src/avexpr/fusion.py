"""Audio-visual fusion heads: sigmoid-gated fusion plus concat baselines and
a single-linear probe for unimodal comparisons.

All heads share the tensor-dict convention from the MoE head so the trainer
and checkpoint code treat them uniformly. Absent audio enters the math as a
zero vector; the presence bit only matters upstream.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ShapeError, ValidationError
from .ndmath import (
    Rng,
    dropout_mask,
    gelu,
    gelu_backward,
    layer_norm,
    layer_norm_backward,
    linear,
    linear_backward,
    sigmoid,
    sigmoid_backward,
)

LN_EPS = 1e-5


class BaselineKind(Enum):
    CONCAT_LINEAR = "concat-linear"
    CONCAT_MLP = "concat-mlp"


def _normal_init(gen, n_in, n_out):
    return gen.normal(0.0, 1.0 / np.sqrt(n_in), size=(n_in, n_out))


@dataclass
class GatedFusionParams:
    """Projections P_v/P_a into a shared d-dim space, gate G over the raw
    concatenation, then LN -> dropout -> linear classifier."""

    pv_W: np.ndarray
    pv_b: np.ndarray
    pa_W: np.ndarray
    pa_b: np.ndarray
    gate_W: np.ndarray
    gate_b: np.ndarray
    ln_gain: np.ndarray
    ln_bias: np.ndarray
    head_W: np.ndarray
    head_b: np.ndarray
    dropout: float = 0.1

    def __post_init__(self):
        d = self.pv_W.shape[1]
        if self.pa_W.shape[1] != d or self.gate_W.shape[1] != d or self.head_W.shape[0] != d:
            raise ShapeError("P_v, P_a, G and head must agree on hidden width d")
        if self.gate_W.shape[0] != self.d_v + self.d_a:
            raise ShapeError("gate input width must be D_v + D_a")

    @property
    def d_v(self) -> int:
        return self.pv_W.shape[0]

    @property
    def d_a(self) -> int:
        return self.pa_W.shape[0]

    @property
    def d(self) -> int:
        return self.pv_W.shape[1]

    def to_tensors(self) -> dict[str, np.ndarray]:
        return {
            "fuse.pv.W": self.pv_W,
            "fuse.pv.b": self.pv_b,
            "fuse.pa.W": self.pa_W,
            "fuse.pa.b": self.pa_b,
            "fuse.gate.W": self.gate_W,
            "fuse.gate.b": self.gate_b,
            "fuse.ln.gain": self.ln_gain,
            "fuse.ln.bias": self.ln_bias,
            "fuse.head.W": self.head_W,
            "fuse.head.b": self.head_b,
        }

    @classmethod
    def from_tensors(cls, t, dropout: float = 0.1) -> "GatedFusionParams":
        return cls(
            t["fuse.pv.W"], t["fuse.pv.b"], t["fuse.pa.W"], t["fuse.pa.b"],
            t["fuse.gate.W"], t["fuse.gate.b"], t["fuse.ln.gain"], t["fuse.ln.bias"],
            t["fuse.head.W"], t["fuse.head.b"], dropout=dropout,
        )


def init_gated_params(
    d_v: int, d_a: int, n_classes: int, d: int = 512, dropout: float = 0.1, rng: Rng | None = None
) -> GatedFusionParams:
    gen = (rng or Rng(0)).gen
    return GatedFusionParams(
        _normal_init(gen, d_v, d), np.zeros(d),
        _normal_init(gen, d_a, d), np.zeros(d),
        _normal_init(gen, d_v + d_a, d), np.zeros(d),
        np.ones(d), np.zeros(d),
        _normal_init(gen, d, n_classes), np.zeros(n_classes),
        dropout=dropout,
    )


def _as_batch(f, width, name):
    a = np.asarray(f, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2 or a.shape[1] != width:
        raise ShapeError(f"{name} must have width {width}, got {a.shape}")
    return a


def gated_forward_cached(f_v, f_a, params: GatedFusionParams, rng: Rng | None = None, training: bool = False):
    """Batched gated fusion; returns (logits[B,C], cache)."""
    fv = _as_batch(f_v, params.d_v, "f_v")
    fa = (
        np.zeros((fv.shape[0], params.d_a))
        if f_a is None
        else _as_batch(f_a, params.d_a, "f_a")
    )
    cat = np.concatenate([fv, fa], axis=1)
    z_v = linear(fv, params.pv_W, params.pv_b)
    z_a = linear(fa, params.pa_W, params.pa_b)
    gate = sigmoid(linear(cat, params.gate_W, params.gate_b))
    h = gate * z_v + (1.0 - gate) * z_a
    normed = layer_norm(h, params.ln_gain, params.ln_bias, LN_EPS)
    if training and params.dropout > 0.0:
        mask = dropout_mask(normed.shape, params.dropout, rng)
    else:
        mask = 1.0
    dropped = normed * mask
    logits = linear(dropped, params.head_W, params.head_b)
    cache = {
        "fv": fv, "fa": fa, "cat": cat, "z_v": z_v, "z_a": z_a,
        "gate": gate, "h": h, "dropped": dropped, "mask": mask, "params": params,
    }
    return logits, cache


def gated_forward(f_v, f_a, params: GatedFusionParams, rng: Rng | None = None, training: bool = False):
    """Single-frame convenience wrapper: returns (logits[C], gate[d])."""
    logits, cache = gated_forward_cached(f_v, f_a, params, rng, training)
    return logits[0], cache["gate"][0]


def gated_backward(cache, grad_logits):
    p: GatedFusionParams = cache["params"]
    g = np.asarray(grad_logits, dtype=np.float64)
    grads: dict[str, np.ndarray] = {}
    grad_dropped, grads["fuse.head.W"], grads["fuse.head.b"] = linear_backward(
        cache["dropped"], p.head_W, g
    )
    grad_normed = grad_dropped * cache["mask"]
    grad_h, grads["fuse.ln.gain"], grads["fuse.ln.bias"] = layer_norm_backward(
        cache["h"], p.ln_gain, LN_EPS, grad_normed
    )
    gate, z_v, z_a = cache["gate"], cache["z_v"], cache["z_a"]
    grad_gate_pre = sigmoid_backward(gate, grad_h * (z_v - z_a))
    grad_cat, grads["fuse.gate.W"], grads["fuse.gate.b"] = linear_backward(
        cache["cat"], p.gate_W, grad_gate_pre
    )
    grad_fv, grads["fuse.pv.W"], grads["fuse.pv.b"] = linear_backward(
        cache["fv"], p.pv_W, grad_h * gate
    )
    grad_fa, grads["fuse.pa.W"], grads["fuse.pa.b"] = linear_backward(
        cache["fa"], p.pa_W, grad_h * (1.0 - gate)
    )
    grad_fv = grad_fv + grad_cat[:, : p.d_v]
    grad_fa = grad_fa + grad_cat[:, p.d_v :]
    return grad_fv, grad_fa, grads


@dataclass
class BaselineFusionParams:
    """Concat baselines: one linear layer, or linear->GELU->LN->Drop->linear."""

    kind: BaselineKind
    tensors: dict[str, np.ndarray]
    dropout: float = 0.1

    def __post_init__(self):
        want = {
            BaselineKind.CONCAT_LINEAR: {"fuse.cat.W", "fuse.cat.b"},
            BaselineKind.CONCAT_MLP: {
                "fuse.mlp1.W", "fuse.mlp1.b", "fuse.ln.gain", "fuse.ln.bias",
                "fuse.mlp2.W", "fuse.mlp2.b",
            },
        }[self.kind]
        if set(self.tensors) != want:
            raise ValidationError(f"{self.kind.value} head expects tensors {sorted(want)}")

    @property
    def d_in(self) -> int:
        key = "fuse.cat.W" if self.kind is BaselineKind.CONCAT_LINEAR else "fuse.mlp1.W"
        return self.tensors[key].shape[0]

    def to_tensors(self) -> dict[str, np.ndarray]:
        return dict(self.tensors)

    @classmethod
    def from_tensors(cls, t, dropout: float = 0.1) -> "BaselineFusionParams":
        kind = BaselineKind.CONCAT_LINEAR if "fuse.cat.W" in t else BaselineKind.CONCAT_MLP
        return cls(kind, dict(t), dropout=dropout)


def init_baseline_params(
    kind: BaselineKind, d_v: int, d_a: int, n_classes: int, d: int = 512,
    dropout: float = 0.1, rng: Rng | None = None,
) -> BaselineFusionParams:
    gen = (rng or Rng(0)).gen
    n_in = d_v + d_a
    if kind is BaselineKind.CONCAT_LINEAR:
        tensors = {"fuse.cat.W": _normal_init(gen, n_in, n_classes), "fuse.cat.b": np.zeros(n_classes)}
    else:
        tensors = {
            "fuse.mlp1.W": _normal_init(gen, n_in, d),
            "fuse.mlp1.b": np.zeros(d),
            "fuse.ln.gain": np.ones(d),
            "fuse.ln.bias": np.zeros(d),
            "fuse.mlp2.W": _normal_init(gen, d, n_classes),
            "fuse.mlp2.b": np.zeros(n_classes),
        }
    return BaselineFusionParams(kind, tensors, dropout=dropout)


def baseline_forward_cached(f_v, f_a, params: BaselineFusionParams, rng: Rng | None = None, training: bool = False):
    fv = np.asarray(f_v, dtype=np.float64)
    if fv.ndim == 1:
        fv = fv[None, :]
    fa = (
        np.zeros((fv.shape[0], params.d_in - fv.shape[1]))
        if f_a is None
        else _as_batch(f_a, params.d_in - fv.shape[1], "f_a")
    )
    cat = np.concatenate([fv, fa], axis=1)
    t = params.tensors
    if params.kind is BaselineKind.CONCAT_LINEAR:
        logits = linear(cat, t["fuse.cat.W"], t["fuse.cat.b"])
        return logits, {"cat": cat, "params": params, "split": fv.shape[1]}
    a1 = linear(cat, t["fuse.mlp1.W"], t["fuse.mlp1.b"])
    g1 = gelu(a1)
    normed = layer_norm(g1, t["fuse.ln.gain"], t["fuse.ln.bias"], LN_EPS)
    if training and params.dropout > 0.0:
        mask = dropout_mask(normed.shape, params.dropout, rng)
    else:
        mask = 1.0
    dropped = normed * mask
    logits = linear(dropped, t["fuse.mlp2.W"], t["fuse.mlp2.b"])
    cache = {
        "cat": cat, "a1": a1, "g1": g1, "dropped": dropped, "mask": mask,
        "params": params, "split": fv.shape[1],
    }
    return logits, cache


def baseline_forward(f_v, f_a, params: BaselineFusionParams, rng: Rng | None = None, training: bool = False):
    logits, _ = baseline_forward_cached(f_v, f_a, params, rng, training)
    return logits[0] if np.asarray(f_v).ndim == 1 else logits


def baseline_backward(cache, grad_logits):
    p: BaselineFusionParams = cache["params"]
    t = p.tensors
    g = np.asarray(grad_logits, dtype=np.float64)
    grads: dict[str, np.ndarray] = {}
    if p.kind is BaselineKind.CONCAT_LINEAR:
        grad_cat, grads["fuse.cat.W"], grads["fuse.cat.b"] = linear_backward(
            cache["cat"], t["fuse.cat.W"], g
        )
    else:
        grad_dropped, grads["fuse.mlp2.W"], grads["fuse.mlp2.b"] = linear_backward(
            cache["dropped"], t["fuse.mlp2.W"], g
        )
        grad_normed = grad_dropped * cache["mask"]
        grad_g1, grads["fuse.ln.gain"], grads["fuse.ln.bias"] = layer_norm_backward(
            cache["g1"], t["fuse.ln.gain"], LN_EPS, grad_normed
        )
        grad_a1 = gelu_backward(cache["a1"], grad_g1)
        grad_cat, grads["fuse.mlp1.W"], grads["fuse.mlp1.b"] = linear_backward(
            cache["cat"], t["fuse.mlp1.W"], grad_a1
        )
    split = cache["split"]
    return grad_cat[:, :split], grad_cat[:, split:], grads


@dataclass
class LinearProbeParams:
    """Single linear layer on one modality; the unimodal baseline head."""

    W: np.ndarray
    b: np.ndarray

    def to_tensors(self) -> dict[str, np.ndarray]:
        return {"probe.W": self.W, "probe.b": self.b}

    @classmethod
    def from_tensors(cls, t, dropout: float = 0.0) -> "LinearProbeParams":
        return cls(t["probe.W"], t["probe.b"])


def init_probe_params(d_in: int, n_classes: int, rng: Rng | None = None) -> LinearProbeParams:
    gen = (rng or Rng(0)).gen
    return LinearProbeParams(_normal_init(gen, d_in, n_classes), np.zeros(n_classes))


def probe_forward_cached(x, params: LinearProbeParams, rng=None, training: bool = False):
    xb = _as_batch(x, params.W.shape[0], "x")
    return linear(xb, params.W, params.b), {"x": xb, "params": params}


def probe_backward(cache, grad_logits):
    grad_x, grad_W, grad_b = linear_backward(
        cache["x"], cache["params"].W, np.asarray(grad_logits, dtype=np.float64)
    )
    return grad_x, {"probe.W": grad_W, "probe.b": grad_b}


def fusion_param_count(params) -> int:
    return sum(t.size for t in params.to_tensors().values())
