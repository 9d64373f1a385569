"""Mixture-of-experts classification head.

Pipeline per sample: LN -> {router softmax, M expert MLPs} -> weighted sum
of expert outputs -> LN -> dropout -> linear classifier. The backward pass
is written out by hand and checked against finite differences in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

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
    softmax,
    softmax_backward,
)

LN_EPS = 1e-5


@dataclass
class MoEHeadParams:
    """Learnable tensors of the MoE head.

    experts[m] is a (W1, b1, W2, b2) tuple implementing linear->GELU->linear
    with hidden width H; all experts share shapes.
    """

    ln_in_gain: np.ndarray
    ln_in_bias: np.ndarray
    router_W: np.ndarray
    router_b: np.ndarray
    experts: list[tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]]
    ln_out_gain: np.ndarray
    ln_out_bias: np.ndarray
    classifier_W: np.ndarray
    classifier_b: np.ndarray
    dropout: float = 0.1

    def __post_init__(self):
        if self.m < 1:
            raise ValidationError("need at least one expert")
        if self.router_W.shape != (self.d_v, self.m):
            raise ShapeError(f"router must map D_v={self.d_v} to M={self.m}")
        shapes = {tuple(t.shape for t in exp) for exp in self.experts}
        if len(shapes) != 1:
            raise ShapeError("experts must share shapes")

    @property
    def d_v(self) -> int:
        return self.ln_in_gain.shape[0]

    @property
    def m(self) -> int:
        return len(self.experts)

    def to_tensors(self) -> dict[str, np.ndarray]:
        out = {
            "moe.ln_in.gain": self.ln_in_gain,
            "moe.ln_in.bias": self.ln_in_bias,
            "moe.router.W": self.router_W,
            "moe.router.b": self.router_b,
        }
        for i, (w1, b1, w2, b2) in enumerate(self.experts):
            out[f"moe.expert{i}.W1"] = w1
            out[f"moe.expert{i}.b1"] = b1
            out[f"moe.expert{i}.W2"] = w2
            out[f"moe.expert{i}.b2"] = b2
        out.update(
            {
                "moe.ln_out.gain": self.ln_out_gain,
                "moe.ln_out.bias": self.ln_out_bias,
                "moe.classifier.W": self.classifier_W,
                "moe.classifier.b": self.classifier_b,
            }
        )
        return out

    @classmethod
    def from_tensors(cls, t: dict[str, np.ndarray], dropout: float = 0.1) -> "MoEHeadParams":
        m = 0
        while f"moe.expert{m}.W1" in t:
            m += 1
        if m == 0:
            raise ValidationError("checkpoint holds no moe.expert* tensors")
        experts = [
            (t[f"moe.expert{i}.W1"], t[f"moe.expert{i}.b1"], t[f"moe.expert{i}.W2"], t[f"moe.expert{i}.b2"])
            for i in range(m)
        ]
        return cls(
            t["moe.ln_in.gain"],
            t["moe.ln_in.bias"],
            t["moe.router.W"],
            t["moe.router.b"],
            experts,
            t["moe.ln_out.gain"],
            t["moe.ln_out.bias"],
            t["moe.classifier.W"],
            t["moe.classifier.b"],
            dropout=dropout,
        )


def init_moe_params(
    d_v: int, n_classes: int, m: int = 4, hidden: int | None = None, dropout: float = 0.1, rng: Rng | None = None
) -> MoEHeadParams:
    """Fresh head: weights ~ N(0, 1/fan_in), biases zero, LN gains one."""
    h = d_v if hidden is None else hidden
    gen = (rng or Rng(0)).gen

    def w(n_in, n_out):
        return gen.normal(0.0, 1.0 / np.sqrt(n_in), size=(n_in, n_out))

    experts = [(w(d_v, h), np.zeros(h), w(h, d_v), np.zeros(d_v)) for _ in range(m)]
    return MoEHeadParams(
        np.ones(d_v),
        np.zeros(d_v),
        w(d_v, m),
        np.zeros(m),
        experts,
        np.ones(d_v),
        np.zeros(d_v),
        w(d_v, n_classes),
        np.zeros(n_classes),
        dropout=dropout,
    )


def _moe_apply(u, params: MoEHeadParams, mask):
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 2 or u.shape[1] != params.d_v:
        raise ShapeError(f"input must be [B,{params.d_v}], got {u.shape}")
    v = layer_norm(u, params.ln_in_gain, params.ln_in_bias, LN_EPS)
    alpha = softmax(linear(v, params.router_W, params.router_b), axis=1)
    pre_acts, hiddens, outs = [], [], []
    for w1, b1, w2, b2 in params.experts:
        a1 = linear(v, w1, b1)
        g1 = gelu(a1)
        pre_acts.append(a1)
        hiddens.append(g1)
        outs.append(linear(g1, w2, b2))
    mixed = sum(alpha[:, m : m + 1] * outs[m] for m in range(params.m))
    normed = layer_norm(mixed, params.ln_out_gain, params.ln_out_bias, LN_EPS)
    dropped = normed * mask
    logits = linear(dropped, params.classifier_W, params.classifier_b)
    cache = {
        "u": u,
        "v": v,
        "alpha": alpha,
        "pre_acts": pre_acts,
        "hiddens": hiddens,
        "outs": outs,
        "mixed": mixed,
        "dropped": dropped,
        "mask": mask,
        "params": params,
    }
    return logits, cache


def moe_forward(u, params: MoEHeadParams, rng: Rng | None = None, training: bool = False):
    """Head forward pass.

    Returns (logits[B,C], routing[B,M]). Deterministic when training=false;
    otherwise dropout draws from `rng`.
    """
    if training and params.dropout > 0.0:
        mask = dropout_mask((np.shape(u)[0], params.d_v), params.dropout, rng)
    else:
        mask = 1.0
    logits, cache = _moe_apply(u, params, mask)
    return logits, cache["alpha"]


def moe_forward_cached(u, params: MoEHeadParams, rng: Rng | None = None, training: bool = False):
    """Like moe_forward but also returns the cache moe_backward needs."""
    if training and params.dropout > 0.0:
        mask = dropout_mask((np.shape(u)[0], params.d_v), params.dropout, rng)
    else:
        mask = 1.0
    return _moe_apply(u, params, mask)


def moe_backward(cache, grad_logits):
    """Gradients for every tensor, plus the input.

    Returns (grad_u, grads) where grads is keyed like to_tensors().
    """
    p: MoEHeadParams = cache["params"]
    g = np.asarray(grad_logits, dtype=np.float64)
    grads: dict[str, np.ndarray] = {}

    grad_dropped, grads["moe.classifier.W"], grads["moe.classifier.b"] = linear_backward(
        cache["dropped"], p.classifier_W, g
    )
    grad_normed = grad_dropped * cache["mask"]
    grad_mixed, grads["moe.ln_out.gain"], grads["moe.ln_out.bias"] = layer_norm_backward(
        cache["mixed"], p.ln_out_gain, LN_EPS, grad_normed
    )

    alpha = cache["alpha"]
    grad_alpha = np.stack(
        [(grad_mixed * cache["outs"][m]).sum(axis=1) for m in range(p.m)], axis=1
    )
    grad_router_logits = softmax_backward(alpha, grad_alpha, axis=1)
    grad_v, grads["moe.router.W"], grads["moe.router.b"] = linear_backward(
        cache["v"], p.router_W, grad_router_logits
    )
    for m, (w1, _, w2, _) in enumerate(p.experts):
        grad_out_m = alpha[:, m : m + 1] * grad_mixed
        grad_g1, grads[f"moe.expert{m}.W2"], grads[f"moe.expert{m}.b2"] = linear_backward(
            cache["hiddens"][m], w2, grad_out_m
        )
        grad_a1 = gelu_backward(cache["pre_acts"][m], grad_g1)
        grad_v_m, grads[f"moe.expert{m}.W1"], grads[f"moe.expert{m}.b1"] = linear_backward(
            cache["v"], w1, grad_a1
        )
        grad_v = grad_v + grad_v_m
    grad_u, grads["moe.ln_in.gain"], grads["moe.ln_in.bias"] = layer_norm_backward(
        cache["u"], p.ln_in_gain, LN_EPS, grad_v
    )
    return grad_u, grads


def moe_param_count(params: MoEHeadParams) -> int:
    return sum(t.size for t in params.to_tensors().values())
