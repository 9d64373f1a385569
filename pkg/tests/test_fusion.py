"""Gated fusion, concat baselines, linear probes: values and gradients."""

import numpy as np
import pytest

from avexpr.errors import ShapeError, ValidationError
from avexpr.fusion import (
    LN_EPS,
    BaselineFusionParams,
    BaselineKind,
    GatedFusionParams,
    LinearProbeParams,
    baseline_backward,
    baseline_forward,
    baseline_forward_cached,
    fusion_param_count,
    gated_backward,
    gated_forward,
    gated_forward_cached,
    init_baseline_params,
    init_gated_params,
    init_probe_params,
    probe_backward,
    probe_forward_cached,
)
from avexpr.ndmath import Rng, layer_norm, linear

from conftest import numeric_grad, rel_err


def small_gated(d_v=4, d_a=3, d=5, n_classes=3, seed=0):
    return init_gated_params(d_v, d_a, n_classes, d=d, dropout=0.0, rng=Rng(seed))


# --- gated fusion -----------------------------------------------------------


def test_gate_saturates_to_pure_visual(gen):
    params = small_gated()
    params.gate_W = np.zeros_like(params.gate_W)
    params.gate_b = np.full_like(params.gate_b, 40.0)
    fv = gen.normal(size=(6, 4))
    fa = gen.normal(size=(6, 3))
    logits, cache = gated_forward_cached(fv, fa, params)
    assert np.max(np.abs(cache["gate"] - 1.0)) < 1e-6

    z_v = linear(fv, params.pv_W, params.pv_b)
    pure_visual = linear(
        layer_norm(z_v, params.ln_gain, params.ln_bias, LN_EPS), params.head_W, params.head_b
    )
    assert np.max(np.abs(logits - pure_visual)) < 1e-6


def test_gate_saturates_to_pure_audio(gen):
    params = small_gated(seed=1)
    params.gate_W = np.zeros_like(params.gate_W)
    params.gate_b = np.full_like(params.gate_b, -40.0)
    fv = gen.normal(size=(6, 4))
    fa = gen.normal(size=(6, 3))
    logits, cache = gated_forward_cached(fv, fa, params)
    assert np.max(np.abs(cache["gate"])) < 1e-6

    z_a = linear(fa, params.pa_W, params.pa_b)
    pure_audio = linear(
        layer_norm(z_a, params.ln_gain, params.ln_bias, LN_EPS), params.head_W, params.head_b
    )
    assert np.max(np.abs(logits - pure_audio)) < 1e-6


def test_gated_two_dim_hand_composition():
    # z_v = f_v, z_a = 2 f_a, neutral gate 0.5, identity head with bias
    params = GatedFusionParams(
        np.eye(2), np.zeros(2),
        2.0 * np.eye(2), np.zeros(2),
        np.zeros((4, 2)), np.zeros(2),
        np.ones(2), np.zeros(2),
        np.eye(2), np.array([10.0, 20.0]),
        dropout=0.0,
    )
    f_v = np.array([1.0, 3.0])
    f_a = np.array([0.5, 0.0])
    logits, gate = gated_forward(f_v, f_a, params)
    np.testing.assert_array_equal(gate, [0.5, 0.5])

    h = 0.5 * f_v + 0.5 * 2.0 * f_a  # [1.0, 1.5]
    xhat = (h - h.mean()) / np.sqrt(h.var() + LN_EPS)
    np.testing.assert_allclose(logits, xhat + [10.0, 20.0], atol=1e-12)


def test_gated_zero_weights_emit_head_bias(gen):
    params = small_gated()
    for name in ("pv_W", "pa_W", "gate_W", "head_W"):
        setattr(params, name, np.zeros_like(getattr(params, name)))
    params.head_b = np.array([1.0, 2.0, 3.0])
    logits, _ = gated_forward_cached(gen.normal(size=(4, 4)), gen.normal(size=(4, 3)), params)
    np.testing.assert_allclose(logits, [[1.0, 2.0, 3.0]] * 4, atol=1e-12)


def test_gated_absent_audio_is_zero_vector(gen):
    params = small_gated(seed=2)
    fv = gen.normal(size=(3, 4))
    a, _ = gated_forward_cached(fv, None, params)
    b, _ = gated_forward_cached(fv, np.zeros((3, 3)), params)
    np.testing.assert_array_equal(a, b)


def test_gated_single_frame_wrapper_matches_batch(gen):
    params = small_gated(seed=3)
    fv = gen.normal(size=4)
    fa = gen.normal(size=3)
    logits, gate = gated_forward(fv, fa, params)
    batch, cache = gated_forward_cached(fv[None, :], fa[None, :], params)
    assert logits.shape == (3,) and gate.shape == (5,)
    np.testing.assert_array_equal(logits, batch[0])
    np.testing.assert_array_equal(gate, cache["gate"][0])


def test_gated_backward_matches_finite_differences(gen):
    params = small_gated(seed=4)
    fv = gen.normal(size=(4, 4))
    fa = gen.normal(size=(4, 3))
    go = gen.normal(size=(4, 3))
    _, cache = gated_forward_cached(fv, fa, params)
    grad_fv, grad_fa, grads = gated_backward(cache, go)

    def loss_with(key, value):
        t = {k: arr.copy() for k, arr in params.to_tensors().items()}
        t[key] = value
        patched = GatedFusionParams.from_tensors(t, dropout=0.0)
        return (gated_forward_cached(fv, fa, patched)[0] * go).sum()

    for key, value in params.to_tensors().items():
        assert rel_err(numeric_grad(lambda v: loss_with(key, v), value), grads[key]) < 1e-5, key

    def input_loss(which, value):
        args = (value, fa) if which == "v" else (fv, value)
        return (gated_forward_cached(*args, params)[0] * go).sum()

    assert rel_err(numeric_grad(lambda v: input_loss("v", v), fv), grad_fv) < 1e-5
    assert rel_err(numeric_grad(lambda v: input_loss("a", v), fa), grad_fa) < 1e-5


def test_gated_rejects_width_mismatch(gen):
    with pytest.raises(ShapeError):
        gated_forward_cached(gen.normal(size=(2, 5)), None, small_gated(d_v=4))


# --- concat baselines -------------------------------------------------------


def test_concat_linear_is_one_matmul(gen):
    params = init_baseline_params(BaselineKind.CONCAT_LINEAR, 4, 3, 2, rng=Rng(5))
    fv = gen.normal(size=(3, 4))
    fa = gen.normal(size=(3, 3))
    logits, _ = baseline_forward_cached(fv, fa, params)
    cat = np.concatenate([fv, fa], axis=1)
    t = params.tensors
    np.testing.assert_allclose(logits, cat @ t["fuse.cat.W"] + t["fuse.cat.b"], atol=1e-12)


def test_concat_linear_param_count_at_paper_widths():
    params = init_baseline_params(BaselineKind.CONCAT_LINEAR, 1024, 1024, 8, rng=Rng(0))
    assert fusion_param_count(params) == 16_392


def test_gated_param_count_at_paper_widths():
    params = init_gated_params(1024, 1024, 8, d=512, rng=Rng(0))
    assert fusion_param_count(params) == 2_103_816


def test_baseline_absent_audio_is_zero_vector(gen):
    fv = gen.normal(size=(2, 4))
    for kind in BaselineKind:
        params = init_baseline_params(kind, 4, 3, 2, d=6, dropout=0.0, rng=Rng(6))
        a, _ = baseline_forward_cached(fv, None, params)
        b, _ = baseline_forward_cached(fv, np.zeros((2, 3)), params)
        np.testing.assert_array_equal(a, b)


def test_baseline_backward_matches_finite_differences(gen):
    fv = gen.normal(size=(3, 4))
    fa = gen.normal(size=(3, 3))
    go = gen.normal(size=(3, 2))
    for kind in BaselineKind:
        params = init_baseline_params(kind, 4, 3, 2, d=5, dropout=0.0, rng=Rng(7))
        _, cache = baseline_forward_cached(fv, fa, params)
        grad_fv, grad_fa, grads = baseline_backward(cache, go)

        def loss_with(key, value):
            t = {k: arr.copy() for k, arr in params.tensors.items()}
            t[key] = value
            patched = BaselineFusionParams(kind, t, dropout=0.0)
            return (baseline_forward_cached(fv, fa, patched)[0] * go).sum()

        for key, value in params.tensors.items():
            assert rel_err(numeric_grad(lambda v: loss_with(key, v), value), grads[key]) < 1e-5, key
        num_fv = numeric_grad(
            lambda v: (baseline_forward_cached(v, fa, params)[0] * go).sum(), fv
        )
        num_fa = numeric_grad(
            lambda v: (baseline_forward_cached(fv, v, params)[0] * go).sum(), fa
        )
        assert rel_err(num_fv, grad_fv) < 1e-5
        assert rel_err(num_fa, grad_fa) < 1e-5


def test_baseline_tensor_keys_are_validated():
    with pytest.raises(ValidationError):
        BaselineFusionParams(BaselineKind.CONCAT_LINEAR, {"fuse.mlp1.W": np.zeros((2, 2))})


def test_baseline_single_frame_wrapper(gen):
    params = init_baseline_params(BaselineKind.CONCAT_LINEAR, 4, 3, 2, rng=Rng(8))
    fv = gen.normal(size=4)
    fa = gen.normal(size=3)
    single = baseline_forward(fv, fa, params)
    assert single.shape == (2,)
    batch = baseline_forward(fv[None, :], fa[None, :], params)
    np.testing.assert_array_equal(single, batch[0])


# --- linear probe -----------------------------------------------------------


def test_probe_is_plain_linear(gen):
    params = init_probe_params(5, 3, rng=Rng(9))
    x = gen.normal(size=(4, 5))
    logits, _ = probe_forward_cached(x, params)
    np.testing.assert_allclose(logits, x @ params.W + params.b, atol=1e-12)


def test_probe_backward_matches_finite_differences(gen):
    params = init_probe_params(5, 3, rng=Rng(10))
    x = gen.normal(size=(4, 5))
    go = gen.normal(size=(4, 3))
    _, cache = probe_forward_cached(x, params)
    grad_x, grads = probe_backward(cache, go)
    assert rel_err(numeric_grad(lambda v: ((v @ params.W + params.b) * go).sum(), x), grad_x) < 1e-6
    num_W = numeric_grad(lambda v: ((x @ v + params.b) * go).sum(), params.W)
    assert rel_err(num_W, grads["probe.W"]) < 1e-6


def test_round_trips_preserve_logits(gen):
    fv = gen.normal(size=(2, 4))
    fa = gen.normal(size=(2, 3))

    gp = small_gated(seed=11)
    base, _ = gated_forward_cached(fv, fa, gp)
    again, _ = gated_forward_cached(fv, fa, GatedFusionParams.from_tensors(gp.to_tensors()))
    np.testing.assert_array_equal(base, again)

    for kind in BaselineKind:
        bp = init_baseline_params(kind, 4, 3, 2, d=5, rng=Rng(12))
        base, _ = baseline_forward_cached(fv, fa, bp)
        rebuilt = BaselineFusionParams.from_tensors(bp.to_tensors())
        assert rebuilt.kind is kind
        again, _ = baseline_forward_cached(fv, fa, rebuilt)
        np.testing.assert_array_equal(base, again)

    pp = init_probe_params(4, 3, rng=Rng(13))
    base, _ = probe_forward_cached(fv, pp)
    again, _ = probe_forward_cached(fv, LinearProbeParams.from_tensors(pp.to_tensors()))
    np.testing.assert_array_equal(base, again)
