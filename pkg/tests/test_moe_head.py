"""Expert-mixture head: collapse, routing, permutation symmetry, gradients."""

import numpy as np
import pytest

from avexpr.errors import ShapeError, ValidationError
from avexpr.moe import (
    LN_EPS,
    MoEHeadParams,
    init_moe_params,
    moe_backward,
    moe_forward,
    moe_forward_cached,
    moe_param_count,
)
from avexpr.ndmath import Rng, gelu, layer_norm, linear, softmax

from conftest import numeric_grad, rel_err


def small_head(d_v=5, n_classes=3, m=3, hidden=4, seed=0):
    return init_moe_params(d_v, n_classes, m=m, hidden=hidden, dropout=0.0, rng=Rng(seed))


def test_single_expert_collapses_to_plain_mlp(gen):
    # with M=1 the router is a length-1 softmax, so the head must match
    # LN -> linear -> GELU -> linear -> LN -> linear exactly
    params = small_head(m=1)
    u = gen.normal(size=(6, 5))
    logits, alpha = moe_forward(u, params)
    np.testing.assert_array_equal(alpha, np.ones((6, 1)))

    w1, b1, w2, b2 = params.experts[0]
    v = layer_norm(u, params.ln_in_gain, params.ln_in_bias, LN_EPS)
    mixed = linear(gelu(linear(v, w1, b1)), w2, b2)
    expected = linear(
        layer_norm(mixed, params.ln_out_gain, params.ln_out_bias, LN_EPS),
        params.classifier_W,
        params.classifier_b,
    )
    assert np.max(np.abs(logits - expected)) < 1e-9


def test_routing_rows_sum_to_one(gen):
    for m in (2, 4, 7):
        params = small_head(m=m, seed=m)
        _, alpha = moe_forward(gen.normal(size=(10, 5)), params)
        assert alpha.shape == (10, m)
        np.testing.assert_allclose(alpha.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(alpha >= 0)


def test_zero_router_routes_uniformly(gen):
    params = small_head(m=4)
    params.router_W = np.zeros_like(params.router_W)
    params.router_b = np.zeros_like(params.router_b)
    _, alpha = moe_forward(gen.normal(size=(3, 5)), params)
    np.testing.assert_allclose(alpha, 0.25, atol=1e-15)


def test_two_expert_composition_matches_inline_math(gen):
    params = small_head(d_v=3, n_classes=2, m=2, hidden=2, seed=9)
    u = gen.normal(size=(4, 3))
    logits, alpha = moe_forward(u, params)

    v = layer_norm(u, params.ln_in_gain, params.ln_in_bias, LN_EPS)
    a = softmax(v @ params.router_W + params.router_b, axis=1)
    outs = [linear(gelu(linear(v, w1, b1)), w2, b2) for w1, b1, w2, b2 in params.experts]
    mixed = a[:, :1] * outs[0] + a[:, 1:] * outs[1]
    expected = (
        layer_norm(mixed, params.ln_out_gain, params.ln_out_bias, LN_EPS) @ params.classifier_W
        + params.classifier_b
    )
    np.testing.assert_allclose(alpha, a, atol=1e-12)
    np.testing.assert_allclose(logits, expected, atol=1e-12)


def test_expert_permutation_invariance(gen):
    params = small_head(m=3, seed=4)
    u = gen.normal(size=(5, 5))
    base, _ = moe_forward(u, params)

    perm = [2, 0, 1]
    shuffled = MoEHeadParams(
        params.ln_in_gain,
        params.ln_in_bias,
        params.router_W[:, perm],
        params.router_b[perm],
        [params.experts[i] for i in perm],
        params.ln_out_gain,
        params.ln_out_bias,
        params.classifier_W,
        params.classifier_b,
        dropout=0.0,
    )
    again, _ = moe_forward(u, shuffled)
    np.testing.assert_allclose(again, base, atol=1e-12)


def test_identical_experts_make_router_irrelevant(gen):
    params = small_head(m=3, seed=5)
    clone = params.experts[0]
    params.experts = [clone, clone, clone]
    u = gen.normal(size=(4, 5))
    base, _ = moe_forward(u, params)

    params.router_W = gen.normal(size=params.router_W.shape)
    params.router_b = gen.normal(size=params.router_b.shape)
    rerouted, _ = moe_forward(u, params)
    np.testing.assert_allclose(rerouted, base, atol=1e-12)


def test_moe_backward_matches_finite_differences(gen):
    params = small_head(seed=2)
    u = gen.normal(size=(4, 5))
    go = gen.normal(size=(4, 3))
    logits, cache = moe_forward_cached(u, params)
    grad_u, grads = moe_backward(cache, go)

    def loss_with(key, value):
        t = {k: arr.copy() for k, arr in params.to_tensors().items()}
        t[key] = value
        patched = MoEHeadParams.from_tensors(t, dropout=0.0)
        return (moe_forward(u, patched)[0] * go).sum()

    tensors = params.to_tensors()
    assert set(grads) == set(tensors)
    for key, value in tensors.items():
        num = numeric_grad(lambda v: loss_with(key, v), value)
        assert rel_err(num, grads[key]) < 1e-5, key
    num_u = numeric_grad(lambda v: (moe_forward(v, params)[0] * go).sum(), u)
    assert rel_err(num_u, grad_u) < 1e-5


def test_param_count_formula_and_linearity():
    d, h, c = 6, 4, 3

    def count(m):
        return moe_param_count(init_moe_params(d, c, m=m, hidden=h, rng=Rng(0)))

    per_expert = (d + 1) + (d * h + h + h * d + d)  # router column + MLP
    fixed = 2 * d + 2 * d + d * c + c
    assert count(2) == fixed + 2 * per_expert
    assert count(4) - count(2) == count(6) - count(4) == 2 * per_expert


def test_tensor_round_trip_preserves_logits(gen):
    params = small_head(m=2, seed=7)
    u = gen.normal(size=(3, 5))
    base, _ = moe_forward(u, params)
    rebuilt = MoEHeadParams.from_tensors(params.to_tensors(), dropout=0.0)
    again, _ = moe_forward(u, rebuilt)
    np.testing.assert_array_equal(again, base)


def test_from_tensors_requires_experts():
    t = small_head(m=1).to_tensors()
    del t["moe.expert0.W1"]
    with pytest.raises(ValidationError):
        MoEHeadParams.from_tensors(t)


def test_rejects_wrong_input_width(gen):
    with pytest.raises(ShapeError):
        moe_forward(gen.normal(size=(2, 4)), small_head(d_v=5))


def test_eval_mode_is_deterministic_training_is_not(gen):
    params = init_moe_params(5, 3, m=2, hidden=4, dropout=0.5, rng=Rng(0))
    u = gen.normal(size=(8, 5))
    a, _ = moe_forward(u, params)
    b, _ = moe_forward(u, params)
    np.testing.assert_array_equal(a, b)
    dropped, _ = moe_forward(u, params, rng=Rng(3), training=True)
    assert not np.array_equal(dropped, a)
