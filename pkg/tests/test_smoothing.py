"""Per-frame smoothing strategies against a brute-force reference."""

import numpy as np
import pytest

from avexpr.datamodel import ExpressionLabel
from avexpr.errors import CorruptionError, FormatError, ValidationError
from avexpr.metrics import confusion, macro_f1
from avexpr.smoothing import (
    SmoothingConfig,
    Strategy,
    decide,
    read_logits,
    smooth_logits,
    sweep_windows,
    write_logits,
)


def brute_force_smooth(x, cfg):
    """Literal per-frame re-derivation of every strategy."""
    t, c = x.shape
    k = cfg.window // 2
    out = np.zeros_like(x)
    for i in range(t):
        lo, hi = max(0, i - k), min(t, i + k + 1)
        seg = x[lo:hi]
        if cfg.strategy is Strategy.MEAN:
            out[i] = seg.mean(axis=0)
        elif cfg.strategy is Strategy.MEDIAN:
            out[i] = np.sort(seg, axis=0)[(seg.shape[0] - 1) // 2]
        elif cfg.strategy is Strategy.GAUSSIAN:
            w = np.exp(-((np.arange(lo, hi) - i) ** 2) / (2.0 * cfg.sigma**2))
            out[i] = (seg * w[:, None]).sum(axis=0) / w.sum()
        else:
            votes = np.bincount(seg.argmax(axis=1), minlength=c)
            out[i, votes.argmax()] = 1.0
    return out


def test_config_validation():
    with pytest.raises(ValidationError):
        SmoothingConfig(Strategy.MEAN, 4)
    with pytest.raises(ValidationError):
        SmoothingConfig(Strategy.MEAN, -1)
    with pytest.raises(ValidationError):
        SmoothingConfig(Strategy.GAUSSIAN, 5, gaussian_sigma=0.0)
    assert SmoothingConfig(Strategy.GAUSSIAN, 9).sigma == 1.5
    assert SmoothingConfig(Strategy.GAUSSIAN, 9, gaussian_sigma=2.0).sigma == 2.0


def test_window_one_is_identity_for_every_strategy(gen):
    x = gen.normal(size=(7, 8))
    for strategy in Strategy:
        out = smooth_logits(x, SmoothingConfig(strategy, 1))
        np.testing.assert_array_equal(out, x)
        assert out is not x  # caller owns the result


def test_constant_input_fixed_point():
    x = np.tile([0.5, -1.0, 2.0], (6, 1))
    for strategy in (Strategy.MEAN, Strategy.MEDIAN, Strategy.GAUSSIAN):
        np.testing.assert_allclose(smooth_logits(x, SmoothingConfig(strategy, 5)), x, atol=1e-12)
    # VOTE rewrites rows as one-hot winners, so only the decisions survive
    voted = smooth_logits(x, SmoothingConfig(Strategy.VOTE, 5))
    assert decide(voted) == decide(x)


def test_impulse_column_examples():
    x = np.zeros((5, 2))
    x[2, 0] = 10.0
    median = smooth_logits(x, SmoothingConfig(Strategy.MEDIAN, 3))
    np.testing.assert_array_equal(median, np.zeros((5, 2)))
    mean = smooth_logits(x, SmoothingConfig(Strategy.MEAN, 3))
    np.testing.assert_allclose(mean[:, 0], [0.0, 10 / 3, 10 / 3, 10 / 3, 0.0], atol=1e-12)
    np.testing.assert_array_equal(mean[:, 1], np.zeros(5))


def test_all_strategies_match_brute_force(gen):
    for t in (1, 2, 5, 23):
        x = gen.normal(size=(t, 5))
        for window in (3, 5, 9):
            for strategy in Strategy:
                cfg = SmoothingConfig(strategy, window)
                got = smooth_logits(x, cfg)
                want = brute_force_smooth(x, cfg)
                if strategy in (Strategy.MEDIAN, Strategy.VOTE):
                    np.testing.assert_array_equal(got, want, err_msg=f"{strategy} w={window} t={t}")
                else:
                    np.testing.assert_allclose(
                        got, want, atol=1e-9, err_msg=f"{strategy} w={window} t={t}"
                    )


def test_time_reversal_symmetry(gen):
    # centered symmetric windows make smoothing commute with reversal
    x = gen.normal(size=(12, 4))
    for strategy in Strategy:
        cfg = SmoothingConfig(strategy, 5)
        got = smooth_logits(x[::-1], cfg)
        want = smooth_logits(x, cfg)[::-1]
        if strategy in (Strategy.MEDIAN, Strategy.VOTE):
            np.testing.assert_array_equal(got, want)
        else:
            # summation order flips with the sequence, so only near-exact
            np.testing.assert_allclose(got, want, atol=1e-12)


def test_median_output_values_come_from_input(gen):
    x = gen.normal(size=(15, 3))
    out = smooth_logits(x, SmoothingConfig(Strategy.MEDIAN, 7))
    for c in range(3):
        assert np.isin(out[:, c], x[:, c]).all()


def test_rejects_bad_shapes():
    with pytest.raises(ValidationError):
        smooth_logits(np.zeros(5), SmoothingConfig(Strategy.MEAN, 3))
    with pytest.raises(ValidationError):
        smooth_logits(np.zeros((0, 4)), SmoothingConfig(Strategy.MEAN, 3))


def test_decide_tie_takes_smaller_class():
    labs = decide(np.array([[1.0, 1.0, 0.5], [0.0, 2.0, 2.0]]))
    assert labs == [ExpressionLabel.NEUTRAL, ExpressionLabel.ANGER]
    assert decide(np.zeros((0, 3))) == []


def test_sweep_window_one_equals_unsmoothed_score(gen):
    x = gen.normal(size=(40, 8))
    labels = list(gen.integers(0, 8, size=40))
    rows = sweep_windows(x, labels, Strategy.MEDIAN, [1, 1, 3])
    direct, _ = macro_f1(confusion(decide(x), labels))
    assert rows[0] == (1, direct)
    assert rows[0][1] == rows[1][1]  # duplicate windows score identically


def test_sweep_does_not_cross_video_boundaries(gen):
    a = gen.normal(size=(20, 4))
    b = gen.normal(size=(15, 4))
    la = list(gen.integers(0, 4, size=20))
    lb = list(gen.integers(0, 4, size=15))
    rows = sweep_windows([a, b], [la, lb], Strategy.MEAN, [5])

    cfg = SmoothingConfig(Strategy.MEAN, 5)
    pred = decide(smooth_logits(a, cfg)) + decide(smooth_logits(b, cfg))
    want, _ = macro_f1(confusion(pred, la + lb, n_classes=4))
    assert rows == [(5, want)]


def test_sweep_validates_pairing(gen):
    with pytest.raises(ValidationError):
        sweep_windows([gen.normal(size=(5, 3))], [[0, 1]], Strategy.MEAN, [3])


def test_lgt1_round_trip(tmp_path, gen):
    x = gen.normal(size=(9, 4)).astype(np.float32).astype(np.float64)
    path = tmp_path / "a.lgt1"
    write_logits(x, path)
    assert path.stat().st_size == 16 + 4 * 9 * 4
    back = read_logits(path)
    np.testing.assert_array_equal(back, x)
    assert back.dtype == np.float64

    second = tmp_path / "b.lgt1"
    write_logits(back, second)
    assert path.read_bytes() == second.read_bytes()


def test_lgt1_rejects_garbage(tmp_path, gen):
    path = tmp_path / "a.lgt1"
    write_logits(gen.normal(size=(3, 2)), path)
    blob = path.read_bytes()

    bad = tmp_path / "bad.lgt1"
    bad.write_bytes(b"NOPE" + blob[4:])
    with pytest.raises(FormatError):
        read_logits(bad)

    short = tmp_path / "short.lgt1"
    short.write_bytes(blob[:-3])
    with pytest.raises(CorruptionError):
        read_logits(short)
