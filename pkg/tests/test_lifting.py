"""Output-to-latent lifting map tests."""

import numpy as np
import pytest

from terrakoop import lifting as lf
from terrakoop.exceptions import ConfigError


def grid_inputs(n_side=14, lo=-1.0, hi=1.0):
    g = np.linspace(lo, hi, n_side)
    xx, yy = np.meshgrid(g, g)
    return np.column_stack([xx.ravel(), yy.ravel()])


def test_exact_interpolation_regime(rng):
    Y = rng.normal(size=(120, 3))
    Z = rng.normal(size=(120, 4))
    lm = lf.fit_lifting(Y, Z, lf.LiftingConfig(hyper="median",
                                               noise_ratio=1e-12,
                                               jitter=1e-12))
    preds = lf.lift_batch(lm, Y)
    assert np.max(np.abs(preds - Z)) < 1e-6


def test_linear_target_heldout_accuracy(rng):
    # dense training coverage of a compact box; smooth (linear) targets
    Y = grid_inputs(16)
    L = np.array([[1.5, -0.3], [0.2, 0.8], [0.0, 2.0]])
    Z = Y @ L.T
    lm = lf.fit_lifting(Y, Z, lf.LiftingConfig(hyper="mle", mle_pairs=200),
                        input_labels=("a", "b"))
    held = rng.uniform(-0.8, 0.8, size=(60, 2))
    want = held @ L.T
    got = lf.lift_batch(lm, held)
    rel = np.max(np.abs(got - want)) / np.max(np.abs(want))
    assert rel < 1e-3


def test_fit_order_independence(rng):
    Y = rng.normal(size=(150, 3))
    Z = rng.normal(size=(150, 2))
    lm1 = lf.fit_lifting(Y, Z, lf.LiftingConfig(hyper="median"))
    perm = rng.permutation(150)
    lm2 = lf.fit_lifting(Y[perm], Z[perm], lf.LiftingConfig(hyper="median"))
    probe = rng.normal(size=(20, 3))
    assert np.allclose(lf.lift_batch(lm1, probe), lf.lift_batch(lm2, probe),
                       atol=1e-8)


def test_lift_deterministic_and_finite(rng):
    Y = rng.normal(size=(80, 3))
    Z = rng.normal(size=(80, 5))
    lm = lf.fit_lifting(Y, Z, lf.LiftingConfig(hyper="median"))
    a = lf.lift(lm, Y[3])
    b = lf.lift(lm, Y[3])
    assert np.array_equal(a, b)
    with pytest.raises(ConfigError):
        lf.lift(lm, np.array([np.nan, 0.0, 0.0]))


def test_far_extrapolation_reverts_to_zero(rng):
    Y = rng.normal(size=(80, 3))
    Z = rng.normal(size=(80, 4)) + 2.0
    lm = lf.fit_lifting(Y, Z, lf.LiftingConfig(hyper="median"))
    far = lf.lift(lm, np.array([1e3, -1e3, 1e3]))
    assert np.max(np.abs(far)) < 1e-8


def test_lift_continuity(rng):
    Y = rng.normal(size=(100, 3))
    Z = rng.normal(size=(100, 3))
    lm = lf.fit_lifting(Y, Z, lf.LiftingConfig(hyper="median"))
    y0 = np.array([0.1, -0.2, 0.4])
    base = lf.lift(lm, y0)
    for eps in (1e-4, 1e-5):
        moved = lf.lift(lm, y0 + eps)
        assert np.max(np.abs(moved - base)) < 10 * eps * \
            np.max(np.abs(lm.alphas)) * len(Y)


def test_degenerate_channel_rejected():
    Y = np.random.default_rng(0).normal(size=(60, 3))
    Y[:, 1] = 3.14
    Z = np.random.default_rng(1).normal(size=(60, 2))
    with pytest.raises(ConfigError, match="'v'"):
        lf.fit_lifting(Y, Z)


def test_too_few_pairs_rejected(rng):
    with pytest.raises(ConfigError, match="pairs"):
        lf.fit_lifting(rng.normal(size=(20, 3)), rng.normal(size=(20, 2)))


def test_lifting_json_roundtrip(tmp_path, rng):
    Y = rng.normal(size=(60, 3))
    Z = rng.normal(size=(60, 4))
    lm = lf.fit_lifting(Y, Z, lf.LiftingConfig(hyper="median",
                                               max_pairs=50))
    path = tmp_path / "lift.json"
    lm.save(path)
    back = lf.LiftingMap.load(path)
    assert np.array_equal(back.X, lm.X)
    assert np.array_equal(back.alphas, lm.alphas)
    assert np.array_equal(back.length_scales, lm.length_scales)
    probe = rng.normal(size=(10, 3))
    assert np.array_equal(lf.lift_batch(back, probe),
                          lf.lift_batch(lm, probe))


def test_mle_learns_noise_on_noisy_targets(rng):
    # targets = smooth function + noise; evidence should pick a noise
    # level that smooths instead of interpolating the noise
    Y = grid_inputs(13)
    f = np.sin(Y[:, :1]) + 0.5 * Y[:, 1:]
    Z = f + 0.3 * rng.normal(size=f.shape)
    lm = lf.fit_lifting(Y, Z, lf.LiftingConfig(hyper="mle", mle_pairs=169),
                        input_labels=("a", "b"))
    noise_ratio = lm.noise_vars[0] / lm.signal_vars[0]
    assert noise_ratio > 1e-3
    held = rng.uniform(-0.9, 0.9, size=(50, 2))
    want = np.sin(held[:, :1]) + 0.5 * held[:, 1:]
    got = lf.lift_batch(lm, held)
    assert np.sqrt(np.mean((got - want) ** 2)) < 0.2


def test_subsampling_caps_training_size(rng):
    Y = rng.normal(size=(5000, 3))
    Z = rng.normal(size=(5000, 2))
    lm = lf.fit_lifting(Y, Z, lf.LiftingConfig(hyper="median",
                                               max_pairs=500))
    assert lm.X.shape[0] == 500
    assert lm.meta["n_train"] == 500
