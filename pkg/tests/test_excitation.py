"""Excitation family and persistence-of-excitation tests."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from terrakoop import excitation as exc
from terrakoop.exceptions import ConfigError


def spec(family, seed=0, **kw):
    return exc.SignalSpec(family=family, seed=seed, **kw)


def test_straight_is_zero():
    sig = exc.make_signal(spec("straight"), 5.0, 0.01)
    assert np.all(sig == 0.0)
    assert len(sig) == 500


def test_circle_is_constant():
    sig = exc.make_signal(spec("circle", amplitude=0.2), 5.0, 0.01)
    assert np.all(sig == 0.2)


def test_multisine_deterministic():
    a = exc.make_signal(spec("multisine", seed=42, amplitude=0.3), 10.0, 0.01)
    b = exc.make_signal(spec("multisine", seed=42, amplitude=0.3), 10.0, 0.01)
    assert np.array_equal(a, b)
    c = exc.make_signal(spec("multisine", seed=43, amplitude=0.3), 10.0, 0.01)
    assert not np.array_equal(a, c)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1),
       family=st.sampled_from(exc.FAMILIES))
def test_families_respect_saturation(seed, family):
    s = spec(family, seed=seed, amplitude=0.3, dither=0.05)
    sig = exc.make_signal(s, 4.0, 0.01)
    assert np.all(sig >= s.lo - 1e-15)
    assert np.all(sig <= s.hi + 1e-15)


def test_fishhook_shape():
    s = spec("fishhook", amplitude=0.2, ramp_rate=0.2, hold=1.0,
             counter_scale=-1.25)
    sig = exc.make_signal(s, 10.0, 0.01)
    t = np.arange(len(sig)) * 0.01
    # initial ramp at the configured rate
    k = 40
    assert sig[k] == pytest.approx(0.2 * t[k] / 1.0, rel=1e-10)
    # holds the peak after the ramp (ramp lasts 1 s)
    assert sig[150] == pytest.approx(0.2)
    # ends at the countersteer level
    assert sig[-1] == pytest.approx(-0.25)


def test_prbs_levels_and_dwell():
    s = spec("prbs", seed=7, amplitude=0.3, dwell=0.5)
    sig = exc.make_signal(s, 10.0, 0.01)
    assert set(np.round(np.unique(sig), 12)) <= {-0.3, 0.3}
    switches = np.nonzero(np.diff(sig))[0]
    assert np.all(np.diff(switches) % 50 == 0)


def test_ramp_slope_limited():
    s = spec("ramp", seed=3, amplitude=0.3, slope=0.25, dwell=1.0)
    sig = exc.make_signal(s, 10.0, 0.01)
    assert np.max(np.abs(np.diff(sig))) <= 0.25 * 0.01 + 1e-12


def test_chirp_sweeps_frequency():
    s = spec("chirp", amplitude=0.3, freq_pool=(0.2, 2.0))
    sig = exc.make_signal(s, 10.0, 0.01)
    # zero-crossing spacing shrinks as the sweep progresses
    crossings = np.nonzero(np.diff(np.signbit(sig)))[0]
    first_gap = crossings[1] - crossings[0]
    last_gap = crossings[-1] - crossings[-2]
    assert last_gap < first_gap


def test_offset_applied_before_saturation():
    s = spec("prbs", seed=1, amplitude=20.0, lo=0.0, hi=123.5, offset=50.0)
    sig = exc.make_signal(s, 5.0, 0.01)
    assert set(np.round(np.unique(sig), 9)) <= {30.0, 70.0}


def test_amplitude_cap_enforced():
    with pytest.raises(ConfigError):
        spec("circle", amplitude=0.5)


def test_saturate_examples():
    assert exc.saturate([0.5], -0.35, 0.35)[0] == 0.35
    assert exc.saturate([-1.0], -0.35, 0.35)[0] == -0.35
    assert exc.saturate([0.1], -0.35, 0.35)[0] == 0.1
    with pytest.raises(ConfigError):
        exc.saturate([0.0], 1.0, -1.0)


# ===========================================================================
# persistence of excitation
# ===========================================================================


def test_pe_constant_input_rank_one():
    u = np.full(200, 0.3)
    rank, ok = exc.pe_rank_check(u, 2)
    assert rank == 1
    assert not ok


def test_pe_zero_input_rank_zero():
    rank, ok = exc.pe_rank_check(np.zeros(100), 3)
    assert rank == 0
    assert not ok


def test_pe_prbs_full_rank():
    sig = exc.make_signal(spec("prbs", seed=11, amplitude=0.3, dwell=0.05),
                          2.0, 0.01)
    rank, ok = exc.pe_rank_check(sig, 5)
    assert rank == 5
    assert ok
    # cross-check the rank with an independent SVD on an explicit Hankel
    H = np.array([sig[i:i + 196] for i in range(5)])
    sv = np.linalg.svd(H, compute_uv=False)
    assert np.sum(sv > 1e-10 * sv[0]) == 5


def test_pe_multichannel():
    rng = np.random.default_rng(0)
    u = rng.normal(size=(2, 300))
    rank, ok = exc.pe_rank_check(u, 4)
    assert rank == 8
    assert ok


def test_pe_too_short_sequence():
    with pytest.raises(ConfigError):
        exc.pe_rank_check(np.ones(9), 5)
