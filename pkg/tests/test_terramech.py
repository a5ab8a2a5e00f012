"""Wheel-soil contact mechanics tests.

The quadrature and root-find are cross-checked against independent
oracles coded here from the closed-form stress expressions (scipy
adaptive quadrature, plain bisection), never against the package's own
integration path.
"""

import math

import numpy as np
import pytest
from scipy.integrate import quad

from terrakoop import terramech as tm
from terrakoop.exceptions import (
    DomainError,
    NoEquilibriumError,
    SinkageOverflowError,
)

# ===========================================================================
# independent scalar oracle of the stress field (test-local on purpose)
# ===========================================================================


def oracle_angles(h_f, s, soil, wheel):
    tf = math.acos(1.0 - h_f / wheel.r)
    tem = (soil.a0 + soil.a1 * s) * tf
    tem = min(max(tem, 0.0), tf)
    tr = -math.acos(1.0 - soil.lambda_r * h_f / wheel.r)
    return tf, tem, tr


def oracle_sigma(theta, h_f, s, soil, wheel):
    tf, tem, tr = oracle_angles(h_f, s, soil, wheel)
    r = wheel.r
    if theta >= tem:
        h = r * (math.cos(theta) - math.cos(tf))
    else:
        te = tf - ((theta - tr) / (tem - tr)) * (tf - tem)
        h = r * (math.cos(te) - math.cos(tf))
    if h <= 0.0:
        return 0.0
    return (soil.k_c / wheel.b + soil.k_phi) * h ** soil.n


def oracle_shear(theta, h_f, s, beta, soil, wheel):
    tf, _, _ = oracle_angles(h_f, s, soil, wheel)
    r = wheel.r
    sg = oracle_sigma(theta, h_f, s, soil, wheel)
    cap = soil.c + sg * math.tan(soil.phi)
    j_t = r * ((tf - theta) - (1.0 - s) * (math.sin(tf) - math.sin(theta)))
    j_c = r * (1.0 - s) * (tf - theta) * math.tan(beta)

    def sat(j, k):
        if j >= 0:
            return 1.0 - math.exp(-j / k)
        return -(1.0 - math.exp(j / k))

    return cap * sat(j_t, soil.k_t), cap * sat(j_c, soil.k_c_shear)


def oracle_forces(h_f, s, beta, soil, wheel):
    """Adaptive-quadrature force integrals, split at the stress peak."""
    tf, tem, tr = oracle_angles(h_f, s, soil, wheel)
    r, b = wheel.r, wheel.b

    def integrand(theta, which):
        sg = oracle_sigma(theta, h_f, s, soil, wheel)
        tt, tc = oracle_shear(theta, h_f, s, beta, soil, wheel)
        if which == 0:
            return tt * math.cos(theta) - sg * math.sin(theta)
        if which == 1:
            return tc
        return tt * math.sin(theta) + sg * math.cos(theta)

    out = []
    for which in range(3):
        total = 0.0
        for lo, hi in ((tr, tem), (tem, tf)):
            if hi > lo:
                val, _ = quad(integrand, lo, hi, args=(which,), limit=400,
                              epsabs=1e-12, epsrel=1e-13)
                total += val
        out.append(r * b * total)
    return tuple(out)


# ===========================================================================
# slip ratio / slip angle
# ===========================================================================


def test_slip_ratio_zero_at_kinematic_match():
    s, degenerate = tm.slip_ratio(10.0, 3.3, 0.33)
    assert s == pytest.approx(0.0, abs=1e-12)
    assert not degenerate


def test_slip_ratio_driving_branch():
    # omega*r = 6.6 vs v_l = 3.3: drives at half the rim speed
    s, _ = tm.slip_ratio(20.0, 3.3, 0.33)
    assert s == pytest.approx(0.5, abs=1e-12)


def test_slip_ratio_braking_branch_clamped():
    # v_l/(omega*r) - 1 = 3.3/1.65 - 1 = 1, right at the clamp
    s, _ = tm.slip_ratio(5.0, 3.3, 0.33)
    assert s == pytest.approx(1.0, abs=1e-12)


def test_slip_ratio_clamp_bounds():
    s, _ = tm.slip_ratio(100.0, 0.01, 0.33)
    assert s <= 1.0
    s, _ = tm.slip_ratio(100.0, -0.01, 0.33)
    assert abs(s) <= 1.0


def test_slip_ratio_stationary_flag():
    s, degenerate = tm.slip_ratio(1e-4, 1e-4, 0.33)
    assert s == 0.0
    assert degenerate


def test_slip_angle_examples():
    assert tm.slip_angle(0.0, 5.0) == pytest.approx(0.0, abs=1e-15)
    assert tm.slip_angle(5.0, 5.0) == pytest.approx(math.pi / 4, rel=1e-12)
    assert tm.slip_angle(1.0, 0.0) == pytest.approx(math.pi / 2, rel=1e-12)


def test_slip_angle_sign_and_clamp():
    assert tm.slip_angle(-5.0, 5.0) == pytest.approx(-math.pi / 4)
    # negative ground speed uses |v_l|: angle stays in [-pi/2, pi/2]
    assert tm.slip_angle(3.0, -4.0) == pytest.approx(math.atan2(3.0, 4.0))


# ===========================================================================
# contact angles
# ===========================================================================


def test_contact_angles_zero_sinkage(sandy_loam, wheel):
    ang = tm.contact_angles(0.0, 0.3, sandy_loam, wheel)
    assert ang.theta_f == 0.0
    assert ang.theta_m == 0.0
    assert ang.theta_r == 0.0


def test_contact_angles_sandy_loam_table_values(sandy_loam, wheel):
    # a0 = 0.18, a1 = 0.32 -> theta_m = (0.18 + 0.32*0.5) * theta_f
    ang = tm.contact_angles(0.05, 0.5, sandy_loam, wheel)
    tf = math.acos(1.0 - 0.05 / 0.33)
    assert ang.theta_f == pytest.approx(tf, rel=1e-14)
    assert ang.theta_m == pytest.approx(0.34 * tf, rel=1e-14)


def test_contact_angles_rear_exit(sandy_loam, wheel):
    ang = tm.contact_angles(0.05, 0.0, sandy_loam, wheel)
    assert ang.theta_r == pytest.approx(
        -math.acos(1.0 - 0.08 * 0.05 / 0.33), rel=1e-14)


def test_contact_angles_ordering(sandy_loam, wheel):
    for h in (0.01, 0.05, 0.1, 0.2):
        for s in (-1.0, -0.3, 0.0, 0.4, 1.0):
            ang = tm.contact_angles(h, s, sandy_loam, wheel)
            assert ang.theta_r <= 0.0 <= ang.theta_m <= ang.theta_f
            assert ang.theta_f < math.pi / 2


def test_contact_angles_overflow(sandy_loam, wheel):
    with pytest.raises(SinkageOverflowError):
        tm.contact_angles(wheel.r, 0.0, sandy_loam, wheel)


# ===========================================================================
# normal stress
# ===========================================================================


def test_normal_stress_vanishes_at_patch_edges(sandy_loam, wheel):
    ang = tm.contact_angles(0.05, 0.3, sandy_loam, wheel)
    assert tm.normal_stress(ang.theta_f, ang, sandy_loam, wheel) == 0.0
    assert tm.normal_stress(ang.theta_r, ang, sandy_loam, wheel) \
        == pytest.approx(0.0, abs=1e-9)


def test_normal_stress_matches_scalar_oracle(sandy_loam, wheel):
    h_f, s = 0.05, 0.3
    ang = tm.contact_angles(h_f, s, sandy_loam, wheel)
    got = tm.normal_stress(0.1, ang, sandy_loam, wheel)
    want = oracle_sigma(0.1, h_f, s, sandy_loam, wheel)
    assert got == pytest.approx(want, rel=1e-13)
    assert got > 0.0


def test_normal_stress_continuous_at_peak(sandy_loam, clay, wheel):
    for soil in (sandy_loam, clay):
        for h_f in (0.01, 0.05, 0.11):
            for s in (0.0, 0.2, 0.7):
                ang = tm.contact_angles(h_f, s, soil, wheel)
                lo = tm.normal_stress(ang.theta_m - 1e-12, ang, soil, wheel)
                hi = tm.normal_stress(ang.theta_m + 1e-12, ang, soil, wheel)
                assert lo == pytest.approx(hi, rel=1e-10)


def test_normal_stress_nonnegative_everywhere(sandy_loam, wheel, rng):
    for _ in range(20):
        h_f = rng.uniform(1e-4, 0.15)
        s = rng.uniform(-1, 1)
        ang = tm.contact_angles(h_f, s, sandy_loam, wheel)
        for theta in np.linspace(ang.theta_r, ang.theta_f, 101):
            assert tm.normal_stress(float(theta), ang, sandy_loam,
                                    wheel) >= 0.0


def test_normal_stress_outside_patch_raises(sandy_loam, wheel):
    ang = tm.contact_angles(0.05, 0.3, sandy_loam, wheel)
    with pytest.raises(DomainError):
        tm.normal_stress(ang.theta_f + 0.1, ang, sandy_loam, wheel)


# ===========================================================================
# shear stresses
# ===========================================================================


def test_shear_zero_at_entry(sandy_loam, wheel):
    ang = tm.contact_angles(0.05, 0.4, sandy_loam, wheel)
    tt, tc = tm.shear_stresses(ang.theta_f, ang, 0.4, 0.1, sandy_loam, wheel)
    assert tt == pytest.approx(0.0, abs=1e-9)
    assert tc == pytest.approx(0.0, abs=1e-9)


def test_shear_lateral_vanishes_without_slip_angle(sandy_loam, wheel):
    ang = tm.contact_angles(0.05, 0.4, sandy_loam, wheel)
    for theta in np.linspace(ang.theta_r, ang.theta_f, 33):
        _, tc = tm.shear_stresses(float(theta), ang, 0.4, 0.0, sandy_loam,
                                  wheel)
        assert tc == 0.0


def test_shear_full_slip_closed_form(sandy_loam, wheel):
    # s = 1, theta = 0: j_t = r * theta_f
    h_f = 0.05
    ang = tm.contact_angles(h_f, 1.0, sandy_loam, wheel)
    sg = tm.normal_stress(0.0, ang, sandy_loam, wheel)
    want = (sandy_loam.c + sg * math.tan(sandy_loam.phi)) * (
        1.0 - math.exp(-wheel.r * ang.theta_f / sandy_loam.k_t))
    tt, _ = tm.shear_stresses(0.0, ang, 1.0, 0.0, sandy_loam, wheel)
    assert tt == pytest.approx(want, rel=1e-12)


def test_shear_within_mohr_coulomb_cap(sandy_loam, clay, wheel, rng):
    for soil in (sandy_loam, clay):
        for _ in range(20):
            h_f = rng.uniform(1e-3, 0.12)
            s = rng.uniform(0.0, 1.0)
            beta = rng.uniform(-1.4, 1.4)
            ang = tm.contact_angles(h_f, s, soil, wheel)
            for theta in np.linspace(ang.theta_r, ang.theta_f, 21):
                sg = tm.normal_stress(float(theta), ang, soil, wheel)
                cap = soil.c + sg * math.tan(soil.phi)
                tt, tc = tm.shear_stresses(float(theta), ang, s, beta, soil,
                                           wheel)
                assert 0.0 <= tt <= cap + 1e-9
                assert abs(tc) <= cap + 1e-9


def test_shear_lateral_odd_in_slip_angle(sandy_loam, wheel):
    ang = tm.contact_angles(0.06, 0.3, sandy_loam, wheel)
    for theta in (-0.1, 0.0, 0.2, 0.4):
        _, tc_pos = tm.shear_stresses(theta, ang, 0.3, 0.25, sandy_loam,
                                      wheel)
        _, tc_neg = tm.shear_stresses(theta, ang, 0.3, -0.25, sandy_loam,
                                      wheel)
        assert tc_pos == pytest.approx(-tc_neg, rel=1e-12)


# ===========================================================================
# force integration
# ===========================================================================


def test_forces_zero_at_zero_sinkage(sandy_loam, wheel):
    st = tm.ContactState(s=0.3, beta=0.1, N=1000.0)
    wf = tm.integrate_forces(0.0, st, sandy_loam, wheel)
    assert wf.F_l == 0.0 and wf.F_c == 0.0 and wf.F_z == 0.0


def test_forces_lateral_zero_without_slip_angle(sandy_loam, wheel):
    st = tm.ContactState(s=0.3, beta=0.0, N=1000.0)
    wf = tm.integrate_forces(0.05, st, sandy_loam, wheel)
    assert wf.F_c == 0.0


def test_forces_match_adaptive_quadrature_oracle(sandy_loam, clay, wheel,
                                                 rng):
    for soil in (sandy_loam, clay):
        for _ in range(25):
            h_f = rng.uniform(0.005, 0.12)
            s = rng.uniform(0.05, 0.9)
            beta = rng.uniform(-0.45, 0.45)
            st = tm.ContactState(s=s, beta=beta, N=1000.0)
            wf = tm.integrate_forces(h_f, st, soil, wheel)
            want = oracle_forces(h_f, s, beta, soil, wheel)
            scale = max(abs(w) for w in want)
            for got, ref in zip((wf.F_l, wf.F_c, wf.F_z), want):
                assert abs(got - ref) <= 1e-6 * max(abs(ref), 1e-6 * scale)


def test_forces_as_printed_variant_differs(sandy_loam, wheel):
    st = tm.ContactState(s=0.3, beta=0.1, N=1000.0)
    std = tm.integrate_forces(0.05, st, sandy_loam, wheel,
                              fz_mode=tm.FZ_STANDARD)
    printed = tm.integrate_forces(0.05, st, sandy_loam, wheel,
                                  fz_mode=tm.FZ_AS_PRINTED)
    assert std.F_l == pytest.approx(printed.F_l, rel=1e-12)
    assert std.F_z != pytest.approx(printed.F_z, rel=1e-3)


def test_vertical_force_increasing_in_sinkage(sandy_loam, clay, wheel):
    for soil in (sandy_loam, clay):
        st = tm.ContactState(s=0.2, beta=0.1, N=1000.0)
        hs = np.linspace(1e-4, 0.9 * wheel.r, 120)
        fz = [tm.integrate_forces(float(h), st, soil, wheel).F_z for h in hs]
        assert all(b > a for a, b in zip(fz, fz[1:]))


# ===========================================================================
# sinkage equilibrium
# ===========================================================================


def bisect_sinkage(N, s, beta, soil, wheel, tol=1e-12):
    """Plain bisection on the same residual F_z(h) - N."""
    st = tm.ContactState(s=s, beta=beta, N=N)

    def g(h):
        return tm.integrate_forces(h, st, soil, wheel).F_z - N

    lo, hi = 0.0, 0.9 * wheel.r
    assert g(hi) > 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if g(mid) < 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


def test_sinkage_zero_load(sandy_loam, wheel):
    st = tm.ContactState(s=0.2, beta=0.0, N=0.0)
    assert tm.solve_sinkage(0.0, st, sandy_loam, wheel) == 0.0


def test_sinkage_monotone_in_load(sandy_loam, wheel):
    st = tm.ContactState(s=0.2, beta=0.0, N=0.0)
    hs = [tm.solve_sinkage(N, st, sandy_loam, wheel)
          for N in (200.0, 500.0, 1000.0, 2000.0, 4000.0)]
    assert all(b > a for a, b in zip(hs, hs[1:]))


def test_sinkage_against_bisection_oracle(sandy_loam, wheel):
    st = tm.ContactState(s=0.2, beta=0.0, N=2000.0)
    got = tm.solve_sinkage(2000.0, st, sandy_loam, wheel)
    want = bisect_sinkage(2000.0, 0.2, 0.0, sandy_loam, wheel)
    assert got == pytest.approx(want, abs=1e-8)
    resid = tm.integrate_forces(got, st, sandy_loam, wheel).F_z - 2000.0
    assert abs(resid) <= 1e-6 * 2000.0


def test_sinkage_no_equilibrium_error(wheel):
    # a very weak soil cannot carry a huge load inside the bracket
    weak = tm.SoilParams(k_c=0.0, k_phi=1e3, c=0.0, phi=0.3, n=1.0,
                         k_t=0.025, k_c_shear=0.025, a0=0.4, a1=0.1,
                         lambda_r=0.08)
    st = tm.ContactState(s=0.2, beta=0.0, N=5e4)
    with pytest.raises(NoEquilibriumError):
        tm.solve_sinkage(5e4, st, weak, wheel)


# ===========================================================================
# full wheel pipeline
# ===========================================================================


def test_wheel_forces_zero_load(sandy_loam, wheel):
    wf = tm.wheel_forces(0.0, 15.0, 4.0, 0.5, sandy_loam, wheel)
    assert wf == tm.WheelForces(0.0, 0.0, 0.0, 0.0)


def test_wheel_forces_no_lateral_velocity(sandy_loam, wheel):
    wf = tm.wheel_forces(1500.0, 15.0, 4.0, 0.0, sandy_loam, wheel)
    assert wf.F_c == 0.0


def test_wheel_forces_equals_manual_composition(clay, wheel):
    N, omega, v_l, v_c = 1500.0, 15.0, 4.0, 0.5
    wf = tm.wheel_forces(N, omega, v_l, v_c, clay, wheel)

    s, degenerate = tm.slip_ratio(omega, v_l, wheel.r)
    assert not degenerate
    beta = tm.slip_angle(v_c, v_l)
    st = tm.ContactState(s=s, beta=beta, N=N)
    h = tm.solve_sinkage(N, st, clay, wheel)
    manual = tm.integrate_forces(h, st, clay, wheel)
    assert wf.h_f == pytest.approx(h, abs=1e-9)
    assert wf.F_l == pytest.approx(manual.F_l, rel=1e-9, abs=1e-9)
    assert wf.F_c == pytest.approx(manual.F_c, rel=1e-9, abs=1e-9)
    assert wf.F_z == pytest.approx(manual.F_z, rel=1e-9)


def test_wheel_forces_stationary_contact_is_forceless(sandy_loam, wheel):
    wf = tm.wheel_forces(2000.0, 0.0, 0.0, 0.0, sandy_loam, wheel)
    assert wf.F_l == 0.0 and wf.F_c == 0.0
    assert wf.h_f > 0.0


def test_wheel_forces_lateral_odd_in_lateral_velocity(sandy_loam, wheel):
    plus = tm.wheel_forces(1500.0, 15.0, 4.0, 0.8, sandy_loam, wheel)
    minus = tm.wheel_forces(1500.0, 15.0, 4.0, -0.8, sandy_loam, wheel)
    assert plus.F_c == pytest.approx(-minus.F_c, rel=1e-10)
    assert plus.F_l == pytest.approx(minus.F_l, rel=1e-10)
    assert plus.h_f == pytest.approx(minus.h_f, rel=1e-10)


def test_negative_load_rejected(sandy_loam, wheel):
    with pytest.raises(DomainError):
        tm.wheel_forces(-1.0, 15.0, 4.0, 0.0, sandy_loam, wheel)
