"""Wheel-soil contact mechanics for a rigid wheel on deformable terrain.

Normal stress follows a pressure-sinkage power law; tangential and lateral
shear stresses develop with shear displacement and saturate at the
Mohr-Coulomb limit. Stresses are integrated over the contact patch to get
the longitudinal, lateral, and vertical wheel forces, and the equilibrium
sinkage is solved so the vertical force balances the wheel's normal load.

All quantities are SI (N, Pa, m, rad). Hot paths are numba-compiled;
public functions validate inputs and wrap the kernels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .exceptions import (
    ConvergenceError,
    DomainError,
    NoEquilibriumError,
    NumericalError,
    SinkageOverflowError,
)

# Speeds below this (both wheel rim and ground speed) count as stationary:
# the slip definitions are singular there.
STATIONARY_SPEED = 1e-3

# Sinkage equilibrium is searched in [0, SINKAGE_BRACKET_FRAC * r].
SINKAGE_BRACKET_FRAC = 0.9

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(64)

# Vertical-integrand variants (see WheelForces docs).
FZ_STANDARD = 0
FZ_AS_PRINTED = 1


@dataclass(frozen=True)
class SoilParams:
    """Pressure-sinkage and shear parameters for one soil type.

    k_c        cohesive modulus [N/m^(n+1)]
    k_phi      frictional modulus [N/m^(n+2)]
    c          cohesion [Pa]
    phi        internal friction angle [rad]
    n          sinkage exponent [-]
    k_t        longitudinal shear deformation modulus [m]
    k_c_shear  lateral shear deformation modulus [m]
    a0, a1     max-normal-stress angle coefficients [-]
    lambda_r   rear exit-sinkage ratio [-]
    """

    k_c: float
    k_phi: float
    c: float
    phi: float
    n: float
    k_t: float
    k_c_shear: float
    a0: float
    a1: float
    lambda_r: float

    def __post_init__(self):
        if self.k_c < 0:
            raise ValueError("k_c must be >= 0")
        if self.k_phi <= 0:
            raise ValueError("k_phi must be > 0")
        if self.c < 0:
            raise ValueError("c must be >= 0")
        if not 0 < self.phi < math.pi / 2:
            raise ValueError("phi must be in (0, pi/2)")
        if self.n <= 0:
            raise ValueError("n must be > 0")
        if self.k_t <= 0 or self.k_c_shear <= 0:
            raise ValueError("shear deformation moduli must be > 0")
        if not 0 < self.lambda_r < 1:
            raise ValueError("lambda_r must be in (0, 1)")
        if self.a0 <= 0:
            raise ValueError("a0 must be > 0")

    def kernel_vec(self, b: float) -> np.ndarray:
        """Pack parameters for the numba kernels (k_eq folds in width b)."""
        k_eq = self.k_c / b + self.k_phi
        return np.array(
            [k_eq, self.n, self.c, math.tan(self.phi), self.k_t,
             self.k_c_shear, self.a0, self.a1, self.lambda_r],
            dtype=np.float64,
        )


@dataclass(frozen=True)
class WheelGeometry:
    """Rigid wheel dimensions: radius r [m], width b [m]."""

    r: float
    b: float

    def __post_init__(self):
        if self.r <= 0 or self.b <= 0:
            raise ValueError("wheel radius and width must be > 0")


@dataclass(frozen=True)
class ContactAngles:
    """Contact-patch angular extent.

    theta_f  entry angle [rad]
    theta_r  exit angle [rad] (<= 0)
    theta_m  angle of maximum normal stress [rad]
    """

    theta_f: float
    theta_r: float
    theta_m: float


@dataclass(frozen=True)
class ContactState:
    """Kinematic contact condition: slip ratio s, slip angle beta [rad],
    normal load N [N]."""

    s: float
    beta: float
    N: float

    def __post_init__(self):
        if abs(self.beta) > math.pi / 2 + 1e-12:
            raise ValueError("|beta| must be <= pi/2")
        if self.N < 0:
            raise ValueError("N must be >= 0")


@dataclass(frozen=True)
class WheelForces:
    """Soil forces on the wheel and the equilibrium sinkage.

    F_l  longitudinal force [N]
    F_c  lateral force [N] (positive opposing +beta slip sign convention)
    F_z  vertical force [N]
    h_f  maximum sinkage [m]
    """

    F_l: float
    F_c: float
    F_z: float
    h_f: float


def slip_ratio(omega: float, v_l: float, r: float) -> tuple[float, bool]:
    """Slip ratio from wheel speed omega [rad/s] and ground speed v_l [m/s].

    Driving (|omega*r| > |v_l|): s = 1 - v_l/(omega*r); braking
    (|omega*r| < |v_l|): s = v_l/(omega*r) - 1. Clamped to [-1, 1].

    Returns (s, degenerate). degenerate is True for the stationary case
    (both speeds below STATIONARY_SPEED), where s = 0 by convention.
    """
    wr = omega * r
    if abs(wr) < STATIONARY_SPEED and abs(v_l) < STATIONARY_SPEED:
        return 0.0, True
    if abs(wr) >= abs(v_l):
        s = 1.0 - v_l / wr
    elif abs(wr) < 1e-12:
        # locked wheel limit of the braking branch
        s = math.copysign(1.0, v_l)
    else:
        s = v_l / wr - 1.0
    return min(1.0, max(-1.0, s)), False


def slip_angle(v_c: float, v_l: float) -> float:
    """Slip angle beta = atan2(v_c, |v_l|) [rad], clamped to [-pi/2, pi/2]."""
    beta = math.atan2(v_c, abs(v_l))
    return min(math.pi / 2, max(-math.pi / 2, beta))


@njit(cache=True)
def _angles_kernel(h_f, s, r, a0, a1, lam_r):
    if h_f <= 0.0:
        return 0.0, 0.0, 0.0
    tf = math.acos(1.0 - h_f / r)
    tm = (a0 + a1 * s) * tf
    # keep the patch ordering theta_r <= 0 <= theta_m <= theta_f for any slip
    if tm < 0.0:
        tm = 0.0
    elif tm > tf:
        tm = tf
    tr = -math.acos(1.0 - lam_r * h_f / r)
    return tf, tm, tr


def contact_angles(h_f: float, s: float, soil: SoilParams,
                   wheel: WheelGeometry) -> ContactAngles:
    """Entry, exit, and max-stress angles for sinkage h_f and slip s."""
    if h_f < 0:
        raise DomainError(f"sinkage must be >= 0, got {h_f}")
    if h_f >= wheel.r:
        raise SinkageOverflowError(
            f"sinkage {h_f} >= wheel radius {wheel.r}: wheel buried past axle")
    tf, tm, tr = _angles_kernel(h_f, s, wheel.r, soil.a0, soil.a1,
                                soil.lambda_r)
    return ContactAngles(theta_f=tf, theta_r=tr, theta_m=tm)


@njit(cache=True)
def _local_sinkage(theta, tf, tm, tr, r):
    """Equivalent soil deformation depth at contact angle theta."""
    if theta >= tm:
        return r * (math.cos(theta) - math.cos(tf))
    # rear branch: remap to an equivalent front-side angle
    te = tf - ((theta - tr) / (tm - tr)) * (tf - tm)
    return r * (math.cos(te) - math.cos(tf))


@njit(cache=True)
def _sigma_kernel(theta, tf, tm, tr, r, k_eq, n):
    h = _local_sinkage(theta, tf, tm, tr, r)
    if h <= 0.0:
        return 0.0
    return k_eq * h ** n


@njit(cache=True)
def _shear_sat(j, k):
    """Shear saturation 1 - exp(-j/k), extended oddly to j < 0 so the
    stress direction follows the sliding direction."""
    if j >= 0.0:
        return 1.0 - math.exp(-j / k)
    return -(1.0 - math.exp(j / k))


@njit(cache=True)
def _shear_kernel(theta, sigma, tf, s, tan_beta, c, tan_phi, k_t, k_cs, r):
    cap = c + sigma * tan_phi
    j_t = r * ((tf - theta) - (1.0 - s) * (math.sin(tf) - math.sin(theta)))
    j_c = r * (1.0 - s) * (tf - theta) * tan_beta
    tau_t = cap * _shear_sat(j_t, k_t)
    tau_c = cap * _shear_sat(j_c, k_cs)
    return tau_t, tau_c


def normal_stress(theta: float, angles: ContactAngles, soil: SoilParams,
                  wheel: WheelGeometry) -> float:
    """Normal stress sigma(theta) [Pa] at a contact angle inside the patch."""
    if not angles.theta_r - 1e-12 <= theta <= angles.theta_f + 1e-12:
        raise DomainError(
            f"theta={theta} outside contact patch "
            f"[{angles.theta_r}, {angles.theta_f}]")
    if angles.theta_f <= 0.0:
        return 0.0
    k_eq = soil.k_c / wheel.b + soil.k_phi
    return _sigma_kernel(theta, angles.theta_f, angles.theta_m,
                         angles.theta_r, wheel.r, k_eq, soil.n)


def shear_stresses(theta: float, angles: ContactAngles, s: float, beta: float,
                   soil: SoilParams, wheel: WheelGeometry) -> tuple[float, float]:
    """Tangential and lateral shear stresses (tau_t, tau_c) [Pa] at theta."""
    sigma = normal_stress(theta, angles, soil, wheel)
    return _shear_kernel(theta, sigma, angles.theta_f, s, math.tan(beta),
                         soil.c, math.tan(soil.phi), soil.k_t,
                         soil.k_c_shear, wheel.r)


# Grading exponent for the endpoint substitution below. The normal stress
# behaves like (deformation)^n with fractional n at the patch ends (entry
# and exit), where it vanishes with unbounded slope; Gauss-Legendre alone
# converges only algebraically there. Mapping theta = end -/+ span * xi^Q
# makes the integrand seen by the rule C^4-smooth for any n >= 0.3.
_GRADE_Q = 4.0


@njit(cache=True)
def _patch_integrals(h_f, s, tan_beta, soil, r, b, nodes, wts, panels,
                     fz_mode):
    """Force integrals with `panels` Gauss-Legendre panels per branch.

    Branch 0 covers [theta_r, theta_m] (stress vanishes at theta_r),
    branch 1 covers [theta_m, theta_f] (stress vanishes at theta_f); a
    graded substitution clusters nodes at the vanishing end.
    """
    k_eq, n, c, tan_phi, k_t, k_cs, a0, a1, lam_r = (
        soil[0], soil[1], soil[2], soil[3], soil[4], soil[5], soil[6],
        soil[7], soil[8])
    tf, tm, tr = _angles_kernel(h_f, s, r, a0, a1, lam_r)
    f_l = 0.0
    f_c = 0.0
    f_z = 0.0
    ok = True
    for branch in range(2):
        if branch == 0:
            lo, hi = tr, tm
            end, sgn = tr, 1.0     # singular at the left end
        else:
            lo, hi = tm, tf
            end, sgn = tf, -1.0    # singular at the right end
        span = hi - lo
        if span <= 0.0:
            continue
        # integrate over xi in [0, 1], theta = end + sgn * span * xi^Q
        width = 1.0 / panels
        for p in range(panels):
            half = 0.5 * width
            mid = p * width + half
            for i in range(nodes.shape[0]):
                xi = mid + half * nodes[i]
                xi_qm1 = xi * xi * xi          # xi^(Q-1) for Q = 4
                th = end + sgn * span * xi_qm1 * xi
                jac = _GRADE_Q * span * xi_qm1
                sg = _sigma_kernel(th, tf, tm, tr, r, k_eq, n)
                tau_t, tau_c = _shear_kernel(th, sg, tf, s, tan_beta, c,
                                             tan_phi, k_t, k_cs, r)
                w = wts[i] * half * jac
                ct = math.cos(th)
                st = math.sin(th)
                f_l += w * (tau_t * ct - sg * st)
                f_c += w * tau_c
                if fz_mode == 0:
                    f_z += w * (tau_t * st + sg * ct)
                else:
                    f_z += w * (tau_t * st + sg * st)
    f_l *= r * b
    f_c *= r * b
    f_z *= r * b
    if not (math.isfinite(f_l) and math.isfinite(f_c) and math.isfinite(f_z)):
        ok = False
    return f_l, f_c, f_z, ok


@njit(cache=True)
def _forces_adaptive(h_f, s, tan_beta, soil, r, b, nodes, wts, rtol, fz_mode):
    """Refine panel count until successive estimates agree to rtol.

    Convergence is relative to the largest force component: the three
    integrals share one stress field, so that is the natural scale (F_l in
    particular is a near-cancellation at small slip and has no meaningful
    own-scale).
    """
    if h_f <= 0.0:
        return 0.0, 0.0, 0.0, True
    pl, pc, pz, ok = _patch_integrals(h_f, s, tan_beta, soil, r, b, nodes,
                                      wts, 1, fz_mode)
    if not ok:
        return pl, pc, pz, False
    panels = 2
    while panels <= 16:
        fl, fc, fz, ok = _patch_integrals(h_f, s, tan_beta, soil, r, b,
                                          nodes, wts, panels, fz_mode)
        if not ok:
            return fl, fc, fz, False
        scale = max(abs(fl), abs(fc), abs(fz))
        diff = max(abs(fl - pl), abs(fc - pc), abs(fz - pz))
        pl, pc, pz = fl, fc, fz
        if diff <= rtol * scale + 1e-30:
            break
        panels *= 2
    return pl, pc, pz, True


def integrate_forces(h_f: float, state: ContactState, soil: SoilParams,
                     wheel: WheelGeometry, fz_mode: int = FZ_STANDARD,
                     rtol: float = 1e-8) -> WheelForces:
    """Integrate contact stresses into wheel forces at a given sinkage.

    No equilibrium condition is enforced: F_z is whatever the stress field
    produces at h_f. fz_mode selects the vertical integrand
    (FZ_STANDARD: tau_t*sin + sigma*cos; FZ_AS_PRINTED: tau_t*sin +
    sigma*sin, kept for forensic comparison only).
    """
    if h_f < 0:
        raise DomainError(f"sinkage must be >= 0, got {h_f}")
    if h_f >= wheel.r:
        raise SinkageOverflowError(
            f"sinkage {h_f} >= wheel radius {wheel.r}")
    soil_vec = soil.kernel_vec(wheel.b)
    f_l, f_c, f_z, ok = _forces_adaptive(
        h_f, state.s, math.tan(state.beta), soil_vec, wheel.r, wheel.b,
        _GL_NODES, _GL_WEIGHTS, rtol, fz_mode)
    if not ok:
        theta_bad = _find_bad_angle(h_f, state, soil, wheel)
        raise NumericalError(
            f"non-finite contact stress integrand near theta={theta_bad}")
    return WheelForces(F_l=f_l, F_c=f_c, F_z=f_z, h_f=h_f)


def _find_bad_angle(h_f, state, soil, wheel):
    """Locate a contact angle producing a non-finite stress (diagnostics)."""
    angles = contact_angles(h_f, state.s, soil, wheel)
    for th in np.linspace(angles.theta_r, angles.theta_f, 257):
        sg = normal_stress(float(th), angles, soil, wheel)
        tt, tc = shear_stresses(float(th), angles, state.s, state.beta, soil,
                                wheel)
        if not (math.isfinite(sg) and math.isfinite(tt) and math.isfinite(tc)):
            return float(th)
    return float("nan")


@njit(cache=True)
def _fz_at(h, s, tan_beta, soil, r, b, nodes, wts, rtol, fz_mode):
    """Vertical force for the equilibrium root-finder.

    A single graded panel per branch is spectrally converged here
    (relative error ~1e-15, far below the root tolerance), so skip the
    refinement loop on this hot path.
    """
    if h <= 0.0:
        return 0.0, True
    _, _, fz, ok = _patch_integrals(h, s, tan_beta, soil, r, b, nodes, wts,
                                    1, fz_mode)
    return fz, ok


@njit(cache=True)
def _sinkage_kernel(N, s, tan_beta, soil, r, b, nodes, wts, h0, tol_abs,
                    tol_rel, max_iter, quad_rtol, fz_mode):
    """Newton iteration on F_z(h) - N = 0 with a maintained bisection
    bracket. Returns (h, residual, iters, status); status 0 ok, 1 no
    bracket, 2 max iterations, 3 non-finite."""
    if N <= 0.0:
        return 0.0, 0.0, 0, 0
    tol = max(tol_abs, tol_rel * N)
    h_max = SINKAGE_BRACKET_FRAC * r
    g_hi, ok = _fz_at(h_max, s, tan_beta, soil, r, b, nodes, wts, quad_rtol,
                      fz_mode)
    if not ok:
        return h_max, math.nan, 0, 3
    if g_hi - N < 0.0:
        return h_max, g_hi - N, 0, 1
    lo = 0.0
    hi = h_max
    h = min(max(h0, 1e-6 * r), 0.99 * h_max)
    fd_step = 1e-6 * r
    g = math.nan
    for it in range(max_iter):
        fz, ok = _fz_at(h, s, tan_beta, soil, r, b, nodes, wts, quad_rtol,
                        fz_mode)
        if not ok:
            return h, math.nan, it, 3
        g = fz - N
        if abs(g) <= tol:
            return h, g, it, 0
        if g < 0.0:
            lo = h
        else:
            hi = h
        # central difference derivative (one-sided at the h=0 boundary)
        if h - fd_step > 0.0:
            fp, ok1 = _fz_at(h + fd_step, s, tan_beta, soil, r, b, nodes,
                             wts, quad_rtol, fz_mode)
            fm, ok2 = _fz_at(h - fd_step, s, tan_beta, soil, r, b, nodes,
                             wts, quad_rtol, fz_mode)
            dg = (fp - fm) / (2.0 * fd_step)
        else:
            fp, ok1 = _fz_at(h + fd_step, s, tan_beta, soil, r, b, nodes,
                             wts, quad_rtol, fz_mode)
            fm, ok2 = fz, True
            dg = (fp - fz) / fd_step
        if not (ok1 and ok2):
            return h, g, it, 3
        if dg > 0.0:
            h_new = h - g / dg
        else:
            h_new = lo  # force the bisection fallback below
        if not (lo < h_new < hi):
            h_new = 0.5 * (lo + hi)
        h = h_new
    return h, g, max_iter, 2


def solve_sinkage(N: float, state: ContactState, soil: SoilParams,
                  wheel: WheelGeometry, tol_abs: float = 1e-6,
                  tol_rel: float = 1e-6, max_iter: int = 100,
                  fz_mode: int = FZ_STANDARD) -> float:
    """Equilibrium sinkage h_f [m] such that F_z(h_f) balances load N [N]."""
    if N < 0:
        raise DomainError(f"normal load must be >= 0, got {N}")
    if N == 0.0:
        return 0.0
    soil_vec = soil.kernel_vec(wheel.b)
    r, b = wheel.r, wheel.b
    h0 = _initial_sinkage_guess(N, soil, wheel)
    h, res, _, status = _sinkage_kernel(
        N, state.s, math.tan(state.beta), soil_vec, r, b, _GL_NODES,
        _GL_WEIGHTS, h0, tol_abs, tol_rel, max_iter, 1e-10, fz_mode)
    if status == 1:
        raise NoEquilibriumError(
            f"F_z({SINKAGE_BRACKET_FRAC}*r) = {res + N:.6g} N cannot carry "
            f"load N = {N:.6g} N")
    if status == 2:
        raise ConvergenceError(
            f"sinkage iteration did not converge in {max_iter} iterations "
            f"(last residual {res:.3g} N)", residual=res)
    if status == 3:
        raise NumericalError("non-finite value in sinkage iteration")
    return h


def _initial_sinkage_guess(N, soil, wheel):
    """Power-law estimate from the pressure-sinkage relation, capped."""
    r, b = wheel.r, wheel.b
    k_eq = soil.k_c / b + soil.k_phi
    h0 = r * (N / (r * b * k_eq * r ** soil.n)) ** (1.0 / soil.n)
    return min(h0, 0.3 * r)


@njit(cache=True)
def _wheel_forces_kernel(N, omega, v_l, v_c, soil, r, b, nodes, wts,
                         quad_rtol, fz_mode):
    """Full per-wheel pipeline: slip, sinkage equilibrium, force integrals.

    Returns (F_l, F_c, F_z, h_f, s, beta, status). Stationary contact
    produces zero shear-borne forces. Status as in _sinkage_kernel.
    """
    if N <= 0.0:
        return 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0
    wr = omega * r
    degenerate = abs(wr) < STATIONARY_SPEED and abs(v_l) < STATIONARY_SPEED
    if degenerate:
        s = 0.0
    elif abs(wr) >= abs(v_l):
        s = 1.0 - v_l / wr
    elif abs(wr) < 1e-12:
        s = 1.0 if v_l > 0.0 else -1.0
    else:
        s = v_l / wr - 1.0
    s = min(1.0, max(-1.0, s))
    beta = 0.0 if degenerate else math.atan2(v_c, abs(v_l))
    beta = min(math.pi / 2, max(-math.pi / 2, beta))
    tan_beta = math.tan(beta)

    k_eq = soil[0]
    n = soil[1]
    h0 = r * (N / (r * b * k_eq * r ** n)) ** (1.0 / n)
    h0 = min(h0, 0.3 * r)
    h, res, _, status = _sinkage_kernel(N, s, tan_beta, soil, r, b, nodes,
                                        wts, h0, 1e-6, 1e-6, 100, quad_rtol,
                                        fz_mode)
    if status != 0:
        return 0.0, 0.0, 0.0, h, s, beta, status
    f_l, f_c, f_z, ok = _forces_adaptive(h, s, tan_beta, soil, r, b, nodes,
                                         wts, quad_rtol, fz_mode)
    if not ok:
        return f_l, f_c, f_z, h, s, beta, 3
    if degenerate:
        # no sliding at rest: the soil carries the load without shear
        f_l = 0.0
        f_c = 0.0
    return f_l, f_c, f_z, h, s, beta, 0


def wheel_forces(N: float, omega: float, v_l: float, v_c: float,
                 soil: SoilParams, wheel: WheelGeometry,
                 fz_mode: int = FZ_STANDARD) -> WheelForces:
    """Soil forces on one wheel from its normal load and kinematics.

    Composes slip_ratio, slip_angle, solve_sinkage, and integrate_forces.
    """
    if N < 0:
        raise DomainError(f"normal load must be >= 0, got {N}")
    soil_vec = soil.kernel_vec(wheel.b)
    f_l, f_c, f_z, h, s, beta, status = _wheel_forces_kernel(
        N, omega, v_l, v_c, soil_vec, wheel.r, wheel.b, _GL_NODES,
        _GL_WEIGHTS, 1e-10, fz_mode)
    if status == 1:
        raise NoEquilibriumError(
            f"no sinkage in [0, {SINKAGE_BRACKET_FRAC}*r] carries "
            f"N = {N:.6g} N")
    if status == 2:
        raise ConvergenceError("sinkage iteration did not converge",
                               residual=None)
    if status == 3:
        raise NumericalError("non-finite value in wheel force computation")
    return WheelForces(F_l=f_l, F_c=f_c, F_z=f_z, h_f=h)
