"""Coupled planar single-track + half-car vehicle dynamics on deformable
terrain.

State vector layout (12 entries, used everywhere a packed state appears):

    [u, v, psi, psi_dot, X, Y, z, z_dot, theta, theta_dot, omega_f, omega_r]

u, v are body-frame velocities, psi yaw, (X, Y) global position, z heave
from static equilibrium, theta pitch, omega_* wheel spin rates. Soil
forces come from :mod:`terrakoop.terramech` per wheel at every derivative
evaluation. Integration is adaptive explicit Runge-Kutta (5th order with
embedded 4th-order error estimate) with terminal events for wheel
lift-off and near-zero forward speed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.integrate import solve_ivp

from . import config as cfg
from .exceptions import ConfigError, NumericalError
from .terramech import (
    _GL_NODES,
    _GL_WEIGHTS,
    FZ_STANDARD,
    SoilParams,
    WheelGeometry,
    _wheel_forces_kernel,
)

GRAVITY = 9.81

STATE_LABELS = ("u", "v", "psi", "psi_dot", "X", "Y", "z", "z_dot", "theta",
                "theta_dot", "omega_f", "omega_r")
INPUT_LABELS = ("delta", "tau")
OUTPUT_LABELS = ("u", "v", "psi_dot")
OUTPUT_INDICES = (0, 1, 3)

SIGN_STANDARD = 0
SIGN_AS_PRINTED = 1

# pitch magnitude beyond which the small-angle modelling regime is suspect
SMALL_ANGLE_LIMIT = 0.3

EVENT_NONE = 0
EVENT_LIFTOFF = 1
EVENT_SLOW_SPEED = 2
TERMINATION_NAMES = {EVENT_NONE: "time", EVENT_LIFTOFF: "liftoff",
                     EVENT_SLOW_SPEED: "slow_speed"}

SLOW_SPEED_LIMIT = 0.05


@dataclass(frozen=True)
class RollingResistance:
    """Speed/load/pressure law f_r = P^alpha * N^beta * (A + B v + C v^2).

    All-zero (A, B, C) disables the force, which is the default since no
    measured coefficient set ships with the vehicle table.
    """

    P: float = 2.0e5
    alpha: float = 0.0
    beta: float = 0.0
    A: float = 0.0
    B: float = 0.0
    C: float = 0.0


@dataclass(frozen=True)
class VehicleParams:
    m: float
    m_w: float
    I_z: float
    I_y: float
    I_wf: float
    I_wr: float
    l_f: float
    l_r: float
    k_f: float
    k_r: float
    c_f: float
    c_r: float
    wheel: WheelGeometry
    rho_air: float
    C_d: float
    A_fx: float
    A_fy: float
    rolling: RollingResistance = field(default_factory=RollingResistance)

    def __post_init__(self):
        for name in ("m", "m_w", "I_z", "I_y", "I_wf", "I_wr", "l_f", "l_r"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")

    @classmethod
    def from_config(cls, overrides: dict | None = None) -> "VehicleParams":
        d = dict(cfg.VEHICLE_DEFAULTS)
        if overrides:
            unknown = set(overrides) - set(d)
            if unknown:
                raise ConfigError(f"unknown vehicle parameters: {sorted(unknown)}")
            d.update(overrides)
        return cls(
            m=d["m"], m_w=d["m_w"], I_z=d["I_z"], I_y=d["I_y"],
            I_wf=d["I_wf"], I_wr=d["I_wr"], l_f=d["l_f"], l_r=d["l_r"],
            k_f=d["k_f"], k_r=d["k_r"], c_f=d["c_f"], c_r=d["c_r"],
            wheel=WheelGeometry(r=d["wheel_r"], b=d["wheel_b"]),
            rho_air=d["rho_air"], C_d=d["C_d"], A_fx=d["A_fx"],
            A_fy=d["A_fy"],
            rolling=RollingResistance(
                P=d["rolling_P"], alpha=d["rolling_alpha"],
                beta=d["rolling_beta"], A=d["rolling_A"], B=d["rolling_B"],
                C=d["rolling_C"]),
        )

    def kernel_vec(self) -> np.ndarray:
        ro = self.rolling
        return np.array(
            [self.m, self.m_w, self.I_z, self.I_y, self.I_wf, self.I_wr,
             self.l_f, self.l_r, self.k_f, self.k_r, self.c_f, self.c_r,
             self.rho_air, self.C_d, self.A_fx, self.A_fy,
             ro.P, ro.alpha, ro.beta, ro.A, ro.B, ro.C],
            dtype=np.float64,
        )


@dataclass
class VehicleState:
    u: float = 0.0
    v: float = 0.0
    psi: float = 0.0
    psi_dot: float = 0.0
    X: float = 0.0
    Y: float = 0.0
    z: float = 0.0
    z_dot: float = 0.0
    theta: float = 0.0
    theta_dot: float = 0.0
    omega_f: float = 0.0
    omega_r: float = 0.0

    def __post_init__(self):
        if not np.all(np.isfinite(self.to_vec())):
            raise ValueError("vehicle state must be finite")

    def to_vec(self) -> np.ndarray:
        return np.array([self.u, self.v, self.psi, self.psi_dot, self.X,
                         self.Y, self.z, self.z_dot, self.theta,
                         self.theta_dot, self.omega_f, self.omega_r])

    @classmethod
    def from_vec(cls, x) -> "VehicleState":
        return cls(*[float(v) for v in x])

    @property
    def small_angle_ok(self) -> bool:
        return abs(self.theta) <= SMALL_ANGLE_LIMIT


def rolling_state(u0: float, wheel_r: float, psi0: float = 0.0,
                  slip_eps_f: float = 0.0, slip_eps_r: float = 0.0) -> VehicleState:
    """State rolling straight at u0 with wheels near kinematic match."""
    w0 = u0 / wheel_r
    return VehicleState(u=u0, psi=psi0, omega_f=w0 * (1.0 + slip_eps_f),
                        omega_r=w0 * (1.0 + slip_eps_r))


@dataclass(frozen=True)
class ControlSignal:
    """Zero-order-hold sampled steering/torque commands.

    delta[k], tau[k] are active over [k*dt, (k+1)*dt).
    """

    dt: float
    delta: np.ndarray
    tau: np.ndarray

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("signal dt must be > 0")
        if len(self.delta) != len(self.tau):
            raise ValueError("delta and tau must have equal length")

    def __len__(self):
        return len(self.delta)

    def check_bounds(self, steer_max=cfg.STEER_MAX, tau_max=cfg.TORQUE_MAX):
        if np.max(np.abs(self.delta)) > steer_max + 1e-12:
            raise ConfigError(f"steering exceeds |{steer_max}| rad")
        if np.min(self.tau) < -1e-12 or np.max(self.tau) > tau_max + 1e-12:
            raise ConfigError(f"torque outside [0, {tau_max}] N*m")


# --------------------------------------------------------------------------
# Terrain height field
# --------------------------------------------------------------------------

TERRAIN_FLAT = 0
TERRAIN_BUMPS = 1


@njit(cache=True)
def _terrain_eval(kind, params, x, y):
    """Height and analytic spatial derivatives at (x, y).

    Returns (H, Hx, Hy, Hxx, Hxy, Hyy). params rows: (amp, x0, y0, width)
    for Gaussian bumps.
    """
    H = 0.0
    Hx = 0.0
    Hy = 0.0
    Hxx = 0.0
    Hxy = 0.0
    Hyy = 0.0
    if kind == TERRAIN_FLAT:
        return H, Hx, Hy, Hxx, Hxy, Hyy
    for i in range(params.shape[0]):
        a = params[i, 0]
        dx = x - params[i, 1]
        dy = y - params[i, 2]
        w2 = params[i, 3] * params[i, 3]
        g = a * math.exp(-0.5 * (dx * dx + dy * dy) / w2)
        H += g
        Hx += -g * dx / w2
        Hy += -g * dy / w2
        Hxx += g * (dx * dx / (w2 * w2) - 1.0 / w2)
        Hyy += g * (dy * dy / (w2 * w2) - 1.0 / w2)
        Hxy += g * dx * dy / (w2 * w2)
    return H, Hx, Hy, Hxx, Hxy, Hyy


_EMPTY_TERRAIN = np.zeros((0, 4))


@dataclass(frozen=True)
class TerrainField:
    """Smooth analytic height field H(x, y) built from Gaussian bumps."""

    kind: int = TERRAIN_FLAT
    params: np.ndarray = field(default_factory=lambda: _EMPTY_TERRAIN)
    amplitude: float = 0.0

    @classmethod
    def flat(cls) -> "TerrainField":
        return cls()

    @classmethod
    def single_bump(cls, amplitude: float, x0: float, y0: float,
                    width: float) -> "TerrainField":
        p = np.array([[amplitude, x0, y0, width]], dtype=np.float64)
        return cls(kind=TERRAIN_BUMPS, params=p, amplitude=abs(amplitude))

    @classmethod
    def random_bumps(cls, amplitude: float, extent: float, n_bumps: int,
                     seed: int, width_range=(2.0, 6.0)) -> "TerrainField":
        """Seeded bump field with max elevation magnitude <= amplitude."""
        rng = np.random.default_rng(seed)
        amps = rng.uniform(-1.0, 1.0, n_bumps)
        total = np.sum(np.abs(amps))
        if total > 0:
            amps *= amplitude / total
        p = np.column_stack([
            amps,
            rng.uniform(-extent, extent, n_bumps),
            rng.uniform(-extent, extent, n_bumps),
            rng.uniform(width_range[0], width_range[1], n_bumps),
        ]).astype(np.float64)
        return cls(kind=TERRAIN_BUMPS, params=p, amplitude=amplitude)

    def height(self, x: float, y: float) -> float:
        return _terrain_eval(self.kind, self.params, x, y)[0]

    def gradient(self, x: float, y: float) -> tuple[float, float]:
        out = _terrain_eval(self.kind, self.params, x, y)
        return out[1], out[2]

    def hessian(self, x: float, y: float) -> np.ndarray:
        out = _terrain_eval(self.kind, self.params, x, y)
        return np.array([[out[3], out[4]], [out[4], out[5]]])


# --------------------------------------------------------------------------
# Force and derivative evaluation
# --------------------------------------------------------------------------


def normal_load(side: str, state: VehicleState, terrain: TerrainField,
                params: VehicleParams) -> tuple[float, bool]:
    """Dynamic normal load [N] at one axle and a lift-off flag.

    N = m g / 2 - k (z_i - z_g) - c (zdot_i - zdot_g) + m_w * Hddot,
    clamped below at zero (lift-off).
    """
    if side not in ("front", "rear"):
        raise ValueError("side must be 'front' or 'rear'")
    x = state.to_vec()
    front = side == "front"
    n_raw = _axle_normal_load(x, front, terrain.kind, terrain.params,
                              params.kernel_vec())
    return max(n_raw, 0.0), n_raw < 0.0


@njit(cache=True)
def _axle_normal_load(x, front, terr_kind, terr_params, vp):
    u, v, psi, psi_dot = x[0], x[1], x[2], x[3]
    X, Y, z, z_dot = x[4], x[5], x[6], x[7]
    theta, theta_dot = x[8], x[9]
    m, m_w = vp[0], vp[1]
    l_f, l_r = vp[6], vp[7]
    if front:
        lever = l_f
        k, c = vp[8], vp[10]
    else:
        lever = -l_r
        k, c = vp[9], vp[11]
    z_i = z + lever * math.sin(theta)
    zdot_i = z_dot + lever * theta_dot * math.cos(theta)
    cpsi = math.cos(psi)
    spsi = math.sin(psi)
    wx = X + lever * cpsi
    wy = Y + lever * spsi
    Xdot = u * cpsi - v * spsi
    Ydot = u * spsi + v * cpsi
    vx = Xdot - lever * psi_dot * spsi
    vy = Ydot + lever * psi_dot * cpsi
    H, Hx, Hy, Hxx, Hxy, Hyy = _terrain_eval(terr_kind, terr_params, wx, wy)
    zdot_g = Hx * vx + Hy * vy
    # velocity-only chain rule for the ground vertical acceleration
    Hddot = vx * (Hxx * vx + Hxy * vy) + vy * (Hxy * vx + Hyy * vy)
    return 0.5 * m * GRAVITY - k * (z_i - H) - c * (zdot_i - zdot_g) \
        + m_w * Hddot


def rolling_resistance(P: float, N: float, v_l: float,
                       coeffs: RollingResistance) -> float:
    """Rolling resistance force [N]; zero with the default coefficients."""
    if N < 0:
        raise ValueError("normal load must be >= 0")
    return P ** coeffs.alpha * N ** coeffs.beta * (
        coeffs.A + coeffs.B * v_l + coeffs.C * v_l ** 2)


def aero_drag(u: float, v: float, params: VehicleParams) -> tuple[float, float]:
    """Quadratic aerodynamic drag per axis, signed to oppose motion."""
    f_ax = 0.5 * params.rho_air * params.C_d * params.A_fx * u * abs(u)
    f_ay = 0.5 * params.rho_air * params.C_d * params.A_fy * v * abs(v)
    return f_ax, f_ay


# note: no cache=True here -- on-disk caching of this kernel (tuple of
# fresh arrays return) triggers a multi-ms per-call overhead in numba 0.66
@njit
def _rhs_kernel(x, delta, tau, soil, r, b, vp, terr_kind, terr_params,
                sign_flag, fz_mode, nodes, wts):
    """Packed-state derivative plus per-wheel diagnostics.

    Returns (dx[12], aux[10], ok). aux = (N_f, N_r, s_f, s_r, hf_f, hf_r,
    Nraw_f, Nraw_r, Fl_f, Fl_r); N_* are clamped loads actually applied.
    """
    dx = np.zeros(12)
    aux = np.zeros(10)
    u, v, psi, psi_dot = x[0], x[1], x[2], x[3]
    z, z_dot = x[6], x[7]
    theta, theta_dot = x[8], x[9]
    omega_f, omega_r = x[10], x[11]
    m, m_w = vp[0], vp[1]
    I_z, I_y, I_wf, I_wr = vp[2], vp[3], vp[4], vp[5]
    l_f, l_r = vp[6], vp[7]
    k_f, k_r, c_f, c_r = vp[8], vp[9], vp[10], vp[11]
    rho, C_d, A_fx, A_fy = vp[12], vp[13], vp[14], vp[15]
    roll_P, roll_a, roll_b = vp[16], vp[17], vp[18]
    roll_A, roll_B, roll_C = vp[19], vp[20], vp[21]

    ctheta = math.cos(theta)
    stheta = math.sin(theta)

    n_raw_f = _axle_normal_load(x, True, terr_kind, terr_params, vp)
    n_raw_r = _axle_normal_load(x, False, terr_kind, terr_params, vp)
    N_f = max(n_raw_f, 0.0)
    N_r = max(n_raw_r, 0.0)

    cd = math.cos(delta)
    sd = math.sin(delta)
    v_lf = u * cd + (v + l_f * psi_dot) * sd
    v_cf = -u * sd + (v + l_f * psi_dot) * cd
    v_lr = u
    v_cr = v - l_r * psi_dot

    fl_f, fc_f, _, hf_f, s_f, _, st_f = _wheel_forces_kernel(
        N_f, omega_f, v_lf, v_cf, soil, r, b, nodes, wts, 1e-8, fz_mode)
    fl_r, fc_r, _, hf_r, s_r, _, st_r = _wheel_forces_kernel(
        N_r, omega_r, v_lr, v_cr, soil, r, b, nodes, wts, 1e-8, fz_mode)
    if st_f != 0 or st_r != 0:
        dx[:] = math.nan
        return dx, aux, False

    # lateral soil force opposing the slip direction
    Fcf = -fc_f
    Fcr = -fc_r
    if sign_flag == SIGN_AS_PRINTED:
        Fcf = fc_f
        Fcr = fc_r

    f_rf = roll_P ** roll_a * N_f ** roll_b * (
        roll_A + roll_B * v_lf + roll_C * v_lf * v_lf)
    f_rr = roll_P ** roll_a * N_r ** roll_b * (
        roll_A + roll_B * v_lr + roll_C * v_lr * v_lr)

    f_ax = 0.5 * rho * C_d * A_fx * u * abs(u)
    f_ay = 0.5 * rho * C_d * A_fy * v * abs(v)

    du = (m * (v * psi_dot * ctheta + z_dot * theta_dot)
          + fl_f * cd - Fcf * sd + fl_r - f_ax) / m
    if sign_flag == SIGN_AS_PRINTED:
        dv = (m * (-u * psi_dot * ctheta + z_dot * theta_dot * stheta)
              + fl_f * sd - Fcf * cd + Fcr - f_ay) / m
    else:
        dv = (m * (-u * psi_dot * ctheta + z_dot * theta_dot * stheta)
              + fl_f * sd + Fcf * cd + Fcr - f_ay) / m
    dpsid = (l_f * (fl_f * sd + Fcf * cd) - Fcr * l_r) / I_z

    # suspension deflections relative to local ground height
    cpsi = math.cos(psi)
    spsi = math.sin(psi)
    Xdot = u * cpsi - v * spsi
    Ydot = u * spsi + v * cpsi
    susp_z = 0.0
    pitch_m = 0.0
    for front in range(2):
        if front == 1:
            lever = l_f
            k_i, c_i = k_f, c_f
        else:
            lever = -l_r
            k_i, c_i = k_r, c_r
        z_i = z + lever * stheta
        zdot_i = z_dot + lever * theta_dot * ctheta
        wx = x[4] + lever * cpsi
        wy = x[5] + lever * spsi
        vx = Xdot - lever * psi_dot * spsi
        vy = Ydot + lever * psi_dot * cpsi
        H, Hx, Hy, _, _, _ = _terrain_eval(terr_kind, terr_params, wx, wy)
        zdot_g = Hx * vx + Hy * vy
        fs = k_i * (z_i - H) + c_i * (zdot_i - zdot_g)
        susp_z += fs
        pitch_m += -lever * fs * ctheta

    dz2 = (m * (v * psi_dot * stheta + u * theta_dot) - susp_z) / m
    dtheta2 = pitch_m / I_y

    dwr = (-r * (fl_r + f_rr) + tau) / I_wr
    dwf = (-r * (fl_f + f_rf)) / I_wf

    dx[0] = du
    dx[1] = dv
    dx[2] = psi_dot
    dx[3] = dpsid
    dx[4] = Xdot
    dx[5] = Ydot
    dx[6] = z_dot
    dx[7] = dz2
    dx[8] = theta_dot
    dx[9] = dtheta2
    dx[10] = dwf
    dx[11] = dwr

    aux[0] = N_f
    aux[1] = N_r
    aux[2] = s_f
    aux[3] = s_r
    aux[4] = hf_f
    aux[5] = hf_r
    aux[6] = n_raw_f
    aux[7] = n_raw_r
    aux[8] = fl_f
    aux[9] = fl_r

    ok = True
    for i in range(12):
        if not math.isfinite(dx[i]):
            ok = False
    return dx, aux, ok


def derivatives(state: VehicleState, delta: float, tau: float,
                terrain: TerrainField, soil: SoilParams,
                params: VehicleParams, sign_convention: str = "standard",
                fz_mode: int = FZ_STANDARD) -> np.ndarray:
    """Time derivative of the packed 12-state vector."""
    dx, _ = derivatives_with_diagnostics(state, delta, tau, terrain, soil,
                                         params, sign_convention, fz_mode)
    return dx


def derivatives_with_diagnostics(state: VehicleState, delta: float,
                                 tau: float, terrain: TerrainField,
                                 soil: SoilParams, params: VehicleParams,
                                 sign_convention: str = "standard",
                                 fz_mode: int = FZ_STANDARD):
    """Derivative plus per-wheel (N, s, h_f) diagnostics."""
    sign_flag = _sign_flag(sign_convention)
    x = state.to_vec()
    dx, aux, ok = _rhs_kernel(
        x, delta, tau, soil.kernel_vec(params.wheel.b), params.wheel.r,
        params.wheel.b, params.kernel_vec(), terrain.kind, terrain.params,
        sign_flag, fz_mode, _GL_NODES, _GL_WEIGHTS)
    if not ok:
        raise NumericalError(
            f"non-finite derivative at state {state!r}, "
            f"delta={delta}, tau={tau}")
    diag = {"N_f": aux[0], "N_r": aux[1], "s_f": aux[2], "s_r": aux[3],
            "hf_f": aux[4], "hf_r": aux[5], "N_raw_f": aux[6],
            "N_raw_r": aux[7]}
    return dx, diag


def _sign_flag(sign_convention: str) -> int:
    if sign_convention == "standard":
        return SIGN_STANDARD
    if sign_convention == "as_printed":
        return SIGN_AS_PRINTED
    raise ConfigError(
        f"sign convention must be 'standard' or 'as_printed', "
        f"got {sign_convention!r}")


# --------------------------------------------------------------------------
# Trajectory simulation
# --------------------------------------------------------------------------


@dataclass
class Trajectory:
    """Resampled simulation record.

    states has shape (n, 12) in STATE_LABELS order; inputs (n, 2) holds the
    zero-order-hold command active at each sample time; wheel_aux (n, 6)
    holds (N_f, N_r, s_f, s_r, hf_f, hf_r).
    """

    t: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    wheel_aux: np.ndarray
    termination: str = "time"
    t_end: float = 0.0
    event_state: np.ndarray | None = None
    event_value: float = 0.0
    small_angle_ok: bool = True
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.t)

    @property
    def outputs(self) -> np.ndarray:
        """Measured output channels (n, 3): u, v, psi_dot."""
        return self.states[:, list(OUTPUT_INDICES)]

    @property
    def event_code(self) -> int:
        for code, name in TERMINATION_NAMES.items():
            if name == self.termination:
                return code
        return EVENT_NONE


def simulate(state0: VehicleState, signal: ControlSignal,
             terrain: TerrainField, soil: SoilParams, params: VehicleParams,
             duration: float, dt_out: float = 0.01,
             sign_convention: str = "standard", fz_mode: int = FZ_STANDARD,
             rtol: float = 1e-6, atol: float = 1e-8) -> Trajectory:
    """Integrate the vehicle over [0, duration] under a sampled input.

    Inputs are zero-order-held between signal samples; integration runs
    segment-per-sample so each segment has a smooth right-hand side.
    Terminal events: wheel lift-off (raw N <= 0 at either axle) and slow
    forward speed (u < 0.05 m/s). The trajectory is resampled at exact
    multiples of dt_out.
    """
    if duration <= 0:
        raise ConfigError("duration must be > 0")
    n_seg = int(round(duration / signal.dt))
    if n_seg * signal.dt < duration - 1e-9:
        n_seg += 1
    if len(signal) < n_seg:
        raise ConfigError(
            f"signal covers {len(signal) * signal.dt:.3f} s "
            f"< duration {duration} s")

    sign_flag = _sign_flag(sign_convention)
    soil_vec = soil.kernel_vec(params.wheel.b)
    vp = params.kernel_vec()
    r, b = params.wheel.r, params.wheel.b
    tkind, tparams = terrain.kind, terrain.params

    def rhs_for(delta, tau):
        def rhs(t, x):
            dx, _, _ = _rhs_kernel(x, delta, tau, soil_vec, r, b, vp, tkind,
                                   tparams, sign_flag, fz_mode, _GL_NODES,
                                   _GL_WEIGHTS)
            return dx
        return rhs

    def ev_liftoff(t, x):
        nf = _axle_normal_load(x, True, tkind, tparams, vp)
        nr = _axle_normal_load(x, False, tkind, tparams, vp)
        return min(nf, nr)
    ev_liftoff.terminal = True
    ev_liftoff.direction = -1

    def ev_slow(t, x):
        return x[0] - SLOW_SPEED_LIMIT
    ev_slow.terminal = True
    ev_slow.direction = -1

    n_out = int(math.floor(duration / dt_out + 1e-9)) + 1
    t_grid = np.arange(n_out) * dt_out
    states = np.full((n_out, 12), np.nan)
    inputs = np.zeros((n_out, 2))

    x = state0.to_vec().copy()
    states[0] = x
    inputs[0] = (signal.delta[0], signal.tau[0])
    filled = 1

    termination = EVENT_NONE
    t_end = duration
    event_state = None
    event_value = 0.0
    first_step = None

    for k in range(n_seg):
        t0 = k * signal.dt
        t1 = min((k + 1) * signal.dt, duration)
        if t1 <= t0:
            break
        delta_k = float(signal.delta[k])
        tau_k = float(signal.tau[k])
        h0 = None if first_step is None else min(first_step,
                                                 0.5 * (t1 - t0))
        sol = solve_ivp(rhs_for(delta_k, tau_k), (t0, t1), x, method="RK45",
                        rtol=rtol, atol=atol, dense_output=True,
                        events=[ev_liftoff, ev_slow], first_step=h0)
        if not sol.success and sol.status != 1:
            raise NumericalError(
                f"integrator failed at t={t0:.3f}: {sol.message}; "
                f"state={x.tolist()}")
        if np.any(~np.isfinite(sol.y[:, -1])):
            raise NumericalError(
                f"non-finite state during segment starting t={t0:.3f}; "
                f"last state={x.tolist()}")
        seg_end = sol.t[-1]
        # fill output grid points inside (t0, seg_end]
        while filled < n_out and t_grid[filled] <= seg_end + 1e-12:
            tq = min(t_grid[filled], seg_end)
            states[filled] = sol.sol(tq)
            j = min(int(math.floor(t_grid[filled] / signal.dt + 1e-9)),
                    len(signal) - 1)
            inputs[filled] = (signal.delta[j], signal.tau[j])
            filled += 1
        x = sol.y[:, -1].copy()
        if sol.t.size > 1:
            first_step = max(np.min(np.diff(sol.t)), 1e-6)
        if sol.status == 1:  # terminal event
            if len(sol.t_events[0]) > 0:
                termination = EVENT_LIFTOFF
                event_state = sol.y_events[0][0]
                event_value = ev_liftoff(sol.t_events[0][0], event_state)
                t_end = float(sol.t_events[0][0])
            else:
                termination = EVENT_SLOW_SPEED
                event_state = sol.y_events[1][0]
                event_value = ev_slow(sol.t_events[1][0], event_state)
                t_end = float(sol.t_events[1][0])
            break

    states = states[:filled]
    inputs = inputs[:filled]
    t_grid = t_grid[:filled]

    wheel_aux = _recompute_wheel_aux(states, inputs, soil_vec, r, b, vp,
                                     tkind, tparams, sign_flag, fz_mode)
    small_ok = bool(np.max(np.abs(states[:, 8])) <= SMALL_ANGLE_LIMIT)
    return Trajectory(t=t_grid, states=states, inputs=inputs,
                      wheel_aux=wheel_aux,
                      termination=TERMINATION_NAMES[termination],
                      t_end=t_end, event_state=event_state,
                      event_value=event_value, small_angle_ok=small_ok)


def _recompute_wheel_aux(states, inputs, soil_vec, r, b, vp, tkind, tparams,
                         sign_flag, fz_mode):
    aux = np.zeros((len(states), 6))
    for i in range(len(states)):
        _, a, ok = _rhs_kernel(states[i], inputs[i, 0], inputs[i, 1],
                               soil_vec, r, b, vp, tkind, tparams, sign_flag,
                               fz_mode, _GL_NODES, _GL_WEIGHTS)
        if ok:
            aux[i] = a[:6]
        else:
            aux[i] = np.nan
    return aux
