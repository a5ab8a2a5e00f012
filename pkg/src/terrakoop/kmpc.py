"""Receding-horizon tracking control over the lifted linear predictor.

The predictor evolves the latent state linearly; global pose is appended
through explicit-Euler planar kinematics driven by the predicted
body-frame velocities, which makes the horizon problem a box-constrained
nonlinear program. It is solved by direct single shooting with analytic
reverse-mode gradients and a projected quasi-Newton (L-BFGS) iteration,
warm-started from the shifted previous solution.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import config as cfgmod
from .exceptions import ConfigError, SolverError
from .lifting import LiftingMap, lift
from .ssid import KoopmanModel
from .terramech import SoilParams
from .vehicle import (
    ControlSignal,
    TerrainField,
    Trajectory,
    VehicleParams,
    VehicleState,
    simulate,
)

TRACKED_LABELS = ("X", "Y", "psi", "u", "v", "psi_dot")


@dataclass(frozen=True)
class MpcConfig:
    Np: int = 20
    Nc: int = 5
    dt_mpc: float = 0.1
    Q: tuple = (15.0, 15.0, 15.0, 1.0, 15.0, 15.0)
    R: tuple = (1e-2, 1e-6)
    R_du: tuple = (100.0, 1.0)
    u_min: tuple = (-cfgmod.STEER_MAX, 0.0)
    u_max: tuple = (cfgmod.STEER_MAX, cfgmod.TORQUE_MAX)
    c_c: tuple = (0.0, 0.0, 0.0)
    pg_tol: float = 1e-6
    max_iter: int = 200
    lbfgs_memory: int = 10
    stall_window: float = 2.0   # s of saturated steering before giving up

    def __post_init__(self):
        if not self.Np >= self.Nc >= 1:
            raise ConfigError("need Np >= Nc >= 1")
        if any(q < 0 for q in self.Q) or any(r < 0 for r in self.R):
            raise ConfigError("Q and R weights must be nonnegative")
        if any(r <= 0 for r in self.R_du):
            raise ConfigError("R_du must be positive definite")

    @property
    def bounds(self):
        return (np.asarray(self.u_min, dtype=float),
                np.asarray(self.u_max, dtype=float))


@dataclass
class AugmentedState:
    """Lifted state plus global pose [X, Y, psi]."""

    z: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=float)
        self.x = np.asarray(self.x, dtype=float)
        if not (np.all(np.isfinite(self.z)) and np.all(np.isfinite(self.x))):
            raise ConfigError("augmented state must be finite")
        if self.x.shape != (3,):
            raise ConfigError("pose must be [X, Y, psi]")


def resample_model(model: KoopmanModel, dt_mpc: float) -> KoopmanModel:
    """Exact zero-order-hold resampling to a coarser step.

    For dt_mpc = q * dt: A' = A^q, B' = (sum_{i<q} A^i) B, C unchanged.
    """
    q = dt_mpc / model.dt
    if abs(q - round(q)) > 1e-9 or q < 1 - 1e-9:
        raise ConfigError(
            f"dt_mpc {dt_mpc} is not an integer multiple of model dt "
            f"{model.dt}")
    q = int(round(q))
    if q == 1:
        return model
    A = np.asarray(model.A)
    Aq = np.linalg.matrix_power(A, q)
    S = np.eye(model.r)
    Ak = np.eye(model.r)
    for _ in range(q - 1):
        Ak = Ak @ A
        S = S + Ak
    return KoopmanModel(A=Aq, B=S @ model.B, C=model.C.copy(), r=model.r,
                        dt=dt_mpc, output_labels=model.output_labels,
                        input_labels=model.input_labels, soil=model.soil,
                        l=model.l, epsilon=model.epsilon,
                        acceptance_log=list(model.acceptance_log),
                        ill_conditioned=model.ill_conditioned)


def _wrap_angle(a):
    """Wrap to (-pi, pi]."""
    w = math.fmod(a + math.pi, 2.0 * math.pi)
    if w <= 0.0:
        w += 2.0 * math.pi
    return w - math.pi


def _forward(model: KoopmanModel, aug0: AugmentedState, U, c_c, dt):
    """Roll the augmented prediction over the horizon.

    Returns (ytilde (Np, 6), Z (Np, r)): row k holds the prediction at
    step k, with row 0 the initial condition (kinematics exactly the
    printed explicit-Euler form).
    """
    Np = len(U)
    r = model.r
    Z = np.empty((Np, r))
    yt = np.empty((Np, 6))
    z = aug0.z.copy()
    X, Y, psi = aug0.x
    A, B, C = model.A, model.B, model.C
    for k in range(Np):
        Z[k] = z
        out = C @ z + c_c
        ub, vb, pd = out
        yt[k] = (X, Y, psi, ub, vb, pd)
        cpsi = math.cos(psi)
        spsi = math.sin(psi)
        X = X + (ub * cpsi - vb * spsi) * dt
        Y = Y + (ub * spsi + vb * cpsi) * dt
        psi = psi + pd * dt
        z = A @ z + B @ U[k]
    if not np.all(np.isfinite(yt)):
        raise SolverError("non-finite horizon propagation")
    return yt, Z


def predict_horizon(model: KoopmanModel, aug0: AugmentedState, U,
                    c_c=(0.0, 0.0, 0.0), dt: float | None = None) -> np.ndarray:
    """Tracked-output sequence [X, Y, psi, u, v, psi_dot] over the horizon."""
    U = np.asarray(U, dtype=float)
    dt = model.dt if dt is None else dt
    yt, _ = _forward(model, aug0, U, np.asarray(c_c, dtype=float), dt)
    return yt


def horizon_cost(ytilde, refs, U, u_prev, cfg: MpcConfig) -> float:
    """Stage-summed quadratic tracking cost with heading error wrapped."""
    yt = np.asarray(ytilde, dtype=float)
    refs = np.asarray(refs, dtype=float)
    U = np.asarray(U, dtype=float)
    if yt.shape != refs.shape or len(U) != len(yt):
        raise ConfigError("conformal ytilde/refs/U required")
    Q = np.asarray(cfg.Q)
    R = np.asarray(cfg.R)
    Rd = np.asarray(cfg.R_du)
    J = 0.0
    prev = np.asarray(u_prev, dtype=float)
    for k in range(len(yt)):
        e = yt[k] - refs[k]
        e[2] = _wrap_angle(e[2])
        du = U[k] - prev
        J += float(e @ (Q * e) + U[k] @ (R * U[k]) + du @ (Rd * du))
        prev = U[k]
    return J


@njit(cache=True)
def _cost_grad_kernel(A, B, C, c_c, z0, pose0, U, refs, Q, R, Rd, u_prev,
                      dt):
    """Objective and dU-gradient: forward rollout plus reverse sweep."""
    Np = U.shape[0]
    r = A.shape[0]
    yt = np.empty((Np, 6))
    z = z0.copy()
    X, Y, psi = pose0[0], pose0[1], pose0[2]
    for k in range(Np):
        out = C @ z + c_c
        yt[k, 0] = X
        yt[k, 1] = Y
        yt[k, 2] = psi
        yt[k, 3] = out[0]
        yt[k, 4] = out[1]
        yt[k, 5] = out[2]
        cpsi = math.cos(psi)
        spsi = math.sin(psi)
        X = X + (out[0] * cpsi - out[1] * spsi) * dt
        Y = Y + (out[0] * spsi + out[1] * cpsi) * dt
        psi = psi + out[2] * dt
        z = A @ z + B @ U[k]

    E = yt - refs
    for k in range(Np):
        w = (E[k, 2] + math.pi) % (2.0 * math.pi)
        if w <= 0.0:
            w += 2.0 * math.pi
        E[k, 2] = w - math.pi

    dU = np.zeros_like(U)
    J = 0.0
    for k in range(Np):
        for i in range(6):
            J += Q[i] * E[k, i] * E[k, i]
        for j in range(U.shape[1]):
            up = u_prev[j] if k == 0 else U[k - 1, j]
            du = U[k, j] - up
            J += R[j] * U[k, j] * U[k, j] + Rd[j] * du * du
            dU[k, j] += 2.0 * (R[j] * U[k, j] + Rd[j] * du)
            if k > 0:
                dU[k - 1, j] -= 2.0 * Rd[j] * du

    lz = np.zeros(r)
    lX = 0.0
    lY = 0.0
    lpsi = 0.0
    gy = np.empty(3)
    for k in range(Np - 1, -1, -1):
        gX = 2.0 * Q[0] * E[k, 0]
        gY = 2.0 * Q[1] * E[k, 1]
        gpsi = 2.0 * Q[2] * E[k, 2]
        gub = 2.0 * Q[3] * E[k, 3]
        gvb = 2.0 * Q[4] * E[k, 4]
        gpd = 2.0 * Q[5] * E[k, 5]

        ub = yt[k, 3]
        vb = yt[k, 4]
        psi = yt[k, 2]
        cpsi = math.cos(psi)
        spsi = math.sin(psi)
        # pull gradients of pose_{k+1} back through the Euler update
        gX += lX
        gY += lY
        gpsi += lpsi + lX * (-ub * spsi - vb * cpsi) * dt \
            + lY * (ub * cpsi - vb * spsi) * dt
        gub += lX * cpsi * dt + lY * spsi * dt
        gvb += -lX * spsi * dt + lY * cpsi * dt
        gpd += lpsi * dt

        dU[k] += B.T @ lz
        gy[0] = gub
        gy[1] = gvb
        gy[2] = gpd
        lz = A.T @ lz + C.T @ gy
        lX, lY, lpsi = gX, gY, gpsi
    return J, dU


def _cost_and_grad(model, z0, pose0, U, refs, u_prev, cfg):
    return _cost_grad_kernel(
        model.A, model.B, model.C, np.asarray(cfg.c_c, dtype=float),
        np.asarray(z0, dtype=float), np.asarray(pose0, dtype=float),
        np.ascontiguousarray(U), np.ascontiguousarray(refs),
        np.asarray(cfg.Q, dtype=float), np.asarray(cfg.R, dtype=float),
        np.asarray(cfg.R_du, dtype=float),
        np.asarray(u_prev, dtype=float), cfg.dt_mpc)


def _project(U, lo, hi):
    return np.clip(U, lo[None, :], hi[None, :])


def _lbfgs_direction(g, mem):
    """Standard two-loop recursion; g and the memory are flat vectors."""
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(mem):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    if mem:
        s, y, _ = mem[-1]
        q *= (s @ y) / max(y @ y, 1e-300)
    for (s, y, rho), a in zip(mem, reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return -q


def solve_mpc(model: KoopmanModel, lifting: LiftingMap, y_meas, pose,
              refs, u_prev, cfg: MpcConfig, U_warm=None,
              return_info: bool = False):
    """Solve the box-constrained horizon problem by projected L-BFGS.

    Returns (U_opt (Np, 2), cost), or (U_opt, cost, info) with
    return_info, where info carries the warm-start cost, iteration count,
    and final projected-gradient norm. The iteration starts from the warm
    start (projected into bounds), every iterate satisfies the bounds
    exactly, and the returned cost never exceeds the warm-start cost.
    """
    refs = np.asarray(refs, dtype=float)
    if refs.shape != (cfg.Np, 6):
        raise ConfigError(f"reference window must be ({cfg.Np}, 6)")
    lo, hi = cfg.bounds
    z0 = lift(lifting, np.asarray(y_meas, dtype=float))
    pose0 = np.asarray(pose, dtype=float)
    u_prev = np.asarray(u_prev, dtype=float)

    if U_warm is None:
        U_warm = np.tile(u_prev, (cfg.Np, 1))
    U = _project(np.asarray(U_warm, dtype=float).copy(), lo, hi)

    def fg(Umat):
        return _cost_and_grad(model, z0, pose0, Umat, refs, u_prev, cfg)

    f, g = fg(U)
    if not np.isfinite(f):
        raise SolverError(f"non-finite warm-start cost; U={U.tolist()}")
    warm_cost = f
    best_U, best_f = U.copy(), f
    mem = []
    n_iter = 0
    pg_norm = np.inf
    for n_iter in range(1, cfg.max_iter + 1):
        pg = U - _project(U - g, lo, hi)
        pg_norm = float(np.max(np.abs(pg)))
        if pg_norm < cfg.pg_tol:
            break
        d = _lbfgs_direction(g.ravel(), mem).reshape(U.shape)
        if float(np.sum(d * g)) >= 0.0:
            d = -g
        # projected backtracking line search (Armijo on the arc)
        step = 1.0
        accepted = False
        for _ in range(40):
            U_new = _project(U + step * d, lo, hi)
            delta = U_new - U
            gd = float(np.sum(g * delta))
            if gd >= 0.0:
                step *= 0.5
                continue
            f_new, g_new = fg(U_new)
            if not np.isfinite(f_new):
                raise SolverError(
                    f"non-finite cost in line search; U={U_new.tolist()}")
            if f_new <= f + 1e-4 * gd:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            if np.allclose(d, -g):
                break
            mem.clear()
            continue
        s = (U_new - U).ravel()
        yv = (g_new - g).ravel()
        sy = float(s @ yv)
        if sy > 1e-12 * float(np.linalg.norm(s) * np.linalg.norm(yv)):
            mem.append((s, yv, 1.0 / sy))
            if len(mem) > cfg.lbfgs_memory:
                mem.pop(0)
        U, f, g = U_new, f_new, g_new
        if f < best_f:
            best_f, best_U = f, U.copy()
    if return_info:
        info = {"warm_cost": float(warm_cost), "iterations": n_iter,
                "pg_norm": pg_norm}
        return best_U, float(best_f), info
    return best_U, float(best_f)


# --------------------------------------------------------------------------
# Closed loop against the nonlinear plant
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PlantConfig:
    soil: SoilParams
    vehicle: VehicleParams
    terrain: TerrainField
    sign_convention: str = "standard"


@dataclass
class ReferenceTrajectory:
    """Tracked-output reference sampled at the controller period."""

    t: np.ndarray
    ytilde: np.ndarray   # (n, 6) [X, Y, psi, u, v, psi_dot]

    def __len__(self):
        return len(self.t)

    def window(self, k: int, Np: int) -> np.ndarray:
        """Np rows starting at k, holding the last row past the end."""
        n = len(self.t)
        idx = np.minimum(np.arange(k, k + Np), n - 1)
        return self.ytilde[idx]


def reference_from_trajectory(traj: Trajectory, dt_mpc: float) -> ReferenceTrajectory:
    """Down-sample a recorded plant trajectory into a feasible reference."""
    stride = dt_mpc / (traj.t[1] - traj.t[0])
    if abs(stride - round(stride)) > 1e-6:
        raise ConfigError("dt_mpc must be a multiple of the trajectory step")
    stride = int(round(stride))
    states = traj.states[::stride]
    t = traj.t[::stride]
    yt = np.column_stack([states[:, 4], states[:, 5], states[:, 2],
                          states[:, 0], states[:, 1], states[:, 3]])
    return ReferenceTrajectory(t=t.copy(), ytilde=yt)


def reference_from_path(X, Y, dt_mpc: float) -> ReferenceTrajectory:
    """Build a reference from a planar path; heading comes from the path
    tangent, speed from arc length, lateral velocity is zero."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    n = len(X)
    t = np.arange(n) * dt_mpc
    dX = np.gradient(X)
    dY = np.gradient(Y)
    psi = np.unwrap(np.arctan2(dY, dX))
    u = np.hypot(dX, dY) / dt_mpc
    psi_dot = np.gradient(psi) / dt_mpc
    yt = np.column_stack([X, Y, psi, u, np.zeros(n), psi_dot])
    return ReferenceTrajectory(t=t, ytilde=yt)


@dataclass
class ClosedLoopLog:
    t: np.ndarray
    states: np.ndarray        # (n, 6) measured [X, Y, psi, u, v, psi_dot]
    refs: np.ndarray          # (n, 3) [X_ref, Y_ref, psi_ref]
    inputs: np.ndarray        # (n, 2) applied [delta, tau]
    costs: np.ndarray         # per-row cost of the governing solve
    solve_ms: np.ndarray      # per-row wall time of the governing solve
    saturated: np.ndarray     # per-row steering-at-bound flag
    termination: str = "reference_end"
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.t)

    @property
    def mean_cost(self) -> float:
        return float(np.mean(self.costs)) if len(self.costs) else math.nan

    @property
    def mean_solve_ms(self) -> float:
        return float(np.mean(self.solve_ms)) if len(self.solve_ms) else math.nan

    @property
    def cross_track_error(self) -> np.ndarray:
        return np.hypot(self.states[:, 0] - self.refs[:, 0],
                        self.states[:, 1] - self.refs[:, 1])


def run_closed_loop(plant: PlantConfig, model: KoopmanModel,
                    lifting: LiftingMap, cfg: MpcConfig,
                    reference: ReferenceTrajectory,
                    state0: VehicleState | None = None) -> ClosedLoopLog:
    """Alternate measure -> lift -> solve -> apply-first-Nc against the
    nonlinear simulator until the reference ends, the plant triggers a
    terminal event, or steering stalls at its bound.
    """
    if len(reference) < 2:
        raise ConfigError("reference must span at least one control step")
    if abs(model.dt - cfg.dt_mpc) > 1e-9:
        model = resample_model(model, cfg.dt_mpc)
    lo, hi = cfg.bounds

    if state0 is None:
        y0 = reference.ytilde[0]
        state0 = VehicleState(
            u=max(y0[3], 0.1), v=y0[4], psi=y0[2], psi_dot=y0[5],
            X=y0[0], Y=y0[1],
            omega_f=max(y0[3], 0.1) / plant.vehicle.wheel.r,
            omega_r=max(y0[3], 0.1) / plant.vehicle.wheel.r)
    state = state0

    rows_t, rows_state, rows_ref, rows_u = [], [], [], []
    rows_cost, rows_ms, rows_sat, rows_warm = [], [], [], []
    termination = "reference_end"
    u_prev = np.zeros(2)
    U_warm = None
    sat_steps = 0
    stall_limit = max(1, int(round(cfg.stall_window / cfg.dt_mpc)))
    cte_window = []

    k = 0
    n_ref = len(reference)
    while k < n_ref - 1:
        meas = np.array([state.u, state.v, state.psi_dot])
        pose = np.array([state.X, state.Y, state.psi])
        refs = reference.window(k, cfg.Np)
        t0 = time.perf_counter()
        U_opt, cost, info = solve_mpc(model, lifting, meas, pose, refs,
                                      u_prev, cfg, U_warm=U_warm,
                                      return_info=True)
        ms = (time.perf_counter() - t0) * 1e3

        stop = False
        for j in range(min(cfg.Nc, n_ref - 1 - k)):
            u_apply = np.clip(U_opt[j], lo, hi)
            sig = ControlSignal(dt=cfg.dt_mpc,
                                delta=np.array([u_apply[0]]),
                                tau=np.array([u_apply[1]]))
            traj = simulate(state, sig, plant.terrain, plant.soil,
                            plant.vehicle, duration=cfg.dt_mpc,
                            dt_out=cfg.dt_mpc,
                            sign_convention=plant.sign_convention)
            rows_t.append(reference.t[k])
            rows_state.append([state.X, state.Y, state.psi, state.u,
                               state.v, state.psi_dot])
            rows_ref.append(reference.ytilde[k, :3])
            rows_u.append(u_apply)
            rows_cost.append(cost)
            rows_ms.append(ms)
            rows_warm.append(info["warm_cost"])
            at_bound = (u_apply[0] <= lo[0] + 1e-9
                        or u_apply[0] >= hi[0] - 1e-9)
            rows_sat.append(at_bound)
            k += 1
            if traj.termination != "time":
                termination = f"plant_{traj.termination}"
                stop = True
                break
            state = VehicleState.from_vec(traj.states[-1])
            # saturation-stall bookkeeping
            cte = math.hypot(state.X - reference.ytilde[min(k, n_ref - 1), 0],
                             state.Y - reference.ytilde[min(k, n_ref - 1), 1])
            cte_window.append(cte)
            if len(cte_window) > stall_limit:
                cte_window.pop(0)
            sat_steps = sat_steps + 1 if at_bound else 0
            if (sat_steps > stall_limit
                    and len(cte_window) == stall_limit
                    and cte_window[-1] > cte_window[0]):
                termination = "saturation_stall"
                stop = True
                break
        if stop:
            break
        u_prev = np.clip(U_opt[min(cfg.Nc, cfg.Np) - 1], lo, hi)
        # shift warm start by the applied block, pad with the last input
        U_warm = np.vstack([U_opt[cfg.Nc:], np.tile(U_opt[-1],
                                                    (cfg.Nc, 1))])

    return ClosedLoopLog(
        t=np.asarray(rows_t), states=np.asarray(rows_state),
        refs=np.asarray(rows_ref), inputs=np.asarray(rows_u),
        costs=np.asarray(rows_cost), solve_ms=np.asarray(rows_ms),
        saturated=np.asarray(rows_sat, dtype=bool),
        termination=termination,
        meta={"warm_costs": rows_warm})
