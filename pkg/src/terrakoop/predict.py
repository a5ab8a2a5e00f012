"""Open-loop rollout with periodic refresh and prediction-error metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError
from .lifting import LiftingMap, lift
from .ssid import KoopmanModel


@dataclass
class PredictionRun:
    """Predicted vs. true outputs for one trajectory at one refresh period."""

    t: np.ndarray
    y_true: np.ndarray          # (n, p)
    y_pred: np.ndarray          # (n, p)
    refresh: float
    model_id: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def per_output_rmse(self) -> np.ndarray:
        return np.sqrt(np.mean((self.y_pred - self.y_true) ** 2, axis=0))


def _refresh_steps(refresh: float, dt: float) -> int:
    q = refresh / dt
    if abs(q - round(q)) > 1e-6:
        raise ConfigError(
            f"refresh period {refresh} is not a multiple of dt {dt}")
    q = int(round(q))
    if q < 1:
        raise ConfigError("refresh must be >= dt")
    return q


def rollout(model: KoopmanModel, lifting: LiftingMap, truth,
            refresh: float) -> PredictionRun:
    """Predict a recorded trajectory's outputs with periodic re-anchoring.

    truth is anything with .outputs (n, p), .inputs (n, m), .t (n,)
    sampled at the model's dt (a vehicle Trajectory works). At t = 0 and
    every refresh boundary the latent state is re-initialized from the
    true measured output; in between it advances as z <- A z + B u_true
    and the prediction is y_hat = C z.
    """
    y = np.asarray(truth.outputs, dtype=float)
    u = np.asarray(truth.inputs, dtype=float)
    t = np.asarray(truth.t, dtype=float)
    if len(y) != len(u) or len(y) != len(t):
        raise ConfigError("trajectory arrays have mismatched lengths")
    n = len(y)
    if n < 2:
        raise ConfigError("trajectory too short to roll out")
    dt_data = t[1] - t[0]
    if abs(dt_data - model.dt) > 1e-9:
        raise ConfigError(
            f"trajectory sampled at {dt_data} s but model dt is {model.dt} s")
    q = _refresh_steps(refresh, model.dt)

    A, B, C = model.A, model.B, model.C
    y_pred = np.empty_like(y)
    z = None
    for k in range(n):
        if k % q == 0:
            z = lift(lifting, y[k])
        else:
            z = A @ z + B @ u[k - 1]
        y_pred[k] = C @ z
    return PredictionRun(t=t.copy(), y_true=y, y_pred=y_pred,
                         refresh=refresh, model_id=model.soil)


def rmse(runs) -> np.ndarray:
    """Per-output trajectory-set RMSE with the per-trajectory mean nested
    inside a single square root:

        RMSE_y = sqrt( (1/N_t) sum_i (1/n_i) sum_t (yhat - y)^2 )
    """
    runs = _as_runs(runs)
    per_traj_ms = np.stack([
        np.mean((r.y_pred - r.y_true) ** 2, axis=0) for r in runs])
    return np.sqrt(np.mean(per_traj_ms, axis=0))


def rmse_mean_of_trajectories(runs) -> np.ndarray:
    """Secondary variant: mean over trajectories of per-trajectory RMSE."""
    runs = _as_runs(runs)
    return np.mean(np.stack([r.per_output_rmse for r in runs]), axis=0)


def n_rmse(rmse_by_order: dict) -> dict:
    """Normalize each output's RMSE by its maximum across the compared
    models: N-RMSE in (0, 1]."""
    if not rmse_by_order:
        raise ConfigError("empty model set")
    orders = sorted(rmse_by_order)
    table = np.stack([np.asarray(rmse_by_order[r], dtype=float)
                      for r in orders])
    peak = table.max(axis=0)
    if np.any(peak <= 0):
        raise ConfigError("zero RMSE column cannot be normalized")
    normed = table / peak
    return {r: normed[i] for i, r in enumerate(orders)}


def rmse_t(runs) -> np.ndarray:
    """Per-time-step mean absolute error across runs:

        RMSE_y(t) = (1/N_t) sum_i sqrt((yhat_t - y_t)^2)
    """
    runs = _as_runs(runs)
    n = min(len(r.t) for r in runs)
    acc = np.zeros((n, runs[0].y_true.shape[1]))
    for r in runs:
        acc += np.abs(r.y_pred[:n] - r.y_true[:n])
    return acc / len(runs)


def pct_rmse(elev_runs, flat_runs) -> np.ndarray:
    """Percentage RMSE increase of the elevated-terrain evaluation over
    the flat one: 100 * (RMSE_elev - RMSE_flat) / RMSE_flat."""
    r_elev = rmse(elev_runs)
    r_flat = rmse(flat_runs)
    if np.any(r_flat <= 0):
        raise ConfigError("flat-terrain RMSE is zero; ratio undefined")
    return 100.0 * (r_elev - r_flat) / r_flat


def spectrum(model: KoopmanModel):
    """Eigenvalues of A, their max modulus, and the stability flag."""
    eig = np.linalg.eigvals(model.A)
    max_mod = float(np.max(np.abs(eig))) if eig.size else 0.0
    return eig, max_mod, max_mod <= 1.0 + 1e-6


def test_set_rmse(model, lifting, records, refresh: float) -> list[float]:
    """Trajectory-set RMSE per output over a list of records."""
    runs = [rollout(model, lifting, rec, refresh) for rec in records]
    return [float(v) for v in rmse(runs)]


def refresh_sweep(model, lifting, records, refresh_list) -> dict:
    """RMSE table keyed by refresh period."""
    return {float(rf): test_set_rmse(model, lifting, records, rf)
            for rf in refresh_list}


def _as_runs(runs):
    runs = list(runs)
    if not runs:
        raise ConfigError("empty run set")
    return runs
