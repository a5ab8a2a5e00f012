"""Regression from measured outputs to the latent predictor coordinates.

The latent states recovered by subspace identification live in an
arbitrary basis fixed by the SVD; to start predictions (and the
controller) from measurements alone, each latent coordinate is regressed
on the measured output vector with a squared-exponential-kernel GP mean
(equivalently kernel ridge regression). Hyperparameters come from either
a pairwise-distance median heuristic or per-coordinate marginal-likelihood
maximization.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import minimize

from .exceptions import ConfigError

LIFTING_FORMAT_VERSION = 1


@dataclass(frozen=True)
class LiftingConfig:
    # marginal-likelihood maximization by default: the y -> z conditional
    # mean is close to linear and needs the long length scales the
    # evidence finds; the median heuristic is a cheap fallback whose
    # short scales extrapolate poorly
    hyper: str = "mle"           # "mle" or "median"
    max_pairs: int = 2000        # training-set size cap (uniform stride)
    mle_pairs: int = 300         # subsample for likelihood optimization
    noise_ratio: float = 1e-4    # sigma_n^2 / sigma_f^2 in median mode
    jitter: float = 1e-8
    mle_restarts: int = 1

    def __post_init__(self):
        if self.hyper not in ("median", "mle"):
            raise ConfigError("hyper must be 'median' or 'mle'")


@dataclass
class LiftingMap:
    """Per-coordinate kernel regressors sharing one training input set.

    X is (N, p); length_scales (r, p); signal_vars, noise_vars (r,);
    alphas (N, r) are the dual weights such that coordinate j predicts
    mean_j(x) = k_j(x, X) @ alphas[:, j].
    """

    X: np.ndarray
    length_scales: np.ndarray
    signal_vars: np.ndarray
    noise_vars: np.ndarray
    alphas: np.ndarray
    input_labels: tuple = ("u", "v", "psi_dot")
    train_rmse: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def r(self) -> int:
        return self.alphas.shape[1]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def to_dict(self) -> dict:
        return {
            "format_version": LIFTING_FORMAT_VERSION,
            "X": self.X.tolist(),
            "length_scales": self.length_scales.tolist(),
            "signal_vars": self.signal_vars.tolist(),
            "noise_vars": self.noise_vars.tolist(),
            "alphas": self.alphas.tolist(),
            "input_labels": list(self.input_labels),
            "train_rmse": (self.train_rmse.tolist()
                           if self.train_rmse is not None else None),
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LiftingMap":
        if d.get("format_version") != LIFTING_FORMAT_VERSION:
            raise ConfigError(
                f"unsupported lifting format version "
                f"{d.get('format_version')}")
        tr = d.get("train_rmse")
        return cls(
            X=np.array(d["X"], dtype=float),
            length_scales=np.array(d["length_scales"], dtype=float),
            signal_vars=np.array(d["signal_vars"], dtype=float),
            noise_vars=np.array(d["noise_vars"], dtype=float),
            alphas=np.array(d["alphas"], dtype=float),
            input_labels=tuple(d.get("input_labels", ())),
            train_rmse=None if tr is None else np.array(tr, dtype=float),
            meta=d.get("meta", {}),
        )

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "LiftingMap":
        return cls.from_dict(json.loads(Path(path).read_text(
            encoding="utf-8")))


def _se_kernel(Xa, Xb, ls, sf2):
    """sf2 * exp(-0.5 sum_d ((a_d - b_d)/ls_d)^2)."""
    d2 = np.zeros((Xa.shape[0], Xb.shape[0]))
    for d in range(Xa.shape[1]):
        diff = (Xa[:, d:d + 1] - Xb[None, :, d]) / ls[d]
        d2 += diff * diff
    return sf2 * np.exp(-0.5 * d2)


def _median_length_scales(X):
    """Per-dimension median absolute pairwise difference."""
    n = X.shape[0]
    if n > 600:
        idx = np.linspace(0, n - 1, 600).astype(int)
        X = X[idx]
    ls = np.empty(X.shape[1])
    for d in range(X.shape[1]):
        diffs = np.abs(X[:, d:d + 1] - X[None, :, d])
        iu = np.triu_indices(X.shape[0], 1)
        ls[d] = np.median(diffs[iu])
    return ls


def _nlml_and_grad(log_theta, X, z, jitter):
    """Negative log marginal likelihood and gradient.

    log_theta = [log ls_1 .. log ls_p, log sf, log sn].
    """
    p = X.shape[1]
    n = X.shape[0]
    ls = np.exp(log_theta[:p])
    sf2 = np.exp(2.0 * log_theta[p])
    sn2 = np.exp(2.0 * log_theta[p + 1])
    Kbase = _se_kernel(X, X, ls, 1.0)
    K = sf2 * Kbase + (sn2 + jitter * sf2) * np.eye(n)
    try:
        cf = cho_factor(K, lower=True)
    except np.linalg.LinAlgError:
        return 1e25, np.zeros_like(log_theta)
    alpha = cho_solve(cf, z)
    nlml = 0.5 * float(z @ alpha) \
        + float(np.sum(np.log(np.diag(cf[0])))) \
        + 0.5 * n * np.log(2.0 * np.pi)
    Kinv = cho_solve(cf, np.eye(n))
    W = Kinv - np.outer(alpha, alpha)
    grad = np.empty_like(log_theta)
    for d in range(p):
        diff = (X[:, d:d + 1] - X[None, :, d]) / ls[d]
        dK = sf2 * Kbase * (diff * diff)
        grad[d] = 0.5 * float(np.sum(W * dK))
    grad[p] = 0.5 * float(np.sum(W * (2.0 * sf2 * Kbase)))
    grad[p + 1] = 0.5 * float(np.sum(W * (2.0 * sn2 * np.eye(n))))
    return nlml, grad


def fit_lifting(outputs, latents, config: LiftingConfig | None = None,
                input_labels=("u", "v", "psi_dot")) -> LiftingMap:
    """Fit one regressor per latent coordinate.

    outputs is (N, p) measured vectors, latents (N, r) aligned targets.
    """
    config = config or LiftingConfig()
    Y = np.asarray(outputs, dtype=float)
    Z = np.asarray(latents, dtype=float)
    if Y.ndim != 2 or Z.ndim != 2 or Y.shape[0] != Z.shape[0]:
        raise ConfigError("outputs and latents must be aligned 2-D arrays")
    n, p = Y.shape
    r = Z.shape[1]
    if n < 10 * p:
        raise ConfigError(
            f"need at least {10 * p} aligned pairs, got {n}")
    stds = Y.std(axis=0)
    means = np.abs(Y.mean(axis=0))
    for d in range(p):
        if stds[d] <= 1e-12 * max(1.0, means[d]):
            label = input_labels[d] if d < len(input_labels) else str(d)
            raise ConfigError(
                f"degenerate training inputs: channel {label!r} has zero "
                f"variance")

    if n > config.max_pairs:
        idx = np.linspace(0, n - 1, config.max_pairs).astype(int)
        Y = Y[idx]
        Z = Z[idx]
        n = len(idx)

    if config.hyper == "median":
        ls_shared = _median_length_scales(Y)
        sf2 = np.maximum(Z.var(axis=0), 1e-12)
        sn2 = config.noise_ratio * sf2
        # proportional noise => identical unit-kernel system for every
        # coordinate: one factorization, r right-hand sides
        Kbase = _se_kernel(Y, Y, ls_shared, 1.0)
        K = Kbase + (config.noise_ratio + config.jitter) * np.eye(n)
        cf = cho_factor(K, lower=True)
        # rescale so alphas pair with the full kernel sf2 * Kbase
        alphas = cho_solve(cf, Z) / sf2[None, :]
        length_scales = np.tile(ls_shared, (r, 1))
        signal_vars = sf2
        noise_vars = sn2
    else:
        length_scales = np.empty((r, p))
        signal_vars = np.empty(r)
        noise_vars = np.empty(r)
        alphas = np.empty((n, r))
        ls0 = _median_length_scales(Y)
        if n > config.mle_pairs:
            sub = np.linspace(0, n - 1, config.mle_pairs).astype(int)
        else:
            sub = np.arange(n)
        for j in range(r):
            zj = Z[:, j]
            theta0 = np.concatenate([
                np.log(ls0),
                [0.5 * np.log(max(zj.var(), 1e-12))],
                [0.5 * np.log(max(zj.var(), 1e-12) * 1e-3)],
            ])
            res = minimize(_nlml_and_grad, theta0,
                           args=(Y[sub], zj[sub], config.jitter),
                           jac=True, method="L-BFGS-B",
                           options={"maxiter": 200})
            theta = res.x
            ls = np.exp(theta[:p])
            sf2_j = np.exp(2.0 * theta[p])
            sn2_j = np.exp(2.0 * theta[p + 1])
            K = _se_kernel(Y, Y, ls, sf2_j) \
                + (sn2_j + config.jitter * sf2_j) * np.eye(n)
            cf = cho_factor(K, lower=True)
            alphas[:, j] = cho_solve(cf, zj)
            length_scales[j] = ls
            signal_vars[j] = sf2_j
            noise_vars[j] = sn2_j

    lm = LiftingMap(X=Y, length_scales=length_scales,
                    signal_vars=signal_vars, noise_vars=noise_vars,
                    alphas=alphas, input_labels=tuple(input_labels))
    preds = lift_batch(lm, Y)
    lm.train_rmse = np.sqrt(np.mean((preds - Z) ** 2, axis=0))
    lm.meta["hyper"] = config.hyper
    lm.meta["n_train"] = int(n)
    return lm


def fit_lifting_from_realization(records, realization, model,
                                 config: LiftingConfig | None = None) -> LiftingMap:
    """Pair each latent column with the measured output at its start time.

    records is the same (y, u) sequence given to identification;
    realization carries per-column (record, time-index) alignment.
    """
    ys = {}
    for idx in np.unique(realization.record_ids):
        y = np.atleast_2d(np.asarray(records[idx][0], dtype=float))
        ys[int(idx)] = y
    cols = realization.Z0.shape[1]
    p = next(iter(ys.values())).shape[0]
    outputs = np.empty((cols, p))
    for k in range(cols):
        outputs[k] = ys[int(realization.record_ids[k])][
            :, int(realization.time_indices[k])]
    return fit_lifting(outputs, realization.Z0.T, config=config,
                       input_labels=model.output_labels)


def _kernel_rows(lm: LiftingMap, Y):
    """Batch of posterior means mean_j(x) = k_j(x, X) @ alphas[:, j].

    With shared length scales (median mode) the unit kernel is built once
    and scaled per coordinate by its signal variance.
    """
    shared = bool(np.all(lm.length_scales == lm.length_scales[0]))
    if shared:
        Ks = _se_kernel(Y, lm.X, lm.length_scales[0], 1.0)
        return (Ks @ lm.alphas) * lm.signal_vars[None, :]
    out = np.empty((Y.shape[0], lm.r))
    for j in range(lm.r):
        Kj = _se_kernel(Y, lm.X, lm.length_scales[j], lm.signal_vars[j])
        out[:, j] = Kj @ lm.alphas[:, j]
    return out


def lift(lm: LiftingMap, y) -> np.ndarray:
    """Latent coordinates for one measured output vector."""
    y = np.asarray(y, dtype=float).reshape(1, -1)
    if not np.all(np.isfinite(y)):
        raise ConfigError("lift input must be finite")
    return _kernel_rows(lm, y)[0]


def lift_batch(lm: LiftingMap, Y) -> np.ndarray:
    """Latent coordinates for a batch of measured outputs (N, p)."""
    return _kernel_rows(lm, np.asarray(Y, dtype=float))


def one_step_consistency(lm: LiftingMap, model, outputs) -> float:
    """Diagnostic: relative error of C @ lift(y) against y itself."""
    Y = np.asarray(outputs, dtype=float)
    Z = lift_batch(lm, Y)
    back = Z @ model.C.T
    scale = np.sqrt(np.mean(Y ** 2)) or 1.0
    return float(np.sqrt(np.mean((back - Y) ** 2)) / scale)
