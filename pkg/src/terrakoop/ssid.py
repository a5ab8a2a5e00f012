"""Projection-based subspace identification of lifted linear predictors.

Multi-record input/output data is arranged into block-Hankel (and mosaic-
Hankel) matrices; projecting the output Hankel onto the orthogonal
complement of the input row space isolates the extended observability
subspace, whose SVD yields the model. The same subspace is maintained
recursively through a compressed (square, symmetric) data matrix so new
records update the model without refactorizing the full mosaic, and a
Grassmannian principal-angle distance gates which records are informative
enough to absorb.

Index convention: input sample u_t is the command active over step
t -> t+1 (zero-order hold), so the input Hankel pairs column k of the
output Hankel (y_k ... y_{k+l-1}) with (u_k ... u_{k+l-2}).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

from .exceptions import (
    ConfigError,
    InsufficientExcitationError,
    NumericalError,
    OrderTooHighError,
)

logger = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1

# singular values below this fraction of the largest count as numerically
# zero when ranks and admissible orders are decided
RANK_RTOL = 1e-12

# conditioning guards for the input-Gram inversion and the shift solve
GRAM_COND_LIMIT = 1e12
SHIFT_COND_LIMIT = 1e12


def build_hankel(seq, l: int) -> np.ndarray:
    """Block-Hankel matrix of depth l from a (channels, n) time series.

    Column k stacks samples k .. k+l-1; there are n - l + 1 columns. A 1-D
    sequence is treated as a single channel.
    """
    seq = np.atleast_2d(np.asarray(seq, dtype=float))
    ch, n = seq.shape
    if l < 1:
        raise ConfigError("Hankel depth must be >= 1")
    if n < l:
        raise ConfigError(
            f"sequence of {n} samples too short for Hankel depth {l}")
    s = n - l + 1
    H = np.empty((ch * l, s))
    for i in range(l):
        H[i * ch:(i + 1) * ch] = seq[:, i:i + s]
    return H


def hankel_pair(y, u, l: int) -> tuple[np.ndarray, np.ndarray]:
    """Output Hankel of depth l and the aligned input Hankel of depth l-1.

    Both have s = n - l + 1 columns; see the module docstring for the
    one-step input alignment.
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    u = np.atleast_2d(np.asarray(u, dtype=float))
    if y.shape[1] != u.shape[1]:
        raise ConfigError("input and output sequences must have equal length")
    if l < 2:
        raise ConfigError("Hankel depth must be >= 2 for identification")
    Y = build_hankel(y, l)
    s = Y.shape[1]
    U = build_hankel(u, l - 1)[:, :s]
    return Y, U


def _input_gram_solve(U, M, regularize=True):
    """Solve X (U U^T) = M for X, regularizing near-singular grams."""
    G = U @ U.T
    return _gram_solve(G, M, regularize)


def _gram_solve(G, M, regularize=True):
    n = G.shape[0]
    if n == 0:
        return M[:, :0]
    cond = np.linalg.cond(G)
    if not np.isfinite(cond) or cond > GRAM_COND_LIMIT:
        if not regularize:
            raise NumericalError(
                f"input Gram is rank deficient (cond {cond:.3g}) and "
                f"regularization is disabled")
        G = G + (1e-10 * np.trace(G) / n + 1e-300) * np.eye(n)
    return np.linalg.solve(G.T, M.T).T


def project_orthogonal(Y, U, regularize=True) -> np.ndarray:
    """Project the rows of Y onto the orthogonal complement of rowspace(U).

    Computed as Y - (Y U^T)(U U^T)^{-1} U without forming the s x s
    projector. With regularization enabled a fully zero U leaves Y
    unchanged.
    """
    Y = np.asarray(Y, dtype=float)
    U = np.asarray(U, dtype=float)
    if Y.shape[1] != U.shape[1]:
        raise ConfigError("Y and U must have the same number of columns")
    if U.size == 0 or not np.any(U):
        if regularize:
            return Y.copy()
        raise NumericalError("U has rank zero and regularization is disabled")
    coeff = _input_gram_solve(U, Y @ U.T, regularize)
    return Y - coeff @ U


def compressed_matrix(Y, U, regularize=True) -> np.ndarray:
    """Square symmetric form Y P_perp Y^T via Gram matrices."""
    Y = np.asarray(Y, dtype=float)
    U = np.asarray(U, dtype=float)
    YY = Y @ Y.T
    if U.size == 0 or not np.any(U):
        if regularize:
            return YY
        raise NumericalError("U has rank zero and regularization is disabled")
    YU = Y @ U.T
    Xi = YY - _input_gram_solve(U, YU, regularize) @ YU.T
    return 0.5 * (Xi + Xi.T)


def _gamma_from_xi(Xi, r):
    """Dominant-subspace basis Gamma = Q_r * lambda_r^(1/4) from the
    compressed matrix (whose eigenvalues are squared singular values of
    the projected data matrix)."""
    lam, Q = np.linalg.eigh(Xi)
    lam = lam[::-1]
    Q = Q[:, ::-1]
    lam = np.clip(lam, 0.0, None)
    if lam[0] <= 0.0:
        raise OrderTooHighError("projected data matrix is zero")
    if r > Xi.shape[0] or lam[min(r, len(lam)) - 1] <= RANK_RTOL * lam[0]:
        raise OrderTooHighError(
            f"requested order {r} exceeds the numerical rank of the data")
    return Q[:, :r] * lam[:r] ** 0.25


def batch_observability(Ymosaic, Umosaic, r: int) -> np.ndarray:
    """Extended-observability basis from one SVD of the projected data."""
    Xi = compressed_matrix(Ymosaic, Umosaic)
    return _gamma_from_xi(Xi, r)


def auto_order(Xi, energy: float = 0.9999, r_max: int | None = None) -> int:
    """Smallest order retaining the requested share of singular energy."""
    lam = np.linalg.eigvalsh(Xi)[::-1]
    lam = np.clip(lam, 0.0, None)
    total = np.sum(lam)
    if total <= 0:
        raise OrderTooHighError("projected data matrix is zero")
    cum = np.cumsum(lam) / total
    r = int(np.searchsorted(cum, energy) + 1)
    # never pick directions that are numerically rank-deficient
    rank = int(np.sum(lam > RANK_RTOL * lam[0]))
    r = min(r, rank)
    if r_max is not None:
        r = min(r, r_max)
    return max(r, 1)


@njit(cache=True)
def _stream_rows(Xi, P, YU, Urows, Yrows):
    """Rank-one recursive updates for every data column of one record.

    Columns arrive as rows of the (transposed, contiguous) inputs. For
    each column (u, y):
        alpha = 1 / (1 + u^T P u)
        e     = y - (Y U^T) P u
        Xi   += alpha e e^T
        P    -= alpha (P u)(P u)^T
        YU   += y u^T
    Arrays are updated in place.
    """
    lp = Xi.shape[0]
    q = P.shape[0]
    for k in range(Urows.shape[0]):
        u = Urows[k]
        y = Yrows[k]
        Pu = P @ u
        alpha = 1.0 / (1.0 + u @ Pu)
        e = y - YU @ Pu
        for i in range(lp):
            aei = alpha * e[i]
            for j in range(lp):
                Xi[i, j] += aei * e[j]
        for i in range(q):
            aPi = alpha * Pu[i]
            for j in range(q):
                P[i, j] -= aPi * Pu[j]
        for i in range(lp):
            yi = y[i]
            for j in range(q):
                YU[i, j] += yi * u[j]
    return Xi, P, YU


def _stream_columns(Xi, P, YU, Ucols, Ycols):
    """Column-streaming wrapper over the in-place row kernel."""
    return _stream_rows(Xi, P, YU, np.ascontiguousarray(Ucols.T),
                        np.ascontiguousarray(Ycols.T))


@dataclass
class SsidAccumulator:
    """Recursion state for streaming multi-record identification."""

    Xi: np.ndarray
    P: np.ndarray
    YU: np.ndarray
    Gamma: np.ndarray
    r: int
    l: int
    p: int
    m: int
    records_accepted: int = 0
    records_rejected: int = 0

    @classmethod
    def from_first_record(cls, y, u, l: int, r: int) -> "SsidAccumulator":
        """Batch initialization Xi = Y P_perp Y^T, P = (U U^T)^{-1}."""
        Y, U = hankel_pair(y, u, l)
        p = np.atleast_2d(y).shape[0]
        m = np.atleast_2d(u).shape[0]
        G = U @ U.T
        cond = np.linalg.cond(G)
        if not np.isfinite(cond) or cond > GRAM_COND_LIMIT:
            raise InsufficientExcitationError(
                f"first record's input Hankel Gram is numerically singular "
                f"(cond {cond:.3g}); a persistently exciting first record "
                f"is required")
        P = np.linalg.inv(G)
        P = 0.5 * (P + P.T)
        YU = Y @ U.T
        Xi = Y @ Y.T - YU @ P @ YU.T
        Xi = 0.5 * (Xi + Xi.T)
        acc = cls(Xi=Xi, P=P, YU=YU, Gamma=np.empty((0, 0)), r=r, l=l, p=p,
                  m=m, records_accepted=1)
        acc.refresh_gamma()
        return acc

    def refresh_gamma(self):
        self.Gamma = _gamma_from_xi(self.Xi, self.r)

    def absorb_record(self, y, u):
        """Stream all columns of one record through the recursion."""
        Y, U = hankel_pair(y, u, self.l)
        if Y.shape[0] != self.Xi.shape[0] or U.shape[0] != self.P.shape[0]:
            raise ConfigError("record dimensions do not match accumulator")
        _stream_columns(self.Xi, self.P, self.YU, U, Y)
        self.records_accepted += 1

    @property
    def input_gram(self) -> np.ndarray:
        """U U^T of everything absorbed so far (inverse of P)."""
        G = np.linalg.inv(self.P)
        return 0.5 * (G + G.T)

    @property
    def output_gram(self) -> np.ndarray:
        """Y Y^T recovered from the compressed pieces."""
        return self.Xi + self.YU @ self.P @ self.YU.T


def recursive_update(acc: SsidAccumulator, u_col, y_col) -> SsidAccumulator:
    """Apply the five rank-one updates for a single data column."""
    u_col = np.asarray(u_col, dtype=float).reshape(-1)
    y_col = np.asarray(y_col, dtype=float).reshape(-1)
    if u_col.shape[0] != acc.P.shape[0] or y_col.shape[0] != acc.Xi.shape[0]:
        raise ConfigError("column dimensions do not match accumulator")
    _stream_columns(acc.Xi, acc.P, acc.YU, u_col.reshape(-1, 1),
                    y_col.reshape(-1, 1))
    if not (np.all(np.isfinite(acc.Xi)) and np.all(np.isfinite(acc.P))):
        raise NumericalError("non-finite accumulator after update")
    return acc


def grassmann_distance(Gamma1, Gamma2) -> float:
    """Principal-angle distance sqrt(sum theta_k^2) between the spans.

    Both bases are orthonormalized internally, so the distance only
    depends on the subspaces; it is symmetric and zero iff the spans are
    equal. Small angles are evaluated through the sine (residual) route:
    arccos of a cosine near 1 loses half the working precision, which
    would put identical subspaces at ~1e-8 instead of ~1e-14.
    """
    G1 = np.atleast_2d(np.asarray(Gamma1, dtype=float))
    G2 = np.atleast_2d(np.asarray(Gamma2, dtype=float))
    if G1.shape != G2.shape:
        raise ConfigError(
            f"subspace dimensions differ: {G1.shape} vs {G2.shape}")
    Q1 = _orthonormalize(G1)
    Q2 = _orthonormalize(G2)
    M = Q1.T @ Q2
    cosines = np.clip(np.linalg.svd(M, compute_uv=False), 0.0, 1.0)
    sines = np.clip(np.linalg.svd(Q2 - Q1 @ M, compute_uv=False), 0.0, 1.0)
    # index k = k-th smallest angle: cosines come out descending (angles
    # ascending) while the residual's singular values come out descending
    # in angle, so flip the sines
    sines = np.sort(sines)
    theta = np.where(cosines ** 2 > 0.5, np.arcsin(sines),
                     np.arccos(cosines))
    return float(np.sqrt(np.sum(theta ** 2)))


def _orthonormalize(G):
    if G.shape[0] < G.shape[1]:
        raise ConfigError("basis must be tall (rows >= columns)")
    Q, R = np.linalg.qr(G)
    diag = np.abs(np.diag(R))
    if diag.min() <= RANK_RTOL * max(diag.max(), 1e-300):
        raise NumericalError("rank-deficient subspace basis")
    return Q


def extract_AC(Gamma, p: int, l: int) -> tuple[np.ndarray, np.ndarray, bool]:
    """System matrices from the observability basis shift structure.

    C is the first block row; A solves Gamma[:-p] A = Gamma[p:] in the
    least-squares sense. Returns (A, C, ill_conditioned).
    """
    Gamma = np.asarray(Gamma, dtype=float)
    if l < 2:
        raise ConfigError("shift solve needs depth l >= 2")
    if Gamma.shape[0] != p * l:
        raise ConfigError(
            f"Gamma has {Gamma.shape[0]} rows, expected p*l = {p * l}")
    C = Gamma[:p].copy()
    top = Gamma[:-p]
    bottom = Gamma[p:]
    A, *_ = np.linalg.lstsq(top, bottom, rcond=None)
    cond = np.linalg.cond(top)
    ill = bool(not np.isfinite(cond) or cond > SHIFT_COND_LIMIT)
    if ill:
        logger.warning("shift-invariance solve is ill conditioned "
                       "(cond %.3g)", cond)
    return A, C, ill


def _observability_stack(A, C, depth):
    """[C; CA; ...; CA^(depth-1)] for the given depth."""
    p, r = C.shape
    out = np.empty((p * depth, r))
    blk = C.copy()
    for i in range(depth):
        out[i * p:(i + 1) * p] = blk
        if i < depth - 1:
            blk = blk @ A
    return out


def _b_operators(A, C, l):
    """Per-lag maps G_j (lp x r) with H(B) U = sum_j G_j B u_{.+j}.

    G_j has zeros in its first j+1 block rows and the depth-(l-1-j)
    observability stack below: input at lag j reaches outputs from lag
    j+1 onward through C A^k B.
    """
    p, r = C.shape
    obs = _observability_stack(A, C, l - 1)
    ops = []
    for j in range(l - 1):
        G = np.zeros((p * l, r))
        depth = l - 1 - j
        G[(j + 1) * p:] = obs[:depth * p]
        ops.append(G)
    return ops


def _solve_B_from_grams(A, C, YY, YU, UU, l, solver="gradient",
                        max_iter=5000, rel_tol=1e-10):
    """Minimize || P_perp_Gamma (Y - H(B) U) ||_F^2 over B.

    Eliminating the per-column initial latent states analytically turns
    the joint (B, Z0) problem into this reduced quadratic; everything
    needed is expressible through the Gram matrices YY = Y Y^T,
    YU = Y U^T, UU = U U^T, so the solve runs off the compressed
    statistics that the recursion maintains.
    """
    p, r = C.shape
    m = UU.shape[0] // (l - 1)
    Gamma = _observability_stack(A, C, l)
    # projector onto the orthogonal complement of span(Gamma)
    Q, _ = np.linalg.qr(Gamma)
    ops = _b_operators(A, C, l)
    PG = [g - Q @ (Q.T @ g) for g in ops]

    lam = np.linalg.eigvalsh(UU)
    if lam[-1] <= 0 or lam[0] <= 1e-10 * lam[-1]:
        raise InsufficientExcitationError(
            "input Hankel Gram is rank deficient; B is not identifiable")

    nl = l - 1
    K = np.empty((nl, nl, r, r))
    for j in range(nl):
        for j2 in range(j, nl):
            Kjj = PG[j].T @ PG[j2]
            K[j, j2] = Kjj
            K[j2, j] = Kjj.T
    W = UU.reshape(nl, m, nl, m).transpose(0, 2, 1, 3)  # W[j, j2] = U_j U_j2^T
    # right-hand side sum_j G_j^T Pperp (Y U_j^T)
    PYU = YU - Q @ (Q.T @ YU)
    Cm = np.zeros((r, m))
    for j in range(nl):
        Cm += ops[j].T @ PYU[:, j * m:(j + 1) * m]

    # the reduced normal operator is small (rm x rm); build it once
    M = np.einsum("ijab,jidc->acbd", K, W, optimize=True).reshape(r * m,
                                                                  r * m)
    M = 0.5 * (M + M.T)
    target = Cm.reshape(-1)

    if solver == "exact":
        return np.linalg.solve(M, target).reshape(r, m)

    if solver != "gradient":
        raise ConfigError(f"unknown B solver {solver!r}")

    # first-order iterations with exact step-size control on the
    # quadratic objective(B) = const - 2 <B, Cm> + <B, M B>; conjugate
    # direction updates keep this at gradient cost while matching the
    # direct least-squares solution to tight tolerance
    const = float(np.trace(YY - Q @ (Q.T @ YY)))
    x = np.zeros(r * m)
    f_prev = const
    d = None
    g_prev = None
    for _ in range(max_iter):
        g = 2.0 * (M @ x - target)
        gnorm2 = float(g @ g)
        if gnorm2 <= 1e-300:
            break
        if d is None:
            d = -g
        else:
            beta = gnorm2 / float(g_prev @ g_prev)
            d = -g + beta * d
        Hd = 2.0 * (M @ d)
        curv = float(d @ Hd)
        if curv <= 0:
            d = -g
            Hd = 2.0 * (M @ d)
            curv = float(d @ Hd)
            if curv <= 0:
                raise NumericalError("non-convex curvature in B solve")
        step = -float(g @ d) / curv
        x_new = x + step * d
        f_new = const - 2.0 * float(target @ x_new) + float(x_new @ M @ x_new)
        if f_new > f_prev + 1e-9 * max(abs(f_prev), 1.0):
            raise NumericalError("objective increased in B solve")
        g_prev = g
        x = x_new
        if abs(f_prev - f_new) <= rel_tol * max(abs(f_prev), 1e-300):
            f_prev = f_new
            break
        f_prev = f_new
    return x.reshape(r, m)


def _toeplitz_apply(A, C, B, U, l):
    """H(B) U for a stacked input Hankel U ((l-1)m x s)."""
    p = C.shape[0]
    m = B.shape[1]
    ops = _b_operators(A, C, l)
    out = np.zeros((p * l, U.shape[1]))
    for j in range(l - 1):
        out += ops[j] @ (B @ U[j * m:(j + 1) * m])
    return out


@dataclass
class LatentRealization:
    """Initial latent states of every Hankel column with time alignment.

    Column k of Z0 is the latent state at sample time_indices[k] of record
    record_ids[k].
    """

    Z0: np.ndarray
    record_ids: np.ndarray
    time_indices: np.ndarray


def estimate_B_Z0(A, C, Ymosaic, Umosaic, l: int | None = None,
                  solver: str = "gradient", max_iter: int = 5000,
                  rel_tol: float = 1e-10) -> tuple[np.ndarray, LatentRealization]:
    """Input matrix and latent realization from the mosaic data.

    Minimizes ||Y - Gamma_l Z0 - H(B) U||_F^2 jointly over B and Z0 (the
    objective is jointly linear, so the gradient route and the exact
    linear least-squares route agree).
    """
    A = np.asarray(A, dtype=float)
    C = np.asarray(C, dtype=float)
    Y = np.asarray(Ymosaic, dtype=float)
    U = np.asarray(Umosaic, dtype=float)
    p = C.shape[0]
    if l is None:
        l = Y.shape[0] // p
    m = U.shape[0] // (l - 1)
    B = _solve_B_from_grams(A, C, Y @ Y.T, Y @ U.T, U @ U.T, l,
                            solver=solver, max_iter=max_iter,
                            rel_tol=rel_tol)
    Gamma = _observability_stack(A, C, l)
    resid = Y - _toeplitz_apply(A, C, B, U, l)
    Z0, *_ = np.linalg.lstsq(Gamma, resid, rcond=None)
    s = Y.shape[1]
    real = LatentRealization(Z0=Z0, record_ids=np.zeros(s, dtype=int),
                             time_indices=np.arange(s))
    return B, real


# --------------------------------------------------------------------------
# Identified model container
# --------------------------------------------------------------------------


@dataclass
class KoopmanModel:
    """Lifted linear predictor z+ = A z + B u, y = C z."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    r: int
    dt: float
    output_labels: tuple = ("u", "v", "psi_dot")
    input_labels: tuple = ("delta", "tau")
    soil: str = ""
    l: int = 0
    epsilon: float = 0.0
    acceptance_log: list = field(default_factory=list)
    ill_conditioned: bool = False

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        self.B = np.asarray(self.B, dtype=float)
        self.C = np.asarray(self.C, dtype=float)
        r = self.r
        if self.A.shape != (r, r) or self.B.shape[0] != r \
                or self.C.shape[1] != r:
            raise ConfigError("inconsistent model matrix dimensions")
        rho = self.spectral_radius
        if rho > 1.0 + 1e-6:
            logger.warning("identified model is unstable: spectral radius "
                           "%.8f", rho)

    @property
    def p(self) -> int:
        return self.C.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def spectral_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.A))))

    def markov_parameters(self, count: int) -> np.ndarray:
        """C A^k B for k = 0 .. count-1, stacked (count, p, m)."""
        out = np.empty((count, self.p, self.m))
        Ak = np.eye(self.r)
        for k in range(count):
            out[k] = self.C @ Ak @ self.B
            Ak = Ak @ self.A
        return out

    def to_dict(self) -> dict:
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "r": self.r,
            "p": self.p,
            "m": self.m,
            "dt": self.dt,
            "A": self.A.reshape(-1).tolist(),
            "B": self.B.reshape(-1).tolist(),
            "C": self.C.reshape(-1).tolist(),
            "soil": self.soil,
            "l": self.l,
            "epsilon": self.epsilon,
            "acceptance_log": self.acceptance_log,
            "output_labels": list(self.output_labels),
            "input_labels": list(self.input_labels),
            "ill_conditioned": self.ill_conditioned,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KoopmanModel":
        if d.get("format_version") != MODEL_FORMAT_VERSION:
            raise ConfigError(
                f"unsupported model format version {d.get('format_version')}")
        r, p, m = d["r"], d["p"], d["m"]
        return cls(
            A=np.array(d["A"], dtype=float).reshape(r, r),
            B=np.array(d["B"], dtype=float).reshape(r, m),
            C=np.array(d["C"], dtype=float).reshape(p, r),
            r=r, dt=d["dt"], soil=d.get("soil", ""), l=d.get("l", 0),
            epsilon=d.get("epsilon", 0.0),
            acceptance_log=d.get("acceptance_log", []),
            output_labels=tuple(d.get("output_labels", ())),
            input_labels=tuple(d.get("input_labels", ())),
            ill_conditioned=d.get("ill_conditioned", False),
        )

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "KoopmanModel":
        return cls.from_dict(json.loads(Path(path).read_text(
            encoding="utf-8")))


# --------------------------------------------------------------------------
# Full identification pipeline (recursion + redundancy gating)
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SsidConfig:
    l: int = 40
    r: int | str = "auto"
    epsilon: float | None = None   # None -> 0.05 * sqrt(r) * pi/2
    dt: float = 0.01
    order_energy: float = 0.9999
    b_solver: str = "gradient"
    decimate: int = 1

    def resolve_epsilon(self, r: int) -> float:
        if self.epsilon is not None:
            return self.epsilon
        return 0.05 * np.sqrt(r) * (np.pi / 2.0)


def default_epsilon(r: int) -> float:
    return SsidConfig().resolve_epsilon(r)


def identify(records, config: SsidConfig):
    """Algorithm: batch-initialize on the first usable record, then for
    each later record compute its own observability subspace, accept it
    iff the Grassmannian distance to the accumulated subspace exceeds
    epsilon, and stream accepted columns through the recursion.

    records is a sequence of (y, u) pairs with channels-first arrays.
    Returns (KoopmanModel, LatentRealization, acceptance_log).
    """
    l = config.l
    usable = []
    for idx, (y, u) in enumerate(records):
        y = np.atleast_2d(np.asarray(y, dtype=float))
        u = np.atleast_2d(np.asarray(u, dtype=float))
        if config.decimate > 1:
            y = y[:, ::config.decimate]
            u = u[:, ::config.decimate]
        if y.shape[1] >= l + 1:
            usable.append((idx, y, u))
    if not usable:
        raise ConfigError(f"no record is long enough for Hankel depth {l}")

    idx0, y0, u0 = usable[0]
    p = y0.shape[0]
    m = u0.shape[0]

    if config.r == "auto":
        Y0, U0 = hankel_pair(y0, u0, l)
        Xi0 = compressed_matrix(Y0, U0)
        s0 = Y0.shape[1]
        r = auto_order(Xi0, config.order_energy,
                       r_max=max(1, s0 - l * m - 1))
    else:
        r = int(config.r)

    # mosaic columns must outnumber rows of the regression: s > l m + r
    s_min = min(np.atleast_2d(y).shape[1] - l + 1 for _, y, _ in usable)
    if len(usable) * s_min <= l * m + r:
        raise ConfigError(
            f"too few data columns ({len(usable) * s_min}) for depth {l} "
            f"and order {r}; need s > l*m + r = {l * m + r}")

    eps = config.resolve_epsilon(r)
    acc = SsidAccumulator.from_first_record(y0, u0, l, r)
    log = [{"record": int(idx0), "G": None, "accepted": True}]
    accepted = [(idx0, y0, u0)]

    for idx, y, u in usable[1:]:
        Yc, Uc = hankel_pair(y, u, l)
        try:
            gamma_cand = _gamma_from_xi(compressed_matrix(Yc, Uc), r)
        except OrderTooHighError:
            log.append({"record": int(idx), "G": None, "accepted": False,
                        "reason": "rank-deficient candidate"})
            acc.records_rejected += 1
            continue
        G = grassmann_distance(acc.Gamma, gamma_cand)
        if G > eps:
            _stream_columns(acc.Xi, acc.P, acc.YU, Uc, Yc)
            acc.records_accepted += 1
            acc.refresh_gamma()
            accepted.append((idx, y, u))
            log.append({"record": int(idx), "G": float(G), "accepted": True})
        else:
            acc.records_rejected += 1
            log.append({"record": int(idx), "G": float(G), "accepted": False})

    if acc.records_rejected and acc.records_accepted == 1:
        logger.warning("all %d records after the first were rejected as "
                       "redundant; model built from one record",
                       acc.records_rejected)

    A, C, ill = extract_AC(acc.Gamma, p, l)
    B = _solve_B_from_grams(A, C, acc.output_gram, acc.YU, acc.input_gram,
                            l, solver=config.b_solver)

    # latent realization per accepted record for the lifting stage
    Gamma_l = _observability_stack(A, C, l)
    z_blocks, rec_ids, t_idx = [], [], []
    for idx, y, u in accepted:
        Yr, Ur = hankel_pair(y, u, l)
        resid = Yr - _toeplitz_apply(A, C, B, Ur, l)
        Z0r, *_ = np.linalg.lstsq(Gamma_l, resid, rcond=None)
        z_blocks.append(Z0r)
        rec_ids.append(np.full(Z0r.shape[1], idx, dtype=int))
        t_idx.append(np.arange(Z0r.shape[1]))
    realization = LatentRealization(
        Z0=np.hstack(z_blocks),
        record_ids=np.concatenate(rec_ids),
        time_indices=np.concatenate(t_idx))

    model = KoopmanModel(A=A, B=B, C=C, r=r, dt=config.dt * config.decimate,
                         soil="", l=l, epsilon=eps, acceptance_log=log,
                         ill_conditioned=ill)
    return model, realization, log


def order_sweep(train_records, test_records, orders, refresh: float,
                config: SsidConfig, lifting_config=None):
    """Identify at each order, fit the lifting, evaluate rollout RMSE on
    the test records, and normalize per output by the worst order.

    Returns a list of row dicts (order, rmse per output, n_rmse per
    output, mean_n_rmse, spectral_radius).
    """
    from . import lifting as lifting_mod
    from . import predict as predict_mod

    if not orders:
        raise ConfigError("orders must be nonempty")
    rows = []
    for r in orders:
        cfg_r = SsidConfig(l=config.l, r=int(r), epsilon=config.epsilon,
                           dt=config.dt, order_energy=config.order_energy,
                           b_solver=config.b_solver,
                           decimate=config.decimate)
        model, realization, _ = identify(train_records, cfg_r)
        lift_map = lifting_mod.fit_lifting_from_realization(
            train_records, realization, model,
            config=lifting_config)
        rmse = predict_mod.test_set_rmse(model, lift_map, test_records,
                                         refresh)
        rows.append({"order": int(r),
                     "rmse": rmse,
                     "spectral_radius": model.spectral_radius})
    n_out = len(rows[0]["rmse"])
    max_rmse = [max(row["rmse"][i] for row in rows) for i in range(n_out)]
    for row in rows:
        row["n_rmse"] = [row["rmse"][i] / max_rmse[i] if max_rmse[i] > 0
                         else 1.0 for i in range(n_out)]
        row["mean_n_rmse"] = float(np.mean(row["n_rmse"]))
    return rows
