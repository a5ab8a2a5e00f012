"""Subspace identification tests: Hankel structure, projection,
recursion-vs-batch equivalence, Grassmannian gating, and known-system
recovery, each against the independent oracles stated alongside."""

import numpy as np
import pytest

from terrakoop import ssid
from terrakoop.exceptions import (
    ConfigError,
    InsufficientExcitationError,
    NumericalError,
    OrderTooHighError,
)

from lti_helpers import markov_rel_err, random_system, simulate_lti


def make_records(rng, A, B, C, n_records=3, n_samples=300, x_scale=1.0):
    records = []
    for _ in range(n_records):
        u = rng.normal(size=(B.shape[1], n_samples))
        x0 = x_scale * rng.normal(size=A.shape[0])
        records.append((simulate_lti(A, B, C, u, x0), u))
    return records


# ===========================================================================
# build_hankel
# ===========================================================================


def test_build_hankel_scalar_example():
    H = ssid.build_hankel([1, 2, 3, 4, 5], 2)
    assert np.array_equal(H, [[1, 2, 3, 4], [2, 3, 4, 5]])


def test_build_hankel_block_shift_structure(rng):
    seq = rng.normal(size=(3, 40))
    l = 5
    H = ssid.build_hankel(seq, l)
    p = 3
    # block (i+1, j) equals block (i, j+1)
    for i in range(l - 1):
        assert np.array_equal(H[(i + 1) * p:(i + 2) * p, :-1],
                              H[i * p:(i + 1) * p, 1:])


def test_build_hankel_dimensions(rng):
    seq = rng.normal(size=(3, 100))
    H = ssid.build_hankel(seq, 7)
    assert H.shape == (21, 94)


def test_build_hankel_too_short():
    with pytest.raises(ConfigError):
        ssid.build_hankel([1.0, 2.0], 3)


def test_hankel_pair_alignment(rng):
    """Column k of U must hold the inputs driving y_k .. y_{k+l-1}."""
    y = rng.normal(size=(2, 30))
    u = rng.normal(size=(1, 30))
    Y, U = ssid.hankel_pair(y, u, 4)
    assert Y.shape == (8, 27)
    assert U.shape == (3, 27)
    k = 5
    assert np.array_equal(U[:, k], u[0, k:k + 3])
    assert np.array_equal(Y[:2, k], y[:, k])


# ===========================================================================
# projection
# ===========================================================================


def test_project_zero_input_leaves_y(rng):
    Y = rng.normal(size=(4, 50))
    U = np.zeros((3, 50))
    assert np.array_equal(ssid.project_orthogonal(Y, U), Y)
    with pytest.raises(NumericalError):
        ssid.project_orthogonal(Y, U, regularize=False)


def test_project_annihilates_row_space(rng):
    U = rng.normal(size=(3, 60))
    Y = rng.normal(size=(2, 3)) @ U
    P = ssid.project_orthogonal(Y, U)
    assert np.max(np.abs(P)) < 1e-8 * np.max(np.abs(Y))


def test_project_matches_explicit_projector(rng):
    Y = rng.normal(size=(5, 40))
    U = rng.normal(size=(3, 40))
    got = ssid.project_orthogonal(Y, U)
    Pi = np.eye(40) - U.T @ np.linalg.inv(U @ U.T) @ U
    want = Y @ Pi
    assert np.allclose(got, want, atol=1e-10)
    # result orthogonal to the input row space
    assert np.linalg.norm(got @ U.T) \
        <= 1e-8 * np.linalg.norm(Y) * np.linalg.norm(U)


def test_compressed_matrix_definition(rng):
    Y = rng.normal(size=(5, 40))
    U = rng.normal(size=(3, 40))
    Xi = ssid.compressed_matrix(Y, U)
    want = ssid.project_orthogonal(Y, U) @ Y.T
    assert np.allclose(Xi, want, atol=1e-10)
    assert np.allclose(Xi, Xi.T, atol=1e-12)


# ===========================================================================
# batch observability subspace
# ===========================================================================


def test_batch_observability_recovers_true_subspace(rng):
    A, B, C = random_system(4, 2, 3, rng)
    u = rng.normal(size=(2, 400))
    y = simulate_lti(A, B, C, u, x0=rng.normal(size=4))
    l = 8
    Y, U = ssid.hankel_pair(y, u, l)
    Gamma = ssid.batch_observability(Y, U, 4)
    true_gamma = np.vstack([C @ np.linalg.matrix_power(A, k)
                            for k in range(l)])
    assert ssid.grassmann_distance(Gamma, true_gamma) < 1e-8


def test_batch_observability_rank_one_direction(rng):
    A, B, C = random_system(4, 2, 3, rng)
    u = rng.normal(size=(2, 400))
    y = simulate_lti(A, B, C, u, x0=rng.normal(size=4))
    Y, U = ssid.hankel_pair(y, u, 8)
    g1 = ssid.batch_observability(Y, U, 1)
    M = ssid.project_orthogonal(Y, U)
    q1 = np.linalg.svd(M)[0][:, :1]
    assert ssid.grassmann_distance(g1, q1) < 1e-8


def test_batch_observability_zero_outputs_errors(rng):
    Y = np.zeros((6, 50))
    U = rng.normal(size=(2, 50))
    with pytest.raises(OrderTooHighError):
        ssid.batch_observability(Y, U, 2)


def test_order_too_high_rejected(rng):
    A, B, C = random_system(3, 2, 3, rng)
    u = rng.normal(size=(2, 300))
    y = simulate_lti(A, B, C, u)
    Y, U = ssid.hankel_pair(y, u, 6)
    with pytest.raises(OrderTooHighError):
        ssid.batch_observability(Y, U, 10)


# ===========================================================================
# recursion
# ===========================================================================


def test_recursion_single_record_matches_batch(rng):
    A, B, C = random_system(4, 2, 3, rng)
    records = make_records(rng, A, B, C, n_records=2)
    l = 8
    acc = ssid.SsidAccumulator.from_first_record(*records[0], l, 4)
    y2, u2 = records[1]
    acc.absorb_record(y2, u2)
    Ym = np.hstack([ssid.hankel_pair(y, u, l)[0] for y, u in records])
    Um = np.hstack([ssid.hankel_pair(y, u, l)[1] for y, u in records])
    Xi_batch = ssid.compressed_matrix(Ym, Um)
    rel = np.linalg.norm(acc.Xi - Xi_batch) / np.linalg.norm(Xi_batch)
    assert rel < 1e-8


def test_recursion_column_by_column(rng):
    A, B, C = random_system(3, 2, 3, rng)
    records = make_records(rng, A, B, C, n_records=2, n_samples=120)
    l = 6
    acc = ssid.SsidAccumulator.from_first_record(*records[0], l, 3)
    Y2, U2 = ssid.hankel_pair(*records[1], l)
    for k in range(Y2.shape[1]):
        ssid.recursive_update(acc, U2[:, k], Y2[:, k])
    Ym = np.hstack([ssid.hankel_pair(y, u, l)[0] for y, u in records])
    Um = np.hstack([ssid.hankel_pair(y, u, l)[1] for y, u in records])
    Xi_batch = ssid.compressed_matrix(Ym, Um)
    assert np.linalg.norm(acc.Xi - Xi_batch) \
        < 1e-8 * np.linalg.norm(Xi_batch)


def test_recursion_zero_column_is_neutral(rng):
    A, B, C = random_system(3, 2, 3, rng)
    records = make_records(rng, A, B, C, n_records=1)
    acc = ssid.SsidAccumulator.from_first_record(*records[0], 6, 3)
    Xi0, P0, YU0 = acc.Xi.copy(), acc.P.copy(), acc.YU.copy()
    ssid.recursive_update(acc, np.zeros(acc.P.shape[0]),
                          np.zeros(acc.Xi.shape[0]))
    assert np.array_equal(acc.Xi, Xi0)
    assert np.array_equal(acc.P, P0)
    assert np.array_equal(acc.YU, YU0)


def test_accumulator_xi_stays_symmetric_psd(rng):
    A, B, C = random_system(4, 2, 3, rng)
    records = make_records(rng, A, B, C, n_records=4)
    acc = ssid.SsidAccumulator.from_first_record(*records[0], 8, 4)
    for y, u in records[1:]:
        acc.absorb_record(y, u)
        assert np.allclose(acc.Xi, acc.Xi.T, atol=1e-10)
        lam = np.linalg.eigvalsh(acc.Xi)
        assert lam.min() >= -1e-8 * np.trace(acc.Xi)


def test_first_record_requires_excitation(rng):
    y = rng.normal(size=(3, 100))
    u = np.zeros((2, 100))
    with pytest.raises(InsufficientExcitationError):
        ssid.SsidAccumulator.from_first_record(y, u, 6, 3)


# ===========================================================================
# Grassmannian distance
# ===========================================================================


def test_grassmann_identical_is_zero(rng):
    G = rng.normal(size=(10, 3))
    assert ssid.grassmann_distance(G, G) == pytest.approx(0.0, abs=1e-7)


def test_grassmann_orthogonal_lines():
    e1 = np.array([[1.0], [0.0]])
    e2 = np.array([[0.0], [1.0]])
    assert ssid.grassmann_distance(e1, e2) == pytest.approx(np.pi / 2)


def test_grassmann_rotated_line_angle():
    e1 = np.array([[1.0], [0.0]])
    for alpha in (0.1, 0.5, 1.2):
        g = np.array([[np.cos(alpha)], [np.sin(alpha)]])
        assert ssid.grassmann_distance(e1, g) == pytest.approx(alpha,
                                                               rel=1e-10)


def test_grassmann_symmetry_and_basis_invariance(rng):
    G1 = rng.normal(size=(12, 4))
    G2 = rng.normal(size=(12, 4))
    d12 = ssid.grassmann_distance(G1, G2)
    assert d12 == pytest.approx(ssid.grassmann_distance(G2, G1), rel=1e-10)
    T = rng.normal(size=(4, 4)) + 4 * np.eye(4)
    assert ssid.grassmann_distance(G1 @ T, G2) == pytest.approx(d12,
                                                                rel=1e-8)
    assert d12 > 0.0


def test_grassmann_dimension_mismatch():
    with pytest.raises(ConfigError):
        ssid.grassmann_distance(np.eye(4)[:, :2], np.eye(4)[:, :3])


def test_grassmann_rank_deficient_rejected():
    G = np.ones((5, 2))
    with pytest.raises(NumericalError):
        ssid.grassmann_distance(G, np.eye(5)[:, :2])


# ===========================================================================
# system-matrix extraction
# ===========================================================================


def test_extract_ac_scalar_chain():
    Gamma = np.array([[1.0], [0.9], [0.81]])
    A, C, ill = ssid.extract_AC(Gamma, p=1, l=3)
    assert C[0, 0] == pytest.approx(1.0)
    assert A[0, 0] == pytest.approx(0.9, rel=1e-12)
    assert not ill


def test_extract_ac_markov_recovery(rng):
    A0, B0, C0 = random_system(4, 2, 3, rng)
    l = 8
    Gamma = np.vstack([C0 @ np.linalg.matrix_power(A0, k) for k in range(l)])
    A, C, _ = ssid.extract_AC(Gamma, p=3, l=l)
    for k in range(2 * l):
        want = C0 @ np.linalg.matrix_power(A0, k)
        got = C @ np.linalg.matrix_power(A, k)
        assert np.allclose(got, want, atol=1e-8 * max(1, np.abs(want).max()))


def test_extract_ac_similarity_invariance(rng):
    A0, _, C0 = random_system(4, 2, 3, rng)
    l = 8
    Gamma = np.vstack([C0 @ np.linalg.matrix_power(A0, k) for k in range(l)])
    T = rng.normal(size=(4, 4)) + 3 * np.eye(4)
    A1, C1, _ = ssid.extract_AC(Gamma, 3, l)
    A2, C2, _ = ssid.extract_AC(Gamma @ T, 3, l)
    for k in range(6):
        m1 = C1 @ np.linalg.matrix_power(A1, k)
        m2 = C2 @ np.linalg.matrix_power(A2, k)
        # outputs times the respective bases agree only through Markov
        # parameters of the full model; compare eigenvalues instead
    assert np.allclose(sorted(np.abs(np.linalg.eigvals(A1))),
                       sorted(np.abs(np.linalg.eigvals(A2))), atol=1e-9)


# ===========================================================================
# B and Z0 estimation
# ===========================================================================


def test_estimate_b_markov_recovery_both_solvers(rng):
    A0, B0, C0 = random_system(4, 2, 3, rng)
    u = rng.normal(size=(2, 500))
    y = simulate_lti(A0, B0, C0, u, x0=rng.normal(size=4))
    l = 8
    Y, U = ssid.hankel_pair(y, u, l)
    Gamma = ssid.batch_observability(Y, U, 4)
    A, C, _ = ssid.extract_AC(Gamma, 3, l)
    for solver in ("gradient", "exact"):
        B, real = ssid.estimate_B_Z0(A, C, Y, U, l=l, solver=solver)
        model = ssid.KoopmanModel(A=A, B=B, C=C, r=4, dt=0.01)
        from lti_helpers import markov_rel_err
        assert markov_rel_err(model, A0, B0, C0, 21) < 1e-6, solver
        assert real.Z0.shape == (4, Y.shape[1])


def test_estimate_b_zero_input_unidentifiable(rng):
    A0, B0, C0 = random_system(3, 2, 3, rng)
    y = rng.normal(size=(3, 100)) * 0.0
    u = np.zeros((2, 100))
    Y, U = ssid.hankel_pair(y, u, 6)
    A = 0.5 * np.eye(3)
    C = np.eye(3)
    with pytest.raises(InsufficientExcitationError):
        ssid.estimate_B_Z0(A, C, Y, U, l=6)


def test_estimate_b_objective_not_worse_than_zero(rng):
    A0, B0, C0 = random_system(3, 2, 3, rng)
    u = rng.normal(size=(2, 300))
    y = simulate_lti(A0, B0, C0, u, x0=rng.normal(size=3))
    l = 6
    Y, U = ssid.hankel_pair(y, u, l)
    Gamma = ssid.batch_observability(Y, U, 3)
    A, C, _ = ssid.extract_AC(Gamma, 3, l)
    B, real = ssid.estimate_B_Z0(A, C, Y, U, l=l)

    def objective(Bmat):
        from terrakoop.ssid import _observability_stack, _toeplitz_apply
        resid = Y - _toeplitz_apply(A, C, Bmat, U, l)
        G = _observability_stack(A, C, l)
        Z, *_ = np.linalg.lstsq(G, resid, rcond=None)
        return np.linalg.norm(resid - G @ Z) ** 2

    assert objective(B) <= objective(np.zeros_like(B)) + 1e-12


# ===========================================================================
# identify pipeline
# ===========================================================================


def test_identify_known_system(rng):
    A0, B0, C0 = random_system(4, 2, 3, rng)
    records = make_records(rng, A0, B0, C0, n_records=3)
    cfg = ssid.SsidConfig(l=8, r=4, epsilon=0.0, dt=0.01)
    model, realization, log = ssid.identify(records, cfg)
    assert markov_rel_err(model, A0, B0, C0) < 1e-6
    assert all(e["accepted"] for e in log)
    assert realization.Z0.shape[0] == 4


def test_identify_epsilon_zero_equals_batch(rng):
    A0, B0, C0 = random_system(4, 2, 3, rng)
    records = make_records(rng, A0, B0, C0, n_records=4)
    l = 8
    cfg = ssid.SsidConfig(l=l, r=4, epsilon=0.0, dt=0.01, b_solver="exact")
    model, _, _ = ssid.identify(records, cfg)
    # batch mosaic pipeline
    Ym = np.hstack([ssid.hankel_pair(y, u, l)[0] for y, u in records])
    Um = np.hstack([ssid.hankel_pair(y, u, l)[1] for y, u in records])
    Gamma = ssid.batch_observability(Ym, Um, 4)
    A, C, _ = ssid.extract_AC(Gamma, 3, l)
    B, _ = ssid.estimate_B_Z0(A, C, Ym, Um, l=l, solver="exact")
    batch = ssid.KoopmanModel(A=A, B=B, C=C, r=4, dt=0.01)
    rel = np.max(np.abs(model.markov_parameters(21)
                        - batch.markov_parameters(21)))
    rel /= np.max(np.abs(batch.markov_parameters(21)))
    assert rel < 1e-6


def test_identify_epsilon_infinite_keeps_first_only(rng):
    A0, B0, C0 = random_system(3, 2, 3, rng)
    records = make_records(rng, A0, B0, C0, n_records=3)
    cfg = ssid.SsidConfig(l=6, r=3, epsilon=np.inf, dt=0.01)
    model, _, log = ssid.identify(records, cfg)
    assert log[0]["accepted"]
    assert not any(e["accepted"] for e in log[1:])


def test_identify_rejects_duplicate_record(rng):
    A0, B0, C0 = random_system(3, 2, 3, rng)
    y, u = make_records(rng, A0, B0, C0, n_records=1, n_samples=200)[0]
    cfg = ssid.SsidConfig(l=6, r=3, epsilon=1e-6, dt=0.01)
    model, _, log = ssid.identify([(y, u), (y.copy(), u.copy())], cfg)
    assert log[1]["G"] <= 1e-8
    assert not log[1]["accepted"]


def test_identify_auto_order(rng):
    A0, B0, C0 = random_system(4, 2, 3, rng)
    records = make_records(rng, A0, B0, C0, n_records=2, n_samples=400)
    cfg = ssid.SsidConfig(l=8, r="auto", epsilon=0.0, dt=0.01)
    model, _, _ = ssid.identify(records, cfg)
    assert model.r == 4


def test_model_json_roundtrip(tmp_path, rng):
    A0, B0, C0 = random_system(3, 2, 3, rng)
    records = make_records(rng, A0, B0, C0, n_records=2)
    cfg = ssid.SsidConfig(l=6, r=3, dt=0.01)
    model, _, _ = ssid.identify(records, cfg)
    model.soil = "clay"
    path = tmp_path / "model.json"
    model.save(path)
    back = ssid.KoopmanModel.load(path)
    assert np.array_equal(back.A, model.A)
    assert np.array_equal(back.B, model.B)
    assert np.array_equal(back.C, model.C)
    assert back.soil == "clay"
    assert back.dt == model.dt
    assert back.acceptance_log == model.acceptance_log
