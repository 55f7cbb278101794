"""Conic building blocks: Hermitian embedding, H2 and band-gain certificates.

Soundness is checked by optimizing each certificate on a fixed small system
and comparing the certified level against dense frequency grids / Gramians,
which the LMIs must match to solver precision for these lossless cases.
"""
from __future__ import annotations

import cvxpy as cp
import numpy as np
import pytest

from freqfde.freqan import FrequencyBands, h2_norm_sq, hinf_restricted, hminus_index
from freqfde.lmi import ConicProgram, embed_hermitian, gkyp_block, h2_block


def _random_hermitian(n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return (M + M.conj().T) / 2


# ------------------------------------------------------------------ embedding


@pytest.mark.parametrize("n,seed", [(4, 0), (6, 1), (8, 2)])
def test_embedding_duplicates_eigenvalues(n, seed):
    H = _random_hermitian(n, seed)
    E = embed_hermitian(H)
    assert E.shape == (2 * n, 2 * n)
    np.testing.assert_allclose(E, E.T, atol=1e-14)
    want = np.sort(np.repeat(np.linalg.eigvalsh(H), 2))
    got = np.sort(np.linalg.eigvalsh(E))
    assert np.abs(got - want).max() < 1e-9


def test_embedding_preserves_definiteness():
    H = _random_hermitian(5, 3)
    shift = H + (abs(np.linalg.eigvalsh(H).min()) + 1.0) * np.eye(5)
    assert np.linalg.eigvalsh(embed_hermitian(shift)).min() > 0.99


def test_embedding_rejects_non_hermitian():
    with pytest.raises(ValueError):
        embed_hermitian(np.array([[0.0, 1.0], [0.0, 0.0]]))


def test_embedding_expression_matches_numeric():
    H = _random_hermitian(3, 4)
    X = cp.Variable((3, 3), hermitian=True)
    X.value = H
    expr = embed_hermitian(X)
    np.testing.assert_allclose(expr.value, embed_hermitian(H), atol=1e-12)


# -------------------------------------------------------------- H2 certificate


def _h2_test_system():
    rng = np.random.default_rng(6)
    A = rng.normal(size=(3, 3))
    A *= 0.75 / np.abs(np.linalg.eigvals(A)).max()
    B = rng.normal(size=(3, 2))
    C = rng.normal(size=(2, 3))
    return A, B, C


def test_h2_certificate_is_tight():
    A, B, C = _h2_test_system()
    truth = h2_norm_sq(A, B, C)
    prog = ConicProgram()
    n = A.shape[0]
    P1 = prog.add_variable("P1", cp.Variable((n, n), symmetric=True))
    Q1 = prog.add_variable("Q1", cp.Variable((C.shape[0],) * 2, symmetric=True))
    eta1 = prog.add_variable("eta1", cp.Variable(nonneg=True))
    prog.add_constraints(h2_block(A, B, C, P1, Q1, eta1))
    prog.set_objective(eta1)
    res = prog.solve()
    assert res.status == "optimal"
    # never below the true norm, and within solver slack above it
    assert res.objective > truth - 1e-9
    assert res.objective < truth + 1e-3 * (1.0 + truth)


def test_h2_block_bilinear_guard():
    A, B, C = _h2_test_system()
    A_var = cp.Variable(A.shape)
    P_var = cp.Variable((A.shape[0],) * 2, symmetric=True)
    with pytest.raises(ValueError, match="bilinear"):
        h2_block(A_var, B, C, P_var, np.eye(C.shape[0]), 1.0)


# ------------------------------------------------------------ GKYP certificate


_SCALAR = (np.array([[0.3]]), np.array([[1.0]]), np.array([[1.0]]))
_BAND = (0.0, 0.5)


def _gkyp_extremum(mode: str) -> float:
    """Optimize the band certificate for the scalar lag 1/(z - 0.3)."""
    A, B, C = _SCALAR
    n, m = 1, 1
    prog = ConicProgram()
    P2 = prog.add_variable("P2", cp.Variable((n, n), hermitian=True))
    Q2 = prog.add_variable("Q2", cp.Variable((n, n), hermitian=True))
    V = prog.add_variable("V", cp.Variable((n, 2 * n + m), complex=True))
    gain = prog.add_variable("gain", cp.Variable(nonneg=True))
    center = (_BAND[0] + _BAND[1]) / 2
    half = (_BAND[1] - _BAND[0]) / 2
    prog.add_constraints(gkyp_block(A, B, C, center, half, P2, Q2, V, gain, mode))
    prog.set_objective(-gain if mode == "sensitivity" else gain)
    res = prog.solve()
    assert res.status == "optimal", res.status
    return float(gain.value)


def test_gkyp_sensitivity_matches_band_minimum():
    A, B, C = _SCALAR
    certified = _gkyp_extremum("sensitivity")
    bands = FrequencyBands((_BAND,))
    truth = hminus_index(A, B, C, np.zeros((1, 1)), bands, grid=4096) ** 2
    assert certified <= truth + 1e-6          # certificate is a lower bound
    assert certified > truth - 1e-4 * truth   # and essentially attains it


def test_gkyp_estimation_matches_band_maximum():
    A, B, C = _SCALAR
    certified = _gkyp_extremum("estimation")
    thetas = np.linspace(*_BAND, 4096)
    vals = [abs(1.0 / (np.exp(1j * t) - 0.3) - 1.0) ** 2 for t in thetas]
    truth = max(vals)
    assert certified >= truth - 1e-6          # certificate is an upper bound
    assert certified < truth + 1e-4 * (1 + truth)


def test_gkyp_guards():
    A, B, C = _SCALAR
    P = cp.Variable((1, 1), hermitian=True)
    Q = cp.Variable((1, 1), hermitian=True)
    V = cp.Variable((1, 3), complex=True)
    with pytest.raises(ValueError, match="bilinear"):
        gkyp_block(cp.Variable((1, 1)), B, C, 0.25, 0.25, P, Q, V, 1.0,
                   "sensitivity")
    with pytest.raises(ValueError, match="mode"):
        gkyp_block(A, B, C, 0.25, 0.25, np.eye(1), np.eye(1),
                   np.zeros((1, 3)), 1.0, "nonsense")
    with pytest.raises(ValueError, match="square"):
        gkyp_block(A, np.ones((1, 2)), C, 0.25, 0.25, np.eye(1), np.eye(1),
                   np.zeros((1, 4)), 1.0, "estimation")


# ---------------------------------------------------------------- ConicProgram


def test_program_solves_known_sdp():
    # min X00 s.t. X >> 0, X01 = 1, X00 = X11  ->  X = ones(2, 2), value 1
    prog = ConicProgram()
    X = prog.add_variable("X", cp.Variable((2, 2), symmetric=True))
    prog.add_constraints([X >> 0, X[0, 1] == 1.0, X[0, 0] == X[1, 1]])
    prog.set_objective(X[0, 0])
    res = prog.solve()
    assert res.status == "optimal"
    assert res.backend == "CLARABEL"
    assert abs(res.objective - 1.0) < 1e-6
    assert res.max_violation < 1e-6
    assert res.accurate


def test_program_reports_infeasible():
    prog = ConicProgram()
    X = prog.add_variable("X", cp.Variable((2, 2), symmetric=True))
    prog.add_constraints([X >> np.eye(2), X[0, 0] == -1.0])
    res = prog.solve()
    assert res.status == "infeasible"
    assert res.objective is None


def test_program_check_backend():
    prog = ConicProgram()
    X = prog.add_variable("X", cp.Variable((2, 2), symmetric=True))
    prog.add_constraints([X >> 0, X[0, 1] == 1.0])
    ok = prog.solve(backend="check", candidate={"X": np.ones((2, 2))})
    assert ok.status == "optimal" and ok.max_violation < 1e-9
    bad = prog.solve(backend="check",
                     candidate={"X": np.array([[0.2, 1.0], [1.0, 0.2]])})
    assert bad.status == "infeasible"
    with pytest.raises(ValueError):
        prog.solve(backend="check")


def test_program_duplicate_variable_name():
    prog = ConicProgram()
    prog.add_variable("X", cp.Variable(2))
    with pytest.raises(ValueError, match="duplicate"):
        prog.add_variable("X", cp.Variable(3))


def test_program_sdpa_dump():
    prog = ConicProgram()
    X = prog.add_variable("X", cp.Variable((2, 2), symmetric=True))
    prog.add_constraints([X >> 0, X[0, 1] == 1.0])
    prog.set_objective(X[0, 0])
    text = prog.to_sdpa_text()
    assert text.startswith("* vars")
    assert "cones" in text and "psd=" in text
    assert any(line.startswith("A ") for line in text.splitlines())
