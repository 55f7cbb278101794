"""State-space plumbing: DAE rewriting, stacked nullspace, filter realization.

The load-bearing checks are trajectory based: the behavioral identity of the
DAE form is verified on a simulated run, and the companion realization is
verified against a direct polynomial recursion of the same rational filter.
"""
from __future__ import annotations

import numpy as np
import pytest
import scipy.signal

from freqfde.sysmodel import (
    DaeForm,
    FilterForm,
    StateSpace,
    apply_filter,
    discretize_zoh,
    realize_filter,
    ss_from_tf,
    stack_nullspace,
    to_dae,
)
from freqfde.synth_detect import init_numerator


def _random_plant(seed: int = 0, n_x: int = 4, n_y: int = 3, n_u: int = 1,
                  n_d: int = 1, n_w: int = 2, n_f: int = 1) -> StateSpace:
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n_x, n_x))
    A *= 0.9 / max(np.abs(np.linalg.eigvals(A)).max(), 1e-9)
    return StateSpace(
        A=A,
        B=rng.normal(size=(n_x, n_u)),
        B_d=rng.normal(size=(n_x, n_d)),
        B_w=rng.normal(size=(n_x, n_w)),
        B_f=rng.normal(size=(n_x, n_f)),
        C=rng.normal(size=(n_y, n_x)),
        D=rng.normal(size=(n_y, n_u)),
        D_w=rng.normal(size=(n_y, n_w)),
        D_f=rng.normal(size=(n_y, n_f)),
    )


def _random_filter(dae: DaeForm, d_N: int, seed: int = 1) -> FilterForm:
    rng = np.random.default_rng(seed)
    pp = dae.n_x + dae.n_y
    # stable denominator: roots well inside the unit circle
    roots = rng.uniform(-0.5, 0.5, size=d_N + 1)
    a_full = np.polynomial.polynomial.polyfromroots(roots)
    N = tuple(rng.normal(size=(2, pp)) for _ in range(d_N + 1))
    return FilterForm(a=np.asarray(a_full[: d_N + 1]), N=N)


# ---------------------------------------------------------------- StateSpace


def test_state_space_rejects_inconsistent_shapes():
    with pytest.raises(ValueError):
        StateSpace(A=np.zeros((2, 3)), B=np.zeros((2, 0)), B_d=np.zeros((2, 0)),
                   B_w=np.zeros((2, 0)), B_f=np.zeros((2, 1)),
                   C=np.zeros((1, 2)), D=np.zeros((1, 0)),
                   D_w=np.zeros((1, 0)), D_f=np.zeros((1, 1)))
    with pytest.raises(ValueError):
        # fault channel widths disagree between state and output maps
        StateSpace(A=np.eye(2), B=np.zeros((2, 0)), B_d=np.zeros((2, 0)),
                   B_w=np.zeros((2, 0)), B_f=np.zeros((2, 2)),
                   C=np.eye(2), D=np.zeros((2, 0)),
                   D_w=np.zeros((2, 0)), D_f=np.zeros((2, 1)))


def test_state_space_json_roundtrip(tmp_path):
    sys = _random_plant(seed=3)
    path = tmp_path / "plant.json"
    sys.save(path)
    back = StateSpace.load(path)
    for name in ("A", "B", "B_d", "B_w", "B_f", "C", "D", "D_w", "D_f"):
        np.testing.assert_array_equal(getattr(sys, name), getattr(back, name))
    assert back.sample_period == sys.sample_period


# ----------------------------------------------------------------- DAE form


def test_dae_identity_holds_on_trajectories():
    """H0 z(k) + H1 z(k+1) + L [y;u](k) + W w(k) + G f(k) = 0 with
    z = [x; d] along any simulated trajectory."""
    sys = _random_plant(seed=7)
    dae = to_dae(sys)
    rng = np.random.default_rng(11)
    steps = 40
    u = rng.normal(size=(steps, sys.n_u))
    d = rng.normal(size=(steps, sys.n_d))
    w = rng.normal(size=(steps, sys.n_w))
    f = rng.normal(size=(steps, sys.n_f))
    x = np.zeros((steps + 1, sys.n_x))
    y = np.zeros((steps, sys.n_y))
    for k in range(steps):
        y[k] = sys.C @ x[k] + sys.D @ u[k] + sys.D_w @ w[k] + sys.D_f @ f[k]
        x[k + 1] = (sys.A @ x[k] + sys.B @ u[k] + sys.B_d @ d[k]
                    + sys.B_w @ w[k] + sys.B_f @ f[k])
    worst = 0.0
    for k in range(steps - 1):
        z_k = np.concatenate([x[k], d[k]])
        z_next = np.concatenate([x[k + 1], d[k + 1]])
        s_k = np.concatenate([y[k], u[k]])
        resid = (dae.H0 @ z_k + dae.H1 @ z_next + dae.L @ s_k
                 + dae.W @ w[k] + dae.G @ f[k])
        worst = max(worst, np.abs(resid).max())
    assert worst < 1e-10


def test_dae_channel_blocks():
    sys = _random_plant(seed=5)
    dae = to_dae(sys)
    pp = sys.n_x + sys.n_y
    assert dae.H0.shape == (pp, sys.n_x + sys.n_d)
    np.testing.assert_allclose(dae.W, np.vstack([sys.B_w, sys.D_w]))
    np.testing.assert_allclose(dae.G, np.vstack([sys.B_f, sys.D_f]))


# ---------------------------------------------------------- stacked nullspace


@pytest.mark.parametrize("d_N", [1, 2, 3])
def test_nullspace_rows_annihilate_polynomial_matrix(d_N):
    """Rows of the stacked nullspace, regrouped as polynomial coefficients,
    must satisfy N(z) (H0 + z H1) = 0 at arbitrary complex z."""
    sys = _random_plant(seed=13)
    dae = to_dae(sys)
    stacked = stack_nullspace(dae, d_N)
    N0, basis = init_numerator(stacked, n_r=1)
    pp = sys.n_x + sys.n_y
    rng = np.random.default_rng(17)
    for row in np.vstack([N0, basis[:3]]):
        blocks = row.reshape(d_N + 1, pp)
        for _ in range(4):
            z = rng.normal() + 1j * rng.normal()
            Nz = sum(blocks[i] * z**i for i in range(d_N + 1))
            val = Nz @ (dae.H0 + z * dae.H1)
            assert np.abs(val).max() < 1e-8 * max(1.0, abs(z)) ** d_N


def test_stacked_matrix_block_counts():
    sys = _random_plant(seed=19)
    dae = to_dae(sys)
    st = stack_nullspace(dae, 2)
    assert st.block_rows == sys.n_x + sys.n_y
    assert st.block_cols == sys.n_x + sys.n_d
    assert st.matrix.shape == (3 * st.block_rows, 4 * st.block_cols)


# ----------------------------------------------------------------- FilterForm


def test_filter_poles_and_stability():
    # (q - 0.1)^3 expanded: low-order coefficients ascending
    f = FilterForm(a=np.array([-0.001, 0.03, -0.3]), N=(np.zeros((1, 4)),) * 3)
    # repeated roots are recovered with O(eps^(1/3)) accuracy at best
    np.testing.assert_allclose(sorted(f.poles().real), [0.1] * 3, atol=1e-4)
    assert f.is_stable()
    g = FilterForm(a=np.array([-1.5]), N=(np.zeros((1, 4)),))
    assert not g.is_stable()


def test_filter_stacked_roundtrip():
    sys = _random_plant(seed=23)
    f = _random_filter(to_dae(sys), d_N=2, seed=29)
    back = FilterForm.from_stacked(f.a, f.stacked, d_N=2)
    assert all(np.array_equal(x, y) for x, y in zip(f.N, back.N))
    with pytest.raises(ValueError):
        FilterForm.from_stacked(f.a, f.stacked[:, :-1], d_N=2)


def test_realization_matches_rational_transfer():
    """C_r (zI - A_r)^-1 B must equal the rational channels -N(z) G / a(z)
    and -N(z) W / a(z) pointwise off the unit circle."""
    sys = _random_plant(seed=31)
    dae = to_dae(sys)
    d_N = 2
    filt = _random_filter(dae, d_N, seed=37)
    real = realize_filter(filt, dae)
    n_states = real.A_r.shape[0]
    rng = np.random.default_rng(41)
    for _ in range(5):
        z = 1.3 * np.exp(2j * np.pi * rng.uniform())
        resolvent = np.linalg.solve(z * np.eye(n_states) - real.A_r,
                                    np.column_stack([real.B_fr, real.B_wr]))
        got = real.C_r @ resolvent
        Nz = sum(filt.N[i] * z**i for i in range(d_N + 1))
        az = z ** (d_N + 1) + np.polyval(filt.a[::-1], z)
        want = np.column_stack([-(Nz @ dae.G) / az, -(Nz @ dae.W) / az])
        np.testing.assert_allclose(got, want, atol=1e-9)


def test_apply_filter_matches_direct_recursion():
    """Streaming output equals the scalar recursion
    r(k + d1) = -sum_i a_i r(k + i) + sum_i N_i v(k + i), v = L [y; u]."""
    sys = _random_plant(seed=43)
    dae = to_dae(sys)
    d_N = 2
    d1 = d_N + 1
    filt = _random_filter(dae, d_N, seed=47)
    rng = np.random.default_rng(53)
    steps = 60
    y = rng.normal(size=(steps, sys.n_y))
    u = rng.normal(size=(steps, sys.n_u))
    r = apply_filter(filt, dae, y, u)
    assert r.shape == (steps, filt.n_r)

    # zero-state response: pad the driving signal with d1 leading zeros and
    # run the scalar recursion from rest
    v = np.column_stack([y, u]) @ dae.L.T
    v_pad = np.vstack([np.zeros((d1, v.shape[1])), v])
    r_ref = np.zeros((steps + 2 * d1, filt.n_r))
    for k in range(steps):
        acc = np.zeros(filt.n_r)
        for i in range(d1):
            acc -= filt.a[i] * r_ref[k + i]
            acc += filt.N[i] @ v_pad[k + i]
        r_ref[k + d1] = acc
    np.testing.assert_allclose(r, r_ref[d1: steps + d1], atol=1e-9)


# ------------------------------------------------------------- discretization


def test_zoh_matches_reference_discretization():
    rng = np.random.default_rng(59)
    n = 4
    A = rng.normal(size=(n, n)) - 2 * np.eye(n)
    sys = StateSpace(A=A, B=rng.normal(size=(n, 2)),
                     B_d=rng.normal(size=(n, 1)), B_w=np.zeros((n, 0)),
                     B_f=rng.normal(size=(n, 1)), C=rng.normal(size=(2, n)),
                     D=np.zeros((2, 2)), D_w=np.zeros((2, 0)),
                     D_f=rng.normal(size=(2, 1)))
    Ts = 0.05
    disc = discretize_zoh(sys, Ts)
    for chan in ("B", "B_d", "B_f"):
        Ad, Bd, *_ = scipy.signal.cont2discrete(
            (A, getattr(sys, chan), sys.C, np.zeros((2, getattr(sys, chan).shape[1]))),
            Ts, method="zoh")
        np.testing.assert_allclose(disc.A, Ad, atol=1e-12)
        np.testing.assert_allclose(getattr(disc, chan), Bd, atol=1e-12)
    np.testing.assert_array_equal(disc.D_f, sys.D_f)   # feedthrough untouched
    assert disc.sample_period == Ts


def test_tf_realization_frequency_response():
    num = [1.4, -0.183]
    den = [0.45, 5.911, 2.445, 0.2136]
    A, B, C, D = ss_from_tf(num, den)
    assert D.shape == (1, 1) and D[0, 0] == 0.0
    for s in (0.0, 1j, 0.3 + 0.7j):
        got = (C @ np.linalg.solve(s * np.eye(3) - A, B))[0, 0]
        want = np.polyval(num[::-1], s) / np.polyval(den[::-1], s)
        assert abs(got - want) < 1e-10 * max(1.0, abs(want))
    with pytest.raises(ValueError):
        ss_from_tf([1.0, 2.0], [3.0, 4.0])   # not strictly proper
