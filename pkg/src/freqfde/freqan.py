"""Frequency-domain analysis and the independent verification oracles.

Everything a synthesized filter claims (noise H2 bound, band-restricted fault
sensitivity, band-restricted estimation gain) can be re-derived here without
touching the optimizer: transfer functions are evaluated directly, H2 norms
come from Gramians, band extrema from dense grids, and the noise covariance
factor from a Lyapunov equation with a quadrature cross-check in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .sysmodel import StateSpace


@dataclass(frozen=True)
class FrequencyBands:
    """Ordered disjoint intervals on the unit circle, radians per sample."""

    bands: tuple

    def __post_init__(self):
        bands = tuple((float(a), float(b)) for a, b in self.bands)
        if not bands:
            raise ValueError("at least one band is required")
        for a, b in bands:
            if not (-np.pi <= a <= b <= np.pi):
                raise ValueError(f"band ({a}, {b}) must satisfy -pi <= lo <= hi <= pi")
        for (_, b0), (a1, _) in zip(bands, bands[1:]):
            if a1 <= b0:
                raise ValueError("bands must be ordered and pairwise disjoint")
        object.__setattr__(self, "bands", bands)

    @property
    def centers(self) -> np.ndarray:
        return np.array([(a + b) / 2 for a, b in self.bands])

    @property
    def half_widths(self) -> np.ndarray:
        return np.array([(b - a) / 2 for a, b in self.bands])

    def grid(self, n: int) -> list[np.ndarray]:
        """n sample points per band, endpoints included (n >= 2)."""
        if n < 2:
            raise ValueError("grid needs at least 2 points per band")
        return [np.linspace(a, b, n) for a, b in self.bands]

    def contains(self, theta: float) -> bool:
        return any(a - 1e-12 <= theta <= b + 1e-12 for a, b in self.bands)


@dataclass(frozen=True)
class GriddedSpectrum:
    """Per-frequency singular-value extremes of one transfer function."""

    theta: np.ndarray
    sigma_min: np.ndarray
    sigma_max: np.ndarray
    grid_per_band: int

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("theta,sigma_min,sigma_max\n")
            for t, lo, hi in zip(self.theta, self.sigma_min, self.sigma_max):
                fh.write(f"{t!r},{lo!r},{hi!r}\n")


def eval_ss(A, B, C, D, theta: float) -> np.ndarray:
    """C (e^{j theta} I - A)^{-1} B + D."""
    A = np.atleast_2d(A)
    z = np.exp(1j * theta)
    M = z * np.eye(A.shape[0]) - A
    if np.linalg.cond(M) > 1e12:
        raise ValueError(f"resolvent nearly singular at theta={theta}")
    return np.atleast_2d(C) @ np.linalg.solve(M, np.atleast_2d(B)) + np.atleast_2d(D)


def eval_rational(a_low, N_mats, M, theta: float, sign: float = -1.0) -> np.ndarray:
    """sign * N(e^{j theta}) M / a(e^{j theta}) for the stored ascending
    coefficients (monic leading term implicit).  The default sign matches the
    canonical-realization convention for the W/G channels."""
    z = np.exp(1j * theta)
    a_low = np.asarray(a_low, dtype=float).ravel()
    den = z ** (len(a_low)) + np.polyval(a_low[::-1], z)
    num = sum((z ** i) * Ni for i, Ni in enumerate(N_mats))
    return sign * (num @ np.atleast_2d(M)) / den


def h2_norm_sq(A, B, C) -> float:
    """Squared H2 norm via the controllability Gramian.

    Solves P = A P A^T + B B^T and returns trace(C P C^T); requires a
    Schur-stable A.
    """
    A = np.atleast_2d(A)
    B = np.atleast_2d(B)
    C = np.atleast_2d(C)
    if A.size and np.max(np.abs(np.linalg.eigvals(A))) >= 1.0:
        raise ValueError("H2 undefined: state matrix is not Schur-stable")
    if B.shape[1] == 0:
        return 0.0
    P = sla.solve_discrete_lyapunov(A, B @ B.T)
    return float(np.trace(C @ P @ C.T))


def _sigma_extremes(eval_fn, thetas) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = [], []
    for th in thetas:
        s = np.linalg.svd(eval_fn(th), compute_uv=False)
        lo.append(s[-1] if len(s) else 0.0)
        hi.append(s[0] if len(s) else 0.0)
    return np.array(lo), np.array(hi)


def gridded_spectrum(A, B, C, D, bands: FrequencyBands, grid: int = 512) -> GriddedSpectrum:
    thetas = np.concatenate(bands.grid(grid))
    lo, hi = _sigma_extremes(lambda th: eval_ss(A, B, C, D, th), thetas)
    return GriddedSpectrum(theta=thetas, sigma_min=lo, sigma_max=hi, grid_per_band=grid)


def hminus_index(A, B, C, D, bands: FrequencyBands, grid: int = 512) -> float:
    """Grid minimum of sigma_min over the bands (upper bound of the true
    infimum; refining the grid never increases it on nested grids)."""
    spec = gridded_spectrum(A, B, C, D, bands, grid)
    return float(spec.sigma_min.min())


def hinf_restricted(A, B, C, D, bands: FrequencyBands, grid: int = 512) -> float:
    """Grid maximum of sigma_max over the bands (lower bound of the true
    supremum)."""
    spec = gridded_spectrum(A, B, C, D, bands, grid)
    return float(spec.sigma_max.max())


def _scalar_basis_realization(a_low: np.ndarray, d_N: int, width: int):
    """Realization of the stacked kernel -[M; qM; ...; q^{d_N} M]/a(q) for an
    M with ``width`` columns, as Kronecker factors.

    Returns (A_psi, B_psi) with A_psi = A_c (x) I_width built from the
    controllable-canonical companion of 1/a(q); the output map is
    -(I_{d_N+1} (x) M).
    """
    a_low = np.asarray(a_low, dtype=float).ravel()
    m = len(a_low)  # = d_a + 1 states for 1/a(q)
    if m < d_N + 1:
        raise ValueError("denominator degree too small for the requested stack")
    Ac = np.zeros((m, m))
    if m > 1:
        Ac[:-1, 1:] = np.eye(m - 1)
    Ac[-1, :] = -a_low
    bc = np.zeros((m, 1))
    bc[-1, 0] = 1.0
    A_psi = np.kron(Ac, np.eye(width))
    B_psi = np.kron(bc, np.eye(width))
    # selector of the first d_N+1 states (q^i / a(q) = state i+1 of 1/a(q))
    sel = np.zeros((d_N + 1, m))
    sel[:, :d_N + 1] = np.eye(d_N + 1)
    return A_psi, B_psi, sel


def phi_matrix(a_low, W: np.ndarray, d_N: int) -> np.ndarray:
    """Noise covariance factor Phi = (1/2pi) \\int Psi_W Psi_W^* d theta.

    Psi_W(q) = -[W; qW; ...; q^{d_N} W]/a(q).  Computed exactly (up to
    linear-algebra tolerance) as C_psi X C_psi^T with X the controllability
    Gramian of the Kronecker realization; the quadrature path lives in the
    test suite as an independent oracle.
    """
    W = np.atleast_2d(np.asarray(W, dtype=float))
    pp, n_w = W.shape
    size = (d_N + 1) * pp
    if n_w == 0 or not np.any(W):
        return np.zeros((size, size))
    a_low = np.asarray(a_low, dtype=float).ravel()
    roots = np.roots(np.concatenate([a_low, [1.0]])[::-1])
    if np.max(np.abs(roots)) >= 1.0:
        raise ValueError("Phi undefined: denominator is not Schur-stable")
    A_psi, B_psi, sel = _scalar_basis_realization(a_low, d_N, n_w)
    C_psi = -np.kron(sel, W)
    X = sla.solve_discrete_lyapunov(A_psi, B_psi @ B_psi.T)
    Phi = C_psi @ X @ C_psi.T
    return 0.5 * (Phi + Phi.T)


def psi_samples(a_low, M: np.ndarray, d_N: int, thetas) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per-frequency values of Psi_M(e^{j theta}) = -[M; qM; ...]/a(q),
    returned as (real, imaginary) part pairs."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    a_low = np.asarray(a_low, dtype=float).ravel()
    out = []
    for th in thetas:
        z = np.exp(1j * th)
        den = z ** len(a_low) + np.polyval(a_low[::-1], z)
        stack = np.vstack([(z ** i) * M for i in range(d_N + 1)])
        val = -stack / den
        out.append((val.real.copy(), val.imag.copy()))
    return out


def psi_g_samples(a_low, G: np.ndarray, d_N: int, thetas):
    """Fault-kernel samples; alias of :func:`psi_samples` kept for symmetry
    with the noise-kernel Gramian path."""
    return psi_samples(a_low, G, d_N, thetas)


@dataclass(frozen=True)
class FeasibilityReport:
    """Numeric diagnostic for decouplability plus in-band fault visibility."""

    observable: bool
    rank_ok: bool
    expected_rank: int
    offending: tuple = ()
    ranks_seen: tuple = ()

    @property
    def passed(self) -> bool:
        return self.observable and self.rank_ok


def feasibility_check(sys: StateSpace, bands: FrequencyBands,
                      grid: int = 16, radii=(1.01, 1.1, 2.0),
                      rank_rtol: float = 1e-8) -> FeasibilityReport:
    """Sample the rank condition that makes the design problem well posed.

    At q = phi e^{j theta} (phi outside the unit circle, theta over the
    bands) the pencil [[-qI + A, B_d, B_f], [C, 0, D_f]] must have rank
    n_x + rank([B_d; 0]) + n_f, and that target may not exceed n_x + n_y.
    Observability of (A, C) is checked via the observability matrix.
    """
    n_x, n_y = sys.n_x, sys.n_y
    obs = np.vstack([sys.C @ np.linalg.matrix_power(sys.A, k) for k in range(n_x)])
    observable = np.linalg.matrix_rank(obs, tol=None) == n_x
    rank_bd = np.linalg.matrix_rank(np.vstack([sys.B_d, np.zeros((n_y, sys.n_d))])) \
        if sys.n_d else 0
    expected = n_x + rank_bd + sys.n_f
    rank_ok = expected <= n_x + n_y
    offending = []
    ranks = []
    thetas = np.concatenate(bands.grid(max(grid, 2)))
    for phi in radii:
        for th in thetas:
            q = phi * np.exp(1j * th)
            pencil = np.block([
                [-q * np.eye(n_x) + sys.A, sys.B_d.astype(complex), sys.B_f.astype(complex)],
                [sys.C.astype(complex), np.zeros((n_y, sys.n_d)), sys.D_f.astype(complex)],
            ])
            sv = np.linalg.svd(pencil, compute_uv=False)
            r = int(np.sum(sv > rank_rtol * (sv[0] if sv.size else 1.0)))
            ranks.append(r)
            if r != expected:
                rank_ok = False
                offending.append((phi, float(th), r))
    return FeasibilityReport(observable=bool(observable), rank_ok=bool(rank_ok),
                             expected_rank=expected,
                             offending=tuple(offending[:8]),
                             ranks_seen=tuple(sorted(set(ranks))))
