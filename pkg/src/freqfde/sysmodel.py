"""State-space plants, rational residual filters, and their structural transforms.

The central object is a discrete-time LTI plant with separate input channels
for control, unknown disturbance, measurement/process noise, and faults.  A
residual filter is a strictly proper rational matrix F(q) = N(q)/a(q) acting
on the stacked signal [y; u].  This module provides:

* the behavioral (DAE) rewriting of the plant, which exposes the polynomial
  matrix H(q) whose left nullspace parameterizes all disturbance-decoupling
  filters,
* the block-Toeplitz coefficient matrix of that polynomial (so nullspace
  membership becomes a finite linear condition),
* an observable-canonical state-space realization of the filter channels,
* simulation of the filter on recorded data, and
* zero-order-hold discretization used by the bundled benchmark models.

All containers are frozen dataclasses holding numpy arrays; operations are
pure functions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla

SCHEMA_VERSION = 1


def _as_matrix(M, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    """Coerce to a 2-D float array, defaulting empty channels to zero width."""
    if M is None:
        M = np.zeros((rows or 0, cols or 0))
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return M


@dataclass(frozen=True)
class StateSpace:
    """Discrete-time plant
        x(k+1) = A x + B u + B_d d + B_w w + B_f f
        y(k)   = C x + D u + D_w w + D_f f
    with w the noise and f the fault channel.  Channels may be absent, in
    which case the corresponding matrix has zero columns.
    """

    A: np.ndarray
    B: np.ndarray
    B_d: np.ndarray
    B_w: np.ndarray
    B_f: np.ndarray
    C: np.ndarray
    D: np.ndarray
    D_w: np.ndarray
    D_f: np.ndarray
    sample_period: float | None = None

    def __post_init__(self):
        A = _as_matrix(self.A)
        n_x = A.shape[0]
        if A.shape != (n_x, n_x):
            raise ValueError(f"A must be square, got {A.shape}")
        C = _as_matrix(self.C)
        n_y = C.shape[0]
        if C.shape[1] != n_x:
            raise ValueError(f"C has {C.shape[1]} columns, expected {n_x}")
        B = _as_matrix(self.B, n_x)
        B_d = _as_matrix(self.B_d, n_x)
        B_w = _as_matrix(self.B_w, n_x)
        B_f = _as_matrix(self.B_f, n_x)
        D = _as_matrix(self.D, n_y, B.shape[1])
        D_w = _as_matrix(self.D_w, n_y, B_w.shape[1])
        D_f = _as_matrix(self.D_f, n_y, B_f.shape[1])
        for name, top, bottom in (("B/D", B, D), ("B_w/D_w", B_w, D_w),
                                  ("B_f/D_f", B_f, D_f)):
            if top.shape[0] != n_x or bottom.shape[0] != n_y:
                raise ValueError(f"{name} row counts inconsistent")
            if top.shape[1] != bottom.shape[1]:
                raise ValueError(f"{name} column counts differ: "
                                 f"{top.shape[1]} vs {bottom.shape[1]}")
        if B_d.shape[0] != n_x:
            raise ValueError("B_d row count inconsistent")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "B_d", B_d)
        object.__setattr__(self, "B_w", B_w)
        object.__setattr__(self, "B_f", B_f)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "D_w", D_w)
        object.__setattr__(self, "D_f", D_f)

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    @property
    def n_d(self) -> int:
        return self.B_d.shape[1]

    @property
    def n_w(self) -> int:
        return self.B_w.shape[1]

    @property
    def n_f(self) -> int:
        return self.B_f.shape[1]

    @property
    def n_y(self) -> int:
        return self.C.shape[0]

    def to_json_dict(self) -> dict:
        d = {"schema_version": SCHEMA_VERSION,
             "dims": {"n_x": self.n_x, "n_u": self.n_u, "n_d": self.n_d,
                      "n_w": self.n_w, "n_f": self.n_f, "n_y": self.n_y},
             "sample_period": self.sample_period}
        for name in ("A", "B", "B_d", "B_w", "B_f", "C", "D", "D_w", "D_f"):
            d[name] = getattr(self, name).tolist()
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "StateSpace":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {d.get('schema_version')}")
        dims = d["dims"]
        mats = {}
        for name, rows, cols in (("A", "n_x", "n_x"), ("B", "n_x", "n_u"),
                                 ("B_d", "n_x", "n_d"), ("B_w", "n_x", "n_w"),
                                 ("B_f", "n_x", "n_f"), ("C", "n_y", "n_x"),
                                 ("D", "n_y", "n_u"), ("D_w", "n_y", "n_w"),
                                 ("D_f", "n_y", "n_f")):
            mats[name] = np.asarray(d[name], dtype=float).reshape(dims[rows], dims[cols])
        return cls(sample_period=d.get("sample_period"), **mats)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, sort_keys=True, indent=1)

    @classmethod
    def load(cls, path) -> "StateSpace":
        with open(path) as fh:
            return cls.from_json_dict(json.load(fh))


@dataclass(frozen=True)
class DaeForm:
    """Behavioral rewriting H(q)[x; d] + L[y; u] + W w + G f = 0 (up to a
    decaying initial-condition term), with H(q) = H1 q + H0."""

    H0: np.ndarray
    H1: np.ndarray
    L: np.ndarray
    W: np.ndarray
    G: np.ndarray
    n_x: int
    n_y: int
    n_d: int

    @property
    def block_rows(self) -> int:
        return self.n_x + self.n_y

    @property
    def block_cols(self) -> int:
        return self.n_x + self.n_d


def to_dae(sys: StateSpace) -> DaeForm:
    """Rewrite the plant in the first-order polynomial (DAE) form.

    The shift q acts only on [x; d] through H1 = [[-I, 0], [0, 0]]; the
    remaining signal stacks are static.
    """
    n_x, n_y, n_d = sys.n_x, sys.n_y, sys.n_d
    H0 = np.block([[sys.A, sys.B_d],
                   [sys.C, np.zeros((n_y, n_d))]])
    H1 = np.block([[-np.eye(n_x), np.zeros((n_x, n_d))],
                   [np.zeros((n_y, n_x + n_d))]])
    L = np.block([[np.zeros((n_x, n_y)), sys.B],
                  [-np.eye(n_y), sys.D]])
    W = np.vstack([sys.B_w, sys.D_w])
    G = np.vstack([sys.B_f, sys.D_f])
    return DaeForm(H0=H0, H1=H1, L=L, W=W, G=G, n_x=n_x, n_y=n_y, n_d=n_d)


@dataclass(frozen=True)
class FilterForm:
    """Strictly proper rational filter F(q) = N(q)/a(q).

    ``a`` holds the low-order denominator coefficients a_0..a_{d_a} in
    ascending powers of q; the leading coefficient of q^{d_a+1} is fixed to 1
    and not stored.  ``N`` holds the numerator coefficient matrices
    N_0..N_{d_N}, each of shape (n_r, n_x + n_y).
    """

    a: np.ndarray
    N: tuple
    d_a: int = field(init=False)
    d_N: int = field(init=False)

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float).ravel()
        N = tuple(np.atleast_2d(np.asarray(Ni, dtype=float)) for Ni in self.N)
        if len(N) == 0:
            raise ValueError("numerator needs at least one coefficient matrix")
        shape = N[0].shape
        if any(Ni.shape != shape for Ni in N):
            raise ValueError("numerator coefficient matrices must share a shape")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "N", N)
        object.__setattr__(self, "d_a", len(a) - 1)
        object.__setattr__(self, "d_N", len(N) - 1)
        if self.d_a < self.d_N:
            raise ValueError(f"denominator degree d_a={self.d_a} must be >= d_N={self.d_N}")

    @property
    def n_r(self) -> int:
        return self.N[0].shape[0]

    @property
    def signal_width(self) -> int:
        return self.N[0].shape[1]

    @property
    def stacked(self) -> np.ndarray:
        """Horizontal concatenation [N_0 ... N_{d_N}]."""
        return np.hstack(self.N)

    @classmethod
    def from_stacked(cls, a, Nbar: np.ndarray, d_N: int) -> "FilterForm":
        Nbar = np.atleast_2d(np.asarray(Nbar, dtype=float))
        width = Nbar.shape[1] // (d_N + 1)
        if width * (d_N + 1) != Nbar.shape[1]:
            raise ValueError("stacked numerator width not divisible by d_N + 1")
        return cls(a=a, N=tuple(Nbar[:, i * width:(i + 1) * width] for i in range(d_N + 1)))

    def denominator(self) -> np.ndarray:
        """Full monic coefficient vector a_0..a_{d_a}, 1 (ascending)."""
        return np.concatenate([self.a, [1.0]])

    def poles(self) -> np.ndarray:
        return np.roots(self.denominator()[::-1])

    def is_stable(self, margin: float = 0.0) -> bool:
        return bool(np.all(np.abs(self.poles()) < 1.0 - margin))

    def to_json_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION,
                "a": self.a.tolist(),
                "N": [Ni.tolist() for Ni in self.N],
                "dims": {"n_r": self.n_r, "d_N": self.d_N, "d_a": self.d_a,
                         "signal_width": self.signal_width}}

    @classmethod
    def from_json_dict(cls, d: dict) -> "FilterForm":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {d.get('schema_version')}")
        return cls(a=np.asarray(d["a"], dtype=float),
                   N=tuple(np.asarray(Ni, dtype=float) for Ni in d["N"]))


@dataclass(frozen=True)
class StackedNullspace:
    """Block-Toeplitz coefficient matrix of the polynomial product N(q)H(q).

    ``matrix`` has d_N+1 block rows of height n_x+n_y and d_N+2 block columns
    of width n_x+n_d; H0 sits on the block diagonal and H1 on the block
    superdiagonal.  A stacked numerator row vector n satisfies n @ matrix = 0
    exactly when the corresponding polynomial product vanishes identically.
    """

    matrix: np.ndarray
    d_N: int
    block_rows: int
    block_cols: int


def stack_nullspace(dae: DaeForm, d_N: int) -> StackedNullspace:
    if d_N < 0:
        raise ValueError("d_N must be nonnegative")
    p, q = dae.block_rows, dae.block_cols
    Hbar = np.zeros(((d_N + 1) * p, (d_N + 2) * q))
    for i in range(d_N + 1):
        Hbar[i * p:(i + 1) * p, i * q:(i + 1) * q] = dae.H0
        Hbar[i * p:(i + 1) * p, (i + 1) * q:(i + 2) * q] = dae.H1
    return StackedNullspace(matrix=Hbar, d_N=d_N, block_rows=p, block_cols=q)


@dataclass(frozen=True)
class CanonicalRealization:
    """Observable-canonical realization of the filter channels.

    (A_r, B_fr, C_r) realizes -N(q) G / a(q) and (A_r, B_wr, C_r) realizes
    -N(q) W / a(q); both share the block companion A_r built from a(q).
    """

    A_r: np.ndarray
    B_wr: np.ndarray
    B_fr: np.ndarray
    C_r: np.ndarray

    @property
    def n_xr(self) -> int:
        return self.A_r.shape[0]


def companion_blocks(a_low: np.ndarray, n_r: int) -> tuple[np.ndarray, np.ndarray]:
    """Block-diagonal companion A_r (n_r identical blocks, last column
    -a_0..-a_{d_N}) and the matching output selector C_r."""
    a_low = np.asarray(a_low, dtype=float).ravel()
    m = len(a_low)
    Ab = np.zeros((m, m))
    if m > 1:
        Ab[1:, :-1] = np.eye(m - 1)
    Ab[:, -1] = -a_low
    A_r = sla.block_diag(*([Ab] * n_r))
    C_r = np.zeros((n_r, n_r * m))
    for j in range(n_r):
        C_r[j, (j + 1) * m - 1] = 1.0
    return A_r, C_r


def stack_channel(f: FilterForm, M: np.ndarray) -> np.ndarray:
    """Input matrix -[N_0 M; ...; N_{d_N} M] stacked per residual row."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    cols = []
    for j in range(f.n_r):
        cols.append(np.vstack([f.N[i][j:j + 1, :] @ M for i in range(f.d_N + 1)]))
    return -np.vstack(cols)


def realize_filter(f: FilterForm, dae: DaeForm) -> CanonicalRealization:
    """Observable-canonical realization of the noise and fault channels."""
    if f.d_a != f.d_N:
        raise ValueError(f"realization requires d_a == d_N, got {f.d_a} != {f.d_N}")
    if f.signal_width != dae.block_rows:
        raise ValueError("numerator width does not match the DAE block height")
    A_r, C_r = companion_blocks(f.a, f.n_r)
    return CanonicalRealization(A_r=A_r,
                                B_wr=stack_channel(f, dae.W),
                                B_fr=stack_channel(f, dae.G),
                                C_r=C_r)


def apply_filter(f: FilterForm, dae: DaeForm, y: np.ndarray,
                 u: np.ndarray | None = None) -> np.ndarray:
    """Run r = F(q) L [y; u] from zero initial filter state.

    ``y`` is (T, n_y) and ``u`` is (T, n_u); the returned residual is
    (T, n_r).  The filter denominator must be stable.
    """
    if f.d_a != f.d_N:
        raise ValueError("simulation requires d_a == d_N")
    if not f.is_stable():
        raise ValueError("unstable filter: denominator roots on or outside the unit circle")
    y = np.atleast_2d(np.asarray(y, dtype=float))
    n_u = dae.L.shape[1] - dae.n_y
    if u is None:
        u = np.zeros((y.shape[0], n_u))
    u = np.atleast_2d(np.asarray(u, dtype=float))
    if u.shape[0] != y.shape[0]:
        raise ValueError(f"length mismatch: y has {y.shape[0]} samples, u has {u.shape[0]}")
    if y.shape[1] != dae.n_y or u.shape[1] != n_u:
        raise ValueError("channel count mismatch with the DAE form")
    A_r, C_r = companion_blocks(f.a, f.n_r)
    # +N(q) L / a(q): sign opposite to the (-) disturbance-channel convention
    B_L = -stack_channel(f, dae.L)
    z = np.hstack([y, u])
    x = np.zeros(A_r.shape[0])
    r = np.empty((y.shape[0], f.n_r))
    for k in range(y.shape[0]):
        r[k] = C_r @ x
        x = A_r @ x + B_L @ z[k]
    return r


def discretize_zoh(sys: StateSpace, T_s: float) -> StateSpace:
    """Zero-order-hold discretization of a continuous-time plant.

    All state-input channels (B, B_d, B_w, B_f) are discretized jointly with
    the same matrix exponential; output-equation matrices are unchanged.
    """
    if T_s <= 0:
        raise ValueError("sample period must be positive")
    n_x = sys.n_x
    B_all = np.hstack([sys.B, sys.B_d, sys.B_w, sys.B_f])
    m = B_all.shape[1]
    blk = np.zeros((n_x + m, n_x + m))
    blk[:n_x, :n_x] = sys.A
    blk[:n_x, n_x:] = B_all
    E = sla.expm(blk * T_s)
    if not np.all(np.isfinite(E)):
        raise ValueError("matrix exponential overflowed; system matrices ill-conditioned")
    A_d = E[:n_x, :n_x]
    B_z = E[:n_x, n_x:]
    splits = np.cumsum([sys.n_u, sys.n_d, sys.n_w])
    B_u, B_dd, B_wd, B_fd = np.hsplit(B_z, splits)
    return StateSpace(A=A_d, B=B_u, B_d=B_dd, B_w=B_wd, B_f=B_fd,
                      C=sys.C, D=sys.D, D_w=sys.D_w, D_f=sys.D_f,
                      sample_period=T_s)


def ss_from_tf(num: Sequence[float], den: Sequence[float]) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Controllable-canonical SISO realization of num(s)/den(s).

    Coefficients ascend in powers of s; the transfer function must be
    strictly proper.  Returns (A, B, C, D) with D = 0.
    """
    num = np.asarray(num, dtype=float).ravel()
    den = np.asarray(den, dtype=float).ravel()
    if len(num) >= len(den):
        raise ValueError("transfer function must be strictly proper")
    den_monic = den / den[-1]
    num_scaled = num / den[-1]
    n = len(den) - 1
    A = np.zeros((n, n))
    if n > 1:
        A[:-1, 1:] = np.eye(n - 1)
    A[-1, :] = -den_monic[:-1]
    B = np.zeros((n, 1))
    B[-1, 0] = 1.0
    C = np.zeros((1, n))
    C[0, :len(num_scaled)] = num_scaled
    return A, B, C, np.zeros((1, 1))
