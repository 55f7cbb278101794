"""Semidefinite building blocks for the synthesis programs.

Two inequality families recur throughout the package: the H2 performance
blocks (noise energy of the residual) and finite-frequency blocks that bound
singular values of a channel over an arc of the unit circle via Hermitian
multipliers (P, Q) and a free auxiliary matrix V; the auxiliary matrix is the
projection-to-multiplier trade that keeps the inequality affine in either
the filter data or the multipliers, never both.

Complex-valued blocks are mapped to real symmetric ones with the standard
doubling embedding before they reach a solver.  The :class:`ConicProgram`
wrapper pins solver tolerances, adds a fallback chain, and records the worst
constraint violation so callers can audit what the solver returned.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np

#: default strictness margin separating "feasible" from "numerically zero"
THETA_MARGIN = 1e-6

_SOLVE_TOL = 1e-8
_MAX_ITERS = 100_000


def _is_variable_expr(x) -> bool:
    return isinstance(x, cp.expressions.expression.Expression) and len(x.variables()) > 0


def _ct(X):
    """Conjugate transpose for arrays and cvxpy expressions alike."""
    if isinstance(X, np.ndarray):
        return X.conj().T
    return cp.conj(X).T


def embed_hermitian(M):
    """Real symmetric embedding [[Re M, -Im M], [Im M, Re M]] of a Hermitian
    expression or array.  PSD-ness is preserved and every eigenvalue of M
    appears twice in the embedding.
    """
    if isinstance(M, np.ndarray):
        if np.linalg.norm(M - M.conj().T) > 1e-12 * max(1.0, np.linalg.norm(M)):
            raise ValueError("embedding requires a Hermitian matrix")
        return np.block([[M.real, -M.imag], [M.imag, M.real]])
    R, I = cp.real(M), cp.imag(M)
    return cp.bmat([[R, -I], [I, R]])


def check_hermitian_expr(M, seed: int = 0, tol: float = 1e-12) -> bool:
    """Spot-check Hermitian structure of an affine expression by evaluating
    it at random variable values."""
    rng = np.random.default_rng(seed)
    saved = {}
    try:
        for v in M.variables():
            saved[v] = v.value
            val = rng.standard_normal(v.shape) if v.shape else rng.standard_normal()
            if v.attributes.get("hermitian"):
                val = val + 1j * rng.standard_normal(v.shape)
                val = 0.5 * (val + val.conj().T)
            elif v.attributes.get("symmetric") or v.attributes.get("PSD"):
                val = 0.5 * (val + val.T)
            elif v.attributes.get("nonneg"):
                val = np.abs(val)
            v.value = val
        sample = M.value
        return np.linalg.norm(sample - sample.conj().T) <= tol * max(1.0, np.linalg.norm(sample))
    finally:
        for v, val in saved.items():
            v.value = val


def h2_block(A_r, B_wr, C_r, P1, Q1, eta1, margin: float = THETA_MARGIN):
    """Constraints bounding the squared H2 norm of (A_r, B_wr, C_r) by eta1.

    Emits
        [[P1, A_r P1, B_wr], [*, P1, 0], [*, *, I]] >= margin * I
        [[Q1, C_r P1], [*, P1]]                     >= margin * I
        trace(Q1) <= eta1 - margin
    and degrades to the pure stability form when the noise channel is absent.
    Exactly one of {A_r/B_wr} and {P1} may contain decision variables.
    """
    if _is_variable_expr(A_r) and _is_variable_expr(P1):
        raise ValueError("bilinear block; fix either the realization or P1")
    n = P1.shape[0]
    n_w = B_wr.shape[1]
    AP = A_r @ P1
    if n_w:
        top = cp.bmat([[P1, AP, B_wr],
                       [AP.T, P1, np.zeros((n, n_w))],
                       [B_wr.T, np.zeros((n_w, n)), np.eye(n_w)]])
        first = top >> margin * np.eye(2 * n + n_w)
    else:
        first = cp.bmat([[P1, AP], [AP.T, P1]]) >> margin * np.eye(2 * n)
    cons = [first]
    if _is_variable_expr(P1) or _is_variable_expr(Q1):
        cons.append(cp.bmat([[Q1, C_r @ P1], [(C_r @ P1).T, P1]])
                    >> margin * np.eye(n + C_r.shape[0]))
        cons.append(cp.trace(Q1) <= eta1 - margin)
    else:
        # multipliers frozen: the output block is a constant tautology and
        # trace(Q1) just floors the (still free) energy level
        cons.append(float(np.trace(Q1)) <= eta1 - margin)
    return cons


def gkyp_block(A_r, B, C_r, band_center: float, band_half_width: float,
               P2, Q2, V, gain, mode: str, margin: float = THETA_MARGIN,
               include_q2_floor: bool = True):
    """Finite-frequency singular-value block over the arc
    |theta - band_center| <= band_half_width.

    mode="sensitivity" certifies sigma_min(T(e^{j theta}))^2 >= gain for the
    strictly proper channel T = C_r (qI - A_r)^{-1} B; mode="estimation"
    certifies sigma_max(T - I)^2 <= gain for the same channel with feed-
    through -I (the channel-minus-identity error system).

    Exactly one of {A_r/B} and {P2, Q2, V} may hold decision variables; the
    returned constraints are real (already embedded).
    """
    if (_is_variable_expr(A_r) or _is_variable_expr(B)) and \
            (_is_variable_expr(V) or _is_variable_expr(P2) or _is_variable_expr(Q2)):
        raise ValueError("bilinear block; fix either the filter or the multiplier set")
    n = P2.shape[0]
    m = B.shape[1]
    n_r = C_r.shape[0]
    if mode not in ("sensitivity", "estimation"):
        raise ValueError(f"unknown mode {mode!r}")
    delta = np.exp(1j * band_center)
    cos_w = np.cos(band_half_width)
    CtC = C_r.T @ C_r
    if mode == "sensitivity":
        # quadratic weight diag(-I, gain I), zero feedthrough
        Xi = P2 - 2 * cos_w * Q2 - CtC
        cross = np.zeros((n, m))
        corner = gain * np.eye(m) if np.isscalar(gain) or isinstance(gain, np.ndarray) \
            else cp.multiply(gain, np.eye(m))
    else:
        if m != n_r:
            raise ValueError("estimation block needs a square channel")
        Xi = P2 - 2 * cos_w * Q2 + CtC
        cross = -C_r.T
        corner = (1.0 - gain) * np.eye(m) if np.isscalar(gain) \
            else np.eye(m) - cp.multiply(gain, np.eye(m))
    Mblk = cp.bmat([
        [-P2, delta * Q2, np.zeros((n, m))],
        [np.conj(delta) * _ct(Q2), Xi, cross],
        [np.zeros((m, n)), cross.T, corner],
    ])
    if _is_variable_expr(A_r) or _is_variable_expr(B):
        Y = cp.vstack([-np.eye(n), A_r.T, B.T])
    else:
        Y = np.vstack([-np.eye(n), np.asarray(A_r).T, np.asarray(B).T])
    YV = Y @ V
    Mtot = Mblk + YV + _ct(YV)
    cons = [embed_hermitian(-Mtot - margin * np.eye(2 * n + m)) >> 0]
    if include_q2_floor:
        cons.append(embed_hermitian(Q2 - margin * np.eye(n)) >> 0)
    return cons


@dataclass
class SolverResult:
    status: str                      # optimal | infeasible | numerical-failure | max-iter
    objective: float | None
    values: dict
    max_violation: float | None = None
    backend: str | None = None
    accurate: bool = True


@dataclass
class ConicProgram:
    """Thin, auditable wrapper over a cvxpy problem.

    Collects named variables, PSD/affine constraints and a linear objective;
    `solve` runs a fixed backend chain and reports the worst residual of the
    PSD constraints at the returned point.  A candidate point can be checked
    without any solver via ``backend="check"``.
    """

    margin: float = THETA_MARGIN
    constraints: list = field(default_factory=list)
    variables: dict = field(default_factory=dict)
    _objective: object = None

    def add_variable(self, name: str, var) -> "cp.Variable":
        if name in self.variables:
            raise ValueError(f"duplicate variable {name!r}")
        self.variables[name] = var
        return var

    def add_constraints(self, cons) -> None:
        self.constraints.extend(cons)

    def set_objective(self, expr) -> None:
        self._objective = cp.Minimize(expr)

    def _problem(self) -> cp.Problem:
        objective = self._objective if self._objective is not None else cp.Minimize(0)
        return cp.Problem(objective, self.constraints)

    def max_violation(self) -> float:
        worst = 0.0
        for con in self.constraints:
            try:
                v = con.violation()
            except Exception:
                continue
            worst = max(worst, float(np.max(v)) if np.ndim(v) else float(v))
        return worst

    def solve(self, backend: str = "auto", candidate: dict | None = None,
              accept_inaccurate: bool = False) -> SolverResult:
        if backend == "check":
            if candidate is None:
                raise ValueError("check backend needs a candidate point")
            for name, value in candidate.items():
                self.variables[name].value = value
            worst = self.max_violation()
            status = "optimal" if worst <= _SOLVE_TOL * 10 else "infeasible"
            obj = self._objective.args[0].value if self._objective is not None else 0.0
            return SolverResult(status=status, objective=None if obj is None else float(obj),
                                values={k: v.value for k, v in self.variables.items()},
                                max_violation=worst, backend="check")
        prob = self._problem()
        chain = [("CLARABEL", {})]
        if backend == "auto":
            chain.append(("SCS", {"eps": _SOLVE_TOL, "max_iters": _MAX_ITERS}))
        elif backend != "CLARABEL":
            chain = [(backend, {})]
        last_exc = None
        for name, opts in chain:
            try:
                prob.solve(solver=name, **opts)
            except (cp.error.SolverError, Exception) as exc:  # solver blowups -> next backend
                last_exc = exc
                continue
            if prob.status == "optimal" or \
                    (accept_inaccurate and prob.status == "optimal_inaccurate"):
                return SolverResult(
                    status="optimal",
                    objective=float(prob.value),
                    values={k: v.value for k, v in self.variables.items()},
                    max_violation=self.max_violation(),
                    backend=name,
                    accurate=prob.status == "optimal")
            if prob.status in ("infeasible", "infeasible_inaccurate"):
                return SolverResult(status="infeasible", objective=None, values={},
                                    backend=name)
        if last_exc is not None:
            return SolverResult(status="numerical-failure", objective=None, values={},
                                backend=chain[-1][0])
        return SolverResult(status="max-iter" if prob.status == "user_limit"
                            else "numerical-failure",
                            objective=None, values={}, backend=chain[-1][0])

    def to_sdpa_text(self) -> str:
        """Sparse plain-text dump of the conic data (cost vector, constraint
        triplets, cone sizes) as handed to the low-level solver; intended for
        cross-checking with external tools."""
        data, _, _ = self._problem().get_problem_data(cp.SCS)
        A = data["A"].tocoo()
        lines = [f"* vars {data['c'].shape[0]} rows {A.shape[0]}",
                 "c " + " ".join(repr(x) for x in np.asarray(data["c"]).ravel())]
        dims = data["dims"]
        lines.append(f"cones zero={dims.zero} nonneg={dims.nonneg} psd={list(dims.psd)}")
        lines.append("b " + " ".join(repr(x) for x in np.asarray(data["b"]).ravel()))
        for r, c_, v in zip(A.row, A.col, A.data):
            lines.append(f"A {r} {c_} {v!r}")
        return "\n".join(lines) + "\n"
