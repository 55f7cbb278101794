"""Shared test oracles."""
from __future__ import annotations

import cvxpy as cp
import numpy as np

from freqfde.freqan import phi_matrix, psi_samples
from freqfde.sysmodel import stack_nullspace, to_dae


def oracle_objective(sys, spec) -> float:
    """Independent convex solve of the smoothed estimation program:
    min beta tr(N Phi N^T) + (1-beta)/kappa sum_i ||augmented error_i||_F^2
    subject to exact decoupling."""
    dae = to_dae(sys)
    stacked = stack_nullspace(dae, spec.d_N)
    Hbar = stacked.matrix
    a_low = spec.denominator_low()
    samples = psi_samples(a_low, dae.G, spec.d_N, spec.sample_thetas())
    n_r = dae.G.shape[1]
    N = cp.Variable((n_r, Hbar.shape[0]))
    terms = []
    for R, I in samples:
        terms.append(2.0 * (cp.sum_squares(N @ R - np.eye(n_r))
                            + cp.sum_squares(N @ I)))
    obj = (1.0 - spec.beta) * cp.sum(terms) / len(samples)
    if spec.beta > 0.0:
        Phi = phi_matrix(a_low, dae.W, spec.d_N)
        vals, vecs = np.linalg.eigh(Phi)
        factor = vecs @ np.diag(np.sqrt(np.clip(vals, 0.0, None)))
        obj = obj + spec.beta * cp.sum_squares(N @ factor)
    prob = cp.Problem(cp.Minimize(obj), [N @ Hbar == 0])
    prob.solve(solver="CLARABEL")
    assert prob.status == "optimal"
    return float(prob.value)
