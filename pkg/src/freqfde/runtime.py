"""Online residual evaluation, certified thresholds, and Monte-Carlo checks.

The detection rule averages residual norms over a sliding window and alarms
above a fixed threshold.  Under i.i.d. zero-mean sub-Gaussian noise with
parameter lambda, a filter with certified squared-H2 level eta1 produces
residual components that are sub-Gaussian with parameter lambda*sqrt(eta1);
a union bound over the window and components then gives a threshold with a
guaranteed false-alarm rate that scales with sqrt(log(1/eps1)) — compare the
Chebyshev route, which scales with sqrt(1/eps1).  When the fault magnitude
clears the detectability floor, the same concentration argument yields a
guaranteed detection rate.

Monte-Carlo verification here simulates the full loop (plant driven by
noise/disturbance/fault, filter run on measured outputs), not the residual
model, so the decoupling claim is exercised along the way.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .sysmodel import (FilterForm, StateSpace, companion_blocks, stack_channel,
                       to_dae)

_WILSON_Z = 1.959963984540054  # two-sided 95%


@dataclass(frozen=True)
class ThresholdSpec:
    """Inputs of the thresholding certificates.

    ``lam`` is the sub-Gaussian parameter of the noise (for zero-mean
    Gaussian with variance sigma^2 this is sigma); ``eta1``/``eta2`` are the
    certified noise and sensitivity levels of the deployed filter; ``f_floor``
    is the smallest per-sample fault norm the FDR statement covers.
    """

    lam: float
    eps1: float
    T: int
    n_r: int
    eta1: float
    eta2: float | None = None
    f_floor: float | None = None

    def __post_init__(self):
        if not (0.0 < self.eps1 <= 1.0):
            raise ValueError("eps1 must lie in (0, 1]")
        if self.T < 1:
            raise ValueError("window length must be at least 1")
        if self.lam < 0.0:
            raise ValueError("sub-Gaussian parameter must be nonnegative")
        if self.n_r < 1:
            raise ValueError("residual dimension must be at least 1")
        if self.eta1 < 0.0:
            raise ValueError("eta1 must be nonnegative")
        if self.eta2 is not None and self.eta2 <= 0.0:
            raise ValueError("eta2 must be positive when supplied")


def threshold(spec: ThresholdSpec) -> float:
    """Concentration threshold: lam * sqrt(2 n_r eta1 ln(2 T n_r / eps1))."""
    return spec.lam * math.sqrt(
        2.0 * spec.n_r * spec.eta1 * math.log(2.0 * spec.T * spec.n_r / spec.eps1))


def chebyshev_threshold(spec: ThresholdSpec) -> float:
    """Second-moment (Chebyshev) threshold lam * sqrt(T n_r eta1 / eps1) kept
    for comparison; always at least as large as :func:`threshold` for any
    eps1 small enough to matter."""
    return spec.lam * math.sqrt(spec.T * spec.n_r * spec.eta1 / spec.eps1)


def detectability_floor(spec: ThresholdSpec) -> float:
    """Smallest fault magnitude the FDR guarantee can cover:
    J_th * sqrt(n_r / eta2)."""
    if spec.eta2 is None:
        raise ValueError("eta2 is required for the detectability floor")
    return threshold(spec) * math.sqrt(spec.n_r / spec.eta2)


def fdr_bound(spec: ThresholdSpec) -> float:
    """Guaranteed detection rate for faults with ||f(k)||_2 >= f_floor:

        max{0, 1 - 2 T n_r exp(-(f_floor sqrt(eta2/n_r) - J_th)^2
                                / (2 eta1 lam^2))}

    Requires the floor to clear the detectability limit.
    """
    if spec.eta2 is None or spec.f_floor is None:
        raise ValueError("fdr_bound needs eta2 and f_floor")
    limit = detectability_floor(spec)
    if spec.f_floor <= limit:
        raise ValueError(
            f"fault floor below detectability: f_floor={spec.f_floor:.6g} "
            f"<= J_th*sqrt(n_r/eta2)={limit:.6g}")
    gap = spec.f_floor * math.sqrt(spec.eta2 / spec.n_r) - threshold(spec)
    expo = -gap * gap / (2.0 * spec.eta1 * spec.lam ** 2)
    return max(0.0, 1.0 - 2.0 * spec.T * spec.n_r * math.exp(expo))


@dataclass(frozen=True)
class ResidualTrace:
    """Residual sequence with sliding-window statistics (stride 1).

    ``J[i]`` averages ||r(k)||_2 over k = i .. i+T-1; windows extending past
    the end of the trace are not formed.
    """

    residuals: np.ndarray
    T: int
    threshold: float
    J: np.ndarray
    alarms: np.ndarray

    def to_csv(self, path) -> None:
        n = self.residuals.shape[0]
        with open(path, "w") as fh:
            cols = ",".join(f"r{i}" for i in range(self.residuals.shape[1]))
            fh.write(f"k,{cols},J,alarm\n")
            for k in range(n):
                r = ",".join(repr(float(x)) for x in self.residuals[k])
                if k < self.J.shape[0]:
                    fh.write(f"{k},{r},{float(self.J[k])!r},{int(self.alarms[k])}\n")
                else:
                    fh.write(f"{k},{r},,\n")


def evaluate_windows(residuals: np.ndarray, T: int, J_th: float) -> ResidualTrace:
    """Sliding-window average 2-norm statistic and alarm flags."""
    residuals = np.atleast_2d(np.asarray(residuals, dtype=float))
    if T < 1 or residuals.shape[0] < T:
        raise ValueError("window does not fit in the trace")
    norms = np.linalg.norm(residuals, axis=1)
    kernel = np.ones(T) / T
    J = np.convolve(norms, kernel, mode="valid")
    return ResidualTrace(residuals=residuals, T=T, threshold=J_th,
                         J=J, alarms=J > J_th)


def sub_gaussian_noise(kind: str, lam: float, length: int, dims: int,
                       seed=0) -> np.ndarray:
    """Zero-mean i.i.d. samples with sub-Gaussian parameter <= lam.

    kinds: "gaussian" (std lam, parameter exactly lam), "rademacher"
    (+-lam), "uniform" (support [-lam, lam]; a bounded zero-mean variable on
    [-b, b] has parameter <= b).  ``seed`` may be an integer or a
    numpy Generator.
    """
    if lam < 0.0:
        raise ValueError("sub-Gaussian parameter must be nonnegative")
    rng = seed if isinstance(seed, np.random.Generator) \
        else np.random.Generator(np.random.Philox(key=[np.uint64(seed), np.uint64(0)]))
    shape = (length, dims)
    if lam == 0.0:
        return np.zeros(shape)
    if kind == "gaussian":
        return lam * rng.standard_normal(shape)
    if kind == "rademacher":
        return lam * (2.0 * rng.integers(0, 2, size=shape) - 1.0)
    if kind == "uniform":
        return rng.uniform(-lam, lam, size=shape)
    raise ValueError(f"unknown noise kind {kind!r}")


def _wilson(successes: int, n: int, z: float = _WILSON_Z) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    p = successes / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, center - half), min(1.0, center + half)


def burn_in_length(filt: FilterForm, cap: int = 10_000) -> int:
    """ceil(5 / (1 - rho)) samples with rho the largest filter pole radius:
    five contraction time-constants for the initial-condition term."""
    rho = float(np.max(np.abs(filt.poles()))) if filt.d_a >= 0 else 0.0
    if rho >= 1.0:
        raise ValueError("burn-in undefined for an unstable filter")
    return min(cap, math.ceil(5.0 / (1.0 - rho)))


@dataclass(frozen=True)
class MonteCarloReport:
    """Empirical alarm rates over independent simulated windows."""

    trials: int
    T: int
    threshold: float
    burn_in: int
    seed: int
    far_alarms: int
    far_rate: float
    far_interval: tuple
    det_alarms: int | None = None
    det_rate: float | None = None
    det_interval: tuple | None = None

    def to_json_dict(self) -> dict:
        d = {"trials": self.trials, "window": self.T,
             "threshold": self.threshold, "burn_in": self.burn_in,
             "seed": self.seed,
             "far": {"alarms": self.far_alarms, "rate": self.far_rate,
                     "wilson95": list(self.far_interval)}}
        if self.det_rate is not None:
            d["detection"] = {"alarms": self.det_alarms, "rate": self.det_rate,
                              "wilson95": list(self.det_interval)}
        return d


def _simulate_batch(sys: StateSpace, filt: FilterForm, noise: np.ndarray,
                    fault: np.ndarray | None,
                    disturbance: np.ndarray | None) -> np.ndarray:
    """Run plant + filter for a batch of trials; returns residuals of shape
    (trials, steps, n_r).  Inputs are (trials, steps, dim) arrays."""
    dae = to_dae(sys)
    A_r, C_r = companion_blocks(filt.a, filt.n_r)
    B_L = -stack_channel(filt, dae.L)
    B_Ly = B_L[:, :sys.n_y]

    trials, steps, _ = noise.shape
    X = np.zeros((trials, sys.n_x))
    XF = np.zeros((trials, A_r.shape[0]))
    R = np.empty((trials, steps, filt.n_r))
    for k in range(steps):
        w = noise[:, k, :]
        Y = X @ sys.C.T + w @ sys.D_w.T
        if fault is not None:
            Y = Y + fault[k][None, :] @ sys.D_f.T
        R[:, k, :] = XF @ C_r.T
        XF = XF @ A_r.T + Y @ B_Ly.T
        Xn = X @ sys.A.T + w @ sys.B_w.T
        if disturbance is not None:
            Xn = Xn + disturbance[:, k, :] @ sys.B_d.T
        if fault is not None:
            Xn = Xn + fault[k][None, :] @ sys.B_f.T
        X = Xn
    return R


def _window_rates(R: np.ndarray, burn_in: int, T: int, J_th: float) -> int:
    norms = np.linalg.norm(R[:, burn_in:burn_in + T, :], axis=2)
    J = norms.mean(axis=1)
    return int(np.sum(J > J_th))


def monte_carlo_rates(sys: StateSpace, filt: FilterForm, spec: ThresholdSpec,
                      fault: np.ndarray | None = None,
                      disturbance=None,
                      trials: int = 10_000, noise_kind: str = "gaussian",
                      seed: int = 0, burn_in: int | None = None,
                      batch: int = 2_000) -> MonteCarloReport:
    """Empirical FAR (always) and detection rate (when a fault signal is
    given) over independent windows.

    Each trial draws its noise from a counter-based stream keyed by
    (seed, trial index), simulates the full plant + filter loop for
    burn_in + T steps, and forms one window statistic after the burn-in.
    ``fault`` is a (burn_in + T, n_f) array applied identically in every
    detection trial; ``disturbance`` is an optional callable
    (rng, steps) -> (steps, n_d) drawn per trial.  Rates come with two-sided
    95% Wilson intervals.
    """
    if burn_in is None:
        burn_in = burn_in_length(filt)
    steps = burn_in + spec.T
    J_th = threshold(spec)
    if fault is not None:
        fault = np.atleast_2d(np.asarray(fault, dtype=float))
        if fault.shape != (steps, sys.n_f):
            raise ValueError(f"fault array must be ({steps}, {sys.n_f})")

    counts = {"far": 0, "det": 0}
    runs = [("far", None)] + ([("det", fault)] if fault is not None else [])
    for label, f_arr in runs:
        stream = 0 if label == "far" else 1
        done = 0
        while done < trials:
            m = min(batch, trials - done)
            noise = np.empty((m, steps, sys.n_w))
            dist = np.empty((m, steps, sys.n_d)) if disturbance is not None else None
            for i in range(m):
                rng = np.random.Generator(np.random.Philox(
                    key=[np.uint64(seed), np.uint64((done + i) * 2 + stream)]))
                noise[i] = sub_gaussian_noise(noise_kind, spec.lam, steps,
                                              sys.n_w, seed=rng)
                if disturbance is not None:
                    dist[i] = disturbance(rng, steps)
            R = _simulate_batch(sys, filt, noise, f_arr, dist)
            counts[label] += _window_rates(R, burn_in, spec.T, J_th)
            done += m

    far_rate = counts["far"] / trials
    report = dict(trials=trials, T=spec.T, threshold=J_th, burn_in=burn_in,
                  seed=seed, far_alarms=counts["far"], far_rate=far_rate,
                  far_interval=_wilson(counts["far"], trials))
    if fault is not None:
        report.update(det_alarms=counts["det"],
                      det_rate=counts["det"] / trials,
                      det_interval=_wilson(counts["det"], trials))
    return MonteCarloReport(**report)
