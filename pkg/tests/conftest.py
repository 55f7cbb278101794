"""Shared fixtures.

The two expensive synthesis runs (power-system detection design, turbine
estimation gap) are computed once per session and reused by the unit tests
and the acceptance checks, together with their wall-clock times so the
runtime budgets can be asserted where they matter.
"""
from __future__ import annotations

import time

import pytest

from freqfde import (
    DetectionSpec,
    EstimationSpec,
    power_system_model,
    suboptimality_gap,
    synthesize_detection,
    turbine_model,
)


@pytest.fixture(scope="session")
def turbine():
    return turbine_model()


@pytest.fixture(scope="session")
def power():
    return power_system_model()


@pytest.fixture(scope="session")
def power_detection(power):
    """Mixed detection design on the three-area AGC bench: n_r=3, d_N=2,
    alpha=0.5, band [0, 0.3].  Returns (design, spec, elapsed seconds)."""
    spec = DetectionSpec(band=(0.0, 0.3), n_r=3, d_N=2, alpha=0.5)
    t0 = time.perf_counter()
    design = synthesize_detection(power_system_model(), spec)
    return design, spec, time.perf_counter() - t0


@pytest.fixture(scope="session")
def turbine_gap():
    """Suboptimality bracket on the turbine: a(q) = (q - 0.1)^5, six midpoint
    samples on [0, 0.2], beta = 0.  Returns (gap, spec, elapsed seconds)."""
    spec = EstimationSpec(band=(0.0, 0.2), d_N=4, beta=0.0, pole=0.1,
                          n_samples=6)
    t0 = time.perf_counter()
    gap = suboptimality_gap(turbine_model(), spec)
    return gap, spec, time.perf_counter() - t0
