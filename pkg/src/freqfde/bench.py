"""Bundled case studies: a non-minimum-phase hydraulic turbine and a
three-area power network with tie-line, AGC, and sensor fault channels.

Both plants ship as constructors (exact parameter tables below) and as JSON
fixtures under ``freqfde/data`` so command-line runs can reference them by
name.  Fault scenarios are given as per-channel closures over the sample
index k together with the load-disturbance and noise laws used in the
simulation studies.
"""

from __future__ import annotations

import importlib.resources
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .sysmodel import StateSpace, discretize_zoh, ss_from_tf

SAMPLE_PERIOD = 0.1

# Three-area network constants (per-area tuples).
_W0 = 60.0
_H = (4.41, 4.15, 3.46)
_SB = (1500.0, 2100.0, 1700.0)
_S = (0.002, 0.0014, 0.0018)
_DL = (0.0064, 0.0045, 0.0056)
_ZETA = (500.0064, 700.0045, 566.6723)
_GENS = (2, 3, 2)
_RHO = ((0.5, 0.5), (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0), (0.5, 0.5))
_K_I = 0.65
_P_T = 2100.0   # identical on every line
_T_CH = 1.4950


def turbine_model(sample_period: float = SAMPLE_PERIOD) -> StateSpace:
    """Hydraulic turbine y = (-0.183 s + 1.4) / (0.2136 s^3 + 2.445 s^2 +
    5.911 s + 0.45) * (u + f), sampled with a zero-order hold.

    The continuous zero at +1.4/0.183 makes the plant non-minimum phase, so
    no causal stable filter can invert the fault channel exactly.  There is
    no disturbance or noise channel.
    """
    num = [1.4, -0.183]
    den = [0.45, 5.911, 2.445, 0.2136]
    A, B, C, _ = ss_from_tf(num, den)
    n = A.shape[0]
    ct = StateSpace(A=A, B=B, B_d=np.zeros((n, 0)), B_w=np.zeros((n, 0)),
                    B_f=B, C=C, D=np.zeros((1, 1)), D_w=np.zeros((1, 0)),
                    D_f=np.zeros((1, 1)))
    return discretize_zoh(ct, sample_period)


def _area_sizes() -> list[int]:
    return [2 + g + 1 for g in _GENS]


def _state_index(area: int, name: str, g: int = 0) -> int:
    """Index into the stacked state [tie, w, pm_1..pm_G, agc] per area."""
    off = sum(_area_sizes()[:area])
    return {"tie": off, "w": off + 1, "pm": off + 2 + g,
            "agc": off + 2 + _GENS[area]}[name]


def power_system_model(sample_period: float = SAMPLE_PERIOD) -> StateSpace:
    """Three-area AGC network (16 states, areas of size 5/6/5).

    Per-area state order [tie-line flow, frequency, generator powers, AGC];
    all 16 states measured (C = I).  Fault channels: tie-line 1-2 offset,
    AGC-2 offset, additive fault on the frequency-1 sensor.  Loads enter as
    per-area disturbances; measurement noise is a single scalar stream hitting
    every output (B_w = 0, D_w = column of ones).
    """
    sizes = _area_sizes()
    n = sum(sizes)
    A = np.zeros((n, n))
    for i in range(3):
        ks = _W0 / (2.0 * _H[i] * _SB[i])
        tie, w, agc = (_state_index(i, nm) for nm in ("tie", "w", "agc"))
        for j in range(3):
            if j == i:
                continue
            A[tie, w] += 2.0 * math.pi * _P_T
            A[tie, _state_index(j, "w")] -= 2.0 * math.pi * _P_T
        A[w, tie] = -ks
        A[w, w] = -ks / _DL[i]
        for g in range(_GENS[i]):
            pm = _state_index(i, "pm", g)
            A[w, pm] = ks
            A[pm, pm] = -1.0 / _T_CH
            A[pm, w] = -1.0 / (_T_CH * _S[i])
            A[pm, agc] = _RHO[i][g] / _T_CH
        A[agc, w] = -_K_I * _ZETA[i]
        A[agc, tie] = -_K_I

    B_d = np.zeros((n, 3))
    for i in range(3):
        B_d[_state_index(i, "w"), i] = -_W0 / (2.0 * _H[i] * _SB[i])

    B_f = np.zeros((n, 3))
    B_f[_state_index(0, "tie"), 0] = 2.0 * math.pi * _P_T
    B_f[_state_index(1, "agc"), 1] = -_K_I
    D_f = np.zeros((n, 3))
    D_f[_state_index(0, "w"), 2] = 1.0

    ct = StateSpace(A=A, B=np.zeros((n, 0)), B_d=B_d, B_w=np.zeros((n, 1)),
                    B_f=B_f, C=np.eye(n), D=np.zeros((n, 0)),
                    D_w=np.ones((n, 1)), D_f=D_f)
    return discretize_zoh(ct, sample_period)


FaultChannel = Callable[[int], float]


@dataclass(frozen=True)
class Scenario:
    """A simulation case: plant, per-channel fault closures over the sample
    index, disturbance law, noise level, and timing."""

    name: str
    plant: StateSpace
    faults: tuple
    bands: tuple                       # declared spectral support of the faults
    noise_std: float
    horizon: int
    onset: int
    load_jitter: float = 0.0           # loads are 1 + uniform(-jitter, jitter)

    def fault_signal(self, steps: Optional[int] = None) -> np.ndarray:
        steps = self.horizon if steps is None else steps
        out = np.zeros((steps, len(self.faults)))
        for k in range(steps):
            for c, fn in enumerate(self.faults):
                out[k, c] = fn(k)
        return out

    def disturbance(self, rng: np.random.Generator, steps: int) -> np.ndarray:
        n_d = self.plant.n_d
        if n_d == 0:
            return np.zeros((steps, 0))
        return 1.0 + rng.uniform(-self.load_jitter, self.load_jitter,
                                 size=(steps, n_d))


def _zero(_k: int) -> float:
    return 0.0


def _after(onset: int, fn: FaultChannel) -> FaultChannel:
    def wrapped(k: int) -> float:
        return fn(k) if k >= onset else 0.0
    return wrapped


def _sensor_ramp(k: int) -> float:
    # Drift that saturates: ramps from the onset, then holds with a wobble.
    if k <= 50:
        return 0.0
    if k <= 80:
        return 0.005 * (k - 50)
    return 0.15 + 0.02 * math.sin(0.15 * k)


def fault_scenarios() -> dict:
    """The bundled fault cases, keyed by name.

    * ``turbine``: additive actuator fault on the turbine, slow sines.
    * ``power-process``: tie-line 1-2 and AGC-2 faults, both low band.
    * ``power-sensor``: ramp-then-hold drift on the frequency-1 sensor.
    * ``power-estimation``: tie-line fault moved to the high band
      [0.6, 0.9] while AGC and sensor faults stay in [0, 0.3].
    """
    turbine = turbine_model()
    power = power_system_model()
    onset = 50

    def tie_low(k):
        return 0.05 * math.sin(0.2 * k) + 0.06 * math.sin(0.3 * k)

    def agc(k):
        return 0.08 * math.sin(0.15 * k) + 0.03 * math.sin(0.25 * k)

    def tie_high(k):
        return 0.05 * math.sin(0.8 * k) + 0.06 * math.sin(0.65 * k)

    def turbine_fault(k):
        return 0.05 * math.sin(0.1 * k) + 0.06 * math.sin(0.15 * k)

    return {
        "turbine": Scenario(
            name="turbine", plant=turbine,
            faults=(_after(onset, turbine_fault),),
            bands=((0.0, 0.2),), noise_std=0.0, horizon=200, onset=onset),
        "power-process": Scenario(
            name="power-process", plant=power,
            faults=(_after(onset, tie_low), _after(onset, agc), _zero),
            bands=((0.0, 0.3),), noise_std=0.1, horizon=200, onset=onset,
            load_jitter=0.1),
        "power-sensor": Scenario(
            name="power-sensor", plant=power,
            faults=(_zero, _zero, _sensor_ramp),
            bands=((0.0, 0.3),), noise_std=0.1, horizon=200, onset=onset,
            load_jitter=0.1),
        "power-estimation": Scenario(
            name="power-estimation", plant=power,
            faults=(_after(onset, tie_high), _after(onset, agc), _sensor_ramp),
            bands=((0.0, 0.3), (0.6, 0.9)), noise_std=0.1, horizon=200,
            onset=onset, load_jitter=0.1),
    }


_FIXTURES = {"turbine": turbine_model, "power3": power_system_model}


def write_fixtures(outdir) -> list:
    """Regenerate the JSON plant fixtures; returns the written paths."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, ctor in _FIXTURES.items():
        path = outdir / f"{name}.json"
        ctor().save(path)
        paths.append(path)
    return paths


def load_plant(name_or_path) -> StateSpace:
    """Load a plant by fixture name ("turbine", "power3") or JSON path."""
    name = str(name_or_path)
    if name in _FIXTURES:
        ref = importlib.resources.files("freqfde").joinpath(f"data/{name}.json")
        with importlib.resources.as_file(ref) as path:
            if path.exists():
                return StateSpace.load(path)
        return _FIXTURES[name]()
    return StateSpace.load(name_or_path)
