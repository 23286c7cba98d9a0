"""Built-in benchmark plant and controller presets.

A two-state oscillatory plant with a wide parameter box, used by the
reproduction subcommands and the acceptance tests.  The preset values are
fixed; deviating requires explicit flags or a custom scenario file.
"""

from __future__ import annotations

import math

import numpy as np

from l1adapt.controllers import L1Config, PlantModel, ThetaTrajectory, build_l1
from l1adapt.sim import ReferenceSignal, SimScenario, default_dt

BENCH_A = ((0.0, 1.0), (-1.0, -1.4))
BENCH_B = (0.0, 1.0)
BENCH_C = (1.0, 0.0)
BENCH_BOX = ((-10.0, 10.0), (-10.0, 10.0))
BENCH_THETA = (4.0, -4.5)


def benchmark_theta_timevarying() -> ThetaTrajectory:
    """θ(t) = [2 + 2cos(0.5t), 2 + 0.3cos(0.5t) + 0.2cos(t/π)]."""
    return ThetaTrajectory(
        (2.0, 2.0),
        harmonics=[[(2.0, 0.5)], [(0.3, 0.5), (0.2, 1.0 / math.pi)]])


def benchmark_plant(time_varying: bool = False) -> PlantModel:
    traj = (benchmark_theta_timevarying() if time_varying
            else ThetaTrajectory(BENCH_THETA))
    return PlantModel(np.array(BENCH_A), np.array(BENCH_B), np.array(BENCH_C),
                      np.array(BENCH_BOX), traj)


def benchmark_config_first(plant: PlantModel,
                           gamma_c: float = 10000.0) -> L1Config:
    """First-order filter C(s) = 160/(s+160), K = 0, Q = I."""
    return build_l1(plant, np.zeros(2), ("first_order", 160.0), gamma_c,
                    np.eye(2))


def benchmark_config_third(plant: PlantModel,
                           gamma_c: float = 400.0) -> L1Config:
    """Third-order filter (3·50²s + 50³)/(s+50)³, K = 0, Q = I."""
    return build_l1(plant, np.zeros(2), ("third_order", 50.0), gamma_c,
                    np.eye(2))


def benchmark_scenario(cfg: L1Config, reference: ReferenceSignal,
                       horizon: float = 10.0) -> SimScenario:
    """Scenario on the benchmark grid: default step size, integer step count."""
    dt = default_dt(cfg, amplitude=reference.amplitude)
    dt = horizon / round(horizon / dt)
    return SimScenario(horizon=horizon, dt=dt, reference=reference)
