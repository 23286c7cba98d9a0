"""Toolkit for building, simulating and verifying filtered fast-adaptation controllers.

The package is organised around a small continuous-time LTI algebra
(:mod:`l1adapt.lti`), controller construction (:mod:`l1adapt.controllers`),
fixed-step closed-loop simulation (:mod:`l1adapt.sim`), stability/performance
bound computation (:mod:`l1adapt.analysis`) and time-delay-margin analysis
(:mod:`l1adapt.margin`).
"""

from l1adapt.lti import (
    LtiSystem,
    Polynomial,
    NumeratorMatrix,
    is_hurwitz,
    solve_lyapunov,
    faddeev_numerators,
    construct_co,
    impulse_response,
    l1_gain,
    series,
    parallel,
    feedback_inverse,
    evaluate,
    compute_kg,
)
from l1adapt.controllers import (
    PlantModel,
    ThetaTrajectory,
    L1Config,
    ControllerState,
    HighGainController,
    build_l1,
    build_mrac,
    build_highgain,
    control_and_derivatives,
    adaptation_step,
    first_order_filter,
    third_order_filter,
)
from l1adapt.sim import (
    ReferenceSignal,
    SimScenario,
    SimTrace,
    SimulationDiverged,
    simulate_closed_loop,
    simulate_reference,
    simulate_des,
    delay_line,
)
from l1adapt.analysis import (
    BoundsReport,
    BoundCheck,
    compute_theta_constants,
    compute_lambda,
    lambda_sweep,
    build_H2,
    build_H3,
    compute_gammas,
    design_bounds,
    verify_trace,
)
from l1adapt.margin import (
    MarginCurve,
    open_loop_mrac,
    open_loop_l1,
    time_delay_margin,
    margin_curve,
)

__all__ = [
    "LtiSystem", "Polynomial", "NumeratorMatrix",
    "is_hurwitz", "solve_lyapunov", "faddeev_numerators", "construct_co",
    "impulse_response", "l1_gain", "series", "parallel", "feedback_inverse",
    "evaluate", "compute_kg",
    "PlantModel", "ThetaTrajectory", "L1Config", "ControllerState",
    "HighGainController", "build_l1", "build_mrac", "build_highgain",
    "control_and_derivatives", "adaptation_step",
    "first_order_filter", "third_order_filter",
    "ReferenceSignal", "SimScenario", "SimTrace", "SimulationDiverged",
    "simulate_closed_loop", "simulate_reference", "simulate_des", "delay_line",
    "BoundsReport", "BoundCheck", "compute_theta_constants", "compute_lambda",
    "lambda_sweep", "build_H2", "build_H3", "compute_gammas", "design_bounds",
    "verify_trace",
    "MarginCurve", "open_loop_mrac", "open_loop_l1", "time_delay_margin",
    "margin_curve",
]
