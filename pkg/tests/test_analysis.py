"""Gain condition, transient-bound constants, and design-gap bounds."""

import math

import numpy as np
import pytest

from l1adapt.analysis import (
    DesignInfeasible,
    bounds_report,
    build_H2,
    compute_gammas,
    compute_lambda,
    compute_theta_constants,
    design_bounds,
    lambda_sweep,
    verify_trace,
)
from l1adapt.controllers import ThetaTrajectory, build_mrac, first_order_filter
from l1adapt.lti import evaluate, l1_gain
from l1adapt.presets import (
    benchmark_config_first,
    benchmark_config_third,
    benchmark_plant,
    benchmark_scenario,
)
from l1adapt.sim import ReferenceSignal, run_scenario

THETA = np.array([4.0, -4.5])

# values frozen from independent recomputation of each factor (adaptive
# high-precision quadrature of |impulse response|, cross-checked against
# the production integrator before the build)
LAMBDA_FIRST_ORACLE = 0.29479
LAMBDA_THIRD_ORACLE = 0.71464


@pytest.fixture(scope="module")
def bench():
    plant = benchmark_plant()
    return plant, benchmark_config_first(plant), benchmark_config_third(plant)


# ---------------------------------------------------------------------------
# parameter-set constants
# ---------------------------------------------------------------------------

def test_theta_constants_box():
    box = np.array([[-10.0, 10.0], [-10.0, 10.0]])
    theta_max, theta_bar_max, theta_m, d_theta = compute_theta_constants(box)
    assert theta_max == 20.0
    assert theta_bar_max == 800.0  # 4 * (100 + 100) at the corners
    assert theta_m == 800.0
    assert d_theta == 0.0


def test_theta_constants_time_varying(bench):
    plant, cfg1, _ = bench
    plant_tv = benchmark_plant(time_varying=True)
    theta_max, theta_bar_max, theta_m, d_theta = compute_theta_constants(
        plant_tv.omega_box, plant_tv.theta_traj, cfg1.P, cfg1.Q)
    assert theta_max == 20.0
    assert theta_bar_max == 800.0
    assert d_theta > 0.0
    assert theta_m > theta_bar_max
    assert theta_m == pytest.approx(848.4343, rel=1e-4)


# ---------------------------------------------------------------------------
# gain condition
# ---------------------------------------------------------------------------

def test_lambda_first_order_frozen_oracle(bench):
    plant, cfg1, _ = bench
    assert compute_lambda(plant, cfg1) == pytest.approx(
        LAMBDA_FIRST_ORACLE, rel=1e-3)


def test_lambda_third_order_frozen_oracle(bench):
    plant, _, cfg3 = bench
    assert compute_lambda(plant, cfg3) == pytest.approx(
        LAMBDA_THIRD_ORACLE, rel=1e-3)


@pytest.mark.xfail(strict=True,
                   reason="target value 0.1725 is not reproducible from the "
                          "defining construction; independent oracles agree "
                          "on 0.2948 (see the decisions ledger)")
def test_lambda_first_order_target_value(bench):
    plant, cfg1, _ = bench
    assert compute_lambda(plant, cfg1) == pytest.approx(0.1725, abs=0.005)


@pytest.mark.xfail(strict=True,
                   reason="target value 0.3984 is not reproducible from the "
                          "defining construction; independent oracles agree "
                          "on 0.7146 (see the decisions ledger)")
def test_lambda_third_order_target_value(bench):
    plant, _, cfg3 = bench
    assert compute_lambda(plant, cfg3) == pytest.approx(0.3984, abs=0.005)


def test_lambda_vanishes_for_wide_open_filter(bench):
    from l1adapt.controllers import build_l1
    plant, _, _ = bench
    # the gain grids at the fastest pole, so "wide" is kept moderate here
    cfg = build_l1(plant, np.zeros(2), ("first_order", 1e4), 100.0, np.eye(2))
    assert compute_lambda(plant, cfg) < 1e-2


def test_lambda_sweep_monotone_and_bracketing(bench):
    plant, _, _ = bench
    sweep = lambda_sweep(plant, "first", np.linspace(20.0, 120.0, 11))
    assert np.all(np.diff(sweep.lambdas) < 0.0)
    assert sweep.crossing is not None
    assert 20.0 < sweep.crossing < 120.0


def test_lambda_sweep_rejects_bad_grid(bench):
    plant, _, _ = bench
    with pytest.raises(ValueError):
        lambda_sweep(plant, "first", [50.0, 40.0])


# ---------------------------------------------------------------------------
# transient-bound systems and constants
# ---------------------------------------------------------------------------

def test_h2_collapses_for_zero_theta(bench):
    plant, cfg1, _ = bench
    H2 = build_H2(plant, cfg1, np.zeros(2))
    # reduces to C(s) * I on the diagonal
    for s in (0.0, 1j, 10.0 + 5j):
        got = evaluate(H2, s)
        want = complex(evaluate(cfg1.filter, s)[0, 0]) * np.eye(2)
        assert np.max(np.abs(got - want)) < 1e-9


def test_h2_stable_for_benchmark(bench):
    plant, cfg1, _ = bench
    assert build_H2(plant, cfg1, THETA).is_stable


def test_gammas_finite_positive(bench):
    plant, cfg1, cfg3 = bench
    for cfg in (cfg1, cfg3):
        g1, g2 = compute_gammas(plant, cfg, THETA)
        assert 0.0 < g1 < math.inf
        assert 0.0 < g2 < math.inf


def test_gamma_bound_scales_inverse_sqrt_gamma_c(bench):
    from l1adapt.controllers import build_l1
    plant, cfg1, _ = bench
    cfg4 = build_l1(plant, np.zeros(2), ("first_order", 160.0),
                    4.0 * cfg1.gamma_c, np.eye(2))
    g1a, g2a = compute_gammas(plant, cfg1, THETA)
    g1b, g2b = compute_gammas(plant, cfg4, THETA)
    # the gamma constants do not depend on the adaptive gain; the bound
    # gamma1/sqrt(gamma_c) therefore halves exactly when gamma_c quadruples
    assert g1a == pytest.approx(g1b, rel=1e-12)
    assert (g1b / math.sqrt(cfg4.gamma_c)) == pytest.approx(
        0.5 * g1a / math.sqrt(cfg1.gamma_c), rel=1e-12)


def test_mrac_gamma2_is_infinite_sentinel(bench):
    plant, _, _ = bench
    cfg = build_mrac(plant, np.zeros(2), 10000.0, np.eye(2))
    g1, g2 = compute_gammas(plant, cfg, THETA)
    assert g2 == math.inf


def test_time_varying_gammas(bench):
    plant_tv = benchmark_plant(time_varying=True)
    _, cfg1, cfg3 = bench
    for cfg in (cfg1, cfg3):
        g3, g4 = compute_gammas(plant_tv, cfg, plant_tv.theta_traj)
        assert 0.0 < g3 < math.inf
        assert 0.0 < g4 < math.inf


def test_infeasible_design_raises(bench):
    from l1adapt.controllers import build_l1
    plant, _, _ = bench
    cfg = build_l1(plant, np.zeros(2), ("first_order", 10.0), 100.0, np.eye(2))
    assert compute_lambda(plant, cfg) >= 1.0
    with pytest.raises(DesignInfeasible):
        compute_gammas(plant, cfg, THETA)


# ---------------------------------------------------------------------------
# design-gap bounds
# ---------------------------------------------------------------------------

def test_design_bounds_positive_and_ordered(bench):
    plant, cfg1, _ = bench
    db = design_bounds(plant, cfg1, ReferenceSignal("step", 100.0))
    for v in db.as_tuple():
        assert v > 0.0
    assert db.h3_sup >= 0.0
    assert db.h3_residual < 1e-2


def test_design_bounds_observed_gap_below_bound(bench):
    plant, cfg1, _ = bench
    ref = ReferenceSignal("step", 100.0)
    db = design_bounds(plant, cfg1, ref)
    sc = benchmark_scenario(cfg1, ref, horizon=10.0)
    tr = run_scenario(plant, cfg1, sc)
    observed = float(np.max(np.abs(tr.y_ref - tr.y_des)))
    assert observed <= min(db.y_bound_gain, db.y_bound_h3) + 1e-9
    observed_u = float(np.max(np.abs(tr.u_ref - tr.u_des)))
    assert observed_u <= min(db.u_bound_gain, db.u_bound_h3) + 1e-9


def test_design_bounds_vanish_with_wide_filter(bench):
    from l1adapt.controllers import build_l1
    plant, _, _ = bench
    cfg = build_l1(plant, np.zeros(2), ("first_order", 1e4), 100.0, np.eye(2))
    db = design_bounds(plant, cfg, ReferenceSignal("step", 1.0))
    assert db.y_bound_gain < 1e-1


# ---------------------------------------------------------------------------
# report assembly
# ---------------------------------------------------------------------------

def test_bounds_report_constant(bench):
    plant, cfg1, _ = bench
    rep = bounds_report(plant, cfg1)
    assert rep.feasible
    assert not rep.time_varying
    assert rep.gamma1 > 0 and rep.gamma2 > 0
    assert rep.gamma1_loose > 0
    # lambda_max(P) > lambda_min(P) makes the loose variant smaller
    assert rep.gamma1_loose < rep.gamma1
    assert any("lambda" in line for line in rep.lines())


def test_bounds_report_time_varying():
    plant_tv = benchmark_plant(time_varying=True)
    cfg = benchmark_config_first(plant_tv)
    rep = bounds_report(plant_tv, cfg)
    assert rep.time_varying
    assert rep.gamma3 > 0 and rep.gamma4 > 0


def test_verify_trace_requires_oracles(bench):
    plant, cfg1, cfg3 = bench
    rep = bounds_report(plant, cfg3)
    sc = benchmark_scenario(cfg3, ReferenceSignal("step", 25.0), horizon=5.0)
    tr = run_scenario(plant, cfg3, sc, with_reference=False, with_design=False)
    with pytest.raises(ValueError):
        verify_trace(tr, rep)


def test_verify_trace_passes_on_benchmark(bench):
    plant, _, cfg3 = bench
    rep = bounds_report(plant, cfg3)
    sc = benchmark_scenario(cfg3, ReferenceSignal("step", 25.0), horizon=10.0)
    tr = run_scenario(plant, cfg3, sc)
    rep = verify_trace(tr, rep)
    assert rep.checks
    assert all(c.passed for c in rep.checks)
    assert all(("[pass]" in str(c)) or ("[FAIL]" in str(c)) for c in rep.checks)
