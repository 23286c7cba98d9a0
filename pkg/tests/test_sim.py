"""Fixed-step integration of the coupled loop and its companion systems."""

import numpy as np
import pytest

from l1adapt.controllers import PlantModel, ThetaTrajectory, build_highgain, build_l1
from l1adapt.lti import LtiSystem
from l1adapt.presets import (
    benchmark_config_first,
    benchmark_config_third,
    benchmark_plant,
    benchmark_scenario,
)
from l1adapt.sim import (
    ReferenceSignal,
    SimScenario,
    SimulationDiverged,
    default_dt,
    delay_line,
    run_scenario,
    simulate_closed_loop,
    simulate_des,
    simulate_highgain,
    simulate_lti,
    simulate_reference,
)

A_BENCH = np.array([[0.0, 1.0], [-1.0, -1.4]])
B_BENCH = np.array([0.0, 1.0])
C_BENCH = np.array([1.0, 0.0])
BOX = np.array([[-10.0, 10.0], [-10.0, 10.0]])


# ---------------------------------------------------------------------------
# signals and scenarios
# ---------------------------------------------------------------------------

def test_step_reference():
    r = ReferenceSignal("step", 400.0)
    assert r.eval(0.5) == 400.0
    assert r.eval(7.3) == 400.0
    assert np.allclose(r.eval(np.array([0.0, 1.0])), 400.0)


def test_cosine_reference():
    r = ReferenceSignal("cosine", 100.0, 0.2)
    assert r.eval(0.0) == pytest.approx(100.0)
    assert r.eval(np.pi / 0.4) == pytest.approx(100.0 * np.cos(np.pi / 2), abs=1e-9)


def test_scenario_rejects_non_integer_steps():
    with pytest.raises(ValueError):
        SimScenario(horizon=1.0, dt=0.3, reference=ReferenceSignal("step", 1.0))


def test_default_dt_rules():
    plant = benchmark_plant()
    cfg = benchmark_config_first(plant)
    # filter rule 0.05/160 beats 1/sqrt(50*10000) and 1e-3 at unit amplitude
    assert default_dt(cfg) == pytest.approx(0.05 / 160.0)
    # large commands tighten the step: the adaptation loop oscillates at
    # a frequency proportional to amplitude * sqrt(gamma_c)
    assert default_dt(cfg, amplitude=400.0) < 5e-5


def test_delay_line():
    dt = 0.01
    hist = np.arange(0.0, 10.0)  # u(k*dt) = k
    assert delay_line(hist, 0.0, 5 * dt, dt) == 5.0
    assert delay_line(hist, 2 * dt, 5 * dt, dt) == 3.0
    assert delay_line(hist, 8 * dt, 5 * dt, dt) == 0.0
    with pytest.raises(ValueError):
        delay_line(hist, -0.1, 0.0, dt)


def test_delay_line_step_shift():
    dt = 0.001
    t = np.arange(0.0, 1.0, dt)
    u = (t >= 0.2).astype(float)
    shifted = np.array([delay_line(u, 0.1, tk, dt) for tk in t])
    want = (t >= 0.3 - 1e-12).astype(float)
    assert np.array_equal(shifted, want)


# ---------------------------------------------------------------------------
# LTI runner
# ---------------------------------------------------------------------------

def test_simulate_lti_first_order_step():
    sys = LtiSystem.from_tf([1.0], [1.0, 1.0])  # 1/(s+1)
    t = np.linspace(0.0, 5.0, 501)
    out = simulate_lti(sys, np.ones_like(t), t)
    want = 1.0 - np.exp(-t)
    assert np.max(np.abs(out[:, 0] - want)) < 1e-6


def test_simulate_lti_static_gain():
    sys = LtiSystem.static([[2.5]])
    t = np.linspace(0.0, 1.0, 11)
    u = np.sin(t)
    out = simulate_lti(sys, u, t)
    assert np.allclose(out[:, 0], 2.5 * u)


# ---------------------------------------------------------------------------
# closed loop
# ---------------------------------------------------------------------------

def small_gain_setup(theta=(4.0, -4.5), gamma_c=400.0):
    plant = PlantModel(A_BENCH, B_BENCH, C_BENCH, BOX,
                       ThetaTrajectory.constant(theta))
    cfg = build_l1(plant, np.zeros(2), ("first_order", 160.0), gamma_c, np.eye(2))
    return plant, cfg


def test_closed_loop_zero_everything_stays_zero():
    plant, cfg = small_gain_setup()
    sc = SimScenario(horizon=1.0, dt=1e-3, reference=ReferenceSignal("step", 0.0))
    tr = simulate_closed_loop(plant, cfg, sc)
    assert np.allclose(tr.x, 0.0)
    assert np.allclose(tr.u, 0.0)
    assert np.allclose(tr.theta_hat, 0.0)


def test_closed_loop_exact_predictor_when_theta_zero():
    # theta = 0 and theta_hat(0) = 0: predictor and plant see identical
    # inputs, so the prediction error is identically zero
    plant, cfg = small_gain_setup(theta=(0.0, 0.0))
    sc = SimScenario(horizon=2.0, dt=1e-3, reference=ReferenceSignal("step", 5.0))
    tr = simulate_closed_loop(plant, cfg, sc)
    assert np.max(np.abs(tr.x_tilde)) < 1e-9
    assert np.max(np.abs(tr.theta_hat)) < 1e-9


def test_closed_loop_step_tracking_small_gain():
    plant, cfg = small_gain_setup()
    sc = SimScenario(horizon=10.0, dt=2.5e-4, reference=ReferenceSignal("step", 10.0))
    tr = simulate_closed_loop(plant, cfg, sc)
    assert abs(tr.y[-1] - 10.0) <= 0.1
    # Lyapunov decrease and box invariance
    assert np.max(np.diff(tr.V)) <= 1e-6 * tr.V[0]
    assert np.all(tr.theta_hat >= -10.0 - 1e-12)
    assert np.all(tr.theta_hat <= 10.0 + 1e-12)


def test_closed_loop_divergence_guard():
    # an aggressively coarse step at high gain destabilizes the integration
    plant, cfg = small_gain_setup(gamma_c=1e6)
    sc = SimScenario(horizon=10.0, dt=0.01, reference=ReferenceSignal("step", 100.0))
    with pytest.raises(SimulationDiverged):
        simulate_closed_loop(plant, cfg, sc)


def test_closed_loop_input_delay_changes_response():
    plant, cfg = small_gain_setup()
    dt = 2.5e-4
    base = SimScenario(horizon=2.0, dt=dt, reference=ReferenceSignal("step", 5.0))
    delayed = SimScenario(horizon=2.0, dt=dt, reference=ReferenceSignal("step", 5.0),
                          input_delay=100 * dt)
    tr0 = simulate_closed_loop(plant, cfg, base)
    tr1 = simulate_closed_loop(plant, cfg, delayed)
    assert np.isfinite(tr1.x).all()
    # the delayed loop initially sees zero input, so it lags the nominal one
    k = int(0.05 / dt)
    assert abs(tr1.y[k]) < abs(tr0.y[k])


# ---------------------------------------------------------------------------
# reference (true-parameter) companion
# ---------------------------------------------------------------------------

def test_reference_steady_state():
    plant, cfg = small_gain_setup()
    sc = SimScenario(horizon=12.0, dt=5e-4, reference=ReferenceSignal("step", 50.0))
    X, U, Y = simulate_reference(plant, cfg, sc)
    assert abs(Y[-1] - 50.0) <= 1e-3 * 50.0


def test_reference_matches_filtered_loop_when_theta_zero():
    # theta = 0: x_ref is the response of k_g H_o(s) C(s) to r
    from l1adapt.lti import series
    plant, cfg = small_gain_setup(theta=(0.0, 0.0))
    sc = SimScenario(horizon=5.0, dt=5e-4, reference=ReferenceSignal("step", 10.0))
    X, U, Y = simulate_reference(plant, cfg, sc)
    G = series(cfg.H_o, cfg.filter)
    t = sc.time_grid()
    out = simulate_lti(G, cfg.k_g * np.asarray(sc.reference.eval(t)), t)
    assert np.max(np.abs(X - out)) < 1e-6 * max(1.0, np.max(np.abs(X)))


def test_reference_matches_transfer_function_construction():
    # independent frequency-domain construction (I - Gbar theta^T)^-1 G
    from l1adapt.analysis import g_system, gbar_system
    from l1adapt.lti import feedback_inverse, series
    from l1adapt.lti import LtiSystem as LS

    plant, cfg = small_gain_setup()
    theta = np.array([4.0, -4.5])
    sc = SimScenario(horizon=8.0, dt=5e-4, reference=ReferenceSignal("step", 100.0))
    X, U, Y = simulate_reference(plant, cfg, sc)
    theta_map = LS.static(theta.reshape(1, 2))
    closed = series(feedback_inverse(series(gbar_system(cfg), theta_map)),
                    g_system(cfg))
    t = sc.time_grid()
    out = simulate_lti(closed, np.asarray(sc.reference.eval(t)), t)
    assert np.max(np.abs(X - out)) <= 1e-4 * np.max(np.abs(X))


# ---------------------------------------------------------------------------
# design companion
# ---------------------------------------------------------------------------

def test_design_series_theta_independent():
    plant_a, cfg = small_gain_setup(theta=(4.0, -4.5))
    plant_b, _ = small_gain_setup(theta=(-2.0, 1.0))
    sc = SimScenario(horizon=4.0, dt=5e-4, reference=ReferenceSignal("step", 10.0))
    y_a, _ = simulate_des(plant_a, cfg, sc)
    y_b, _ = simulate_des(plant_b, cfg, sc)
    assert np.allclose(y_a, y_b)


def test_design_control_reduces_to_filtered_reference():
    # theta = 0, K = 0: u_des = k_g * (C r)
    plant, cfg = small_gain_setup(theta=(0.0, 0.0))
    sc = SimScenario(horizon=4.0, dt=5e-4, reference=ReferenceSignal("step", 10.0))
    _, u_des = simulate_des(plant, cfg, sc)
    t = sc.time_grid()
    want = simulate_lti(cfg.filter, cfg.k_g * np.asarray(sc.reference.eval(t)), t)
    assert np.max(np.abs(u_des - want[:, 0])) < 1e-9


def test_design_rejects_time_varying_parameters():
    plant = benchmark_plant(time_varying=True)
    cfg = benchmark_config_first(plant)
    sc = SimScenario(horizon=1.0, dt=1e-3, reference=ReferenceSignal("step", 1.0))
    with pytest.raises(ValueError):
        simulate_des(plant, cfg, sc)


# ---------------------------------------------------------------------------
# high-gain baseline
# ---------------------------------------------------------------------------

def scalar_plant(theta=1.0):
    return PlantModel(np.array([[0.0]]), np.array([1.0]), np.array([1.0]),
                      np.array([[-3.0, 3.0]]),
                      ThetaTrajectory.constant([theta]))


def test_highgain_tracks_dc():
    plant = scalar_plant(1.0)
    ctrl = build_highgain(plant, 50.0)
    sc = SimScenario(horizon=2.0, dt=1e-3, reference=ReferenceSignal("step", 1.0))
    tr = simulate_highgain(plant, ctrl, sc)
    # DC gain k/(theta+k) = 50/51
    assert tr.y[-1] == pytest.approx(50.0 / 51.0, abs=1e-3)


def test_highgain_delay_destabilizes():
    # large k with an input delay drives the loop unstable
    plant = scalar_plant(1.0)
    ctrl = build_highgain(plant, 200.0)
    sc = SimScenario(horizon=2.0, dt=1e-3,
                     reference=ReferenceSignal("step", 1.0), input_delay=0.02)
    try:
        tr = simulate_highgain(plant, ctrl, sc)
        grew = np.max(np.abs(tr.y[-100:])) > 10.0
    except SimulationDiverged:
        grew = True
    assert grew


# ---------------------------------------------------------------------------
# combined runner
# ---------------------------------------------------------------------------

def test_run_scenario_attaches_oracles():
    plant = benchmark_plant()
    cfg = benchmark_config_third(plant)
    sc = benchmark_scenario(cfg, ReferenceSignal("step", 25.0), horizon=5.0)
    tr = run_scenario(plant, cfg, sc)
    for name in ("x_ref", "u_ref", "y_ref", "y_des", "u_des"):
        assert getattr(tr, name) is not None
    assert tr.x_ref.shape == tr.x.shape
    # closed loop stays near its companion
    assert np.max(np.abs(tr.x - tr.x_ref)) < 1.0


def test_run_scenario_skips_design_for_time_varying():
    plant = benchmark_plant(time_varying=True)
    cfg = benchmark_config_third(plant)
    sc = benchmark_scenario(cfg, ReferenceSignal("cosine", 10.0, 0.2), horizon=5.0)
    tr = run_scenario(plant, cfg, sc)
    assert tr.x_ref is not None
    assert tr.y_des is None
    assert tr.V is None
