"""Gain conditions, performance bounds and trace verification.

Everything here is derived from one stability certificate: the composite
system Ḡ(s) = H_o(s)(C(s) - 1) must satisfy ‖Ḡ‖_L1 · θ_max < 1.  Given
that, the module computes the transient bounds γ₁–γ₄, the design-target
bounds, and checks simulated traces against them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from l1adapt.controllers import (L1Config, PlantModel, ThetaTrajectory,
                                 _resolve_filter, build_l1)
from l1adapt.lti import (LtiSystem, Polynomial, construct_co, diag_repeat,
                         evaluate, faddeev_numerators, feedback_inverse,
                         h_o_system, is_hurwitz, l1_gain, parallel, series)
from l1adapt.sim import ReferenceSignal, simulate_lti


class DesignInfeasible(RuntimeError):
    """The L1-gain feasibility condition λ < 1 does not hold."""


# ---------------------------------------------------------------------------
# composite systems
# ---------------------------------------------------------------------------

def c_minus_one(filt: LtiSystem) -> LtiSystem:
    return parallel(filt, -LtiSystem.identity(1))


def gbar_system(cfg: L1Config) -> LtiSystem:
    """Ḡ(s) = H_o(s)(C(s) - 1), the loop term scaled by θᵀ in the analysis."""
    return series(cfg.H_o, c_minus_one(cfg.filter))


def g_system(cfg: L1Config) -> LtiSystem:
    """G(s) = k_g H_o(s) C(s), the target command-to-state map."""
    return series(cfg.H_o, cfg.filter) * cfg.k_g


def _theta_row(theta) -> LtiSystem:
    return LtiSystem.static(np.asarray(theta, dtype=float).reshape(1, -1))


def _siso_tf(sys: LtiSystem):
    """(num, den) polynomials of a SISO realization (den = char. poly)."""
    if not sys.is_siso:
        raise ValueError("SISO system required")
    if sys.is_static:
        return Polynomial([float(sys.D[0, 0])]), Polynomial([1.0])
    nm = faddeev_numerators(sys.A, sys.B[:, 0])
    num = Polynomial(sys.C[0] @ nm.N) + Polynomial([float(sys.D[0, 0])]) * nm.d
    return num, nm.d


# ---------------------------------------------------------------------------
# scalar constants
# ---------------------------------------------------------------------------

def compute_theta_constants(omega_box, theta_traj: ThetaTrajectory = None,
                            P=None, Q=None):
    """(θ_max, θ̄_max, θ_m, d_θ) from box-corner extremal arithmetic.

    θ_max = max Σ|θᵢ|, θ̄_max = max Σ4θᵢ², and for time-varying parameters
    θ_m = θ̄_max + 2 d_θ λ_max(P)/λ_min(Q) · max‖θ‖ with d_θ a bound on
    ‖θ̇(t)‖.  Constant parameters give d_θ = 0 and θ_m = θ̄_max.
    """
    box = np.asarray(omega_box, dtype=float)
    hi_abs = np.maximum(np.abs(box[:, 0]), np.abs(box[:, 1]))
    theta_max = float(hi_abs.sum())
    theta_bar_max = float(4.0 * (hi_abs ** 2).sum())
    d_theta = 0.0
    if theta_traj is not None and not theta_traj.is_constant:
        d_theta = theta_traj.derivative_bound()
    theta_m = theta_bar_max
    if d_theta > 0.0:
        if P is None or Q is None:
            raise ValueError("P and Q are required for time-varying parameters")
        lam_max_P = float(np.max(np.linalg.eigvalsh(np.asarray(P, dtype=float))))
        lam_min_Q = float(np.min(np.linalg.eigvalsh(np.asarray(Q, dtype=float))))
        max_norm = float(np.sqrt((hi_abs ** 2).sum()))
        theta_m += 2.0 * d_theta * lam_max_P / lam_min_Q * max_norm
    return theta_max, theta_bar_max, theta_m, d_theta


def compute_lambda(plant: PlantModel, cfg: L1Config) -> float:
    """λ = ‖Ḡ(s)‖_L1 · θ_max; the design is feasible iff λ < 1."""
    theta_max, _, _, _ = compute_theta_constants(plant.omega_box)
    return l1_gain(gbar_system(cfg)) * theta_max


def _require_feasible(lam: float) -> None:
    if not lam < 1.0:
        raise DesignInfeasible(f"gain condition fails: lambda = {lam:.6g} >= 1")


@dataclass(frozen=True)
class LambdaSweep:
    omegas: np.ndarray
    lambdas: np.ndarray
    crossing: float | None   # ω where λ crosses 1 (linear interpolation)


def lambda_sweep(plant: PlantModel, filter_family, omega_grid) -> LambdaSweep:
    """λ(ω) over a filter family ('first' | 'third' | callable ω→LtiSystem)."""
    omegas = np.asarray(omega_grid, dtype=float)
    if np.any(omegas <= 0) or np.any(np.diff(omegas) <= 0):
        raise ValueError("omega grid must be positive and ascending")
    if callable(filter_family):
        make = filter_family
    else:
        make = lambda w: _resolve_filter((filter_family, w))
    theta_max, _, _, _ = compute_theta_constants(plant.omega_box)
    A_m = plant.A  # λ does not involve K beyond A_m; callers bake K into plant
    H_o = h_o_system(A_m, plant.b)
    lams = np.array([l1_gain(series(H_o, c_minus_one(make(w)))) * theta_max
                     for w in omegas])
    crossing = None
    for i in range(len(omegas) - 1):
        a, b = lams[i] - 1.0, lams[i + 1] - 1.0
        if a == 0.0:
            crossing = float(omegas[i])
            break
        if a * b < 0.0:
            crossing = float(omegas[i] - a * (omegas[i + 1] - omegas[i]) / (b - a))
            break
    return LambdaSweep(omegas=omegas, lambdas=lams, crossing=crossing)


# ---------------------------------------------------------------------------
# composite bound systems
# ---------------------------------------------------------------------------

def build_H2(plant: PlantModel, cfg: L1Config, theta) -> LtiSystem:
    """H₂ = I + (I - Ḡθᵀ)⁻¹(Ḡθᵀ + (C-1)I), the x_ref - x error map."""
    lam = compute_lambda(plant, cfg)
    _require_feasible(lam)
    n = plant.dim
    theta = np.asarray(theta, dtype=float).reshape(-1)
    Gbar = gbar_system(cfg)
    GbarT = series(Gbar, _theta_row(theta))
    Cm1_I = diag_repeat(c_minus_one(cfg.filter), n)
    inv = feedback_inverse(GbarT)
    H2 = parallel(LtiSystem.identity(n), series(inv, parallel(GbarT, Cm1_I)))
    _freq_crosscheck_H2(H2, Gbar, cfg.filter, theta, n)
    return H2


def _freq_crosscheck_H2(H2, Gbar, filt, theta, n, tol=1e-6):
    rng = np.random.default_rng(20240817)
    for w in 10.0 ** rng.uniform(-2, 3, size=10):
        s = 1j * w
        g = evaluate(Gbar, s)[:, 0]
        c1 = complex(evaluate(filt, s)[0, 0]) - 1.0
        M = np.outer(g, theta)
        direct = np.eye(n) + np.linalg.solve(np.eye(n) - M,
                                             M + c1 * np.eye(n))
        got = evaluate(H2, s)
        if np.max(np.abs(got - direct)) > tol * max(1.0, np.max(np.abs(direct))):
            raise AssertionError("realization disagrees with direct frequency "
                                 f"response at s = j{w:.4g}")


def _ho_theta_ho(cfg: L1Config, theta) -> LtiSystem:
    """H_o θᵀ H_o: scalar in, n-vector out."""
    return series(cfg.H_o, series(_theta_row(theta), cfg.H_o))


def build_H3(plant: PlantModel, cfg: L1Config, theta) -> LtiSystem:
    """H₃ = (C-1) C k_g H_o θᵀ H_o (the command enters as the input signal)."""
    lam = compute_lambda(plant, cfg)
    _require_feasible(lam)
    chain = series(cfg.filter, c_minus_one(cfg.filter)) * cfg.k_g
    return series(_ho_theta_ho(cfg, theta), chain)


def build_H4(plant: PlantModel, cfg: L1Config, theta) -> LtiSystem:
    """H₄ = C k_g H_o θᵀ H_o."""
    return series(_ho_theta_ho(cfg, theta), cfg.filter) * cfg.k_g


def build_H5(plant: PlantModel, cfg: L1Config, theta) -> LtiSystem:
    """H₅ = k_g H_o θᵀ H_o."""
    return _ho_theta_ho(cfg, theta) * cfg.k_g


def co_inverse_row(cfg: L1Config) -> LtiSystem:
    """C(s)·(1/(c_oᵀH_o(s)))·c_oᵀ as a proper stable 1×n system.

    c_o is chosen so c_oᵀH_o has relative degree one with numerator
    (s+1)^{n-1}; the strictly proper filter then keeps the product proper.
    """
    A_m, b = cfg.A_m, cfg.H_o.B[:, 0]
    c_o = construct_co(A_m, b)
    nm = faddeev_numerators(A_m, b)
    num_co = Polynomial(c_o @ nm.N)          # = (s+1)^{n-1} by construction
    nc, dc = _siso_tf(cfg.filter)
    num = nc * nm.d
    den = dc * num_co
    if num.degree > den.degree:
        raise ValueError("C(s)/(c_oᵀH_o) is improper; use a strictly proper filter")
    siso = LtiSystem.from_tf(num.coeffs, den.coeffs)
    return series(siso, LtiSystem.static(c_o.reshape(1, -1)))


def _c_theta_minus_k_row(cfg: L1Config, theta) -> LtiSystem:
    return parallel(series(cfg.filter, _theta_row(theta)),
                    LtiSystem.static(-cfg.K.reshape(1, -1)))


# ---------------------------------------------------------------------------
# transient bounds
# ---------------------------------------------------------------------------

def compute_gammas(plant: PlantModel, cfg: L1Config, theta_or_traj,
                   use_lambda_max: bool = False):
    """(γ₁, γ₂) for constant parameters, (γ₃, γ₄) for time-varying ones.

    The constant-parameter bounds are ‖x-x_ref‖ ≤ γ₁/√Γ_c and
    ‖u-u_ref‖ ≤ γ₂/√Γ_c; the time-varying γ₃/γ₄ already include Γ_c.
    The Lyapunov-derivation denominator is λ_min(P); pass use_lambda_max
    to reproduce the looser printed constant side by side.
    """
    traj = (theta_or_traj if isinstance(theta_or_traj, ThetaTrajectory)
            else ThetaTrajectory.constant(theta_or_traj))
    lam = compute_lambda(plant, cfg)
    _require_feasible(lam)
    _, theta_bar_max, theta_m, _ = compute_theta_constants(
        plant.omega_box, traj, cfg.P, cfg.Q)
    eigP = np.linalg.eigvalsh(cfg.P)
    lamP = float(eigP[-1] if use_lambda_max else eigP[0])

    if traj.is_constant:
        theta = np.array(traj.theta0)
        scale = math.sqrt(theta_bar_max / lamP)
        gamma1 = l1_gain(build_H2(plant, cfg, theta)) * scale
        if cfg.is_mrac:
            return gamma1, math.inf
        gamma2 = (l1_gain(co_inverse_row(cfg)) * scale
                  + l1_gain(_c_theta_minus_k_row(cfg, theta)) * gamma1)
        return gamma1, gamma2

    scale = math.sqrt(theta_m / (lamP * cfg.gamma_c))
    c_gain = l1_gain(cfg.filter)
    gamma3 = c_gain / (1.0 - lam) * scale
    if cfg.is_mrac:
        return gamma3, math.inf
    theta_max, _, _, _ = compute_theta_constants(plant.omega_box)
    gamma4 = (l1_gain(co_inverse_row(cfg)) * scale
              + (float(np.linalg.norm(cfg.K)) + c_gain * theta_max) * gamma3)
    return gamma3, gamma4


# ---------------------------------------------------------------------------
# design-target bounds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DesignBounds:
    """The four closed-form gaps between the benchmark loop and its targets."""

    y_bound_gain: float      # λ/(1-λ)·‖cᵀ‖·‖G‖·‖r‖
    y_bound_h3: float        # 1/(1-λ)·‖cᵀ‖·sup‖h₃‖
    u_bound_gain: float      # λ/(1-λ)·‖Cθᵀ-Kᵀ‖·‖G‖·‖r‖
    u_bound_h3: float        # 1/(1-λ)·‖Cθᵀ-Kᵀ‖·sup‖h₃‖
    h3_sup: float
    h3_residual: float       # envelope level at truncation, relative to peak
    h4_route: float          # ‖(C-1)r‖_L1 · sup‖h₄‖
    h5_route: float          # ‖(C-1)C‖·sup‖h₅‖

    def as_tuple(self):
        return (self.y_bound_gain, self.y_bound_h3,
                self.u_bound_gain, self.u_bound_h3)


def _sup_response(sys: LtiSystem, ref: ReferenceSignal, dt: float,
                  horizon0: float, decay_tol: float = 1e-4):
    """(sup_t max_i |y_i|, residual): horizon doubles until the tail decays."""
    horizon = horizon0
    for _ in range(7):
        steps = int(math.ceil(horizon / dt))
        t = dt * np.arange(steps + 1)
        out = simulate_lti(sys, np.asarray(ref.eval(t), dtype=float), t)
        amp = np.max(np.abs(out), axis=1)
        peak = float(amp.max())
        tail = float(amp[int(0.9 * len(t)):].max())
        if peak == 0.0 or tail <= decay_tol * peak:
            return peak, (tail / peak if peak else 0.0)
        horizon *= 2.0
    return peak, tail / peak


def _signal_l1(sys: LtiSystem, ref: ReferenceSignal, dt: float,
               horizon0: float, decay_tol: float = 1e-6) -> float:
    """∫₀^∞ |output| dt for a SISO system driven by the command signal.

    Returns inf when the response does not decay (persistent excitation).
    """
    horizon = horizon0
    for _ in range(7):
        steps = int(math.ceil(horizon / dt))
        t = dt * np.arange(steps + 1)
        out = np.abs(simulate_lti(sys, np.asarray(ref.eval(t), dtype=float), t)[:, 0])
        peak = float(out.max())
        tail = float(out[int(0.9 * len(t)):].max())
        if peak == 0.0:
            return 0.0
        if tail <= decay_tol * peak:
            from scipy.integrate import trapezoid
            return float(trapezoid(out, t))
        horizon *= 2.0
    return math.inf


def design_bounds(plant: PlantModel, cfg: L1Config,
                  ref: ReferenceSignal, dt: float = None) -> DesignBounds:
    """Bounds on |y_ref - y_des| and |u_ref - u_des| for a command signal."""
    if not plant.theta_traj.is_constant:
        raise ValueError("design bounds are defined for constant parameters")
    theta = np.array(plant.theta_traj.theta0)
    lam = compute_lambda(plant, cfg)
    _require_feasible(lam)

    c_row = l1_gain(LtiSystem.static(plant.c.reshape(1, -1)))
    G_gain = l1_gain(g_system(cfg))
    ctk_gain = l1_gain(_c_theta_minus_k_row(cfg, theta))
    r_sup = abs(ref.amplitude)
    ratio = lam / (1.0 - lam)

    slow = -float(np.max(np.linalg.eigvals(cfg.A_m).real))
    if dt is None:
        fast = max(-float(np.min(np.linalg.eigvals(cfg.filter.A).real))
                   if cfg.filter.n_states else slow, slow)
        dt = min(1.0 / (50.0 * fast), 1e-2)
    horizon0 = 10.0 / slow

    H3 = build_H3(plant, cfg, theta)
    h3_sup, resid = _sup_response(H3, ref, dt, horizon0)
    h4_sup, _ = _sup_response(build_H4(plant, cfg, theta), ref, dt, horizon0)
    h5_sup, _ = _sup_response(build_H5(plant, cfg, theta), ref, dt, horizon0)
    cm1 = c_minus_one(cfg.filter)

    return DesignBounds(
        y_bound_gain=ratio * c_row * G_gain * r_sup,
        y_bound_h3=c_row * h3_sup / (1.0 - lam),
        u_bound_gain=ratio * ctk_gain * G_gain * r_sup,
        u_bound_h3=ctk_gain * h3_sup / (1.0 - lam),
        h3_sup=h3_sup,
        h3_residual=resid,
        h4_route=_signal_l1(cm1, ref, dt, horizon0) * h4_sup,
        h5_route=l1_gain(series(cm1, cfg.filter)) * h5_sup,
    )


# ---------------------------------------------------------------------------
# report assembly and trace verification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoundCheck:
    name: str
    bound: float
    observed: float

    @property
    def passed(self) -> bool:
        return self.observed <= self.bound

    @property
    def margin(self) -> float:
        return self.bound - self.observed

    def __str__(self):
        tag = "pass" if self.passed else "FAIL"
        return (f"[{tag}] {self.name}: observed {self.observed:.6g} "
                f"vs bound {self.bound:.6g}")


@dataclass
class BoundsReport:
    theta_max: float
    theta_bar_max: float
    theta_m: float
    d_theta: float
    lam: float
    gamma1: float = math.nan
    gamma2: float = math.nan
    gamma3: float = math.nan
    gamma4: float = math.nan
    gamma1_loose: float = math.nan   # λ_max(P) variant, reported side by side
    gamma2_loose: float = math.nan
    gamma_c: float = math.nan
    c_row_gain: float = math.nan
    time_varying: bool = False
    checks: list = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return self.lam < 1.0

    def lines(self):
        out = [f"lambda = {self.lam:.6g} ({'feasible' if self.feasible else 'INFEASIBLE'})",
               f"theta_max = {self.theta_max:.6g}, theta_bar_max = {self.theta_bar_max:.6g}, "
               f"theta_m = {self.theta_m:.6g}, d_theta = {self.d_theta:.6g}"]
        if self.time_varying:
            out.append(f"gamma3 = {self.gamma3:.6g}, gamma4 = {self.gamma4:.6g}")
        else:
            out.append(f"gamma1 = {self.gamma1:.6g}, gamma2 = {self.gamma2:.6g} "
                       f"(loose P-eigenvalue variants: {self.gamma1_loose:.6g}, "
                       f"{self.gamma2_loose:.6g})")
        out += [str(ch) for ch in self.checks]
        return out


def bounds_report(plant: PlantModel, cfg: L1Config) -> BoundsReport:
    """All scalar constants and transient bounds for a plant/controller pair."""
    traj = plant.theta_traj
    theta_max, theta_bar_max, theta_m, d_theta = compute_theta_constants(
        plant.omega_box, traj, cfg.P, cfg.Q)
    lam = compute_lambda(plant, cfg)
    rep = BoundsReport(theta_max=theta_max, theta_bar_max=theta_bar_max,
                       theta_m=theta_m, d_theta=d_theta, lam=lam,
                       gamma_c=cfg.gamma_c,
                       c_row_gain=l1_gain(LtiSystem.static(plant.c.reshape(1, -1))),
                       time_varying=not traj.is_constant)
    if lam < 1.0:
        if traj.is_constant:
            rep.gamma1, rep.gamma2 = compute_gammas(plant, cfg, traj)
            rep.gamma1_loose, rep.gamma2_loose = compute_gammas(
                plant, cfg, traj, use_lambda_max=True)
        else:
            rep.gamma3, rep.gamma4 = compute_gammas(plant, cfg, traj)
    return rep


def verify_trace(trace, report: BoundsReport) -> BoundsReport:
    """Append pass/fail checks comparing a simulated run against the bounds."""
    if trace.x_ref is None or trace.u_ref is None:
        raise ValueError("trace lacks the benchmark series; rerun with the "
                         "reference simulation enabled")
    if not report.feasible:
        raise DesignInfeasible("cannot verify bounds for an infeasible design")
    x_err = float(np.max(np.abs(trace.x - trace.x_ref)))
    u_err = float(np.max(np.abs(trace.u - trace.u_ref)))
    root_gc = math.sqrt(report.gamma_c)
    if report.time_varying:
        report.checks.append(BoundCheck("sup|x - x_ref| <= gamma3",
                                        report.gamma3, x_err))
        report.checks.append(BoundCheck("sup|u - u_ref| <= gamma4",
                                        report.gamma4, u_err))
    else:
        report.checks.append(BoundCheck("sup|x - x_ref| <= gamma1/sqrt(gamma_c)",
                                        report.gamma1 / root_gc, x_err))
        if trace.y_ref is not None:
            y_err = float(np.max(np.abs(trace.y - trace.y_ref)))
            report.checks.append(BoundCheck(
                "sup|y - y_ref| <= |c|·gamma1/sqrt(gamma_c)",
                report.c_row_gain * report.gamma1 / root_gc, y_err))
        report.checks.append(BoundCheck("sup|u - u_ref| <= gamma2/sqrt(gamma_c)",
                                        report.gamma2 / root_gc, u_err))
    # constant commands must be tracked with unit DC gain
    r = np.asarray(trace.r, dtype=float)
    if r.size > 1 and np.allclose(r, r[0]) and r[0] != 0.0:
        report.checks.append(BoundCheck(
            "steady-state |y(T) - r|/|r| <= 0.02",
            0.02, abs(trace.y[-1] - r[0]) / abs(r[0])))
    return report
