"""Fixed-step closed-loop simulation and the oracle reference/design systems.

Classical RK4 throughout.  The composite state is [x, x̂, θ̂, filter]; the
parameter estimate is integrated with the unprojected adaptive-law derivative
during the stages and clamped onto the box once per full step, so the stage
arithmetic stays smooth while the estimate never leaves Ω at sample points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from l1adapt.controllers import L1Config, PlantModel, ThetaTrajectory
from l1adapt.lti import LtiSystem

DIVERGENCE_LIMIT = 1e9


class SimulationDiverged(RuntimeError):
    """A state component exceeded the divergence guard."""


# ---------------------------------------------------------------------------
# scenario ingredients
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReferenceSignal:
    """Step r₀·1(t) or harmonic r₀·cos(νt)."""

    kind: str          # "step" | "cosine"
    amplitude: float
    frequency: float = 0.0

    def __post_init__(self):
        if self.kind not in ("step", "cosine"):
            raise ValueError(f"unknown reference kind {self.kind!r}")

    def eval(self, t):
        if self.kind == "step":
            return self.amplitude * np.ones_like(np.asarray(t, dtype=float)) \
                if np.ndim(t) else self.amplitude
        return self.amplitude * np.cos(self.frequency * np.asarray(t, dtype=float)) \
            if np.ndim(t) else self.amplitude * math.cos(self.frequency * t)


@dataclass(frozen=True)
class SimScenario:
    horizon: float
    dt: float
    reference: ReferenceSignal
    input_delay: float = 0.0
    x0: np.ndarray = None

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        steps = self.horizon / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ValueError("horizon must be an integer number of steps")
        if self.input_delay < 0:
            raise ValueError("input delay must be nonnegative")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))

    @property
    def delay_steps(self) -> int:
        """Delay rounded to the nearest grid multiple."""
        return int(round(self.input_delay / self.dt))

    def time_grid(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)

    def initial_state(self, n: int) -> np.ndarray:
        if self.x0 is None:
            return np.zeros(n)
        x0 = np.asarray(self.x0, dtype=float).reshape(-1)
        if x0.shape != (n,):
            raise ValueError("x0 has wrong dimension")
        return x0


def default_dt(cfg: L1Config, filter_omega: float | None = None,
               amplitude: float = 1.0) -> float:
    """Step size: the fastest of the filter and adaptation time scales.

    min(0.05/ω_filter, 1/√(50·Γ_c), 1e-3, 1.5/ω_ad) where
    ω_ad ≈ |x|·√(Γ_c·λ_max(P)) is the parasitic frequency of the
    prediction-error/estimate oscillation, which grows with the state
    amplitude; pass the expected command amplitude to resolve it.
    """
    candidates = [1.0 / math.sqrt(50.0 * cfg.gamma_c), 1e-3]
    if filter_omega is None and cfg.filter.n_states:
        filter_omega = float(np.max(np.abs(np.linalg.eigvals(cfg.filter.A).real)))
    if filter_omega:
        candidates.append(0.05 / filter_omega)
    omega_ad = (max(1.0, abs(amplitude))
                * math.sqrt(cfg.gamma_c * float(np.max(np.linalg.eigvalsh(cfg.P)))))
    candidates.append(1.5 / omega_ad)
    return min(candidates)


# ---------------------------------------------------------------------------
# trace container
# ---------------------------------------------------------------------------

@dataclass
class SimTrace:
    """Uniformly sampled run, optionally augmented with oracle series."""

    t: np.ndarray
    x: np.ndarray
    x_hat: np.ndarray
    theta_hat: np.ndarray
    u: np.ndarray
    y: np.ndarray
    r: np.ndarray
    V: np.ndarray = None          # only recorded for constant θ
    x_ref: np.ndarray = None
    u_ref: np.ndarray = None
    y_ref: np.ndarray = None
    y_des: np.ndarray = None
    u_des: np.ndarray = None

    @property
    def x_tilde(self) -> np.ndarray:
        return self.x_hat - self.x

    def attach_reference(self, x_ref, u_ref, y_ref):
        self.x_ref, self.u_ref, self.y_ref = x_ref, u_ref, y_ref

    def attach_design(self, y_des, u_des):
        self.y_des, self.u_des = y_des, u_des


# ---------------------------------------------------------------------------
# delay line
# ---------------------------------------------------------------------------

def delay_line(u_history: np.ndarray, tau: float, t: float, dt: float) -> float:
    """u(t - τ) from grid-resolution history; zero before τ.

    τ and t are rounded to the nearest grid index.
    """
    if tau < 0:
        raise ValueError("delay must be nonnegative")
    k = int(round((t - tau) / dt))
    if k < 0:
        return 0.0
    return float(u_history[min(k, len(u_history) - 1)])


def _delayed(u_history, k_current, delay_steps):
    if delay_steps == 0:
        raise AssertionError("only call for positive delay")
    k = k_current - delay_steps
    return u_history[k] if k >= 0 else 0.0


# ---------------------------------------------------------------------------
# closed-loop simulation
# ---------------------------------------------------------------------------

def _guard(arr):
    if not np.all(np.isfinite(arr)) or np.any(np.abs(arr) > DIVERGENCE_LIMIT):
        raise SimulationDiverged(
            "state exceeded the divergence guard; the design is likely infeasible")


def simulate_closed_loop(plant: PlantModel, cfg: L1Config,
                         scenario: SimScenario) -> SimTrace:
    """RK4 integration of the plant + predictor + filter + adaptation loop."""
    n = plant.dim
    nf = cfg.n_filter_states
    dt = scenario.dt
    steps = scenario.n_steps
    delay_steps = scenario.delay_steps
    traj = plant.theta_traj
    constant_theta = traj.is_constant
    theta_const = np.array(traj.theta0)

    A, b, c = plant.A, plant.b, plant.c
    A_m, K, k_g = cfg.A_m, cfg.K, cfg.k_g
    Pb = cfg.P @ b
    gamma = cfg.gamma_c
    Af = cfg.filter.A
    Bf = cfg.filter.B[:, 0] if nf else np.zeros(0)
    Cf = cfg.filter.C[0] if nf else np.zeros(0)
    Df = float(cfg.filter.D[0, 0])
    lo, hi = plant.omega_box[:, 0], plant.omega_box[:, 1]

    x0 = scenario.initial_state(n)
    ref = scenario.reference

    # composite state [x, x_hat, theta_hat, z]
    m = 3 * n + nf
    s = np.concatenate([x0, x0, plant.box_center, np.zeros(nf)])
    sl_x = slice(0, n)
    sl_xh = slice(n, 2 * n)
    sl_th = slice(2 * n, 3 * n)
    sl_z = slice(3 * n, 3 * n + nf)

    t_grid = scenario.time_grid()
    X = np.empty((steps + 1, n))
    XH = np.empty((steps + 1, n))
    TH = np.empty((steps + 1, n))
    Z = np.empty((steps + 1, nf))
    U = np.empty(steps + 1) if delay_steps else None

    # The dynamics split into a constant linear part M·s, two bilinear
    # scalars p = θ̂ᵀx (control/predictor channel) and q = x̃ᵀPb
    # (adaptation channel), and the reference forcing r·f:
    #   ds = M s + p·w_p + (γ q)·x|_θ̂ + r·f  [+ time-varying -b(θ(t)ᵀx)|_x]
    M = np.zeros((m, m))
    w_p = np.zeros(m)
    f = np.zeros(m)
    M[sl_x, sl_x] = A
    if constant_theta:
        M[sl_x, sl_x] -= np.outer(b, theta_const)
    M[sl_xh, sl_xh] = A_m
    w_p[sl_xh] = b * (Df - 1.0)
    if nf:
        M[sl_z, sl_z] = Af
        M[sl_xh, sl_z] = np.outer(b, Cf)
        w_p[sl_z] = Bf
        f[sl_z] = Bf * k_g
    if not delay_steps:
        # control enters the plant directly; under an input delay the
        # plant instead sees a stored past value added per step
        M[sl_x, sl_x] -= np.outer(b, K)
        if nf:
            M[sl_x, sl_z] = np.outer(b, Cf)
        w_p[sl_x] = b * Df
        f[sl_x] = b * Df * k_g
    f[sl_xh] = b * Df * k_g
    qvec = np.zeros(m)
    qvec[sl_x] = -Pb
    qvec[sl_xh] = Pb

    # reference (and, if time-varying, θ) sampled once on the half-step
    # grid used by the RK4 stages
    half_grid = t_grid[0] + 0.5 * dt * np.arange(2 * steps + 1)
    R = np.asarray(ref.eval(half_grid), dtype=float)
    if not constant_theta:
        TH_HALF = np.array([traj.eval(t)[0] for t in half_grid])

    def deriv(s_, j, u_in):
        x = s_[sl_x]
        p = float(s_[sl_th] @ x)
        ds = M @ s_
        ds += p * w_p
        ds[sl_th] = (gamma * float(qvec @ s_)) * x
        ds += R[j] * f
        if not constant_theta:
            ds[sl_x] -= b * float(TH_HALF[j] @ x)
        if u_in is not None:
            ds[sl_x] += b * u_in
        return ds

    half_dt = 0.5 * dt
    sixth_dt = dt / 6.0
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(steps + 1):
            X[k] = s[sl_x]
            XH[k] = s[sl_xh]
            TH[k] = s[sl_th]
            Z[k] = s[sl_z]
            if delay_steps:
                U[k] = (-float(K @ s[sl_x])
                        + (float(Cf @ s[sl_z]) if nf else 0.0)
                        + Df * (float(s[sl_th] @ s[sl_x]) + k_g * R[2 * k]))
            if k == steps:
                break
            u_in = _delayed(U, k, delay_steps) if delay_steps else None
            j = 2 * k
            k1 = deriv(s, j, u_in)
            k2 = deriv(s + half_dt * k1, j + 1, u_in)
            k3 = deriv(s + half_dt * k2, j + 1, u_in)
            k4 = deriv(s + dt * k3, j + 2, u_in)
            s = s + sixth_dt * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            s[sl_th] = np.clip(s[sl_th], lo, hi)
            if not (k & 31) or k == steps - 1:
                _guard(s)
    _guard(s)

    r_samples = R[::2].copy()
    if U is None:
        U = (-X @ K + (Z @ Cf if nf else 0.0)
             + Df * (np.einsum("ij,ij->i", TH, X) + k_g * r_samples))
    Vs = None
    if constant_theta:
        xt = XH - X
        tht = TH - theta_const
        Vs = (np.einsum("ij,ij->i", xt @ cfg.P, xt)
              + np.einsum("ij,ij->i", tht, tht) / gamma)
    y = X @ c
    return SimTrace(t=t_grid, x=X, x_hat=XH, theta_hat=TH, u=U, y=y,
                    r=r_samples, V=Vs)


# ---------------------------------------------------------------------------
# reference system (oracle: uses the true parameters)
# ---------------------------------------------------------------------------

def simulate_reference(plant: PlantModel, cfg: L1Config,
                       scenario: SimScenario):
    """Non-implementable benchmark loop driven by the true θ(t).

    u_ref = C(s)(k_g r + θᵀx_ref) - Kᵀx_ref, applied to the real plant.
    Returns (x_ref, u_ref, y_ref) on the scenario grid.
    """
    n = plant.dim
    nf = cfg.n_filter_states
    dt = scenario.dt
    steps = scenario.n_steps
    traj = plant.theta_traj
    constant_theta = traj.is_constant
    theta_const = np.array(traj.theta0)

    A, b, c = plant.A, plant.b, plant.c
    K, k_g = cfg.K, cfg.k_g
    Af = cfg.filter.A
    Bf = cfg.filter.B[:, 0] if nf else np.zeros(0)
    Cf = cfg.filter.C[0] if nf else np.zeros(0)
    Df = float(cfg.filter.D[0, 0])
    ref = scenario.reference

    s = np.concatenate([scenario.initial_state(n), np.zeros(nf)])
    t_grid = scenario.time_grid()
    X = np.empty((steps + 1, n))
    U = np.empty(steps + 1)

    def u_of(s_, t_):
        x = s_[:n]
        theta_t = theta_const if constant_theta else traj.eval(t_)[0]
        v = k_g * ref.eval(t_) + float(theta_t @ x)
        uC = (float(Cf @ s_[n:]) if nf else 0.0) + Df * v
        return uC - float(K @ x), v, theta_t

    def deriv(s_, t_):
        x = s_[:n]
        u, v, theta_t = u_of(s_, t_)
        dx = A @ x + b * (u - float(theta_t @ x))
        dz = Af @ s_[n:] + Bf * v if nf else np.zeros(0)
        return np.concatenate([dx, dz])

    for k in range(steps + 1):
        t = t_grid[k]
        X[k] = s[:n]
        U[k], _, _ = u_of(s, t)
        if k == steps:
            break
        k1 = deriv(s, t)
        k2 = deriv(s + 0.5 * dt * k1, t + 0.5 * dt)
        k3 = deriv(s + 0.5 * dt * k2, t + 0.5 * dt)
        k4 = deriv(s + dt * k3, t + dt)
        s = s + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        _guard(s)

    return X, U, X @ c


# ---------------------------------------------------------------------------
# design system (LTI targets, constant θ only)
# ---------------------------------------------------------------------------

def simulate_lti(sys: LtiSystem, input_samples: np.ndarray,
                 t_grid: np.ndarray) -> np.ndarray:
    """RK4 response of an LTI system to a sampled scalar input (x(0)=0).

    Stage inputs at half steps use the midpoint of adjacent samples.
    Returns output samples, shape (len(t), p).
    """
    u = np.asarray(input_samples, dtype=float)
    dt = t_grid[1] - t_grid[0]
    A, B, C, D = sys.A, sys.B[:, 0], sys.C, sys.D[:, 0]
    x = np.zeros(sys.n_states)
    out = np.empty((len(t_grid), sys.n_outputs))
    for k in range(len(t_grid)):
        out[k] = C @ x + D * u[k]
        if k == len(t_grid) - 1:
            break
        um = 0.5 * (u[k] + u[k + 1])
        k1 = A @ x + B * u[k]
        k2 = A @ (x + 0.5 * dt * k1) + B * um
        k3 = A @ (x + 0.5 * dt * k2) + B * um
        k4 = A @ (x + dt * k3) + B * u[k + 1]
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return out


def simulate_des(plant: PlantModel, cfg: L1Config, scenario: SimScenario):
    """Design targets: y_des = C k_g cᵀH_o r and its companion control map.

    y_des is independent of θ; u_des = k_g C (1 + CθᵀH_o - KᵀH_o) r depends
    on it.  Defined for constant θ only.
    """
    from l1adapt.lti import parallel, series

    if not plant.theta_traj.is_constant:
        raise ValueError("design signals are defined for constant parameters")
    theta = np.array(plant.theta_traj.theta0)

    C_f = cfg.filter
    H_o = cfg.H_o
    G_y = series(LtiSystem.static([[cfg.k_g]]),
                 series(LtiSystem.static(plant.c.reshape(1, -1)),
                        series(H_o, C_f)))
    theta_row = LtiSystem.static(theta.reshape(1, -1))
    K_row = LtiSystem.static(cfg.K.reshape(1, -1))
    inner = parallel(parallel(LtiSystem.identity(1),
                              series(C_f, series(theta_row, H_o))),
                     -series(K_row, H_o))
    G_u = series(LtiSystem.static([[cfg.k_g]]), series(C_f, inner))

    t_grid = scenario.time_grid()
    r = np.asarray(scenario.reference.eval(t_grid), dtype=float)
    y_des = simulate_lti(G_y, r, t_grid)[:, 0]
    u_des = simulate_lti(G_u, r, t_grid)[:, 0]
    return y_des, u_des


def simulate_highgain(plant: PlantModel, controller, scenario: SimScenario) -> SimTrace:
    """RK4 run of the static high-gain baseline u = k(r - x) (scalar plants)."""
    if plant.dim != 1:
        raise ValueError("high-gain baseline is defined for scalar plants")
    a = float(plant.A[0, 0])
    b = float(plant.b[0])
    c = float(plant.c[0])
    traj = plant.theta_traj
    dt = scenario.dt
    steps = scenario.n_steps
    delay_steps = scenario.delay_steps
    ref = scenario.reference
    t_grid = scenario.time_grid()
    X = np.empty(steps + 1)
    U = np.empty(steps + 1)
    x = float(scenario.initial_state(1)[0])

    def deriv(x_, t_, u_in):
        u = controller.control(x_, ref.eval(t_)) if u_in is None else u_in
        theta = float(traj.eval(t_)[0][0])
        return a * x_ + b * (u - theta * x_)

    for k in range(steps + 1):
        X[k] = x
        U[k] = controller.control(x, ref.eval(t_grid[k]))
        if k == steps:
            break
        u_in = _delayed(U, k, delay_steps) if delay_steps else None
        t = t_grid[k]
        k1 = deriv(x, t, u_in)
        k2 = deriv(x + 0.5 * dt * k1, t + 0.5 * dt, u_in)
        k3 = deriv(x + 0.5 * dt * k2, t + 0.5 * dt, u_in)
        k4 = deriv(x + dt * k3, t + dt, u_in)
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        _guard(np.array([x]))

    X2 = X.reshape(-1, 1)
    empty = np.full((steps + 1, 1), np.nan)
    return SimTrace(t=t_grid, x=X2, x_hat=empty, theta_hat=empty, u=U,
                    y=c * X, r=ref.eval(t_grid))


def _oracle_scenario(cfg: L1Config, scenario: SimScenario) -> SimScenario:
    """Coarser grid for the non-adaptive companion systems.

    The reference and design loops have no adaptation, so they do not
    inherit the amplitude-driven step refinement of the closed loop;
    integrating them at the filter-resolved step and splining back onto
    the scenario grid is far cheaper and just as accurate.
    """
    dt = default_dt(cfg)
    if dt <= scenario.dt * (1.0 + 1e-12):
        return scenario
    dt = scenario.horizon / round(scenario.horizon / dt)
    return SimScenario(horizon=scenario.horizon, dt=dt,
                       reference=scenario.reference, x0=scenario.x0)


def _resample(coarse: SimScenario, fine: SimScenario, *arrays):
    from scipy.interpolate import CubicSpline
    if coarse is fine:
        return arrays
    tc, tf = coarse.time_grid(), fine.time_grid()
    return tuple(CubicSpline(tc, a, axis=0)(tf) for a in arrays)


def run_scenario(plant: PlantModel, cfg: L1Config, scenario: SimScenario,
                 with_reference: bool = True,
                 with_design: bool = None) -> SimTrace:
    """Closed loop plus oracle series in one SimTrace."""
    trace = simulate_closed_loop(plant, cfg, scenario)
    oracle_sc = _oracle_scenario(cfg, scenario)
    if with_reference:
        series = simulate_reference(plant, cfg, oracle_sc)
        trace.attach_reference(*_resample(oracle_sc, scenario, *series))
    if with_design is None:
        with_design = plant.theta_traj.is_constant
    if with_design:
        series = simulate_des(plant, cfg, oracle_sc)
        trace.attach_design(*_resample(oracle_sc, scenario, *series))
    return trace
