"""Controller construction: filtered adaptive law, MRAC and high-gain baselines.

The adaptive architecture pairs a state predictor with a projection-based
parameter update and pushes the estimated disturbance through a strictly
proper unity-DC low-pass filter before it reaches the plant.  Setting the
filter to the identity recovers plain MRAC.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from l1adapt.lti import (
    LtiSystem,
    UnstableSystemError,
    compute_kg,
    evaluate,
    faddeev_numerators,
    h_o_system,
    is_hurwitz,
    solve_lyapunov,
)


# ---------------------------------------------------------------------------
# parameter trajectories
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ThetaTrajectory:
    """Unknown-parameter trajectory: per component θ_i(t) = θ_i0 + Σ_k a_ik cos(ω_ik t).

    harmonics[i] is a sequence of (amplitude, frequency) pairs for component i.
    An empty harmonics list everywhere is a constant parameter.
    """

    theta0: tuple
    harmonics: tuple = ()

    def __init__(self, theta0, harmonics=None):
        theta0 = tuple(float(v) for v in np.asarray(theta0, dtype=float).reshape(-1))
        n = len(theta0)
        if harmonics is None:
            harmonics = [[] for _ in range(n)]
        if len(harmonics) != n:
            raise ValueError("harmonics must have one entry per component")
        hs = tuple(tuple((float(a), float(w)) for a, w in comp) for comp in harmonics)
        object.__setattr__(self, "theta0", theta0)
        object.__setattr__(self, "harmonics", hs)

    @staticmethod
    def constant(theta) -> "ThetaTrajectory":
        return ThetaTrajectory(theta)

    @property
    def dim(self) -> int:
        return len(self.theta0)

    @property
    def is_constant(self) -> bool:
        return all(len(h) == 0 for h in self.harmonics)

    def eval(self, t: float):
        """Returns (θ(t), θ̇(t))."""
        th = np.array(self.theta0)
        dth = np.zeros(self.dim)
        for i, comp in enumerate(self.harmonics):
            for a, w in comp:
                th[i] += a * np.cos(w * t)
                dth[i] += -a * w * np.sin(w * t)
        return th, dth

    def derivative_bound(self) -> float:
        """Analytic sup of ‖θ̇‖₂, via per-component Σ|a·ω| (conservative)."""
        per = np.array([sum(abs(a * w) for a, w in comp) for comp in self.harmonics])
        return float(np.linalg.norm(per))


# ---------------------------------------------------------------------------
# plant
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PlantModel:
    """Known plant ẋ = Ax + b(u - θᵀx), y = cᵀx, with θ(t) in the box Ω."""

    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    omega_box: np.ndarray  # (n, 2) rows [lo, hi]
    theta_traj: ThetaTrajectory

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.asarray(self.b, dtype=float).reshape(-1)
        c = np.asarray(self.c, dtype=float).reshape(-1)
        box = np.asarray(self.omega_box, dtype=float).reshape(-1, 2)
        n = A.shape[0]
        if b.shape != (n,) or c.shape != (n,) or box.shape != (n, 2):
            raise ValueError("plant dimensions are inconsistent")
        if np.any(box[:, 0] > box[:, 1]):
            raise ValueError("empty parameter box")
        if not faddeev_numerators(A, b).is_full_rank:
            raise ValueError("(A, b) must be controllable")
        if self.theta_traj.dim != n:
            raise ValueError("theta trajectory dimension mismatch")
        # the trajectory must stay inside the box; check the analytic extremes
        lo = np.array(self.theta_traj.theta0) - np.array(
            [sum(abs(a) for a, _ in h) for h in self.theta_traj.harmonics])
        hi = np.array(self.theta_traj.theta0) + np.array(
            [sum(abs(a) for a, _ in h) for h in self.theta_traj.harmonics])
        if np.any(lo < box[:, 0] - 1e-12) or np.any(hi > box[:, 1] + 1e-12):
            raise ValueError("theta trajectory leaves the parameter box")
        for name, M in (("A", A), ("b", b), ("c", c), ("omega_box", box)):
            M = M.copy()
            M.setflags(write=False)
            object.__setattr__(self, name, M)

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    @property
    def box_center(self) -> np.ndarray:
        return 0.5 * (self.omega_box[:, 0] + self.omega_box[:, 1])

    def clamp(self, theta: np.ndarray) -> np.ndarray:
        return np.clip(theta, self.omega_box[:, 0], self.omega_box[:, 1])


# ---------------------------------------------------------------------------
# filters
# ---------------------------------------------------------------------------

def first_order_filter(omega: float) -> LtiSystem:
    """C(s) = ω/(s+ω)."""
    if omega <= 0:
        raise ValueError("filter bandwidth must be positive")
    return LtiSystem.from_tf([omega], [omega, 1.0])


def third_order_filter(omega: float) -> LtiSystem:
    """C(s) = (3ω²s + ω³)/(s+ω)³."""
    if omega <= 0:
        raise ValueError("filter bandwidth must be positive")
    den = np.convolve(np.convolve([omega, 1.0], [omega, 1.0]), [omega, 1.0])
    return LtiSystem.from_tf([omega ** 3, 3.0 * omega ** 2], den)


def _resolve_filter(filter_spec) -> LtiSystem:
    if isinstance(filter_spec, LtiSystem):
        return filter_spec
    kind, omega = filter_spec
    if kind in ("first_order", "first"):
        return first_order_filter(float(omega))
    if kind in ("third_order", "third"):
        return third_order_filter(float(omega))
    raise ValueError(f"unknown filter kind {kind!r}")


# ---------------------------------------------------------------------------
# controller configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class L1Config:
    """Assembled controller: gains, filter, Lyapunov pair and derived systems."""

    K: np.ndarray
    filter: LtiSystem
    gamma_c: float
    Q: np.ndarray
    P: np.ndarray
    A_m: np.ndarray
    k_g: float
    H_o: LtiSystem
    is_mrac: bool = False

    @property
    def dim(self) -> int:
        return self.A_m.shape[0]

    @property
    def n_filter_states(self) -> int:
        return self.filter.n_states


@dataclass
class ControllerState:
    """Mutable per-run state: predictor, estimate and filter states."""

    x_hat: np.ndarray
    theta_hat: np.ndarray
    filter_state: np.ndarray


def build_l1(plant: PlantModel, K, filter_spec, gamma_c: float, Q) -> L1Config:
    """Assemble the filtered adaptive controller configuration."""
    K = np.asarray(K, dtype=float).reshape(-1)
    if K.shape != (plant.dim,):
        raise ValueError("feedback gain K has wrong dimension")
    if gamma_c <= 0:
        raise ValueError("adaptation gain must be positive")
    filt = _resolve_filter(filter_spec)
    if not filt.is_siso:
        raise ValueError("filter must be SISO")
    if not filt.is_stable:
        raise UnstableSystemError("filter must be stable")
    if not filt.is_strictly_proper:
        raise ValueError("filter must be strictly proper")
    dc = float(evaluate(filt, 0.0)[0, 0].real)
    if abs(dc - 1.0) > 1e-9:
        raise ValueError(f"filter DC gain must be 1, got {dc}")
    return _assemble(plant, K, filt, gamma_c, Q, is_mrac=False)


def build_mrac(plant: PlantModel, K, gamma_c: float, Q) -> L1Config:
    """Same pipeline with the identity filter (u₂ = r̄ + k_g·r directly)."""
    K = np.asarray(K, dtype=float).reshape(-1)
    if K.shape != (plant.dim,):
        raise ValueError("feedback gain K has wrong dimension")
    if gamma_c <= 0:
        raise ValueError("adaptation gain must be positive")
    return _assemble(plant, K, LtiSystem.identity(1), gamma_c, Q, is_mrac=True)


def _assemble(plant, K, filt, gamma_c, Q, is_mrac) -> L1Config:
    A_m = plant.A - np.outer(plant.b, K)
    if not is_hurwitz(A_m):
        raise UnstableSystemError("A - bKᵀ must be Hurwitz; pick a different K")
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    P = solve_lyapunov(A_m, Q)
    k_g = compute_kg(A_m, plant.b, plant.c)
    return L1Config(K=K, filter=filt, gamma_c=float(gamma_c), Q=Q, P=P,
                    A_m=A_m, k_g=k_g, H_o=h_o_system(A_m, plant.b),
                    is_mrac=is_mrac)


def initial_state(plant: PlantModel, cfg: L1Config, x0) -> ControllerState:
    """Predictor starts at the plant state; estimate at the box center."""
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    return ControllerState(x_hat=x0.copy(),
                           theta_hat=plant.box_center.copy(),
                           filter_state=np.zeros(cfg.n_filter_states))


# ---------------------------------------------------------------------------
# per-step functions used by the simulator
# ---------------------------------------------------------------------------

def control_and_derivatives(cfg: L1Config, state: ControllerState,
                            x: np.ndarray, r: float):
    """Control value and vector fields at one instant.

    Returns (u, dx_hat, dfilter_state).  The filter input is
    v = θ̂ᵀx + k_g·r; its output u₂ adds to the static feedback -Kᵀx.
    """
    v = float(state.theta_hat @ x) + cfg.k_g * r
    filt = cfg.filter
    if filt.n_states:
        u2 = float(filt.C[0] @ state.filter_state) + float(filt.D[0, 0]) * v
        dz = filt.A @ state.filter_state + filt.B[:, 0] * v
    else:
        u2 = float(filt.D[0, 0]) * v
        dz = np.zeros(0)
    u = -float(cfg.K @ x) + u2
    dx_hat = cfg.A_m @ state.x_hat - cfg.H_o.B[:, 0] * float(state.theta_hat @ x) \
        + cfg.H_o.B[:, 0] * u2
    return u, dx_hat, dz


def adaptation_step(cfg: L1Config, plant: PlantModel, theta_hat: np.ndarray,
                    x: np.ndarray, x_tilde: np.ndarray, dt: float) -> np.ndarray:
    """Euler step of the adaptive law followed by clamping onto the box.

    Clamping realises the projection: it keeps θ̂ in Ω, which is the only
    property the stability argument uses.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    drive = cfg.gamma_c * x * float(x_tilde @ (cfg.P @ plant.b))
    return plant.clamp(theta_hat + dt * drive)


def adaptation_derivative(cfg: L1Config, plant: PlantModel,
                          theta_hat: np.ndarray, x: np.ndarray,
                          x_tilde: np.ndarray) -> np.ndarray:
    """Unprojected adaptive-law derivative, for use inside RK4 stages."""
    return cfg.gamma_c * x * float(x_tilde @ (cfg.P @ plant.b))


# ---------------------------------------------------------------------------
# high-gain baseline (scalar plants)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HighGainController:
    """Static law u = -kx + kr for a scalar plant ẋ = -θx + u."""

    k: float

    def control(self, x: float, r: float) -> float:
        return self.k * (r - x)


def build_highgain(plant: PlantModel, k: float) -> HighGainController:
    if plant.dim != 1:
        raise ValueError("high-gain baseline is defined for scalar plants")
    theta_min = float(plant.omega_box[0, 0])
    if k <= -theta_min:
        raise ValueError(
            f"k = {k} can destabilize the loop; need k > {-theta_min}")
    return HighGainController(k=float(k))
