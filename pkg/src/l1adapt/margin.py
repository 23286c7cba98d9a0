"""Time-delay margins of the scalar adaptive loops, versus adaptation gain.

Compares the integral-action (PI-equivalent) adaptive loop against the
filtered variant.  Both open-loop transfer functions are affine in the
delay factor e^{-sτ}; the margin is the smallest delay at which the
frequency response crosses the critical point -1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from l1adapt.lti import LtiSystem, evaluate


def default_margin_filter() -> LtiSystem:
    """C(s) = s/(s+1), the washout filter used in the margin comparison."""
    return LtiSystem.from_tf([0.0, 1.0], [1.0, 1.0])


def _filter_response(C_spec, s):
    if C_spec is None:
        return s / (s + 1.0)
    if isinstance(C_spec, LtiSystem):
        flat = np.atleast_1d(s)
        vals = np.array([evaluate(C_spec, si)[0, 0] for si in flat])
        return vals.reshape(np.shape(s)) if np.shape(s) else complex(vals[0])
    if callable(C_spec):
        return C_spec(s)
    num, den = C_spec
    return np.polyval(num[::-1], s) / np.polyval(den[::-1], s)


def open_loop_mrac(gamma: float, k: float, omega, tau: float):
    """Integral-action loop (-ks + Γ)/(s(s-1)) · e^{-sτ} at s = jω."""
    s = 1j * np.asarray(omega, dtype=float)
    return (-k * s + gamma) / (s * (s - 1.0)) * np.exp(-s * tau)


def open_loop_l1(gamma: float, k: float, a_m: float, C_spec, tau: float,
                 omega):
    """Filtered loop -k/(s-1)·e^{-sτ} + ΓC(s)/(s²-a_m·s+Γ)·(e^{-sτ}-1)."""
    s = 1j * np.asarray(omega, dtype=float)
    e = np.exp(-s * tau)
    C = _filter_response(C_spec, s)
    return -k / (s - 1.0) * e + gamma * C / (s * s - a_m * s + gamma) * (e - 1.0)


def derived_loop_mrac(gamma: float, k: float, omega, tau: float):
    """Negative-feedback loop of the integral-action architecture.

    Derived from u = -θ̂ - kx + r with θ̂̇ = Γ(x - x_m) on the plant
    ẋ = x + u(t-τ): L = (ks + Γ)/(s(s-1))·e^{-sτ}, so the zero-delay
    characteristic s² + (k-1)s + Γ is Hurwitz for k > 1.
    """
    return open_loop_mrac(gamma, -k, omega, tau)


def derived_loop_l1(gamma: float, k: float, a_m: float, C_spec, tau: float,
                    omega):
    """Negative-feedback loop of the filtered architecture.

    Derived from u = -C(s)(θ̂ - r) - kx with the predictor
    x̂̇ = a_m·x̂ + u + θ̂ and adaptation θ̂̇ = -Γ(x̂ - x):

        L = e^{-sτ}·(kD + ΓC(s - a_m)) / ((s-1)(D - ΓC)),  D = s² - a_m·s + Γ.

    C must be a unity-DC low-pass (default 1/(s+1)) for the zero-delay loop
    to be stable at every adaptation gain.
    """
    s = 1j * np.asarray(omega, dtype=float)
    C = 1.0 / (s + 1.0) if C_spec is None else _filter_response(C_spec, s)
    D = s * s - a_m * s + gamma
    return (np.exp(-s * tau) * (k * D + gamma * C * (s - a_m))
            / ((s - 1.0) * (D - gamma * C)))


class UnstableAtZeroDelay(RuntimeError):
    """The loop already touches the critical point with no delay."""


_OMEGA_GRID = np.logspace(-3, 5, 600)


def _affine_parts(loop, omega):
    """Split loop(ω, τ) = A(ω) + B(ω)·e^{-jωτ} by probing two delays.

    Both architecture loops (and any loop with a single input delay) have
    this form; a third probe validates the assumption.
    """
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    L1 = np.atleast_1d(loop(omega, 0.0))
    # per-ω probe delays chosen so e^{-jωτ} equals -1 (and -j for validation)
    Lm = np.array([complex(loop(float(w), math.pi / w)) for w in omega])
    A = 0.5 * (L1 + Lm)
    B = 0.5 * (L1 - Lm)
    Lq = np.array([complex(loop(float(w), 0.5 * math.pi / w)) for w in omega])
    scale = np.maximum(np.abs(L1), 1.0)
    if np.max(np.abs(A - 1j * B - Lq) / scale) > 1e-8:
        return None
    return A, B


def _first_crossing_tau(loop, omega_grid, tol):
    """Smallest τ > tol-zero with loop(jω; τ) = -1, via the affine split.

    The critical-point condition per frequency is e^{-jωτ} = z(ω) with
    z = (-1 - A)/B, solvable iff |z| = 1; the roots of |z| - 1 on the grid
    are refined by bisection and each yields its smallest positive τ.
    """
    parts = _affine_parts(loop, omega_grid)
    if parts is None:
        raise ValueError("loop is not affine in the delay factor; supply a "
                         "loop of the form A(ω) + B(ω)e^{-jωτ}")

    def z_of(w):
        L0 = complex(loop(float(w), 0.0))
        Lm = complex(loop(float(w), math.pi / float(w)))
        A, B = 0.5 * (L0 + Lm), 0.5 * (L0 - Lm)
        return (-1.0 - A) / B if B != 0.0 else complex(math.inf)

    A, B = parts
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(np.abs(B) > 0, (-1.0 - A) / np.where(B == 0, 1, B), np.inf)
    f = np.abs(z) - 1.0

    def tau_at(w):
        zw = z_of(w)
        phase = -np.angle(zw)           # need -ωτ ≡ arg z (mod 2π)
        tau = phase / w
        if tau <= 0.0:
            tau += 2.0 * math.pi / w
        return tau

    best = math.inf
    finite = np.isfinite(f)
    for i in range(len(omega_grid) - 1):
        if not (finite[i] and finite[i + 1]):
            continue
        if f[i] == 0.0:
            best = min(best, tau_at(omega_grid[i]))
            continue
        if f[i] * f[i + 1] < 0.0:
            lo, hi = omega_grid[i], omega_grid[i + 1]
            flo = f[i]
            for _ in range(80):
                mid = 0.5 * (lo + hi)
                fm = abs(z_of(mid)) - 1.0
                if fm == 0.0:
                    lo = hi = mid
                    break
                if (fm > 0) == (flo > 0):
                    lo, flo = mid, fm
                else:
                    hi = mid
                if hi - lo <= 1e-13 * hi:
                    break
            best = min(best, tau_at(0.5 * (lo + hi)))
    return best


def time_delay_margin(loop, tau_max: float = 10.0, tol: float = 1e-3,
                      omega_grid=None) -> float:
    """Smallest τ at which loop(ω, τ) reaches -1; tau_max if none found.

    loop(omega, tau) must return the complex response at s = jω (vectorized
    over omega) and be affine in e^{-jωτ} (a single input delay).  The
    crossing frequency is located on a log grid and bisected; the resulting
    margin is accurate to well below 1e-5 s.
    """
    grid = _OMEGA_GRID if omega_grid is None else np.asarray(omega_grid)
    if float(np.min(np.abs(1.0 + loop(grid, 0.0)))) < tol:
        raise UnstableAtZeroDelay(
            "loop passes through the critical point at zero delay")
    return min(_first_crossing_tau(loop, grid, tol), tau_max)


@dataclass(frozen=True)
class MarginCurve:
    """Delay margins per adaptation gain for both scalar architectures."""

    gamma_values: np.ndarray
    tau_mrac: np.ndarray
    tau_l1: np.ndarray
    k: float
    a_m: float
    C_spec: object

    def lines(self):
        out = [f"k = {self.k:g}, a_m = {self.a_m:g}",
               f"{'gamma':>12} {'tau_mrac':>12} {'tau_l1':>12}"]
        for g, tm, tl in zip(self.gamma_values, self.tau_mrac, self.tau_l1):
            out.append(f"{g:12.6g} {tm:12.6g} {tl:12.6g}")
        return out


def margin_curve(gamma_values, k: float = 2.0, a_m: float = -1.0,
                 C_spec=None, tau_max: float = 10.0) -> MarginCurve:
    """Delay margin of both architectures over an ascending gain grid.

    Uses the loops re-derived from the architecture equations
    (:func:`derived_loop_mrac`, :func:`derived_loop_l1`) so the zero-delay
    closed loop is Hurwitz at every gain; C_spec is the unity-DC low-pass of
    the filtered architecture (default 1/(s+1)).
    """
    gammas = np.asarray(gamma_values, dtype=float)
    if np.any(gammas <= 0) or np.any(np.diff(gammas) <= 0):
        raise ValueError("gamma grid must be positive ascending")
    tau_m = np.array([
        time_delay_margin(lambda w, t, g=g: derived_loop_mrac(g, k, w, t),
                          tau_max=tau_max)
        for g in gammas])
    tau_l = np.array([
        time_delay_margin(lambda w, t, g=g: derived_loop_l1(g, k, a_m, C_spec, t, w),
                          tau_max=tau_max)
        for g in gammas])
    return MarginCurve(gamma_values=gammas, tau_mrac=tau_m, tau_l1=tau_l,
                       k=k, a_m=a_m, C_spec=C_spec)
