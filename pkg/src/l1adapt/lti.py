"""Continuous-time LTI state-space algebra.

Everything here is a pure function of its inputs.  Systems are state-space
quadruples (A, B, C, D); transfer functions are realised in controllable
canonical form.  The L1 gain (integral of the absolute impulse response,
direct feedthrough counted as a Dirac mass) is the workhorse quantity of the
whole toolkit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import simpson
from scipy.linalg import expm

# Eigenvalues with real part above -EPS_STAB are treated as unstable.
EPS_STAB = 1e-9


class UnstableSystemError(ValueError):
    """Raised when an operation requires a stable (Hurwitz) system."""


class UncontrollablePairError(ValueError):
    """Raised when (A, b) fails the numerator-matrix rank test."""


# ---------------------------------------------------------------------------
# polynomials
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Polynomial:
    """Real polynomial with ascending coefficients: coeffs[k] multiplies s^k."""

    coeffs: tuple

    def __init__(self, coeffs):
        c = np.atleast_1d(np.asarray(coeffs, dtype=float))
        # normalize: strip trailing (high-order) zeros, keep the zero polynomial
        # as a single coefficient
        nz = np.nonzero(c)[0]
        c = c[: nz[-1] + 1] if nz.size else c[:1]
        object.__setattr__(self, "coeffs", tuple(float(v) for v in c))

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    @property
    def is_zero(self) -> bool:
        return len(self.coeffs) == 1 and self.coeffs[0] == 0.0

    def __call__(self, s):
        out = 0.0
        for c in reversed(self.coeffs):
            out = out * s + c
        return out

    def __mul__(self, other: "Polynomial") -> "Polynomial":
        return Polynomial(np.convolve(self.coeffs, other.coeffs))

    def __add__(self, other: "Polynomial") -> "Polynomial":
        n = max(len(self.coeffs), len(other.coeffs))
        a = np.zeros(n)
        a[: len(self.coeffs)] = self.coeffs
        a[: len(other.coeffs)] += other.coeffs
        return Polynomial(a)

    def roots(self) -> np.ndarray:
        if self.degree < 1:
            return np.array([])
        return np.roots(self.coeffs[::-1])

    @staticmethod
    def from_roots(roots) -> "Polynomial":
        c = np.array([1.0])
        for r in roots:
            c = np.convolve(c, [-r, 1.0])
        return Polynomial(np.real_if_close(c))


# ---------------------------------------------------------------------------
# state-space systems
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LtiSystem:
    """State-space realization ẋ = Ax + Bu, y = Cx + Du.

    A static (memoryless) system is represented with zero states
    (A is 0x0) and y = Du.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        D = np.atleast_2d(np.asarray(self.D, dtype=float))
        if A.size == 0:
            A = A.reshape(0, 0)
            B = B.reshape(0, D.shape[1])
            C = C.reshape(D.shape[0], 0)
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError(f"A must be square, got {A.shape}")
        if B.shape[0] != n or C.shape[1] != n:
            raise ValueError("inconsistent state dimensions")
        if D.shape != (C.shape[0], B.shape[1]):
            raise ValueError("inconsistent input/output dimensions")
        for name, M in (("A", A), ("B", B), ("C", C), ("D", D)):
            M = M.copy()
            M.setflags(write=False)
            object.__setattr__(self, name, M)

    # -- dimensions ---------------------------------------------------------
    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.B.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.C.shape[0]

    @property
    def is_siso(self) -> bool:
        return self.n_inputs == 1 and self.n_outputs == 1

    @property
    def is_strictly_proper(self) -> bool:
        return not np.any(self.D)

    @property
    def is_static(self) -> bool:
        return self.n_states == 0

    @property
    def is_stable(self) -> bool:
        return self.is_static or is_hurwitz(self.A)

    def poles(self) -> np.ndarray:
        return np.linalg.eigvals(self.A)

    # -- constructors -------------------------------------------------------
    @staticmethod
    def static(D) -> "LtiSystem":
        D = np.atleast_2d(np.asarray(D, dtype=float))
        return LtiSystem(np.zeros((0, 0)), np.zeros((0, D.shape[1])),
                         np.zeros((D.shape[0], 0)), D)

    @staticmethod
    def identity(n: int = 1) -> "LtiSystem":
        return LtiSystem.static(np.eye(n))

    @staticmethod
    def from_tf(num, den) -> "LtiSystem":
        """SISO realization of num(s)/den(s) in controllable canonical form.

        Coefficients ascending (index k multiplies s^k).  The denominator is
        normalized to leading coefficient +1.  Improper fractions are
        rejected.
        """
        num = Polynomial(num)
        den = Polynomial(den)
        if den.is_zero:
            raise ValueError("zero denominator")
        if num.degree > den.degree:
            raise ValueError("improper transfer function")
        lead = den.coeffs[-1]
        dc = np.asarray(den.coeffs) / lead
        nc = np.asarray(num.coeffs) / lead
        n = den.degree
        if n == 0:
            return LtiSystem.static([[nc[0]]])
        # polynomial division: num = D*den + remainder (deg remainder < n)
        full = np.zeros(n + 1)
        full[: len(nc)] = nc
        Dcoef = full[n]
        rem = full[:n] - Dcoef * dc[:n]
        A = np.zeros((n, n))
        if n > 1:
            A[:-1, 1:] = np.eye(n - 1)
        A[-1, :] = -dc[:n]
        B = np.zeros((n, 1))
        B[-1, 0] = 1.0
        C = rem.reshape(1, n)
        return LtiSystem(A, B, C, [[Dcoef]])

    # -- arithmetic sugar ---------------------------------------------------
    def __mul__(self, alpha: float) -> "LtiSystem":
        return LtiSystem(self.A, self.B, alpha * self.C, alpha * self.D)

    __rmul__ = __mul__

    def __neg__(self) -> "LtiSystem":
        return self * -1.0


# ---------------------------------------------------------------------------
# basic tests and solves
# ---------------------------------------------------------------------------

def is_hurwitz(A) -> bool:
    """True iff every eigenvalue of A has real part below -EPS_STAB."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] != A.shape[1]:
        raise ValueError("matrix must be square")
    return bool(np.all(np.linalg.eigvals(A).real < -EPS_STAB))


def solve_lyapunov(A_m, Q) -> np.ndarray:
    """Solve A_mᵀP + P A_m = -Q for symmetric positive-definite P.

    Uses the Kronecker vectorization of the equation; fine for the small
    state dimensions this toolkit targets.
    """
    A_m = np.atleast_2d(np.asarray(A_m, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    n = A_m.shape[0]
    if not is_hurwitz(A_m):
        raise UnstableSystemError("A_m must be Hurwitz for a PD Lyapunov solution")
    if not np.allclose(Q, Q.T) or np.any(np.linalg.eigvalsh(Q) <= 0):
        raise ValueError("Q must be symmetric positive definite")
    I = np.eye(n)
    K = np.kron(I, A_m.T) + np.kron(A_m.T, I)
    p = np.linalg.solve(K, -Q.reshape(-1))
    P = p.reshape(n, n)
    P = 0.5 * (P + P.T)
    return P


# ---------------------------------------------------------------------------
# resolvent numerators
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NumeratorMatrix:
    """Coefficients of (sI-A)⁻¹b = n(s)/d(s).

    N[i, j] is the coefficient of s^j in the i-th numerator polynomial;
    d is det(sI - A).
    """

    N: np.ndarray
    d: Polynomial

    def numerator(self, i: int) -> Polynomial:
        return Polynomial(self.N[i])

    @property
    def is_full_rank(self) -> bool:
        sv = np.linalg.svd(self.N, compute_uv=False)
        return bool(sv[-1] > 1e-10 * sv[0]) if sv[0] > 0 else False


def faddeev_numerators(A, b) -> NumeratorMatrix:
    """Faddeev-LeVerrier construction of adj(sI-A)·b and det(sI-A).

    adj(sI-A) = Σ_{k=0}^{n-1} M_k s^{n-1-k} with M_0 = I,
    M_k = A M_{k-1} + c_{n-k} I, where det(sI-A) = Σ c_k s^k, c_n = 1.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).reshape(-1)
    n = A.shape[0]
    if A.shape != (n, n) or b.shape != (n,):
        raise ValueError("dimension mismatch")
    c = np.zeros(n + 1)
    c[n] = 1.0
    M = np.eye(n)
    N = np.zeros((n, n))
    N[:, n - 1] = M @ b
    for k in range(1, n):
        AM = A @ M
        c[n - k] = -np.trace(AM) / k
        M = AM + c[n - k] * np.eye(n)
        N[:, n - 1 - k] = M @ b
    if n > 0:
        c[0] = -np.trace(A @ M) / n
    return NumeratorMatrix(N, Polynomial(c))


def construct_co(A_m, b) -> np.ndarray:
    """Output vector making c_oᵀ(sI-A_m)⁻¹b minimum phase of relative degree 1.

    Uses c_o = (N⁻ᵀ) c̄ with c̄ the ascending coefficients of (s+1)^{n-1};
    any stable target numerator works, this choice fixes determinism.
    """
    A_m = np.atleast_2d(np.asarray(A_m, dtype=float))
    b = np.asarray(b, dtype=float).reshape(-1)
    nm = faddeev_numerators(A_m, b)
    if not nm.is_full_rank:
        raise UncontrollablePairError("(A, b) is not controllable (N rank-deficient)")
    n = A_m.shape[0]
    cbar = np.asarray(Polynomial.from_roots([-1.0] * (n - 1)).coeffs)
    target = np.zeros(n)
    target[: len(cbar)] = cbar
    return np.linalg.solve(nm.N.T, target)


# ---------------------------------------------------------------------------
# responses and gains
# ---------------------------------------------------------------------------

def _impulse_samples(sys: LtiSystem, t: np.ndarray) -> np.ndarray:
    """Strictly-proper impulse response C·exp(At)·B on the grid t.

    Shape (len(t), p, m).  Uses the eigendecomposition when it is well
    conditioned, otherwise exact stepping with the matrix exponential of the
    (uniform) grid step.
    """
    n = sys.n_states
    if n == 0:
        return np.zeros((len(t), sys.n_outputs, sys.n_inputs))
    w, V = np.linalg.eig(sys.A)
    try:
        cond = np.linalg.cond(V)
    except np.linalg.LinAlgError:
        cond = np.inf
    if np.isfinite(cond) and cond < 1e8:
        W1 = sys.C @ V
        W2 = np.linalg.solve(V, sys.B)
        E = np.exp(np.outer(t, w))
        return np.real(np.einsum("pk,tk,km->tpm", W1, E, W2))
    # defective/ill-conditioned A: exact propagation at grid resolution
    dt = t[1] - t[0]
    E = expm(sys.A * dt)
    X = sys.B.copy()
    out = np.empty((len(t), sys.n_outputs, sys.n_inputs))
    for k in range(len(t)):
        out[k] = sys.C @ X
        X = E @ X
    return out


def impulse_response(sys: LtiSystem, horizon: float, step: float):
    """Sampled strictly-proper impulse response plus the direct term.

    Returns (t, h, D) with h of shape (len(t), p, m).  Refuses unstable
    systems: the L1 machinery is only defined for stable ones.
    """
    if step <= 0 or horizon < step:
        raise ValueError("need step > 0 and horizon >= step")
    if not sys.is_stable:
        raise UnstableSystemError("impulse_response requires a stable system")
    t = np.arange(0.0, horizon + 0.5 * step, step)
    return t, _impulse_samples(sys, t), np.array(sys.D)


def l1_gain(sys: LtiSystem, rel_tol: float = 1e-4) -> float:
    """L1 gain: max over output rows of Σ_j (|D_ij| + ∫₀^∞ |h_ij(t)| dt).

    The integral uses the composite Simpson rule on a grid fine enough for
    the fastest mode, with the horizon doubled until the analytic
    exponential tail bound drops below rel_tol of the running integral.
    """
    if not sys.is_stable:
        raise UnstableSystemError("l1_gain requires a stable system")
    base = np.abs(sys.D).sum(axis=1).max() if sys.D.size else 0.0
    if sys.is_static:
        return float(base)

    re = np.linalg.eigvals(sys.A).real
    sigma = -re.max()        # slowest decay rate
    sigma_fast = -re.min()   # fastest decay rate
    # resolve the fastest mode; the spec's slowest-mode rule alone
    # under-samples stiff cascades
    step = min(1.0 / (200.0 * sigma), 1.0 / (40.0 * sigma_fast))
    horizon = 10.0 / sigma

    for _ in range(60):
        t = np.arange(0.0, horizon + 0.5 * step, step)
        if len(t) % 2 == 0:
            t = np.append(t, t[-1] + step)
        h = _impulse_samples(sys, t)
        integ = simpson(np.abs(h), x=t, axis=0)          # (p, m)
        row = (np.abs(sys.D) + integ).sum(axis=1).max()
        # tail envelope: |h(t)| <= M e^{-sigma t} fitted on the second half
        tail_half = np.abs(h[len(t) // 2:]).sum(axis=(1, 2))
        with np.errstate(divide="ignore"):
            logM = np.max(np.log(np.maximum(tail_half, 1e-300))
                          + sigma * t[len(t) // 2:])
        tail = np.exp(logM - sigma * t[-1]) / sigma
        if tail <= rel_tol * max(row, 1e-300):
            return float(row)
        horizon *= 2.0
    raise RuntimeError("l1_gain horizon extension failed to converge")


def evaluate(sys: LtiSystem, s: complex) -> np.ndarray:
    """Frequency response C(sI-A)⁻¹B + D at a single complex point."""
    if sys.is_static:
        return sys.D.astype(complex)
    M = s * np.eye(sys.n_states) - sys.A
    if abs(np.linalg.det(M)) == 0:
        raise ValueError("s is an eigenvalue of A")
    return sys.C @ np.linalg.solve(M, sys.B) + sys.D


# ---------------------------------------------------------------------------
# interconnections
# ---------------------------------------------------------------------------

def series(sys2: LtiSystem, sys1: LtiSystem) -> LtiSystem:
    """Cascade sys2 ∘ sys1 (input enters sys1 first)."""
    if sys1.n_outputs != sys2.n_inputs:
        raise ValueError(
            f"dimension mismatch: sys1 has {sys1.n_outputs} outputs, "
            f"sys2 expects {sys2.n_inputs} inputs")
    n1, n2 = sys1.n_states, sys2.n_states
    A = np.block([
        [sys1.A, np.zeros((n1, n2))],
        [sys2.B @ sys1.C, sys2.A],
    ]) if n1 + n2 else np.zeros((0, 0))
    B = np.vstack([sys1.B, sys2.B @ sys1.D])
    C = np.hstack([sys2.D @ sys1.C, sys2.C])
    D = sys2.D @ sys1.D
    return LtiSystem(A, B, C, D)


def parallel(sys1: LtiSystem, sys2: LtiSystem) -> LtiSystem:
    """Sum sys1 + sys2 (shared input, outputs added)."""
    if sys1.n_inputs != sys2.n_inputs or sys1.n_outputs != sys2.n_outputs:
        raise ValueError("parallel systems must share input/output dimensions")
    n1, n2 = sys1.n_states, sys2.n_states
    A = np.block([
        [sys1.A, np.zeros((n1, n2))],
        [np.zeros((n2, n1)), sys2.A],
    ]) if n1 + n2 else np.zeros((0, 0))
    B = np.vstack([sys1.B, sys2.B])
    C = np.hstack([sys1.C, sys2.C])
    return LtiSystem(A, B, C, sys1.D + sys2.D)


def diag_repeat(sys: LtiSystem, n: int) -> LtiSystem:
    """Block-diagonal stack of n copies of a SISO system: sys(s)·Iₙ."""
    if not sys.is_siso:
        raise ValueError("diag_repeat expects a SISO system")
    ns = sys.n_states
    A = np.kron(np.eye(n), sys.A) if ns else np.zeros((0, 0))
    B = np.kron(np.eye(n), sys.B)
    C = np.kron(np.eye(n), sys.C)
    D = np.kron(np.eye(n), sys.D)
    return LtiSystem(A, B, C, D)


def feedback_inverse(M: LtiSystem) -> LtiSystem:
    """Realization of (I - M(s))⁻¹ for a square system M.

    Stable whenever the L1 small-gain condition ‖M‖_L1 < 1 holds.
    """
    if M.n_inputs != M.n_outputs:
        raise ValueError("feedback_inverse expects a square system")
    I = np.eye(M.n_outputs)
    try:
        S = np.linalg.inv(I - M.D)
    except np.linalg.LinAlgError:
        raise ValueError("I - D is singular") from None
    A = M.A + M.B @ S @ M.C
    B = M.B @ S
    C = S @ M.C
    return LtiSystem(A, B, C, S)


def compute_kg(A_m, b, c) -> float:
    """Feedforward gain 1 / (cᵀ(-A_m)⁻¹b) (inverse DC gain of cᵀH_o)."""
    A_m = np.atleast_2d(np.asarray(A_m, dtype=float))
    b = np.asarray(b, dtype=float).reshape(-1)
    c = np.asarray(c, dtype=float).reshape(-1)
    dc = float(c @ np.linalg.solve(-A_m, b))
    if abs(dc) < 1e-12:
        raise ValueError("zero DC gain: no feasible feedforward gain")
    return 1.0 / dc


def h_o_system(A_m, b) -> LtiSystem:
    """The n-output strictly proper system (sI - A_m)⁻¹b."""
    A_m = np.atleast_2d(np.asarray(A_m, dtype=float))
    b = np.asarray(b, dtype=float).reshape(-1, 1)
    n = A_m.shape[0]
    return LtiSystem(A_m, b, np.eye(n), np.zeros((n, 1)))
