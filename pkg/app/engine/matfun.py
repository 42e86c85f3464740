"""
Dense matrix functions: exponentials, Van Loan integrals, algebraic and
differential Riccati equations, Lyapunov equations
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from app.core.errors import DimensionError, InvalidInputError, NotHurwitzError, RiccatiError

logger = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-10
HURWITZ_MARGIN = 1e-12
IMAG_AXIS_TOL = 1e-10
ESCAPE_RTOL = 1e-9
CROSSING_ATOL = 1e-8
CONVERGENCE_RTOL = 1e-9


def as_matrix(M, name: str = "matrix") -> np.ndarray:
    """Convert to a finite 2-D float array"""
    arr = np.asarray(M, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise DimensionError(f"{name} must be two-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return arr


def as_block(M, rows: int, cols: int, name: str) -> np.ndarray:
    """Matrix of a prescribed shape; an empty input stands for zeros of an empty shape"""
    if M is None or np.size(M) == 0:
        if rows * cols != 0 and M is not None:
            raise DimensionError(f"{name} must be {rows}x{cols}")
        return np.zeros((rows, cols))
    arr = as_matrix(M, name)
    if arr.shape != (rows, cols):
        raise DimensionError(f"{name} must be {rows}x{cols}, got {arr.shape}")
    return arr


def as_square(M, name: str = "matrix") -> np.ndarray:
    arr = as_matrix(M, name)
    if arr.shape[0] != arr.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {arr.shape}")
    return arr


def as_symmetric(M, n: int, name: str) -> np.ndarray:
    """Square n x n matrix symmetric to SYMMETRY_TOL, returned exactly symmetric"""
    arr = as_square(M, name)
    if arr.shape[0] != n:
        raise DimensionError(f"{name} must be {n}x{n}, got {arr.shape}")
    scale = max(1.0, float(np.max(np.abs(arr)))) if arr.size else 1.0
    if arr.size and np.max(np.abs(arr - arr.T)) > SYMMETRY_TOL * scale:
        raise InvalidInputError(f"{name} is not symmetric")
    return symmetrize(arr)


def symmetrize(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def max_real_part(A: np.ndarray) -> float:
    if A.shape[0] == 0:
        return -math.inf
    return float(np.max(np.linalg.eigvals(A).real))


def spectral_radius(M) -> float:
    """Largest eigenvalue modulus; 0 for an empty matrix"""
    M = as_square(M, "M")
    if M.shape[0] == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def expm(A, t: float = 1.0) -> np.ndarray:
    """Matrix exponential e^{At}"""
    A = as_square(A, "A")
    if not math.isfinite(t):
        raise InvalidInputError("t must be finite")
    if A.shape[0] == 0:
        return np.zeros((0, 0))
    return scipy.linalg.expm(A * t)


def van_loan_integral(Au, Bc, Al, theta: float) -> np.ndarray:
    """
    Integral of e^{Au (theta - s)} Bc e^{Al s} over [0, theta]

    Read off the upper-right block of the exponential of the block upper
    triangular matrix [[Au, Bc], [0, Al]].
    """
    Au = as_square(Au, "Au")
    Al = as_square(Al, "Al")
    Bc = as_matrix(Bc, "Bc") if np.size(Bc) else np.zeros((Au.shape[0], Al.shape[0]))
    nu, nl = Au.shape[0], Al.shape[0]
    if Bc.shape != (nu, nl):
        raise DimensionError(f"Bc must be {nu}x{nl}, got {Bc.shape}")
    if theta < 0:
        raise InvalidInputError("theta must be non-negative")
    if nu == 0 or nl == 0:
        return np.zeros((nu, nl))
    block = np.zeros((nu + nl, nu + nl))
    block[:nu, :nu] = Au
    block[:nu, nu:] = Bc
    block[nu:, nu:] = Al
    return scipy.linalg.expm(block * theta)[:nu, nu:]


def gramian_integral(A, C, theta: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Return (e^{A theta}, integral of e^{A's} C'C e^{As} over [0, theta])

    Used for exact output energies over a propagation step.
    """
    A = as_square(A, "A")
    C = as_matrix(C, "C") if np.size(C) else np.zeros((0, A.shape[0]))
    n = A.shape[0]
    if n == 0:
        return np.zeros((0, 0)), np.zeros((0, 0))
    block = np.zeros((2 * n, 2 * n))
    block[:n, :n] = -A.T
    block[:n, n:] = C.T @ C
    block[n:, n:] = A
    E = scipy.linalg.expm(block * theta)
    Phi = E[n:, n:]
    return Phi, symmetrize(Phi.T @ E[:n, n:])


@dataclass(frozen=True)
class RiccatiSolution:
    """Stabilizing solution of A'X + XA - XSX + Q = 0"""

    X: np.ndarray
    residual_norm: float
    closed_loop_eigs: np.ndarray


def _care_residual(A, S, Q, X) -> float:
    return float(np.linalg.norm(A.T @ X + X @ A - X @ S @ X + Q))


def care(A, S, Q) -> RiccatiSolution:
    """
    Stabilizing solution of the continuous algebraic Riccati equation

        A'X + XA - XSX + Q = 0,  A - SX Hurwitz

    Ordered real Schur form of the Hamiltonian [[A, -S], [-Q, -A']]
    followed by one Newton refinement step.
    """
    A = as_square(A, "A")
    n = A.shape[0]
    S = as_symmetric(S, n, "S")
    Q = as_symmetric(Q, n, "Q")
    if n == 0:
        return RiccatiSolution(np.zeros((0, 0)), 0.0, np.zeros(0, dtype=complex))

    H = np.block([[A, -S], [-Q, -A.T]])
    scale = max(1.0, float(np.linalg.norm(H, 1)))
    eigs = np.linalg.eigvals(H)
    if np.min(np.abs(eigs.real)) <= IMAG_AXIS_TOL * scale:
        raise RiccatiError("Hamiltonian has eigenvalues on the imaginary axis")

    _, U, sdim = scipy.linalg.schur(H, output="real", sort="lhp")
    if sdim != n:
        raise RiccatiError(f"stable invariant subspace has dimension {sdim}, expected {n}")
    U11 = U[:n, :n]
    U21 = U[n:, :n]
    if np.linalg.cond(U11) > 1e12:
        raise RiccatiError("stable invariant subspace is not a graph subspace")
    X = symmetrize(np.linalg.solve(U11.T, U21.T).T)
    residual = _care_residual(A, S, Q, X)

    # one Kleinman step
    A_cl = A - S @ X
    if max_real_part(A_cl) < -HURWITZ_MARGIN:
        X_newton = symmetrize(scipy.linalg.solve_continuous_lyapunov(A_cl.T, -(Q + X @ S @ X)))
        residual_newton = _care_residual(A, S, Q, X_newton)
        if np.all(np.isfinite(X_newton)) and residual_newton < residual:
            X, residual = X_newton, residual_newton

    closed_loop_eigs = np.linalg.eigvals(A - S @ X)
    if np.max(closed_loop_eigs.real) >= -HURWITZ_MARGIN:
        raise RiccatiError("Riccati solution is not stabilizing")
    logger.debug(f"care: n={n} residual={residual:.3e}")
    return RiccatiSolution(X=X, residual_norm=residual, closed_loop_eigs=closed_loop_eigs)


def lyap(A, Q) -> np.ndarray:
    """Solution of AX + XA' + Q = 0 for Hurwitz A"""
    A = as_square(A, "A")
    n = A.shape[0]
    Q = as_symmetric(Q, n, "Q")
    if n == 0:
        return np.zeros((0, 0))
    if max_real_part(A) >= -HURWITZ_MARGIN:
        raise NotHurwitzError("lyap requires a Hurwitz matrix")
    return symmetrize(scipy.linalg.solve_continuous_lyapunov(A, -Q))


# Differential Riccati equation  P' = AP + PA' + W + PRP


@dataclass(frozen=True)
class DreTrajectory:
    times: np.ndarray
    P_values: List[np.ndarray]
    rho_px: List[float]
    escape_time: Optional[float] = None

    @property
    def escaped(self) -> bool:
        return self.escape_time is not None


@dataclass(frozen=True)
class CrossingResult:
    """First time rho(P(t)X) reaches a level; inf if it never does"""

    time: float
    escaped: bool = False
    converged: bool = False


class _DreFlow:
    """
    Closed-form propagation of P' = AP + PA' + W + PRP through the
    Hamiltonian H = [[-A', -R], [W, A]]: with e^{H tau} partitioned into
    blocks, P(tau) = (F21 + F22 P)(F11 + F12 P)^{-1} as long as the
    denominator stays nonsingular.
    """

    def __init__(self, A, W, R, P0):
        self.A = as_square(A, "A")
        self.n = self.A.shape[0]
        self.W = as_symmetric(W, self.n, "W")
        self.R = as_symmetric(R, self.n, "R")
        self.P0 = as_symmetric(P0, self.n, "P0")
        self.H = np.block([[-self.A.T, -self.R], [self.W, self.A]])
        norm = float(np.linalg.norm(self.H, 2)) if self.n else 0.0
        self.base_step = math.inf if norm == 0.0 else 1.0 / norm
        imag = np.abs(np.linalg.eigvals(self.H).imag) if self.n else np.zeros(0)
        imag_max = float(np.max(imag)) if imag.size else 0.0
        self.max_step = math.inf if imag_max == 0.0 else math.pi / (2.0 * imag_max)
        self._cache = {}

    def exp(self, tau: float) -> np.ndarray:
        Phi = self._cache.get(tau)
        if Phi is None:
            Phi = scipy.linalg.expm(self.H * tau)
            if len(self._cache) < 64:
                self._cache[tau] = Phi
        return Phi

    def step(self, P: np.ndarray, tau: float) -> Tuple[Optional[np.ndarray], float]:
        """Advance by tau; returns (P_new or None on escape, cond of denominator)"""
        n = self.n
        if n == 0:
            return P, 1.0
        Phi = self.exp(tau)
        U = Phi[:n, :n] + Phi[:n, n:] @ P
        V = Phi[n:, :n] + Phi[n:, n:] @ P
        if not (np.all(np.isfinite(U)) and np.all(np.isfinite(V))):
            return None, math.inf
        sign, _ = np.linalg.slogdet(U)
        if sign <= 0:
            return None, math.inf
        cond = float(np.linalg.cond(U))
        if cond > 1e14:
            return None, cond
        P_new = symmetrize(np.linalg.solve(U.T, V.T).T)
        if not np.all(np.isfinite(P_new)):
            return None, math.inf
        return P_new, cond

    def escape_offset(self, P: np.ndarray, tau: float, t0: float) -> float:
        """Bisect the escape inside (0, tau] to relative ESCAPE_RTOL"""
        lo, hi = 0.0, tau
        while hi - lo > ESCAPE_RTOL * max(1.0, t0 + hi):
            mid = 0.5 * (lo + hi)
            P_mid, _ = self.step(P, mid)
            if P_mid is None:
                hi = mid
            else:
                lo = mid
        return 0.5 * (lo + hi)


def dre_propagate(A, W, R, P, tau: float) -> np.ndarray:
    """Single closed-form DRE step of length tau"""
    if tau < 0:
        raise InvalidInputError("tau must be non-negative")
    if tau == 0:
        return as_symmetric(P, as_square(A, "A").shape[0], "P")
    traj = dre_flow(A, W, R, P, [0.0, tau])
    if traj.escaped:
        raise InvalidInputError(f"DRE escapes at t={traj.escape_time:.6g} before tau={tau:.6g}")
    return traj.P_values[-1]


def dre_flow(A, W, R, P0, grid: Sequence[float], X=None) -> DreTrajectory:
    """
    Solve P' = AP + PA' + W + PRP, P(0) = P0 on a time grid

    Internal steps are bounded by 1/||H||, so a finite escape is detected
    by a sign change of det(F11 + F12 P) and then located by bisection.
    When X is given, rho(P(t)X) is recorded at every grid point.
    """
    flow = _DreFlow(A, W, R, P0)
    times = np.asarray(grid, dtype=float)
    if times.ndim != 1 or times.size == 0:
        raise InvalidInputError("grid must be a non-empty list of times")
    if times[0] != 0.0 or np.any(np.diff(times) <= 0):
        raise InvalidInputError("grid must start at 0 and be strictly increasing")
    X = None if X is None else as_symmetric(X, flow.n, "X")
    step_cap = min(flow.base_step, flow.max_step)

    def rho(P):
        return spectral_radius(P @ X) if X is not None else math.nan

    P = flow.P0
    P_values = [P]
    rho_px = [rho(P)]
    t = 0.0
    for t_next in times[1:]:
        while t_next - t > 1e-15 * max(1.0, t_next):
            tau = min(step_cap, t_next - t)
            P_new, _ = flow.step(P, tau)
            if P_new is None:
                escape = t + flow.escape_offset(P, tau, t)
                logger.debug(f"dre_flow: finite escape at t={escape:.9g}")
                return DreTrajectory(times[: len(P_values)], P_values, rho_px, escape_time=escape)
            P = P_new
            t += tau
        t = float(t_next)
        P_values.append(P)
        rho_px.append(rho(P))
    return DreTrajectory(times, P_values, rho_px)


def dre_first_crossing(A, W, R, P0, X, level: float, t_max: float = 1e3) -> CrossingResult:
    """
    First time t at which rho(P(t)X) reaches level

    The flow is marched from t = 0 with steps that start at 1/||H|| and
    double while the propagation stays well conditioned. A crossing or an
    escape inside a step is refined by bisection to CROSSING_ATOL. When P
    stops changing below the level, the level is never reached and inf is
    returned.
    """
    flow = _DreFlow(A, W, R, P0)
    X = as_symmetric(X, flow.n, "X")
    if level <= 0:
        raise InvalidInputError("level must be positive")

    def rho(P):
        return spectral_radius(P @ X)

    P = flow.P0
    if rho(P) >= level:
        return CrossingResult(time=0.0)
    if flow.n == 0:
        return CrossingResult(time=math.inf, converged=True)

    step_cap = min(flow.max_step, t_max)
    tau = min(flow.base_step, step_cap)
    t = 0.0
    while t < t_max:
        tau = min(tau, t_max - t)
        P_new, cond = flow.step(P, tau)
        crossed = P_new is None or rho(P_new) >= level
        if crossed:
            escaped = P_new is None
            hi = flow.escape_offset(P, tau, t) if escaped else tau
            lo = 0.0
            while hi - lo > CROSSING_ATOL:
                mid = 0.5 * (lo + hi)
                P_mid, _ = flow.step(P, mid)
                if P_mid is None or rho(P_mid) >= level:
                    hi = mid
                else:
                    lo = mid
            crossing = t + 0.5 * (lo + hi)
            logger.debug(f"dre_first_crossing: level {level:.6g} reached at t={crossing:.9g}")
            return CrossingResult(time=crossing, escaped=escaped)

        change = float(np.linalg.norm(P_new - P)) / tau
        P = P_new
        t += tau
        if change <= CONVERGENCE_RTOL * (1.0 + float(np.linalg.norm(P))):
            logger.debug(f"dre_first_crossing: flow settled at t={t:.6g}, rho={rho(P):.6g}")
            return CrossingResult(time=math.inf, converged=True)
        if cond < 1e2:
            tau = min(2.0 * tau, step_cap)
    return CrossingResult(time=math.inf)
