"""
Continuous-time LTI systems in state-space form and their interconnections
"""

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg
import scipy.signal

from app.core.errors import AlgebraicLoopError, DimensionError, InvalidInputError, NotHurwitzError
from app.engine.matfun import (
    HURWITZ_MARGIN,
    as_block,
    as_matrix,
    as_square,
    dre_flow,
    lyap,
    max_real_part,
    symmetrize,
)

logger = logging.getLogger(__name__)

MINIMAL_TOL = 1e-9
LINF_RTOL = 1e-6
ILL_POSED_COND = 1e12


@dataclass(frozen=True, eq=False)
class StateSpace:
    """x' = Ax + Bu, y = Cx + Du; n = 0 gives a static gain"""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        D = as_matrix(self.D, "D")
        p, m = D.shape
        A = np.zeros((0, 0)) if np.size(self.A) == 0 else as_square(self.A, "A")
        n = A.shape[0]
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", as_block(self.B, n, m, "B"))
        object.__setattr__(self, "C", as_block(self.C, p, n, "C"))
        object.__setattr__(self, "D", D)

    @classmethod
    def static(cls, D) -> "StateSpace":
        D = as_matrix(D, "D")
        p, m = D.shape
        return cls(np.zeros((0, 0)), np.zeros((0, m)), np.zeros((p, 0)), D)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.D.shape[1]

    @property
    def p(self) -> int:
        return self.D.shape[0]

    def evaluate(self, s: complex) -> np.ndarray:
        if self.n == 0:
            return self.D.astype(complex)
        return self.C @ np.linalg.solve(s * np.eye(self.n) - self.A, self.B) + self.D

    def __repr__(self) -> str:
        return f"StateSpace(n={self.n}, m={self.m}, p={self.p})"


@dataclass(frozen=True)
class TransferFunctionSiso:
    """Rational SISO transfer function num(s)/den(s), highest power first"""

    num: tuple
    den: tuple

    def __post_init__(self):
        num = np.trim_zeros(np.atleast_1d(np.asarray(self.num, dtype=float)), "f")
        den = np.trim_zeros(np.atleast_1d(np.asarray(self.den, dtype=float)), "f")
        if den.size == 0:
            raise InvalidInputError("denominator is zero")
        if not (np.all(np.isfinite(num)) and np.all(np.isfinite(den))):
            raise InvalidInputError("coefficients must be finite")
        if num.size > den.size:
            raise InvalidInputError("transfer function is improper")
        if num.size == 0:
            num = np.zeros(1)
        object.__setattr__(self, "num", tuple(num))
        object.__setattr__(self, "den", tuple(den))


@dataclass(frozen=True, eq=False)
class PartitionedSystem:
    """StateSpace whose inputs and outputs are split into (1, 2) channels"""

    base: StateSpace
    row_split: int
    col_split: int

    def __post_init__(self):
        if not 0 <= self.row_split <= self.base.p or not 0 <= self.col_split <= self.base.m:
            raise DimensionError("partition splits out of range")

    @property
    def B1(self):
        return self.base.B[:, : self.col_split]

    @property
    def B2(self):
        return self.base.B[:, self.col_split :]

    @property
    def C1(self):
        return self.base.C[: self.row_split, :]

    @property
    def C2(self):
        return self.base.C[self.row_split :, :]

    def D_block(self, i: int, j: int) -> np.ndarray:
        rows = slice(None, self.row_split) if i == 1 else slice(self.row_split, None)
        cols = slice(None, self.col_split) if j == 1 else slice(self.col_split, None)
        return self.base.D[rows, cols]

    def block(self, i: int, j: int) -> StateSpace:
        """Subsystem from input channel j to output channel i"""
        B = self.B1 if j == 1 else self.B2
        C = self.C1 if i == 1 else self.C2
        return StateSpace(self.base.A, B, C, self.D_block(i, j))


@dataclass(frozen=True, eq=False)
class ResetLinearSystem:
    """LTI dynamics whose state is reset to zero at every sampling instant"""

    sys: StateSpace


def tf_to_ss(tf: TransferFunctionSiso) -> StateSpace:
    """Balanced controllable-canonical realization"""
    num = np.asarray(tf.num)
    den = np.asarray(tf.den)
    if den.size == 1:
        return StateSpace.static([[num[-1] / den[0]]])
    A, B, C, D = scipy.signal.tf2ss(num, den)
    _, (scale, _) = scipy.linalg.matrix_balance(A, permute=False, separate=True)
    A = A * scale[np.newaxis, :] / scale[:, np.newaxis]
    B = B / scale[:, np.newaxis]
    C = C * scale[np.newaxis, :]
    return StateSpace(A, B, C, D)


def series(g1: StateSpace, g2: StateSpace) -> StateSpace:
    """g2 after g1 (output of g1 feeds g2)"""
    if g1.p != g2.m:
        raise DimensionError(f"series: g1 has {g1.p} outputs, g2 has {g2.m} inputs")
    n1, n2 = g1.n, g2.n
    A = np.zeros((n1 + n2, n1 + n2))
    A[:n1, :n1] = g1.A
    A[n1:, :n1] = g2.B @ g1.C
    A[n1:, n1:] = g2.A
    B = np.vstack([g1.B, g2.B @ g1.D])
    C = np.hstack([g2.D @ g1.C, g2.C])
    return StateSpace(A, B, C, g2.D @ g1.D)


def parallel(g1: StateSpace, g2: StateSpace) -> StateSpace:
    if (g1.p, g1.m) != (g2.p, g2.m):
        raise DimensionError("parallel: systems must have equal dimensions")
    return StateSpace(
        scipy.linalg.block_diag(g1.A, g2.A),
        np.vstack([g1.B, g2.B]),
        np.hstack([g1.C, g2.C]),
        g1.D + g2.D,
    )


def similarity(sys: StateSpace, T) -> StateSpace:
    """State transformation x' = T x"""
    T = as_square(T, "T")
    if T.shape[0] != sys.n:
        raise DimensionError("similarity: T must match the state dimension")
    T_inv = np.linalg.inv(T)
    return StateSpace(T @ sys.A @ T_inv, T @ sys.B, sys.C @ T_inv, sys.D)


def _solve_loop(M: np.ndarray, what: str) -> np.ndarray:
    if M.shape[0] == 0:
        return M
    if np.linalg.cond(M) > ILL_POSED_COND:
        raise AlgebraicLoopError(f"{what}: feedthrough loop is singular")
    return np.linalg.inv(M)


def lft_lower(phi: PartitionedSystem, omega: StateSpace) -> StateSpace:
    """Close channel 2 of phi through omega: u2 = omega(y2)"""
    base = phi.base
    p2 = base.p - phi.row_split
    m2 = base.m - phi.col_split
    if omega.m != p2 or omega.p != m2:
        raise DimensionError(f"lft_lower: omega must be {m2}x{p2}, got {omega.p}x{omega.m}")
    n, nw = base.n, omega.n
    D11, D12 = phi.D_block(1, 1), phi.D_block(1, 2)
    D21, D22 = phi.D_block(2, 1), phi.D_block(2, 2)
    Dw = omega.D

    E = _solve_loop(np.eye(p2) - D22 @ Dw, "lft_lower")
    E_t = _solve_loop(np.eye(m2) - Dw @ D22, "lft_lower")

    # y2 and u2 as maps of (x, xw, w)
    y2_state = E @ np.hstack([phi.C2, D22 @ omega.C])
    y2_in = E @ D21
    u2_state = E_t @ np.hstack([Dw @ phi.C2, omega.C])
    u2_in = E_t @ Dw @ D21

    A = scipy.linalg.block_diag(base.A, omega.A)
    A = A + np.vstack([phi.B2, np.zeros((nw, m2))]) @ u2_state
    A = A + np.vstack([np.zeros((n, p2)), omega.B]) @ y2_state
    B = np.vstack([phi.B1 + phi.B2 @ u2_in, omega.B @ y2_in])
    C = np.hstack([phi.C1, np.zeros((phi.row_split, nw))]) + D12 @ u2_state
    D = D11 + D12 @ u2_in
    return StateSpace(A, B, C, D)


def lft_upper(phi: PartitionedSystem, omega: StateSpace) -> StateSpace:
    """Close channel 1 of phi through omega: u1 = omega(y1)"""
    base = phi.base
    permuted = StateSpace(
        base.A,
        np.hstack([phi.B2, phi.B1]),
        np.vstack([phi.C2, phi.C1]),
        np.block([[phi.D_block(2, 2), phi.D_block(2, 1)], [phi.D_block(1, 2), phi.D_block(1, 1)]]),
    )
    return lft_lower(PartitionedSystem(permuted, base.p - phi.row_split, base.m - phi.col_split), omega)


def feedback_matrix(P: StateSpace, K: StateSpace) -> np.ndarray:
    """State matrix of the loop u = K y around y = P u"""
    if K.m != P.p or K.p != P.m:
        raise DimensionError("feedback: controller dimensions do not match the plant")
    E = _solve_loop(np.eye(P.m) - K.D @ P.D, "feedback")
    u_state = E @ np.hstack([K.D @ P.C, K.C])
    y_state = np.hstack([P.C, np.zeros((P.p, K.n))]) + P.D @ u_state
    A = scipy.linalg.block_diag(P.A, K.A)
    A = A + np.vstack([P.B, np.zeros((K.n, P.m))]) @ u_state
    A = A + np.vstack([np.zeros((P.n, P.p)), K.B]) @ y_state
    return A


def is_hurwitz(A) -> bool:
    """All eigenvalues strictly in the open left half plane"""
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return True
    return max_real_part(as_square(A, "A")) < -HURWITZ_MARGIN


def poles(sys: StateSpace) -> np.ndarray:
    return np.linalg.eigvals(sys.A) if sys.n else np.zeros(0, dtype=complex)


def zeros(sys: StateSpace) -> np.ndarray:
    """Finite invariant zeros of a SISO system from the Rosenbrock pencil"""
    if sys.m != 1 or sys.p != 1:
        raise DimensionError("zeros: only SISO systems are supported")
    n = sys.n
    M = np.block([[sys.A, sys.B], [sys.C, sys.D]])
    N = scipy.linalg.block_diag(np.eye(n), np.zeros((1, 1)))
    vals = scipy.linalg.eigvals(M, N)
    return vals[np.isfinite(vals) & (np.abs(vals) < 1e10)]


def freqresp(sys: StateSpace, omega: Sequence[float]) -> np.ndarray:
    """Frequency response G(jw), shape (len(omega), p, m)"""
    return np.array([sys.evaluate(1j * w) for w in np.asarray(omega, dtype=float)])


def same_frequency_response(g1: StateSpace, g2: StateSpace, rtol: float = 1e-6) -> bool:
    """Compare frequency responses on a 50-point log grid over [1e-2, 1e3] rad/s"""
    if (g1.p, g1.m) != (g2.p, g2.m):
        return False
    omega = np.logspace(-2, 3, 50)
    r1, r2 = freqresp(g1, omega), freqresp(g2, omega)
    scale = max(float(np.max(np.abs(r1))), float(np.max(np.abs(r2))), 1e-300)
    return float(np.max(np.abs(r1 - r2))) <= rtol * scale


def h2_norm_lti(sys: StateSpace) -> float:
    """H2 norm via the observability Gramian"""
    if np.any(sys.D != 0):
        raise InvalidInputError("H2 norm is infinite for a nonzero feedthrough")
    if sys.n == 0:
        return 0.0
    if not is_hurwitz(sys.A):
        raise NotHurwitzError("H2 norm requires a stable system")
    W_o = lyap(sys.A.T, sys.C.T @ sys.C)
    return math.sqrt(max(0.0, float(np.trace(sys.B.T @ W_o @ sys.B))))


def _hamiltonian_has_imag_axis_eig(sys: StateSpace, gamma: float) -> bool:
    A, B, C, D = sys.A, sys.B, sys.C, sys.D
    R_inv = np.linalg.inv(gamma**2 * np.eye(sys.m) - D.T @ D)
    A_h = A + B @ R_inv @ D.T @ C
    H = np.block(
        [
            [A_h, B @ R_inv @ B.T],
            [-C.T @ (np.eye(sys.p) + D @ R_inv @ D.T) @ C, -A_h.T],
        ]
    )
    eigs = np.linalg.eigvals(H)
    return bool(np.any(np.abs(eigs.real) <= 1e-8 * np.maximum(1.0, np.abs(eigs))))


def linf_gain(sys: StateSpace) -> float:
    """L-infinity norm of a stable system by Hamiltonian bisection"""
    sigma_d = float(np.linalg.norm(sys.D, 2)) if sys.D.size else 0.0
    if sys.n == 0:
        return sigma_d
    if not is_hurwitz(sys.A):
        raise NotHurwitzError("linf_gain requires a stable system")
    probes = [0.0] + [abs(float(np.imag(s))) for s in poles(sys)]
    lo = max([sigma_d] + [float(np.linalg.norm(sys.evaluate(1j * w), 2)) for w in probes])
    if lo == 0.0:
        return 0.0
    hi = 2.0 * lo
    while _hamiltonian_has_imag_axis_eig(sys, hi):
        lo, hi = hi, 2.0 * hi
    while hi - lo > LINF_RTOL * hi:
        mid = 0.5 * (lo + hi)
        if _hamiltonian_has_imag_axis_eig(sys, mid):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def finite_horizon_l2_gain_less(sys: StateSpace, h: float, gamma: float) -> bool:
    """
    Whether the L2[0, h) gain of sys from zero initial state is below gamma

    Equivalent to the absence of a finite escape on [0, h] of the filter
    Riccati equation with P(0) = 0.
    """
    if h < 0 or gamma <= 0:
        raise InvalidInputError("h must be non-negative and gamma positive")
    sigma_d = float(np.linalg.norm(sys.D, 2)) if sys.D.size else 0.0
    if gamma <= sigma_d:
        return False
    if sys.n == 0 or h == 0:
        return True
    A, B, C, D = sys.A, sys.B, sys.C, sys.D
    R_inv = np.linalg.inv(gamma**2 * np.eye(sys.m) - D.T @ D)
    A_t = A + B @ R_inv @ D.T @ C
    W = symmetrize(C.T @ (np.eye(sys.p) + D @ R_inv @ D.T) @ C)
    R = symmetrize(B @ R_inv @ B.T)
    traj = dre_flow(A_t.T, W, R, np.zeros((sys.n, sys.n)), [0.0, h])
    return not traj.escaped


def finite_horizon_l2_gain(sys: StateSpace, h: float, rtol: float = LINF_RTOL) -> float:
    """L2[0, h) induced gain by bisection on finite_horizon_l2_gain_less"""
    sigma_d = float(np.linalg.norm(sys.D, 2)) if sys.D.size else 0.0
    if sys.n == 0 or h == 0:
        return sigma_d
    lo = sigma_d
    hi = max(2.0 * sigma_d, 1.0)
    while not finite_horizon_l2_gain_less(sys, h, hi):
        lo, hi = hi, 2.0 * hi
        if hi > 1e15:
            raise InvalidInputError("finite horizon gain is unbounded")
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if finite_horizon_l2_gain_less(sys, h, mid):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def reachable_basis(A: np.ndarray, B: np.ndarray, tol: float = MINIMAL_TOL) -> np.ndarray:
    """Orthonormal basis of the reachable subspace of (A, B) by a Krylov staircase"""
    n = A.shape[0]
    if n == 0 or B.size == 0:
        return np.zeros((n, 0))
    scale = max(1.0, float(np.linalg.norm(A, 2)), float(np.linalg.norm(B, 2)))
    V = np.zeros((n, 0))
    W = B
    while V.shape[1] < n:
        W = W - V @ (V.T @ W)
        U, s, _ = np.linalg.svd(W, full_matrices=False)
        rank = int(np.sum(s > tol * scale))
        if rank == 0:
            break
        new = U[:, :rank]
        new = new - V @ (V.T @ new)
        new, _ = np.linalg.qr(new)
        V = np.hstack([V, new])
        W = A @ new
    return V


def minimal_realization(sys: StateSpace, tol: float = MINIMAL_TOL) -> StateSpace:
    """Remove uncontrollable and unobservable modes by orthogonal projection"""
    V = reachable_basis(sys.A, sys.B, tol)
    A1, B1, C1 = V.T @ sys.A @ V, V.T @ sys.B, sys.C @ V
    W = reachable_basis(A1.T, C1.T, tol)
    reduced = StateSpace(W.T @ A1 @ W, W.T @ B1, C1 @ W, sys.D)
    if reduced.n < sys.n:
        logger.debug(f"minimal_realization: order {sys.n} -> {reduced.n}")
    return reduced

