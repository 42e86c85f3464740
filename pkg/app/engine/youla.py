"""
Youla generators J0 of a stabilizing controller and their inverses
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from app.core.errors import DimensionError, InvalidInputError, NotHurwitzError, NotStabilizingError
from app.engine.lti import (
    PartitionedSystem,
    ResetLinearSystem,
    StateSpace,
    feedback_matrix,
    is_hurwitz,
    minimal_realization,
    same_frequency_response,
)
from app.engine.matfun import as_block, as_matrix, as_square, care

logger = logging.getLogger(__name__)


class ControllerStructure(str, Enum):
    GENERAL = "general"
    STATIC = "static"
    OBSERVER_BASED = "observer_based"


@dataclass(frozen=True, eq=False)
class GeneratorJ0:
    """
    Realization of

        J0 = [ A_J  | B_J1  B_J2 ]
             [ C_J1 | D_0   I    ]
             [ C_J2 | I     0    ]

    with inputs (y, eta) and outputs (u, epsilon). Closing eta = Q(epsilon)
    gives every stabilizing controller; Q = 0 gives K0.
    """

    A_J: np.ndarray
    B_J1: np.ndarray
    B_J2: np.ndarray
    C_J1: np.ndarray
    C_J2: np.ndarray
    D_0: np.ndarray

    def __post_init__(self):
        D_0 = as_matrix(self.D_0, "D_0")
        m, p = D_0.shape
        A_J = np.zeros((0, 0)) if np.size(self.A_J) == 0 else as_square(self.A_J, "A_J")
        n = A_J.shape[0]
        object.__setattr__(self, "A_J", A_J)
        object.__setattr__(self, "D_0", D_0)
        for name, rows, cols in (("B_J1", n, p), ("B_J2", n, m), ("C_J1", m, n), ("C_J2", p, n)):
            object.__setattr__(self, name, as_block(getattr(self, name), rows, cols, name))

    @property
    def n(self) -> int:
        return self.A_J.shape[0]

    @property
    def n_y(self) -> int:
        return self.D_0.shape[1]

    @property
    def n_u(self) -> int:
        return self.D_0.shape[0]

    @property
    def B_J12(self) -> np.ndarray:
        return self.B_J1 - self.B_J2 @ self.D_0

    @property
    def C_J12(self) -> np.ndarray:
        return self.C_J1 - self.D_0 @ self.C_J2

    @property
    def A_J_times(self) -> np.ndarray:
        return self.A_J - self.B_J1 @ self.C_J2 - self.B_J2 @ self.C_J1 + self.B_J2 @ self.D_0 @ self.C_J2

    @property
    def system(self) -> StateSpace:
        m, p = self.n_u, self.n_y
        D = np.block([[self.D_0, np.eye(m)], [np.eye(p), np.zeros((p, m))]])
        return StateSpace(
            self.A_J,
            np.hstack([self.B_J1, self.B_J2]),
            np.vstack([self.C_J1, self.C_J2]),
            D,
        )

    def as_partitioned(self) -> PartitionedSystem:
        return PartitionedSystem(self.system, row_split=self.n_u, col_split=self.n_y)

    def nominal_controller(self) -> StateSpace:
        """K0 = lft_lower(J0, 0) = (A_J, B_J1, C_J1, D_0)"""
        return StateSpace(self.A_J, self.B_J1, self.C_J1, self.D_0)


@dataclass(frozen=True, eq=False)
class PlantControllerPair:
    """Strictly proper plant P and controller K0 in the loop u = K0 y"""

    P: StateSpace
    K0: StateSpace
    structure: ControllerStructure = ControllerStructure.GENERAL
    F: Optional[np.ndarray] = None
    L: Optional[np.ndarray] = None

    def __post_init__(self):
        if np.any(self.P.D != 0):
            raise InvalidInputError("plant must be strictly proper")
        if self.K0.m != self.P.p or self.K0.p != self.P.m:
            raise DimensionError("controller dimensions do not match the plant")
        if self.structure == ControllerStructure.OBSERVER_BASED:
            if self.F is None or self.L is None:
                raise InvalidInputError("observer-based structure needs F and L")
            F = as_matrix(self.F, "F")
            L = as_matrix(self.L, "L")
            if F.shape != (self.P.m, self.P.n) or L.shape != (self.P.n, self.P.p):
                raise DimensionError("F must be m x n and L must be n x p")
            object.__setattr__(self, "F", F)
            object.__setattr__(self, "L", L)


def observer_based_k0(A, Bu, Cy, F, L) -> StateSpace:
    """Observer-based controller (A + Bu F + L Cy, -L, F, 0)"""
    A, Bu, Cy, F, L = (as_matrix(M, name) for M, name in ((A, "A"), (Bu, "Bu"), (Cy, "Cy"), (F, "F"), (L, "L")))
    return StateSpace(A + Bu @ F + L @ Cy, -L, F, np.zeros((F.shape[0], L.shape[1])))


def closed_loop_matrix(pair: PlantControllerPair) -> np.ndarray:
    return feedback_matrix(pair.P, pair.K0)


def _static_generator(pair: PlantControllerPair) -> GeneratorJ0:
    P, D0 = pair.P, pair.K0.D
    return GeneratorJ0(
        A_J=P.A + P.B @ D0 @ P.C,
        B_J1=np.zeros((P.n, P.p)),
        B_J2=P.B,
        C_J1=np.zeros((P.m, P.n)),
        C_J2=-P.C,
        D_0=D0,
    )


def _observer_generator(pair: PlantControllerPair) -> GeneratorJ0:
    P, F, L = pair.P, pair.F, pair.L
    return GeneratorJ0(
        A_J=P.A + P.B @ F + L @ P.C,
        B_J1=-L,
        B_J2=P.B,
        C_J1=F,
        C_J2=-P.C,
        D_0=np.zeros((P.m, P.p)),
    )


def _general_generator(pair: PlantControllerPair, F0, L0) -> GeneratorJ0:
    P, K0 = pair.P, pair.K0
    A, Bu, Cy = P.A, P.B, P.C
    A0, B0, C0, D0 = K0.A, K0.B, K0.C, K0.D
    n, n0 = P.n, K0.n

    if F0 is None:
        X = care(A0, B0 @ B0.T, np.eye(n0)).X
        F0 = -B0.T @ X
    if L0 is None:
        Y = care(A0.T, C0.T @ C0, np.eye(n0)).X
        L0 = -Y @ C0.T
    F0 = as_matrix(F0, "F0") if n0 else np.zeros((P.p, 0))
    L0 = as_matrix(L0, "L0") if n0 else np.zeros((0, P.m))
    if F0.shape != (P.p, n0) or L0.shape != (n0, P.m):
        raise DimensionError("F0 must be p x n0 and L0 must be n0 x m")
    if not is_hurwitz(A0 + B0 @ F0):
        raise NotHurwitzError("A0 + B0 F0 is not Hurwitz")
    if not is_hurwitz(A0 + L0 @ C0):
        raise NotHurwitzError("A0 + L0 C0 is not Hurwitz")

    A_J = np.zeros((2 * n0 + n, 2 * n0 + n))
    A_J[:n0, :n0] = A0
    A_J[n0 : 2 * n0, n0 : 2 * n0] = A0
    A_J[n0 : 2 * n0, 2 * n0 :] = B0 @ Cy
    A_J[2 * n0 :, n0 : 2 * n0] = Bu @ C0
    A_J[2 * n0 :, 2 * n0 :] = A + Bu @ D0 @ Cy
    return GeneratorJ0(
        A_J=A_J,
        B_J1=np.vstack([B0, np.zeros((n0 + n, P.p))]),
        B_J2=np.vstack([-L0, -L0, Bu]),
        C_J1=np.hstack([C0, np.zeros((P.m, n0 + n))]),
        C_J2=np.hstack([-F0, F0, -Cy]),
        D_0=D0,
    )


def _reduce(j0: GeneratorJ0) -> GeneratorJ0:
    reduced = minimal_realization(j0.system)
    if reduced.n == j0.n:
        return j0
    m, p = j0.n_u, j0.n_y
    return GeneratorJ0(
        A_J=reduced.A,
        B_J1=reduced.B[:, :p],
        B_J2=reduced.B[:, p:],
        C_J1=reduced.C[:m, :],
        C_J2=reduced.C[m:, :],
        D_0=j0.D_0,
    )


def build_generator(pair: PlantControllerPair, F0=None, L0=None) -> GeneratorJ0:
    """
    Youla generator of K0 in the realization matching its structure

    Static gains use the plant realization, observer-based controllers their
    own (F, L), and general controllers the three-block construction with
    auxiliary gains F0, L0 (H2 gains of K0's own realization when omitted).
    Uncontrollable and unobservable parts are cancelled afterwards.
    """
    if not is_hurwitz(closed_loop_matrix(pair)):
        raise NotStabilizingError("K0 does not stabilize the plant")

    structure = pair.structure
    if structure == ControllerStructure.OBSERVER_BASED:
        K_obs = observer_based_k0(pair.P.A, pair.P.B, pair.P.C, pair.F, pair.L)
        if not same_frequency_response(K_obs, pair.K0, rtol=1e-6):
            raise InvalidInputError("K0 does not match the declared observer-based structure")
        j0 = _observer_generator(pair)
    elif structure == ControllerStructure.STATIC or pair.K0.n == 0:
        if pair.K0.n != 0:
            raise InvalidInputError("static structure requires a static K0")
        j0 = _static_generator(pair)
    else:
        j0 = _general_generator(pair, F0, L0)

    j0 = _reduce(j0)
    logger.debug(f"build_generator: structure={structure.value} order={j0.n}")
    return j0


def generator_inverse(j0: GeneratorJ0, P: Optional[StateSpace] = None) -> PartitionedSystem:
    """
    J0^{-1}, mapping (u, epsilon) to (y, eta); its (1,1) block reproduces P

    The inverse exists as a proper system because the feedthrough of J0 is
    invertible for every D_0.
    """
    m, p = j0.n_u, j0.n_y
    if P is not None and (P.m, P.p) != (m, p):
        raise DimensionError("plant dimensions do not match the generator")
    J = j0.system
    D_inv = np.block([[np.zeros((p, m)), np.eye(p)], [np.eye(m), -j0.D_0]])
    inverse = StateSpace(J.A - J.B @ D_inv @ J.C, J.B @ D_inv, -D_inv @ J.C, D_inv)
    return PartitionedSystem(inverse, row_split=p, col_split=m)


def q_stat(j0: GeneratorJ0) -> ResetLinearSystem:
    """Static part of the lifted parameter: reset system of lft_upper(J0^{-1}, 0)"""
    return ResetLinearSystem(StateSpace(j0.A_J_times, -j0.B_J12, j0.C_J12, -j0.D_0))

