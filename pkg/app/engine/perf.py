"""
H2 and H-infinity synthesis for intermittent sampling

The H2 part evaluates the cost of sampling for an observer-based
controller: the analog optimum plus, per sampling interval, the energy of
F e^{At} L accumulated over that interval. The H-infinity part computes
the longest admissible sampling interval from a differential Riccati
equation started at Y.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from app.core.errors import (
    ConsistencyError,
    DimensionError,
    InfeasibleGammaError,
    InvalidInputError,
    ResampleError,
    RiccatiError,
)
from app.engine.lti import StateSpace, finite_horizon_l2_gain_less, is_hurwitz
from app.engine.matfun import (
    as_block,
    as_matrix,
    as_square,
    care,
    dre_first_crossing,
    dre_flow,
    lyap,
    spectral_radius,
    symmetrize,
)
from app.engine.redesign import SampledDataController, central_controller, with_sensor_coordinates
from app.engine.youla import GeneratorJ0, q_stat
from app.engine.specs import ExplicitPattern, PeriodicPattern, RandomPattern, UniformPattern

logger = logging.getLogger(__name__)

NORMALIZATION_TOL = 1e-10
HAUTUS_TOL = 1e-9
PSD_TOL = 1e-9
GAMMA_OPT_RTOL = 1e-6
QSTAT_BAND = 1e-4


@dataclass(frozen=True, eq=False)
class StandardPlant:
    """
        x' = A x + Bw w + Bu u
        z  = Cz x        + Dzu u
        y  = Cy x + Dyw w

    with Dzu'Dzu = I and Dyw Dyw' = I.
    """

    A: np.ndarray
    Bw: np.ndarray
    Bu: np.ndarray
    Cz: np.ndarray
    Dzu: np.ndarray
    Cy: np.ndarray
    Dyw: np.ndarray

    def __post_init__(self):
        A = as_square(self.A, "A")
        n = A.shape[0]
        Dzu = as_matrix(self.Dzu, "Dzu")
        Dyw = as_matrix(self.Dyw, "Dyw")
        n_z, n_u = Dzu.shape
        n_y, n_w = Dyw.shape
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "Dzu", Dzu)
        object.__setattr__(self, "Dyw", Dyw)
        for name, rows, cols in (("Bw", n, n_w), ("Bu", n, n_u), ("Cz", n_z, n), ("Cy", n_y, n)):
            object.__setattr__(self, name, as_block(getattr(self, name), rows, cols, name))

        if np.linalg.norm(Dzu.T @ Dzu - np.eye(n_u)) > NORMALIZATION_TOL:
            raise InvalidInputError("Dzu'Dzu must equal I")
        if np.linalg.norm(Dyw @ Dyw.T - np.eye(n_y)) > NORMALIZATION_TOL:
            raise InvalidInputError("Dyw Dyw' must equal I")
        if not _hautus(A, self.Bu):
            raise InvalidInputError("(A, Bu) is not stabilizable")
        if not _hautus(A.T, self.Cy.T):
            raise InvalidInputError("(Cy, A) is not detectable")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def P22(self) -> StateSpace:
        """Plant seen by the controller, u -> y"""
        return StateSpace(self.A, self.Bu, self.Cy, np.zeros((self.Cy.shape[0], self.Bu.shape[1])))


def _hautus(A: np.ndarray, B: np.ndarray) -> bool:
    """rank [A - lambda I, B] = n for every eigenvalue with Re lambda >= 0"""
    n = A.shape[0]
    scale = max(1.0, float(np.linalg.norm(A, 2)), float(np.linalg.norm(B, 2)) if B.size else 0.0)
    for lam in np.linalg.eigvals(A):
        if lam.real < -HAUTUS_TOL * scale:
            continue
        pencil = np.hstack([A - lam * np.eye(n), B])
        s = np.linalg.svd(pencil, compute_uv=False)
        if s[n - 1] <= HAUTUS_TOL * scale:
            return False
    return True


def standard_plant_from_lti(P: StateSpace) -> StandardPlant:
    """
    Standard plant with w = (input disturbance, sensor noise) and
    z = (C x, u); its two H2 Riccati equations are the normalized coprime
    factor equations of P
    """
    if np.any(P.D != 0):
        raise InvalidInputError("plant must be strictly proper")
    n, m, p = P.n, P.m, P.p
    return StandardPlant(
        A=P.A,
        Bw=np.hstack([P.B, np.zeros((n, p))]),
        Bu=P.B,
        Cz=np.vstack([P.C, np.zeros((m, n))]),
        Dzu=np.vstack([np.zeros((p, m)), np.eye(m)]),
        Cy=P.C,
        Dyw=np.hstack([np.zeros((p, m)), np.eye(p)]),
    )


# H2


class H2Solutions(NamedTuple):
    X: np.ndarray
    Y: np.ndarray
    F: np.ndarray
    L: np.ndarray
    residuals: Dict[str, float]


def h2_solutions(plant: StandardPlant) -> H2Solutions:
    """Both H2 Riccati equations, cross terms shifted into the drift"""
    A, Bw, Bu, Cz, Dzu, Cy, Dyw = plant.A, plant.Bw, plant.Bu, plant.Cz, plant.Dzu, plant.Cy, plant.Dyw
    n_z, n_w = Cz.shape[0], Bw.shape[1]
    ctrl = care(A - Bu @ Dzu.T @ Cz, Bu @ Bu.T, symmetrize(Cz.T @ (np.eye(n_z) - Dzu @ Dzu.T) @ Cz))
    filt = care((A - Bw @ Dyw.T @ Cy).T, Cy.T @ Cy, symmetrize(Bw @ (np.eye(n_w) - Dyw.T @ Dyw) @ Bw.T))
    X, Y = ctrl.X, filt.X
    F = -(Bu.T @ X + Dzu.T @ Cz)
    L = -(Y @ Cy.T + Bw @ Dyw.T)
    if not (is_hurwitz(A + Bu @ F) and is_hurwitz(A + L @ Cy)):
        raise RiccatiError("H2 gains do not stabilize")
    return H2Solutions(X, Y, F, L, {"X": ctrl.residual_norm, "Y": filt.residual_norm})


def h2_gains(plant: StandardPlant) -> Tuple[np.ndarray, np.ndarray]:
    """State-feedback gain F and filter gain L of the analog H2 controller"""
    sol = h2_solutions(plant)
    return sol.F, sol.L


def h2_analog_optimum(plant: StandardPlant, F=None, L=None) -> float:
    """
    Optimal analog H2 cost, the H2 norm of

        T1 = [ A+Bu F  -Bu F   | Bw        ]
             [ 0        A+L Cy | Bw+L Dyw  ]
             [ Cz+Dzu F -Dzu F | 0         ]
    """
    if F is None or L is None:
        F, L = h2_gains(plant)
    A, Bw, Bu, Cz, Dzu, Cy, Dyw = plant.A, plant.Bw, plant.Bu, plant.Cz, plant.Dzu, plant.Cy, plant.Dyw
    n = plant.n
    A_T = np.block([[A + Bu @ F, -Bu @ F], [np.zeros((n, n)), A + L @ Cy]])
    B_T = np.vstack([Bw, Bw + L @ Dyw])
    C_T = np.hstack([Cz + Dzu @ F, -Dzu @ F])
    P = lyap(A_T, B_T @ B_T.T)
    return math.sqrt(max(float(np.trace(C_T @ P @ C_T.T)), 0.0))


def _integrand_vector(F: np.ndarray, A: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Kronecker generator of M' = A'M + MA and vec(F'F), column-major"""
    n = A.shape[0]
    K = np.kron(np.eye(n), A.T) + np.kron(A.T, np.eye(n))
    return K, (F.T @ F).reshape(-1, order="F")


def _check_gains(F, L, A) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    A = as_square(A, "A")
    n = A.shape[0]
    F = as_matrix(F, "F")
    L = as_matrix(L, "L")
    if F.shape[1] != n or L.shape[0] != n:
        raise DimensionError("F must have n columns and L n rows")
    return F, L, A


def gamma1(F, L, A, h: float) -> float:
    """
    Integral of |F e^{At} L|_F^2 over 0 <= t <= h - tau, 0 <= tau <= h

    The inner double integral equals tr(L' W L) with
    W = integral of (h - t) e^{A't} F'F e^{At} over [0, h], read off one
    exponential of [[K, vec F'F, 0], [0, 0, 1], [0, 0, 0]].
    """
    F, L, A = _check_gains(F, L, A)
    if h < 0:
        raise InvalidInputError("h must be non-negative")
    n = A.shape[0]
    if h == 0 or n == 0:
        return 0.0
    K, v = _integrand_vector(F, A)
    N = n * n
    G = np.zeros((N + 2, N + 2))
    G[:N, :N] = K
    G[:N, N] = v
    G[N, N + 1] = 1.0
    column = scipy.linalg.expm(G * h)[:N, N + 1]
    W = symmetrize(column.reshape((n, n), order="F"))
    return max(float(np.trace(L.T @ W @ L)), 0.0)


def gamma1_rate(F, L, A, h: float) -> float:
    """Derivative of gamma1 in h: integral of |F e^{At} L|_F^2 over [0, h]"""
    F, L, A = _check_gains(F, L, A)
    n = A.shape[0]
    if h <= 0 or n == 0:
        return 0.0
    K, v = _integrand_vector(F, A)
    N = n * n
    G = np.zeros((N + 1, N + 1))
    G[:N, :N] = K
    G[:N, N] = v
    column = scipy.linalg.expm(G * h)[:N, N]
    W1 = symmetrize(column.reshape((n, n), order="F"))
    return max(float(np.trace(L.T @ W1 @ L)), 0.0)


@dataclass(frozen=True, eq=False)
class H2Report:
    gamma0: float
    gamma_pattern: float
    per_interval: List[Tuple[float, float]]
    F: np.ndarray
    L: np.ndarray


def periodic_intervals(pattern) -> List[float]:
    """One period of a periodic or uniform pattern"""
    if isinstance(pattern, UniformPattern):
        return [pattern.h]
    if isinstance(pattern, PeriodicPattern):
        return list(pattern.intervals)
    if isinstance(pattern, (ExplicitPattern, RandomPattern)):
        raise InvalidInputError("limit undefined for aperiodic finite data: use a uniform or periodic pattern")
    raise InvalidInputError(f"{getattr(pattern, 'kind', pattern)!r} patterns have no H2 performance")


def h2_sd_performance(F, L, A, pattern, gamma0: float = 0.0) -> H2Report:
    """
    H2 performance of the sampled-data observer-based controller:
    gamma0^2 plus the average over one period of gamma1(h_j)
    """
    intervals = periodic_intervals(pattern)
    per_interval = [(h, gamma1(F, L, A, h)) for h in intervals]
    added = sum(g for _, g in per_interval) / sum(intervals)
    gamma_pattern = math.sqrt(gamma0**2 + added)
    logger.debug(f"h2_sd_performance: gamma0={gamma0:.6g} gamma_pattern={gamma_pattern:.6g}")
    return H2Report(gamma0, gamma_pattern, per_interval, as_matrix(F, "F"), as_matrix(L, "L"))


def h2_generator(plant: StandardPlant, F=None, L=None) -> GeneratorJ0:
    """Observer-based generator of the analog H2 controller"""
    if F is None or L is None:
        F, L = h2_gains(plant)
    A, Bu, Cy = plant.A, plant.Bu, plant.Cy
    return GeneratorJ0(
        A_J=A + Bu @ F + L @ Cy,
        B_J1=-L,
        B_J2=Bu,
        C_J1=F,
        C_J2=-Cy,
        D_0=np.zeros((Bu.shape[1], Cy.shape[0])),
    )


def h2_sd_controller(plant: StandardPlant, pattern) -> Tuple[SampledDataController, H2Report]:
    """Observer-based sampled-data controller with eta = 0 and its H2 performance"""
    F, L = h2_gains(plant)
    ctrl = central_controller(h2_generator(plant, F, L))
    report = h2_sd_performance(F, L, plant.A, pattern, gamma0=h2_analog_optimum(plant, F, L))
    return ctrl, report


class ScanPoint(NamedTuple):
    delta: float
    gamma_sq: float
    slope: float


@dataclass(frozen=True)
class OptimalityScan:
    h_av: float
    points: List[ScanPoint]

    @property
    def argmin(self) -> float:
        return min(self.points, key=lambda p: p.gamma_sq).delta

    def slope_signs_match(self, tol: float = 0.0) -> bool:
        """Whether every nonzero delta has a slope of its own sign"""
        return all(np.sign(p.slope) == np.sign(p.delta) for p in self.points if abs(p.delta) > tol)


def uniform_optimality_scan(
    F, L, A, h_av: float, N: int, deltas: Sequence[float], gamma0: float = 0.0
) -> OptimalityScan:
    """
    gamma^2 over delta for the N-periodic pattern (h - delta, h + delta, h, ..., h)

    The slope is the exact derivative in delta.
    """
    if N < 2:
        raise InvalidInputError("N must be at least 2")
    if h_av <= 0:
        raise InvalidInputError("h_av must be positive")
    base = gamma1(F, L, A, h_av)
    points = []
    for delta in deltas:
        if abs(delta) >= h_av:
            raise InvalidInputError(f"|delta| = {abs(delta):.6g} must be below h = {h_av:.6g}")
        total = gamma1(F, L, A, h_av - delta) + gamma1(F, L, A, h_av + delta) + (N - 2) * base
        slope = (gamma1_rate(F, L, A, h_av + delta) - gamma1_rate(F, L, A, h_av - delta)) / (N * h_av)
        points.append(ScanPoint(float(delta), gamma0**2 + total / (N * h_av), slope))
    return OptimalityScan(h_av, points)


def midpoint_improvement(F, L, A, intervals: Sequence[float], j: int, gamma0: float = 0.0) -> Tuple[float, float]:
    """
    gamma^2 of a periodic pattern before and after moving instant t_j to the
    midpoint of its neighbours (intervals j-1 and j, cyclically)
    """
    intervals = list(intervals)
    N = len(intervals)
    if N < 2:
        raise InvalidInputError("need at least two intervals")
    before = h2_sd_performance(F, L, A, PeriodicPattern(intervals=intervals), gamma0)
    i = (j - 1) % N
    k = j % N
    mid = 0.5 * (intervals[i] + intervals[k])
    moved = list(intervals)
    moved[i] = moved[k] = mid
    after = h2_sd_performance(F, L, A, PeriodicPattern(intervals=moved), gamma0)
    return before.gamma_pattern**2, after.gamma_pattern**2


# H-infinity


@dataclass(frozen=True, eq=False)
class HinfDesign:
    """
    gamma-suboptimal design; h_sup is the longest admissible interval

    The DRE P' = dre_A P + P dre_A' + dre_W + P dre_R P, P(0) = Y, must keep
    rho(P(t) X) below threshold on every sampling interval.
    """

    mode: str
    gamma: float
    X: np.ndarray
    Y: np.ndarray
    F: np.ndarray
    L: np.ndarray
    rho_yx: float
    Z_gamma: np.ndarray
    threshold: float
    h_sup: float
    controller: SampledDataController
    generator: GeneratorJ0
    dre_A: np.ndarray
    dre_W: np.ndarray
    dre_R: np.ndarray
    gamma_opt: Optional[float] = None
    residuals: Dict[str, float] = field(default_factory=dict)

    def dre_trajectory(self, grid: Sequence[float]):
        return dre_flow(self.dre_A, self.dre_W, self.dre_R, self.Y, grid, X=self.X)

    def admissible(self, h: float) -> bool:
        return h < self.h_sup


def _psd(M: np.ndarray) -> bool:
    return float(np.min(np.linalg.eigvalsh(symmetrize(M)))) >= -PSD_TOL * (1.0 + float(np.linalg.norm(M)))


class _HinfRiccati(NamedTuple):
    X: np.ndarray
    Y: np.ndarray
    F: np.ndarray
    L: np.ndarray
    rho_yx: float
    residuals: Dict[str, float]


def _hinf_riccati(plant: StandardPlant, gamma: float) -> _HinfRiccati:
    """Stabilizing gamma-Riccati solutions, or InfeasibleGammaError naming what fails"""
    if gamma <= 0:
        raise InvalidInputError("gamma must be positive")
    A, Bw, Bu, Cz, Dzu, Cy, Dyw = plant.A, plant.Bw, plant.Bu, plant.Cz, plant.Dzu, plant.Cy, plant.Dyw
    n_z, n_w = Cz.shape[0], Bw.shape[1]
    g2 = gamma**-2
    try:
        ctrl = care(
            A - Bu @ Dzu.T @ Cz,
            Bu @ Bu.T - g2 * Bw @ Bw.T,
            symmetrize(Cz.T @ (np.eye(n_z) - Dzu @ Dzu.T) @ Cz),
        )
    except RiccatiError as exc:
        raise InfeasibleGammaError(f"gamma={gamma:.6g}: X equation: {exc}", {"gamma": gamma, "failed": "X"})
    if not _psd(ctrl.X):
        raise InfeasibleGammaError(f"gamma={gamma:.6g}: X is not positive semidefinite", {"gamma": gamma, "failed": "X"})
    try:
        filt = care(
            (A - Bw @ Dyw.T @ Cy).T,
            Cy.T @ Cy - g2 * Cz.T @ Cz,
            symmetrize(Bw @ (np.eye(n_w) - Dyw.T @ Dyw) @ Bw.T),
        )
    except RiccatiError as exc:
        raise InfeasibleGammaError(f"gamma={gamma:.6g}: Y equation: {exc}", {"gamma": gamma, "failed": "Y"})
    if not _psd(filt.X):
        raise InfeasibleGammaError(f"gamma={gamma:.6g}: Y is not positive semidefinite", {"gamma": gamma, "failed": "Y"})
    X, Y = ctrl.X, filt.X
    rho = spectral_radius(Y @ X)
    if rho >= gamma**2:
        raise InfeasibleGammaError(
            f"gamma={gamma:.6g}: coupling rho(YX)={rho:.6g} >= gamma^2",
            {"gamma": gamma, "failed": "coupling", "rho_yx": rho},
        )
    F = -(Bu.T @ X + Dzu.T @ Cz)
    L = -(Y @ Cy.T + Bw @ Dyw.T)
    return _HinfRiccati(X, Y, F, L, rho, {"X": ctrl.residual_norm, "Y": filt.residual_norm})


def hinf_feasible(plant: StandardPlant, gamma: float) -> bool:
    try:
        _hinf_riccati(plant, gamma)
    except InfeasibleGammaError:
        return False
    return True


def hinf_gamma_opt(plant: StandardPlant, rtol: float = GAMMA_OPT_RTOL) -> float:
    """Optimal analog H-infinity level by bisection on Riccati feasibility"""
    hi = 1.0
    while not hinf_feasible(plant, hi):
        hi *= 2.0
        if hi > 1e12:
            raise InvalidInputError("no feasible gamma found")
    lo = 0.5 * hi
    while lo > 1e-12 and hinf_feasible(plant, lo):
        hi, lo = lo, 0.5 * lo
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if hinf_feasible(plant, mid):
            hi = mid
        else:
            lo = mid
    logger.debug(f"hinf_gamma_opt: {hi:.9g}")
    return hi


def hinf_generator(plant: StandardPlant, gamma: float, X, Y, F, L) -> Tuple[GeneratorJ0, np.ndarray]:
    """Generator of all gamma-suboptimal controllers, with Z = (I - gamma^-2 Y X)^-1"""
    A, Bw, Bu, Cz, Dzu, Cy, Dyw = plant.A, plant.Bw, plant.Bu, plant.Cz, plant.Dzu, plant.Cy, plant.Dyw
    g2 = gamma**-2
    Z = np.linalg.inv(np.eye(plant.n) - g2 * Y @ X)
    Bu_t = Bu + g2 * Y @ Cz.T @ Dzu
    Cy_t = Cy + g2 * Dyw @ Bw.T @ X
    A_gamma = A + g2 * Bw @ Bw.T @ X + Bu @ F + Z @ L @ Cy_t
    j0 = GeneratorJ0(
        A_J=A_gamma,
        B_J1=-Z @ L,
        B_J2=Z @ Bu_t,
        C_J1=F,
        C_J2=-Cy_t,
        D_0=np.zeros((Bu.shape[1], Cy.shape[0])),
    )
    return j0, Z


def hinf_design(plant: StandardPlant, gamma: float, with_gamma_opt: bool = False) -> HinfDesign:
    """
    Sampled-data gamma-suboptimal controller and its longest admissible interval

    The controller is presented with sensor dynamics A_L = A + gamma^-2 Y Cz'Cz + L Cy
    and reset x_a = Z x_s.
    """
    try:
        ric = _hinf_riccati(plant, gamma)
    except InfeasibleGammaError as exc:
        try:
            exc.certificate["gamma_opt"] = hinf_gamma_opt(plant)
        except ResampleError:
            pass
        raise
    j0, Z = hinf_generator(plant, gamma, ric.X, ric.Y, ric.F, ric.L)
    ctrl = with_sensor_coordinates(central_controller(j0), np.linalg.inv(Z))

    dre_A, dre_W, dre_R = plant.A, plant.Bw @ plant.Bw.T, gamma**-2 * plant.Cz.T @ plant.Cz
    threshold = gamma**2
    crossing = dre_first_crossing(dre_A, dre_W, dre_R, ric.Y, ric.X, threshold)
    logger.info(f"hinf_design: gamma={gamma:.6g} rho_yx={ric.rho_yx:.6g} h_sup={crossing.time:.6g}")
    return HinfDesign(
        mode="standard",
        gamma=gamma,
        X=ric.X,
        Y=ric.Y,
        F=ric.F,
        L=ric.L,
        rho_yx=ric.rho_yx,
        Z_gamma=Z,
        threshold=threshold,
        h_sup=crossing.time,
        controller=ctrl,
        generator=j0,
        dre_A=dre_A,
        dre_W=symmetrize(dre_W),
        dre_R=symmetrize(dre_R),
        gamma_opt=hinf_gamma_opt(plant) if with_gamma_opt else None,
        residuals=ric.residuals,
    )


class _CoprimeRiccati(NamedTuple):
    X: np.ndarray
    Y: np.ndarray
    rho_yx: float
    gamma_opt: float
    residuals: Dict[str, float]


def _coprime_riccati(P_msh: StateSpace) -> _CoprimeRiccati:
    if np.any(P_msh.D != 0):
        raise InvalidInputError("shaped plant must be strictly proper")
    A, B, C = P_msh.A, P_msh.B, P_msh.C
    ctrl = care(A, B @ B.T, C.T @ C)
    filt = care(A.T, C.T @ C, B @ B.T)
    rho = spectral_radius(filt.X @ ctrl.X)
    return _CoprimeRiccati(
        ctrl.X, filt.X, rho, math.sqrt(1.0 + rho), {"X": ctrl.residual_norm, "Y": filt.residual_norm}
    )


def loopshape_gamma_opt(P_msh: StateSpace) -> float:
    """sqrt(1 + rho(YX)) from the normalized coprime factor Riccati equations"""
    return _coprime_riccati(P_msh).gamma_opt


def loopshape_design(P_msh: StateSpace, gamma: float, riccati: Optional[_CoprimeRiccati] = None) -> HinfDesign:
    """Loop-shaping controller of the shaped plant with reset x_a = Z x_s"""
    ric = riccati or _coprime_riccati(P_msh)
    if gamma <= ric.gamma_opt:
        raise InfeasibleGammaError(
            f"gamma={gamma:.6g} is not above gamma_opt={ric.gamma_opt:.6g}",
            {"gamma": gamma, "gamma_opt": ric.gamma_opt, "failed": "coupling", "rho_yx": ric.rho_yx},
        )
    A, B, C = P_msh.A, P_msh.B, P_msh.C
    X, Y = ric.X, ric.Y
    n = P_msh.n
    g2 = gamma**-2
    Z = np.linalg.inv((1.0 - g2) * np.eye(n) - g2 * Y @ X)
    if n and np.min(np.linalg.eigvals(Z).real) <= 1.0 - 1e-12:
        raise InfeasibleGammaError(f"gamma={gamma:.6g}: Z_gamma is not above I", {"gamma": gamma, "failed": "Z"})

    F = -B.T @ X
    L = -Y @ C.T
    j0 = GeneratorJ0(
        A_J=A - B @ B.T @ X - Z @ Y @ C.T @ C,
        B_J1=Z @ Y @ C.T,
        B_J2=Z @ B,
        C_J1=F,
        C_J2=-C,
        D_0=np.zeros((P_msh.m, P_msh.p)),
    )
    ctrl = with_sensor_coordinates(central_controller(j0), np.linalg.inv(Z))

    threshold = gamma**2 - 1.0
    dre_A = A
    dre_W = symmetrize(B @ B.T)
    dre_R = symmetrize(C.T @ C / threshold)
    crossing = dre_first_crossing(dre_A, dre_W, dre_R, Y, X, threshold)
    logger.debug(f"loopshape_design: gamma={gamma:.6g} gamma_opt={ric.gamma_opt:.6g} h_sup={crossing.time:.6g}")
    return HinfDesign(
        mode="loopshape",
        gamma=gamma,
        X=X,
        Y=Y,
        F=F,
        L=L,
        rho_yx=ric.rho_yx,
        Z_gamma=Z,
        threshold=threshold,
        h_sup=crossing.time,
        controller=ctrl,
        generator=j0,
        dre_A=dre_A,
        dre_W=dre_W,
        dre_R=dre_R,
        gamma_opt=ric.gamma_opt,
        residuals=ric.residuals,
    )


class CurvePoint(NamedTuple):
    gamma: float
    h_sup: Optional[float]
    error: Optional[str] = None


def gamma_h_curve(P_msh: StateSpace, gammas: Sequence[float], workers: int = 1) -> List[CurvePoint]:
    """h_sup of the loop-shaping design over a list of gammas; failures are recorded per point"""
    ric = _coprime_riccati(P_msh)

    def point(gamma: float) -> CurvePoint:
        try:
            return CurvePoint(float(gamma), loopshape_design(P_msh, gamma, ric).h_sup)
        except ResampleError as exc:
            logger.warning(f"gamma_h_curve: gamma={gamma:.6g} failed: {exc}")
            return CurvePoint(float(gamma), None, str(exc))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(point, gammas))
    return [point(g) for g in gammas]


def curve_is_monotone(points: Sequence[CurvePoint], atol: float = 1e-9) -> bool:
    values = [(p.gamma, p.h_sup) for p in points if p.h_sup is not None]
    values.sort()
    return all(b[1] >= a[1] - atol for a, b in zip(values, values[1:]))


def periodic_admissibility(design: HinfDesign, pattern) -> bool:
    """A pattern is admissible iff its longest interval is below h_sup"""
    from app.engine.sim import pattern_bounds

    return pattern_bounds(pattern)[1] < design.h_sup


def _gain_level(design: HinfDesign) -> float:
    """L2 level of the static parameter part: gamma, or sqrt(gamma^2 - 1) for loop shaping"""
    return math.sqrt(design.threshold)


def q_stat_norm_check(design: HinfDesign, h: float) -> bool:
    """
    Admissibility of interval h by two routes: the DRE verdict h < h_sup and
    the finite-horizon gain of the static reset part of the parameter.
    Disagreement outside a narrow band around h_sup raises ConsistencyError.
    """
    level = _gain_level(design)
    if h <= 0:
        raise InvalidInputError("h must be positive")
    by_dre = design.admissible(h)
    by_gain = finite_horizon_l2_gain_less(q_stat(design.generator).sys, h, level)
    if by_dre != by_gain:
        near = math.isfinite(design.h_sup) and abs(h - design.h_sup) <= QSTAT_BAND * max(1.0, design.h_sup)
        if not near:
            raise ConsistencyError(
                f"h={h:.6g}: DRE route says {'admissible' if by_dre else 'inadmissible'}, "
                f"gain route says {'admissible' if by_gain else 'inadmissible'}"
            )
    return by_dre


def q_stat_flip_point(design: HinfDesign, h_max: Optional[float] = None, atol: float = 1e-6) -> float:
    """Shortest interval on which the static parameter part reaches its gain level"""
    level = _gain_level(design)
    sys = q_stat(design.generator).sys
    hi = h_max or (2.0 * design.h_sup if math.isfinite(design.h_sup) else 1.0)
    while finite_horizon_l2_gain_less(sys, hi, level):
        hi *= 2.0
        if hi > 1e4:
            return math.inf
    lo = 0.0
    while hi - lo > atol:
        mid = 0.5 * (lo + hi)
        if finite_horizon_l2_gain_less(sys, mid, level):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
