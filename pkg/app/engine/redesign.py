"""
Sampled-data redesign of analog controllers

A controller here runs two copies of the generator dynamics: a sensor,
driven continuously by the measurement, and an actuator, driven only by
its own output. At every sampling instant the actuator state is
overwritten from the sensor state.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, List, Optional, Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss

from app.core.errors import DimensionError, InvalidInputError, StrictCausalityError
from app.engine.lti import ResetLinearSystem, StateSpace, reachable_basis, similarity
from app.engine.matfun import as_block, as_matrix, as_square, expm, van_loan_integral
from app.engine.specs import UniformPattern
from app.engine.youla import GeneratorJ0, q_stat

logger = logging.getLogger(__name__)

STRICT_CAUSALITY_TOL = 1e-9
QUADRATURE_NODES = 32


@dataclass(frozen=True, eq=False)
class SampledDataQ:
    """
    Sampled-data parameter mapping the innovation epsilon to eta

    An integrating sampler (sampler_A, sampler_B) runs on each interval and
    is read out and cleared at every sampling instant, together with an
    ideal sample of epsilon:

        x_qa(t_i) = jump_M x_qs(t_i) + sample_gain epsilon(t_i),  x_qs(t_i) = 0

    The generalized hold then plays x_qa out:

        x_qa' = hold_A x_qa,  eta = hold_C x_qa + feedthrough epsilon

    A nonzero feedthrough is not strictly causal and is rejected by
    attach_qsd.
    """

    sampler_A: np.ndarray
    sampler_B: np.ndarray
    sample_gain: np.ndarray
    jump_M: np.ndarray
    hold_A: np.ndarray
    hold_C: np.ndarray
    feedthrough: np.ndarray

    def __post_init__(self):
        D = as_matrix(self.feedthrough, "feedthrough")
        n_out, n_in = D.shape
        A_s = np.zeros((0, 0)) if np.size(self.sampler_A) == 0 else as_square(self.sampler_A, "sampler_A")
        A_h = np.zeros((0, 0)) if np.size(self.hold_A) == 0 else as_square(self.hold_A, "hold_A")
        k, r = A_s.shape[0], A_h.shape[0]
        object.__setattr__(self, "sampler_A", A_s)
        object.__setattr__(self, "hold_A", A_h)
        object.__setattr__(self, "feedthrough", D)
        object.__setattr__(self, "sampler_B", as_block(self.sampler_B, k, n_in, "sampler_B"))
        object.__setattr__(self, "sample_gain", as_block(self.sample_gain, r, n_in, "sample_gain"))
        object.__setattr__(self, "jump_M", as_block(self.jump_M, r, k, "jump_M"))
        object.__setattr__(self, "hold_C", as_block(self.hold_C, n_out, r, "hold_C"))

    @property
    def n_in(self) -> int:
        return self.feedthrough.shape[1]

    @property
    def n_out(self) -> int:
        return self.feedthrough.shape[0]

    @property
    def n_sampler(self) -> int:
        return self.sampler_A.shape[0]

    @property
    def n_hold(self) -> int:
        return self.hold_A.shape[0]

    @classmethod
    def zero(cls, n_in: int, n_out: int) -> "SampledDataQ":
        return cls(
            np.zeros((0, 0)),
            np.zeros((0, n_in)),
            np.zeros((0, n_in)),
            np.zeros((0, 0)),
            np.zeros((0, 0)),
            np.zeros((n_out, 0)),
            np.zeros((n_out, n_in)),
        )


@dataclass(frozen=True, eq=False)
class SampledDataController:
    """
    Sensor, actuator and reset map of a sampled-data controller

    The sensor has inputs (y, u) and outputs (u_s, epsilon); a reduced
    sensor may have no outputs. The actuator maps eta to u. At every
    sampling instant x_a = jump_M x_s + jump_N y.
    """

    sensor: StateSpace
    actuator: StateSpace
    jump_M: np.ndarray
    jump_N: np.ndarray
    q_sd: Optional[SampledDataQ] = None
    monitor: Optional[ResetLinearSystem] = None

    def __post_init__(self):
        n_u = self.actuator.p
        n_y = self.sensor.m - n_u
        if n_y < 0 or self.actuator.m != n_u:
            raise DimensionError("sensor inputs must be (y, u) and the actuator must map eta to u")
        if self.sensor.p not in (0, n_u + n_y):
            raise DimensionError("sensor outputs must be (u_s, epsilon) or empty")
        object.__setattr__(self, "jump_M", as_block(self.jump_M, self.actuator.n, self.sensor.n, "jump_M"))
        object.__setattr__(self, "jump_N", as_block(self.jump_N, self.actuator.n, n_y, "jump_N"))
        if self.q_sd is not None:
            if not self.has_innovation:
                raise InvalidInputError("a sampled-data parameter needs the innovation output")
            if (self.q_sd.n_in, self.q_sd.n_out) != (n_y, n_u):
                raise DimensionError("sampled-data parameter must map epsilon to eta")

    @property
    def n_u(self) -> int:
        return self.actuator.p

    @property
    def n_y(self) -> int:
        return self.sensor.m - self.actuator.p

    @property
    def has_innovation(self) -> bool:
        return self.sensor.p == self.n_u + self.n_y

    @property
    def innovation_map(self):
        """(C, D) with epsilon = C x_s + D (y, u)"""
        if not self.has_innovation:
            raise InvalidInputError("controller has no innovation output")
        return self.sensor.C[self.n_u :, :], self.sensor.D[self.n_u :, :]


def central_controller(j0: GeneratorJ0) -> SampledDataController:
    """Sampled-data controller with Q_sd = 0: sensor and actuator copies of J0"""
    m, p = j0.n_u, j0.n_y
    sensor = StateSpace(
        j0.A_J - j0.B_J2 @ j0.C_J1,
        np.hstack([j0.B_J12, j0.B_J2]),
        np.vstack([j0.C_J1, j0.C_J2]),
        np.block([[j0.D_0, np.zeros((m, m))], [np.eye(p), np.zeros((p, m))]]),
    )
    actuator = StateSpace(j0.A_J - j0.B_J1 @ j0.C_J2, j0.B_J2, j0.C_J12, np.eye(m))
    return SampledDataController(
        sensor=sensor,
        actuator=actuator,
        jump_M=np.eye(j0.n),
        jump_N=np.zeros((j0.n, p)),
        monitor=q_stat(j0),
    )


def with_sensor_coordinates(ctrl: SampledDataController, T) -> SampledDataController:
    """Express the sensor state as T x_s; the reset map follows"""
    T = as_square(T, "T")
    return replace(
        ctrl,
        sensor=similarity(ctrl.sensor, T),
        jump_M=ctrl.jump_M @ np.linalg.inv(T),
    )


def generalized_hold_qsd(j0: GeneratorJ0, B_eta) -> SampledDataQ:
    """Ideal sampler with gain B_eta followed by the hold e^{A_J^x t}"""
    B_eta = as_block(B_eta, j0.n, j0.n_y, "B_eta")
    return SampledDataQ(
        sampler_A=np.zeros((0, 0)),
        sampler_B=np.zeros((0, j0.n_y)),
        sample_gain=B_eta,
        jump_M=np.zeros((j0.n, 0)),
        hold_A=j0.A_J_times,
        hold_C=j0.C_J12,
        feedthrough=np.zeros((j0.n_u, j0.n_y)),
    )


def reduction_gain(j0: GeneratorJ0, V2) -> np.ndarray:
    """
    Least-norm B_eta with B_eta C_J2 V2 = -V2

    When V2 spans an invariant subspace of the sensor dynamics, those modes
    become unobservable through the reset map and reduce_order drops them.
    """
    V2 = as_matrix(V2, "V2")
    if V2.shape[0] != j0.n:
        V2 = V2.T
    if V2.shape[0] != j0.n:
        raise DimensionError("V2 must have n rows")
    X = j0.C_J2 @ V2
    B_eta = -V2 @ np.linalg.pinv(X)
    if np.linalg.norm(B_eta @ X + V2) > 1e-9 * max(1.0, float(np.linalg.norm(V2))):
        raise InvalidInputError("C_J2 V2 must have full column rank")
    A_s = j0.A_J - j0.B_J2 @ j0.C_J1
    residual = A_s @ V2 - V2 @ np.linalg.lstsq(V2, A_s @ V2, rcond=None)[0]
    if np.linalg.norm(residual) > 1e-8 * max(1.0, float(np.linalg.norm(A_s))):
        logger.warning("reduction_gain: V2 is not invariant under the sensor dynamics")
    return B_eta


def reduce_order(j0: GeneratorJ0, B_eta) -> SampledDataController:
    """
    Controller with reset x_a = (I + B_eta C_J2) x_s + B_eta y

    This is the central controller with the generalized-hold parameter of
    B_eta folded into the reset map. Sensor modes that the new reset map
    cannot see are removed.
    """
    B_eta = as_block(B_eta, j0.n, j0.n_y, "B_eta")
    full = central_controller(j0)
    M = np.eye(j0.n) + B_eta @ j0.C_J2
    sensor = full.sensor
    W = reachable_basis(sensor.A.T, M.T)
    if W.shape[1] == j0.n:
        return replace(full, jump_M=M, jump_N=B_eta, monitor=None)
    reduced = StateSpace(
        W.T @ sensor.A @ W,
        W.T @ sensor.B,
        np.zeros((0, W.shape[1])),
        np.zeros((0, sensor.m)),
    )
    logger.info(f"reduce_order: sensor order {j0.n} -> {reduced.n}")
    return SampledDataController(
        sensor=reduced,
        actuator=full.actuator,
        jump_M=M @ W,
        jump_N=B_eta,
    )


@dataclass(frozen=True, eq=False)
class LiftedTriple:
    """
    Lifted description of the central controller:
        ubar[i+1] = transition(h_i) ubar[i] + sample(y on [t_i, t_i+1))
        u(t_i + theta) = hold(ubar[i], theta)
    """

    sampler_A: np.ndarray
    sampler_B: np.ndarray
    coupling: np.ndarray
    hold_A: np.ndarray
    hold_C: np.ndarray

    def transition(self, h: float) -> np.ndarray:
        return expm(self.sampler_A, h) + van_loan_integral(self.sampler_A, self.coupling, self.hold_A, h)

    def sample(self, y_fn: Callable[[float], np.ndarray], t_i: float, h: float) -> np.ndarray:
        """Integral of e^{A_s (h - s)} B y(t_i + s) over [0, h) by Gauss-Legendre"""
        nodes, weights = leggauss(QUADRATURE_NODES)
        total = np.zeros(self.sampler_A.shape[0])
        for x, w in zip(nodes, weights):
            s = 0.5 * h * (x + 1.0)
            y = np.atleast_1d(np.asarray(y_fn(t_i + s), dtype=float))
            total += 0.5 * h * w * (expm(self.sampler_A, h - s) @ self.sampler_B @ y)
        return total

    def hold(self, ubar: np.ndarray, theta: float) -> np.ndarray:
        return self.hold_C @ expm(self.hold_A, theta) @ ubar

    def run(
        self,
        y_fn: Callable[[float], np.ndarray],
        instants: Sequence[float],
        times: Sequence[float],
    ) -> np.ndarray:
        """Control signal at the given times from zero initial state"""
        instants = list(instants)
        ubar = np.zeros(self.sampler_A.shape[0])
        states: List[np.ndarray] = []
        for t_i, t_next in zip(instants[:-1], instants[1:]):
            states.append(ubar)
            h = t_next - t_i
            ubar = self.transition(h) @ ubar + self.sample(y_fn, t_i, h)
        states.append(ubar)
        out = []
        for t in times:
            i = max(0, int(np.searchsorted(instants, t, side="right")) - 1)
            i = min(i, len(states) - 1)
            out.append(self.hold(states[i], t - instants[i]))
        return np.array(out)


def lifted_triple(j0: GeneratorJ0) -> LiftedTriple:
    return LiftedTriple(
        sampler_A=j0.A_J - j0.B_J2 @ j0.C_J1,
        sampler_B=j0.B_J12,
        coupling=j0.B_J2 @ j0.C_J12,
        hold_A=j0.A_J - j0.B_J1 @ j0.C_J2,
        hold_C=j0.C_J12,
    )


def attach_qsd(ctrl: SampledDataController, q_sd: SampledDataQ, pattern=None) -> SampledDataController:
    """Attach a strictly causal sampled-data parameter to a controller"""
    if not ctrl.has_innovation:
        raise InvalidInputError("controller has no innovation output to drive the parameter")
    candidate = replace(ctrl, q_sd=q_sd)
    if pattern is None:
        pattern = UniformPattern(h=1.0)
    ratio = strict_causality_probe(candidate, pattern)
    if ratio >= STRICT_CAUSALITY_TOL:
        raise StrictCausalityError(f"parameter responds within the sampling interval (energy ratio {ratio:.3e})")
    return candidate


def strict_causality_probe(ctrl, pattern, probe_energy: float = 1.0) -> float:
    """
    Largest same-interval output energy ratio over input channels

    A pulse confined to the middle half of one sampling interval is applied
    to the controller input alone; a strictly causal sampled-data controller
    must not respond before the next sampling instant.
    """
    from app.engine.sim import controller_pulse_response

    if probe_energy <= 0:
        raise InvalidInputError("probe energy must be positive")
    n_in = ctrl.m if isinstance(ctrl, StateSpace) else ctrl.n_y
    ratios = []
    for channel in range(n_in):
        energy_in, energy_out = controller_pulse_response(ctrl, pattern, channel, probe_energy)
        ratios.append(energy_out / energy_in)
    ratio = max(ratios) if ratios else 0.0
    logger.debug(f"strict_causality_probe: ratio={ratio:.3e}")
    return ratio if math.isfinite(ratio) else math.inf
