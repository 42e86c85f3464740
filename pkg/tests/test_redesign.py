"""
Tests for the sampled-data controller structure, order reduction and the
strict-causality probe
"""

from dataclasses import replace

import numpy as np
import pytest
from numpy.testing import assert_allclose

from app.core.errors import DimensionError, InvalidInputError, StrictCausalityError
from app.engine.lti import StateSpace, is_hurwitz
from app.engine.redesign import (
    SampledDataController,
    SampledDataQ,
    attach_qsd,
    central_controller,
    generalized_hold_qsd,
    lifted_triple,
    reduce_order,
    reduction_gain,
    strict_causality_probe,
    with_sensor_coordinates,
)
from app.engine.sim import GeneralizedPlant, simulate, stability_probe
from app.engine.specs import RandomPattern, Square, Step, UniformPattern
from app.engine.youla import ControllerStructure, PlantControllerPair, build_generator

from tests.systems import lqg_gains, stabilized_pair

# 1/((s - 1)(s + 2))
UNSTABLE_A = np.array([[0.0, 1.0], [2.0, -1.0]])
UNSTABLE_B = np.array([[0.0], [1.0]])
UNSTABLE_C = np.array([[1.0, 0.0]])


def feedthrough_q(value: float = 1.0) -> SampledDataQ:
    return SampledDataQ(
        np.zeros((0, 0)),
        np.zeros((0, 1)),
        np.zeros((0, 1)),
        np.zeros((0, 0)),
        np.zeros((0, 0)),
        np.zeros((1, 0)),
        [[value]],
    )


def unstable_observer_pair() -> PlantControllerPair:
    P = StateSpace(UNSTABLE_A, UNSTABLE_B, UNSTABLE_C, [[0.0]])
    F, L = lqg_gains(P)
    K0 = StateSpace(P.A + P.B @ F + L @ P.C, -L, F, [[0.0]])
    return PlantControllerPair(P=P, K0=K0, structure=ControllerStructure.OBSERVER_BASED, F=F, L=L)


def state_feedback_pair() -> PlantControllerPair:
    """Full state measurement under u = F x with A + Bu F stable"""
    P = StateSpace(UNSTABLE_A, UNSTABLE_B, np.eye(2), np.zeros((2, 1)))
    return PlantControllerPair(P=P, K0=StateSpace.static([[-6.0, -2.0]]), structure=ControllerStructure.STATIC)


def u_trace(plant, ctrl, h: float = 0.3, T: float = 3.0, signal=None):
    signal = signal or Square(amplitude=1.0, period=1.7)
    return simulate(plant, ctrl, signal, UniformPattern(h=h), T).u


def test_central_blocks_static_gain():
    P = StateSpace(UNSTABLE_A, UNSTABLE_B, UNSTABLE_C, [[0.0]])
    pair = PlantControllerPair(P=P, K0=StateSpace.static([[-4.0]]), structure=ControllerStructure.STATIC)
    ctrl = central_controller(build_generator(pair))
    assert_allclose(ctrl.sensor.A, UNSTABLE_A - 4.0 * UNSTABLE_B @ UNSTABLE_C)
    assert_allclose(ctrl.actuator.A, UNSTABLE_A - 4.0 * UNSTABLE_B @ UNSTABLE_C)
    assert_allclose(ctrl.actuator.C, -4.0 * UNSTABLE_C)
    assert_allclose(ctrl.jump_M, np.eye(2))
    assert_allclose(ctrl.jump_N, np.zeros((2, 1)))


def test_central_blocks_observer(observer_pair):
    j0 = build_generator(observer_pair)
    ctrl = central_controller(j0)
    P, F, L = observer_pair.P, observer_pair.F, observer_pair.L
    assert_allclose(ctrl.sensor.A, P.A + L @ P.C, atol=1e-12)
    assert_allclose(ctrl.sensor.B, np.hstack([-L, P.B]))
    assert_allclose(ctrl.sensor.C, np.vstack([F, -P.C]))
    assert_allclose(ctrl.actuator.A, P.A + P.B @ F, atol=1e-12)
    assert_allclose(ctrl.actuator.B, P.B)
    assert_allclose(ctrl.actuator.C, F)
    assert_allclose(ctrl.actuator.D, np.eye(1))
    assert_allclose(ctrl.jump_M, np.eye(P.n))
    assert ctrl.monitor is not None


def test_lifted_triple_trivial_cases(pair):
    triple = lifted_triple(build_generator(pair))
    n = triple.sampler_A.shape[0]
    assert_allclose(triple.transition(0.0), np.eye(n))
    ubar = np.arange(1.0, n + 1.0)
    assert_allclose(triple.hold(ubar, 0.0), triple.hold_C @ ubar)


def test_lifted_triple_matches_simulation(pair):
    j0 = build_generator(pair)
    ctrl = central_controller(j0)
    h, T, dt = 0.5, 2.0, 0.005
    levels = np.array([1.0, -0.5, 2.0, 0.25])
    n_steps = int(round(T / dt))
    per_interval = int(round(h / dt))
    w_values = levels[np.arange(n_steps) // per_interval][:, np.newaxis]
    trace = simulate(GeneralizedPlant.passthrough(1, 1), ctrl, w_values, UniformPattern(h=h), T, dt=dt)

    def y_fn(t):
        return [levels[min(int(t / h), levels.size - 1)]]

    instants = [0.0, 0.5, 1.0, 1.5, 2.0]
    lifted = lifted_triple(j0).run(y_fn, instants, trace.times)
    scale = max(1.0, float(np.max(np.abs(trace.u))))
    assert float(np.max(np.abs(lifted - trace.u))) <= 1e-6 * scale


def test_attach_zero_parameter_changes_nothing(pair):
    ctrl = central_controller(build_generator(pair))
    with_zero = attach_qsd(ctrl, SampledDataQ.zero(1, 1))
    plant = GeneralizedPlant.from_state_space(pair.P)
    assert_allclose(u_trace(plant, with_zero), u_trace(plant, ctrl), atol=1e-12)


def test_attach_rejects_feedthrough(pair):
    ctrl = central_controller(build_generator(pair))
    with pytest.raises(StrictCausalityError):
        attach_qsd(ctrl, feedthrough_q())


def test_parameter_needs_innovation():
    reduced = reduce_order(build_generator(state_feedback_pair()), np.eye(2))
    assert not reduced.has_innovation
    with pytest.raises(InvalidInputError):
        attach_qsd(reduced, SampledDataQ.zero(2, 1))


def test_generalized_hold_equals_reduced_reset(pair, rng):
    j0 = build_generator(pair)
    B_eta = rng.standard_normal((j0.n, 1))
    with_hold = attach_qsd(central_controller(j0), generalized_hold_qsd(j0, B_eta))
    folded = reduce_order(j0, B_eta)
    assert_allclose(folded.jump_N, B_eta)
    plant = GeneralizedPlant.from_state_space(pair.P)
    u_hold = u_trace(plant, with_hold)
    u_folded = u_trace(plant, folded)
    scale = max(1.0, float(np.max(np.abs(u_hold))))
    assert float(np.max(np.abs(u_hold - u_folded))) <= 1e-8 * scale


def test_zero_gain_keeps_full_order(pair):
    j0 = build_generator(pair)
    ctrl = reduce_order(j0, np.zeros((j0.n, 1)))
    assert ctrl.sensor.n == j0.n
    assert_allclose(ctrl.jump_M, np.eye(j0.n))


def test_state_feedback_collapse():
    pair = state_feedback_pair()
    F = pair.K0.D
    j0 = build_generator(pair)
    ctrl = reduce_order(j0, np.eye(2))
    assert ctrl.sensor.n == 0
    assert_allclose(ctrl.jump_N, np.eye(2))
    assert_allclose(ctrl.actuator.A, UNSTABLE_A + UNSTABLE_B @ F)
    assert_allclose(ctrl.actuator.B, UNSTABLE_B)
    assert_allclose(ctrl.actuator.C, F)
    assert_allclose(ctrl.actuator.D, np.eye(1))
    reports = stability_probe(pair.P, ctrl, [UniformPattern(h=0.2)], T=20.0, dt=0.002)
    assert reports[0].decays


def test_reduction_gain_removes_one_mode(rng):
    pair = stabilized_pair(rng, n=3, m=1, p=2, structure=ControllerStructure.OBSERVER_BASED)
    j0 = build_generator(pair)
    A_s = j0.A_J - j0.B_J2 @ j0.C_J1
    eigs, vecs = np.linalg.eig(A_s)
    real = int(np.argmin(np.abs(eigs.imag)))
    V2 = vecs[:, real : real + 1].real
    B_eta = reduction_gain(j0, V2)
    assert_allclose(B_eta @ j0.C_J2 @ V2, -V2, atol=1e-10)
    reduced = reduce_order(j0, B_eta)
    assert reduced.sensor.n == 2
    full = attach_qsd(central_controller(j0), generalized_hold_qsd(j0, B_eta))
    plant = GeneralizedPlant.from_state_space(pair.P)
    u_full = u_trace(plant, full)
    u_reduced = u_trace(plant, reduced)
    scale = max(1.0, float(np.max(np.abs(u_full))))
    assert float(np.max(np.abs(u_full - u_reduced))) <= 1e-7 * scale


def test_sensor_coordinates_preserve_behaviour(pair, rng):
    ctrl = central_controller(build_generator(pair))
    T = np.eye(ctrl.sensor.n) + 0.3 * rng.standard_normal((ctrl.sensor.n, ctrl.sensor.n))
    moved = with_sensor_coordinates(ctrl, T)
    plant = GeneralizedPlant.from_state_space(pair.P)
    u_ref = u_trace(plant, ctrl)
    scale = max(1.0, float(np.max(np.abs(u_ref))))
    assert float(np.max(np.abs(u_trace(plant, moved) - u_ref))) <= 1e-8 * scale


def test_probe_classifies_controllers(pair):
    central = central_controller(build_generator(pair))
    pattern = UniformPattern(h=1.0)
    assert strict_causality_probe(central, pattern) < 1e-9
    analog = StateSpace([[-1.0]], [[1.0]], [[10.0]], [[0.0]])
    assert strict_causality_probe(analog, pattern) > 1e-3
    assert strict_causality_probe(replace(central, q_sd=feedthrough_q()), pattern) > 1e-3
    with pytest.raises(InvalidInputError):
        strict_causality_probe(central, pattern, probe_energy=0.0)


def test_controller_dimension_checks(pair):
    ctrl = central_controller(build_generator(pair))
    with pytest.raises(DimensionError):
        SampledDataController(
            sensor=ctrl.sensor,
            actuator=StateSpace.static(np.ones((2, 1))),
            jump_M=ctrl.jump_M,
            jump_N=ctrl.jump_N,
        )


def _decay_horizon(pair: PlantControllerPair) -> float:
    P = pair.P
    rate = -max(
        np.max(np.linalg.eigvals(P.A + P.B @ pair.F).real),
        np.max(np.linalg.eigvals(P.A + pair.L @ P.C).real),
    )
    return max(20.0, 12.0 / rate)


def _random_patterns(count: int):
    return [RandomPattern(h_min=0.05, h_max=0.5, seed=seed) for seed in range(count)]


def test_central_controller_stable_under_random_sampling():
    pair = unstable_observer_pair()
    assert is_hurwitz(pair.P.A + pair.P.B @ pair.F)
    ctrl = central_controller(build_generator(pair))
    reports = stability_probe(pair.P, ctrl, _random_patterns(5), T=_decay_horizon(pair), seed=1, dt=1e-3)
    assert all(r.decays for r in reports)


@pytest.mark.slow
def test_central_controller_stable_ensemble():
    pair = unstable_observer_pair()
    ctrl = central_controller(build_generator(pair))
    reports = stability_probe(pair.P, ctrl, _random_patterns(100), T=_decay_horizon(pair), seed=2, dt=1e-3)
    assert all(r.decays for r in reports)


def test_step_response_settles(observer_pair):
    ctrl = central_controller(build_generator(observer_pair))
    trace = simulate(observer_pair.P, ctrl, Step(amplitude=1.0), UniformPattern(h=0.2), 10.0)
    assert np.all(np.isfinite(trace.u))
    assert trace.sample_instants.size == 51
