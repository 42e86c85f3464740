"""
Tests for state-space systems, interconnections and norms
"""

import math

import numpy as np
import pytest
import scipy.linalg
from numpy.testing import assert_allclose

from app.core.errors import AlgebraicLoopError, DimensionError, InvalidInputError, NotHurwitzError
from app.engine.lti import (
    PartitionedSystem,
    StateSpace,
    TransferFunctionSiso,
    finite_horizon_l2_gain,
    finite_horizon_l2_gain_less,
    freqresp,
    h2_norm_lti,
    is_hurwitz,
    lft_lower,
    lft_upper,
    linf_gain,
    minimal_realization,
    parallel,
    poles,
    same_frequency_response,
    series,
    tf_to_ss,
    zeros,
)
from app.presets import pendulum

from tests.systems import random_stable


def first_order(a: float = 1.0) -> StateSpace:
    """1/(s + a)"""
    return StateSpace([[-a]], [[1.0]], [[1.0]], [[0.0]])


def test_tf_to_ss_first_order():
    sys = tf_to_ss(TransferFunctionSiso([1.0], [1.0, 1.0]))
    assert sys.n == 1
    assert sys.evaluate(2.0j)[0, 0] == pytest.approx(1.0 / (2.0j + 1.0))


def test_tf_to_ss_static():
    sys = tf_to_ss(TransferFunctionSiso([3.0], [2.0]))
    assert sys.n == 0
    assert sys.D[0, 0] == pytest.approx(1.5)


def test_tf_improper_rejected():
    with pytest.raises(InvalidInputError):
        TransferFunctionSiso([1.0, 0.0, 0.0], [1.0, 1.0])


def test_pendulum_plant_poles():
    found = np.sort_complex(poles(pendulum.plant()))
    expected = np.sort_complex(np.array([-18.0, -0.01 + math.sqrt(22.9999) * 1j, -0.01 - math.sqrt(22.9999) * 1j]))
    assert_allclose(found, expected, rtol=1e-9)
    assert abs(found[-1].imag) == pytest.approx(4.796, abs=1e-3)


def test_tf_to_ss_frequency_response():
    tf = TransferFunctionSiso(pendulum.PLANT_NUM, pendulum.PLANT_DEN)
    sys = tf_to_ss(tf)
    omega = np.logspace(-2, 2, 30)
    expected = np.polyval(tf.num, 1j * omega) / np.polyval(tf.den, 1j * omega)
    assert_allclose(freqresp(sys, omega)[:, 0, 0], expected, rtol=1e-9)


def test_series_and_parallel():
    g = series(first_order(1.0), first_order(2.0))
    assert g.evaluate(1.0j)[0, 0] == pytest.approx(1.0 / ((1.0j + 1.0) * (1.0j + 2.0)))
    s = parallel(first_order(1.0), StateSpace.static([[2.0]]))
    assert s.evaluate(0.0)[0, 0] == pytest.approx(3.0)
    with pytest.raises(DimensionError):
        series(StateSpace.static(np.ones((2, 1))), first_order())


def test_lft_lower_with_zero_closes_nothing(rng):
    A = random_stable(rng, 3)
    base = StateSpace(A, rng.standard_normal((3, 2)), rng.standard_normal((2, 3)), rng.standard_normal((2, 2)))
    phi = PartitionedSystem(base, row_split=1, col_split=1)
    closed = lft_lower(phi, StateSpace.static([[0.0]]))
    assert same_frequency_response(closed, phi.block(1, 1), rtol=1e-12)


def test_lft_scalar_formula():
    # static partitioned gain [[a, b], [c, d]] closed through q
    a, b, c, d, q = 0.3, 2.0, -1.5, 0.4, 0.7
    phi = PartitionedSystem(StateSpace.static([[a, b], [c, d]]), 1, 1)
    closed = lft_lower(phi, StateSpace.static([[q]]))
    assert closed.D[0, 0] == pytest.approx(a + b * q * c / (1.0 - d * q))
    upper = lft_upper(phi, StateSpace.static([[q]]))
    assert upper.D[0, 0] == pytest.approx(d + c * q * b / (1.0 - a * q))


def test_lft_algebraic_loop():
    phi = PartitionedSystem(StateSpace.static([[0.0, 1.0], [1.0, 2.0]]), 1, 1)
    with pytest.raises(AlgebraicLoopError):
        lft_lower(phi, StateSpace.static([[0.5]]))


def test_lft_dynamic_matches_frequency_formula(rng):
    A = random_stable(rng, 2)
    base = StateSpace(A, rng.standard_normal((2, 2)), rng.standard_normal((2, 2)), np.zeros((2, 2)))
    phi = PartitionedSystem(base, 1, 1)
    omega = first_order(3.0)
    closed = lft_lower(phi, omega)
    for s in (0.5j, 2.0j, 1.0 + 1.0j):
        G = base.evaluate(s)
        q = omega.evaluate(s)[0, 0]
        expected = G[0, 0] + G[0, 1] * q * G[1, 0] / (1.0 - G[1, 1] * q)
        assert closed.evaluate(s)[0, 0] == pytest.approx(expected, rel=1e-10)


def test_is_hurwitz():
    assert is_hurwitz(-np.eye(2))
    assert not is_hurwitz(np.diag([-1.0, 0.0]))
    assert is_hurwitz(np.zeros((0, 0)))


def test_h2_norm_first_order():
    assert h2_norm_lti(first_order()) == pytest.approx(math.sqrt(0.5))
    assert h2_norm_lti(StateSpace([[-1.0]], [[1.0]], [[0.0]], [[0.0]])) == 0.0
    with pytest.raises(InvalidInputError):
        h2_norm_lti(StateSpace([[-1.0]], [[1.0]], [[1.0]], [[1.0]]))
    with pytest.raises(NotHurwitzError):
        h2_norm_lti(first_order(-1.0))


def test_h2_norm_matches_impulse_energy(rng):
    A = random_stable(rng, 3)
    B = rng.standard_normal((3, 2))
    C = rng.standard_normal((2, 3))
    sys = StateSpace(A, B, C, np.zeros((2, 2)))
    # controllability Gramian route
    W_c = scipy.linalg.solve_continuous_lyapunov(A, -B @ B.T)
    assert h2_norm_lti(sys) == pytest.approx(math.sqrt(np.trace(C @ W_c @ C.T)), rel=1e-9)


def test_linf_gain_simple_cases():
    assert linf_gain(StateSpace.static([[3.0, 4.0]])) == pytest.approx(5.0)
    assert linf_gain(first_order()) == pytest.approx(1.0, rel=1e-5)
    # lightly damped resonance peaks near 1 / (2 zeta)
    resonant = tf_to_ss(TransferFunctionSiso([1.0], [1.0, 0.1, 1.0]))
    peak = max(np.abs(resonant.evaluate(1j * w)[0, 0]) for w in np.linspace(0.9, 1.1, 20001))
    assert linf_gain(resonant) == pytest.approx(peak, rel=1e-5)


def test_linf_gain_dominates_dense_sweep(rng):
    A = random_stable(rng, 4, margin=0.1)
    sys = StateSpace(A, rng.standard_normal((4, 2)), rng.standard_normal((2, 4)), np.zeros((2, 2)))
    omega = np.logspace(-3, 3, 4000)
    sweep = max(np.linalg.norm(G, 2) for G in freqresp(sys, omega))
    gain = linf_gain(sys)
    assert gain >= sweep * (1.0 - 1e-6)
    assert gain <= sweep * 1.05


def test_finite_horizon_gain_of_integrator():
    integrator = StateSpace([[0.0]], [[1.0]], [[1.0]], [[0.0]])
    for h in (0.1, 1.0, 3.0):
        assert finite_horizon_l2_gain(integrator, h) == pytest.approx(2.0 * h / math.pi, rel=1e-5)


def test_finite_horizon_gain_limits_and_monotonicity(rng):
    sys = StateSpace(rng.standard_normal((3, 3)), rng.standard_normal((3, 1)), rng.standard_normal((1, 3)), [[0.5]])
    assert finite_horizon_l2_gain(sys, 0.0) == pytest.approx(0.5)
    assert finite_horizon_l2_gain(sys, 1e-4) == pytest.approx(0.5, rel=1e-2)
    gains = [finite_horizon_l2_gain(sys, h) for h in (0.2, 0.5, 1.0)]
    assert gains[0] <= gains[1] <= gains[2]
    assert finite_horizon_l2_gain_less(sys, 0.5, 2.0 * gains[1])
    assert not finite_horizon_l2_gain_less(sys, 0.5, 0.9 * gains[1])
    assert not finite_horizon_l2_gain_less(sys, 0.5, 0.4)


def test_finite_horizon_gain_matches_discretized_operator(rng):
    A = rng.standard_normal((2, 2))
    B = rng.standard_normal((2, 1))
    C = rng.standard_normal((1, 2))
    h, steps, fine = 0.8, 200, 10
    dt = h / steps
    sub = dt / fine
    block = np.zeros((3, 3))
    block[:2, :2] = A
    block[:2, 2:] = B
    E = scipy.linalg.expm(block * dt)
    Phi, Gamma = E[:2, :2], E[:2, 2:]
    within = [C @ scipy.linalg.expm(A * (i + 0.5) * sub) for i in range(fine)]
    # response to a unit input on the first step, sampled at step midpoints
    column = np.zeros(steps * fine)
    x = Gamma
    for k in range(1, steps):
        for i in range(fine):
            column[k * fine + i] = (within[i] @ x)[0, 0]
        x = Phi @ x
    O = np.zeros((steps * fine, steps))
    for j in range(steps):
        O[j * fine :, j] = column[: (steps - j) * fine]
    estimate = np.linalg.norm(O, 2) * math.sqrt(sub / dt)
    exact = finite_horizon_l2_gain(StateSpace(A, B, C, [[0.0]]), h)
    assert estimate <= exact * (1.0 + 1e-3)
    assert estimate >= exact * 0.97


def test_minimal_realization_removes_hidden_modes():
    A = np.diag([-1.0, -2.0, -3.0])
    B = np.array([[1.0], [1.0], [0.0]])
    C = np.array([[1.0, 0.0, 1.0]])
    sys = StateSpace(A, B, C, [[0.0]])
    reduced = minimal_realization(sys)
    assert reduced.n == 1
    assert same_frequency_response(sys, reduced, rtol=1e-10)
    assert_allclose(poles(reduced), [-1.0])


def test_zeros_siso():
    sys = tf_to_ss(TransferFunctionSiso([1.0, 3.0], [1.0, 3.0, 2.0]))
    assert_allclose(zeros(sys), [-3.0], rtol=1e-9)
    with pytest.raises(DimensionError):
        zeros(StateSpace.static(np.ones((2, 1))))
