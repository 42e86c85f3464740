"""
Tests for the H2 cost of sampling and the H-infinity admissible interval
"""

import math

import numpy as np
import pytest
import scipy.linalg
from numpy.testing import assert_allclose

from app.core.errors import InfeasibleGammaError, InvalidInputError
from app.engine import perf
from app.engine.lti import finite_horizon_l2_gain, poles, zeros
from app.engine.redesign import SampledDataQ, attach_qsd
from app.engine.sim import h2_empirical, h2_empirical_q
from app.engine.specs import ExplicitPattern, PeriodicPattern, RandomPattern, UniformPattern
from app.engine.youla import q_stat
from app.presets import pendulum

from tests.systems import random_standard_plant, scalar_standard_plant


def simpson(f, a: float, b: float, panels: int = 2000) -> float:
    xs = np.linspace(a, b, 2 * panels + 1)
    weights = np.ones(xs.size)
    weights[1:-1:2] = 4.0
    weights[2:-1:2] = 2.0
    return float(sum(w * f(x) for w, x in zip(weights, xs)) * (b - a) / (6.0 * panels))


def integrating_q() -> SampledDataQ:
    return SampledDataQ(
        sampler_A=[[-1.0]],
        sampler_B=[[1.0]],
        sample_gain=[[0.0]],
        jump_M=[[1.0]],
        hold_A=[[-2.0]],
        hold_C=[[0.5]],
        feedthrough=[[0.0]],
    )


# Standard plant


def test_standard_plant_normalization():
    with pytest.raises(InvalidInputError):
        perf.StandardPlant(A=[[0.0]], Bw=[[1.0, 0.0]], Bu=[[1.0]], Cz=[[1.0], [0.0]], Dzu=[[0.0], [2.0]],
                           Cy=[[1.0]], Dyw=[[0.0, 1.0]])
    with pytest.raises(InvalidInputError):
        perf.StandardPlant(A=[[0.0]], Bw=[[1.0, 0.0]], Bu=[[1.0]], Cz=[[1.0], [0.0]], Dzu=[[0.0], [1.0]],
                           Cy=[[1.0]], Dyw=[[0.5, 0.5]])


def test_standard_plant_stabilizability():
    with pytest.raises(InvalidInputError):
        perf.StandardPlant(A=[[1.0]], Bw=[[1.0, 0.0]], Bu=[[0.0]], Cz=[[1.0], [0.0]], Dzu=[[0.0], [1.0]],
                           Cy=[[1.0]], Dyw=[[0.0, 1.0]])
    with pytest.raises(InvalidInputError):
        perf.StandardPlant(A=[[1.0]], Bw=[[1.0, 0.0]], Bu=[[1.0]], Cz=[[1.0], [0.0]], Dzu=[[0.0], [1.0]],
                           Cy=[[0.0]], Dyw=[[0.0, 1.0]])


# H2


def test_h2_solutions_scalar():
    sol = perf.h2_solutions(scalar_standard_plant())
    assert sol.X[0, 0] == pytest.approx(1.0)
    assert sol.Y[0, 0] == pytest.approx(1.0)
    assert_allclose(sol.F, [[-1.0]])
    assert_allclose(sol.L, [[-1.0]])
    assert all(r < 1e-10 for r in sol.residuals.values())


def test_h2_analog_optimum_scalar():
    # tr(Bw'X Bw) + tr(F Y F') = 1 + 1
    assert perf.h2_analog_optimum(scalar_standard_plant()) == pytest.approx(math.sqrt(2.0), rel=1e-9)


def test_h2_residuals_random(standard_plant):
    sol = perf.h2_solutions(standard_plant)
    assert sol.residuals["X"] < 1e-8
    assert sol.residuals["Y"] < 1e-8


def test_gamma1_scalar():
    # |F e^{At} L| = 1 when A = 0, F = L = -1
    for h in (0.1, 0.5, 2.0):
        assert perf.gamma1([[-1.0]], [[-1.0]], [[0.0]], h) == pytest.approx(h * h / 2.0, rel=1e-10)
        assert perf.gamma1_rate([[-1.0]], [[-1.0]], [[0.0]], h) == pytest.approx(h, rel=1e-10)
    assert perf.gamma1([[-1.0]], [[-1.0]], [[0.0]], 0.0) == 0.0
    with pytest.raises(InvalidInputError):
        perf.gamma1([[-1.0]], [[-1.0]], [[0.0]], -0.1)


def test_gamma1_matches_quadrature(rng):
    A = rng.standard_normal((3, 3))
    F = rng.standard_normal((1, 3))
    L = rng.standard_normal((3, 2))
    h = 0.7

    def integrand(t):
        G = F @ scipy.linalg.expm(A * t) @ L
        return (h - t) * float(np.sum(G * G))

    assert perf.gamma1(F, L, A, h) == pytest.approx(simpson(integrand, 0.0, h), rel=1e-8)


def test_gamma1_rate_is_derivative(rng):
    A = rng.standard_normal((2, 2))
    F = rng.standard_normal((1, 2))
    L = rng.standard_normal((2, 1))
    h, step = 0.6, 1e-5
    diff = (perf.gamma1(F, L, A, h + step) - perf.gamma1(F, L, A, h - step)) / (2.0 * step)
    assert perf.gamma1_rate(F, L, A, h) == pytest.approx(diff, rel=1e-6)


def test_h2_performance_scalar_uniform():
    report = perf.h2_sd_performance([[-1.0]], [[-1.0]], [[0.0]], UniformPattern(h=0.5), gamma0=math.sqrt(2.0))
    assert report.gamma_pattern**2 == pytest.approx(2.25)
    assert report.per_interval == [(0.5, pytest.approx(0.125))]


def test_h2_performance_without_feedback_is_analog():
    report = perf.h2_sd_performance(np.zeros((1, 2)), np.ones((2, 1)), -np.eye(2), UniformPattern(h=0.4), 1.3)
    assert report.gamma_pattern == pytest.approx(1.3)


def test_h2_performance_periodic_average():
    F, L, A = [[-1.0]], [[-1.0]], [[0.0]]
    report = perf.h2_sd_performance(F, L, A, PeriodicPattern(intervals=[0.2, 0.6]))
    assert report.gamma_pattern**2 == pytest.approx((0.02 + 0.18) / 0.8)


def test_h2_rejects_aperiodic_patterns():
    F, L, A = [[-1.0]], [[-1.0]], [[0.0]]
    with pytest.raises(InvalidInputError):
        perf.h2_sd_performance(F, L, A, ExplicitPattern(instants=[0.0, 0.3, 1.0]))
    with pytest.raises(InvalidInputError):
        perf.h2_sd_performance(F, L, A, RandomPattern(h_min=0.1, h_max=0.2))


def test_h2_sd_controller(standard_plant):
    ctrl, report = perf.h2_sd_controller(standard_plant, UniformPattern(h=0.3))
    assert ctrl.sensor.n == standard_plant.n
    assert report.gamma0 == pytest.approx(perf.h2_analog_optimum(standard_plant))
    assert report.gamma_pattern >= report.gamma0


def test_h2_formula_matches_impulse_responses():
    plant = scalar_standard_plant()
    spec = UniformPattern(h=0.5)
    ctrl, report = perf.h2_sd_controller(plant, spec)
    assert h2_empirical(plant, ctrl, spec) == pytest.approx(report.gamma_pattern, rel=5e-3)


@pytest.mark.slow
@pytest.mark.parametrize("h", [0.1, 0.5])
def test_h2_formula_random_plants(h):
    rng = np.random.default_rng(7)
    spec = UniformPattern(h=h)
    for _ in range(10):
        plant = random_standard_plant(rng)
        ctrl, report = perf.h2_sd_controller(plant, spec)
        assert h2_empirical(plant, ctrl, spec) == pytest.approx(report.gamma_pattern, rel=5e-3)


def test_h2_parameter_adds_its_own_norm():
    plant = scalar_standard_plant()
    spec = UniformPattern(h=0.5)
    ctrl, report = perf.h2_sd_controller(plant, spec)
    q = integrating_q()
    with_q = attach_qsd(ctrl, q, spec)
    expected = report.gamma_pattern**2 + h2_empirical_q(q, spec) ** 2
    assert h2_empirical(plant, with_q, spec) ** 2 == pytest.approx(expected, rel=1e-2)


def test_uniform_pattern_is_optimal(standard_plant):
    F, L = perf.h2_gains(standard_plant)
    deltas = [-0.2, -0.1, 0.0, 0.1, 0.2]
    scan = perf.uniform_optimality_scan(F, L, standard_plant.A, 0.3, 4, deltas)
    assert scan.argmin == 0.0
    assert scan.slope_signs_match(tol=1e-12)
    with pytest.raises(InvalidInputError):
        perf.uniform_optimality_scan(F, L, standard_plant.A, 0.3, 1, deltas)
    with pytest.raises(InvalidInputError):
        perf.uniform_optimality_scan(F, L, standard_plant.A, 0.3, 4, [0.3])


def test_midpoint_move_does_not_increase_cost(standard_plant):
    F, L = perf.h2_gains(standard_plant)
    before, after = perf.midpoint_improvement(F, L, standard_plant.A, [0.1, 0.5, 0.3], 1)
    assert after <= before + 1e-12


# H-infinity


def test_hinf_gamma_opt_scalar():
    assert perf.hinf_gamma_opt(scalar_standard_plant()) == pytest.approx(math.sqrt(2.0), rel=1e-5)


def test_hinf_h_sup_scalar():
    # P' = 1 + P^2/4 from 2/sqrt(3) reaches 2 sqrt(3) at pi/3
    design = perf.hinf_design(scalar_standard_plant(), 2.0)
    assert design.X[0, 0] == pytest.approx(2.0 / math.sqrt(3.0))
    assert design.h_sup == pytest.approx(math.pi / 3.0, abs=1e-6)
    assert design.admissible(1.0)
    assert not design.admissible(1.1)


def test_hinf_infeasible_certificate():
    with pytest.raises(InfeasibleGammaError) as info:
        perf.hinf_design(scalar_standard_plant(), 1.2)
    certificate = info.value.certificate
    assert certificate["gamma"] == 1.2
    assert certificate["failed"] in ("X", "Y", "coupling")
    assert certificate["gamma_opt"] == pytest.approx(math.sqrt(2.0), rel=1e-5)
    with pytest.raises(InvalidInputError):
        perf.hinf_design(scalar_standard_plant(), -1.0)


def test_hinf_large_gamma_recovers_h2(standard_plant):
    design = perf.hinf_design(standard_plant, 1e4)
    sol = perf.h2_solutions(standard_plant)
    assert_allclose(design.F, sol.F, rtol=1e-4, atol=1e-6)
    assert_allclose(design.L, sol.L, rtol=1e-4, atol=1e-6)


def test_dre_starts_at_coupling():
    design = perf.hinf_design(scalar_standard_plant(), 2.0)
    trajectory = design.dre_trajectory([0.0, 0.5])
    assert trajectory.rho_px[0] == pytest.approx(design.rho_yx)
    assert trajectory.rho_px[1] > trajectory.rho_px[0]


def test_static_parameter_gain_agrees_with_dre():
    design = perf.hinf_design(scalar_standard_plant(), 2.0)
    assert perf.q_stat_norm_check(design, 0.5)
    assert not perf.q_stat_norm_check(design, 1.5)
    assert perf.q_stat_flip_point(design) == pytest.approx(design.h_sup, abs=1e-4)
    assert finite_horizon_l2_gain(q_stat(design.generator).sys, 0.5) < design.gamma


def test_static_parameter_gain_random(standard_plant):
    gamma = 1.5 * perf.hinf_gamma_opt(standard_plant)
    design = perf.hinf_design(standard_plant, gamma)
    if math.isfinite(design.h_sup):
        assert perf.q_stat_flip_point(design) == pytest.approx(design.h_sup, rel=1e-3)
    for h in (0.01, 0.1, 0.3):
        perf.q_stat_norm_check(design, h)


def test_dre_crossing_matches_static_parameter_gain(pendulum_design):
    for design in (perf.hinf_design(scalar_standard_plant(), 2.0), pendulum_design):
        assert perf.q_stat_flip_point(design) == pytest.approx(design.h_sup, abs=1e-4)


def test_loopshape_static_parameter_level(pendulum_design):
    assert perf.q_stat_norm_check(pendulum_design, 0.5)
    assert not perf.q_stat_norm_check(pendulum_design, 0.7)
    static = q_stat(pendulum_design.generator).sys
    level = math.sqrt(pendulum_design.gamma**2 - 1.0)
    assert finite_horizon_l2_gain(static, 0.6) < level < finite_horizon_l2_gain(static, 0.67)
    assert perf.q_stat_flip_point(pendulum_design) == pytest.approx(pendulum.H_SUP, abs=5e-3)


def test_loopshape_infeasible(shaped_pendulum):
    with pytest.raises(InfeasibleGammaError) as info:
        perf.loopshape_design(shaped_pendulum, 1.5)
    assert info.value.certificate["gamma_opt"] == pytest.approx(pendulum.GAMMA_OPT, abs=1e-3)


# Pendulum example


def test_pendulum_gamma_opt(shaped_pendulum):
    assert perf.loopshape_gamma_opt(shaped_pendulum) == pytest.approx(pendulum.GAMMA_OPT, abs=1e-3)


def test_pendulum_h_sup(pendulum_design):
    assert pendulum_design.h_sup == pytest.approx(pendulum.H_SUP, abs=5e-3)
    assert pendulum_design.rho_yx == pytest.approx(pendulum_design.gamma_opt**2 - 1.0)


def _nearest_relative(found, expected) -> float:
    return max(min(abs(f - ref) for f in found) / abs(ref) for ref in expected)


def test_pendulum_analog_controller(pendulum_design):
    k_inf = pendulum_design.generator.nominal_controller()
    assert _nearest_relative(poles(k_inf), pendulum.reference_poles()) <= 1e-2
    assert _nearest_relative(zeros(k_inf), pendulum.reference_zeros()) <= 1e-2


def test_pendulum_periodic_admissibility(pendulum_design):
    assert perf.periodic_admissibility(pendulum_design, PeriodicPattern(intervals=[0.2, 0.6]))
    assert not perf.periodic_admissibility(pendulum_design, PeriodicPattern(intervals=[0.2, 0.7]))
    assert perf.periodic_admissibility(pendulum_design, UniformPattern(h=0.3))


@pytest.mark.slow
def test_pendulum_curve_is_monotone(shaped_pendulum):
    gammas = [2.0, 2.5, 3.0, pendulum.GAMMA, 5.0, 6.0]
    points = perf.gamma_h_curve(shaped_pendulum, gammas, workers=2)
    assert [p.gamma for p in points] == gammas
    assert all(p.h_sup is not None for p in points)
    assert perf.curve_is_monotone(points)


def test_curve_records_failures(shaped_pendulum):
    points = perf.gamma_h_curve(shaped_pendulum, [1.0, pendulum.GAMMA])
    assert points[0].h_sup is None
    assert points[0].error
    assert points[1].h_sup == pytest.approx(pendulum.H_SUP, abs=5e-3)
