import math

import numpy as np
import pytest

from curvewarn.common import ControlInput, StateSpace, StateTime
from curvewarn.err import SingularGeometry, SingularProgress
from curvewarn.model import (
    BikeParams,
    euler_step,
    jacobians,
    progress_rate,
    space_dynamics,
    space_jacobians,
    space_rhs,
    steady_state_roll,
    time_dynamics,
    time_rhs,
)
from curvewarn.road import RoadSample

FLAT = RoadSample(0.0, 0.0, 3.5, 30.0)


def _random_states(rng, count):
    x = np.column_stack(
        [
            rng.uniform(0.0, 3.5, count),
            rng.uniform(-0.3, 0.3, count),
            rng.uniform(-0.8, 0.8, count),
            rng.uniform(5.0, 30.0, count),
            rng.uniform(-0.5, 0.5, count),
            rng.uniform(-1.0, 1.0, count),
            rng.uniform(-3.0, 3.0, count),
            rng.uniform(-2.0, 2.0, count),
        ]
    )
    u = np.column_stack([rng.uniform(-5, 5, count), rng.uniform(-5, 5, count)])
    kappa = rng.uniform(-0.02, 0.02, count)
    sigma = rng.uniform(-0.1, 0.1, count)
    return x, u, kappa, sigma


def test_bike_params_validation():
    with pytest.raises(ValueError):
        BikeParams(h=0.0)
    with pytest.raises(ValueError):
        BikeParams(a_x_max=8.0, a_y_max=7.0)
    with pytest.raises(TypeError):
        BikeParams(m="heavy")
    assert BikeParams().to_dict()["a_y_max"] == 7.0


def test_state_rejects_backward_motion():
    with pytest.raises(ValueError, match="positive"):
        StateSpace(1.0, 0.0, 0.0, 0.0)
    with pytest.raises(ValueError, match="finite"):
        StateSpace(float("inf"), 0.0, 0.0, 10.0)


def test_upright_straight_line_is_equilibrium(rng, bike):
    for speed in rng.uniform(1.0, 40.0, 100):
        x = StateTime(0.0, 1.75, 0.0, 0.0, float(speed))
        rates = time_dynamics(x, ControlInput(), FLAT, bike)
        assert rates[0] == pytest.approx(speed)
        assert np.all(np.abs(rates[1:]) < 1e-12)


def test_slope_accelerates_descending_road(bike):
    x = StateSpace(1.75, 0.0, 0.0, 20.0)
    rates = time_dynamics(x, ControlInput(), RoadSample(0.0, 0.1, 3.5, 30.0), bike)
    assert rates[4] == pytest.approx(0.981)


def test_capsize_term(bike):
    phi = 0.1
    x = np.array([1.75, 0.0, phi, 0.0, 0.0, 0.0, 0.0, 0.0])
    _, F = time_rhs(x, np.zeros(2), 0.0, 0.0, bike)
    expected = bike.h * bike.g * math.sin(phi) / (
        bike.rho_x**2 + bike.h**2 + bike.r * bike.h * math.cos(phi)
    )
    assert F[5] == pytest.approx(expected, rel=1e-12)
    assert F[5] > 0


def test_space_dynamics_examples(bike):
    x = StateSpace(1.75, 0.0, 0.0, 10.0, a_x=2.0)
    d = space_dynamics(x, ControlInput(), FLAT, bike)
    assert d[0] == 0.0
    assert d[3] == pytest.approx(0.2)

    w_psi = 0.3
    x = StateSpace(1.0, 0.0, 0.0, 10.0, w_psi=w_psi)
    road = RoadSample(0.02, 0.0, 3.5, 30.0)
    assert progress_rate(x, road.kappa) == pytest.approx(10.0 / 0.98)
    d = space_dynamics(x, ControlInput(), road, bike)
    assert d[1] == pytest.approx(w_psi * 0.098 - 0.02)


def test_euler_step(bike):
    x = StateSpace(1.75, 0.0, 0.0, 10.0, a_x=2.0)
    assert euler_step(x, ControlInput(), 0.0, FLAT, bike) == x
    coast = StateSpace(1.75, 0.0, 0.0, 20.0)
    assert euler_step(coast, ControlInput(), 1.0, FLAT, bike) == coast
    assert euler_step(x, ControlInput(), 1.0, FLAT, bike).u_x == pytest.approx(10.2)
    with pytest.raises(ValueError):
        euler_step(x, ControlInput(), -1.0, FLAT, bike)


def test_singularities(bike):
    road = RoadSample(0.25, 0.0, 3.5, 30.0)
    with pytest.raises(SingularGeometry):
        space_dynamics(StateSpace(4.0, 0.0, 0.0, 10.0), ControlInput(), road, bike)
    with pytest.raises(SingularProgress):
        space_dynamics(StateSpace(1.0, 0.0, 0.0, 0.05), ControlInput(), FLAT, bike)
    with pytest.raises(SingularProgress):
        jacobians(StateSpace(1.0, 1.5707, 0.0, 10.0), ControlInput(), FLAT, bike)


def test_input_jacobian_structure(bike):
    x = StateSpace(1.2, 0.05, 0.2, 15.0, w_psi=0.1)
    road = RoadSample(0.01, 0.03, 3.5, 30.0)
    _, B = jacobians(x, ControlInput(0.5, -0.2), road, bike)
    s_dot = progress_rate(x, road.kappa)
    assert B[6, 0] == pytest.approx(1.0 / s_dot, rel=1e-14)
    assert B[7, 1] == pytest.approx(1.0 / s_dot, rel=1e-14)
    mask = np.ones_like(B, dtype=bool)
    mask[6, 0] = mask[7, 1] = False
    assert np.all(B[mask] == 0.0)


def test_jacobians_match_central_differences(rng, bike):
    x, u, kappa, sigma = _random_states(rng, 1000)
    A, B = space_jacobians(x, u, kappa, sigma, bike)
    h = 1e-6
    A_fd = np.empty_like(A)
    for j in range(8):
        step = np.zeros(8)
        step[j] = h
        hi = space_rhs(x + step, u, kappa, sigma, bike)
        lo = space_rhs(x - step, u, kappa, sigma, bike)
        A_fd[:, :, j] = (hi - lo) / (2 * h)
    B_fd = np.empty_like(B)
    for j in range(2):
        step = np.zeros(2)
        step[j] = h
        hi = space_rhs(x, u + step, kappa, sigma, bike)
        lo = space_rhs(x, u - step, kappa, sigma, bike)
        B_fd[:, :, j] = (hi - lo) / (2 * h)
    scale = np.maximum(1.0, np.abs(A_fd))
    assert np.max(np.abs(A - A_fd) / scale) < 1e-5
    assert np.max(np.abs(B - B_fd) / np.maximum(1.0, np.abs(B_fd))) < 1e-5


def test_steady_state_roll():
    assert steady_state_roll(15.0, 0.02) == pytest.approx(math.atan(15.0**2 * 0.02 / 9.81))
    assert steady_state_roll(15.0, 0.02) == pytest.approx(0.43, abs=5e-3)
    assert steady_state_roll(15.0, -0.02) < 0
