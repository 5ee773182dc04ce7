import numpy as np
import pytest

from curvewarn.road import curve_profile, straight_profile
from curvewarn.speed_profile import curvature_speed_limit, forward_backward


def test_curvature_speed_limit():
    caps = curvature_speed_limit([0.0, 0.02, -0.02, 0.1], 20.0, 7.0)
    assert caps[0] == 20.0
    assert caps[1] == pytest.approx(np.sqrt(350.0))
    assert caps[2] == caps[1]
    assert caps[3] == pytest.approx(np.sqrt(70.0))
    assert curvature_speed_limit([0.02], 15.0, 7.0)[0] == 15.0


def test_straight_road_accelerates_at_full_capacity(bike):
    road = straight_profile(300.0, u_limit=20.0)
    prof = forward_backward(road, 0.0, 200.0, 15.0, bike)
    assert prof.feasible
    assert prof.v[0] == 15.0
    assert np.all(np.diff(prof.v) >= 0.0)
    assert prof.v[-1] == pytest.approx(20.0)
    assert np.max(prof.a_long) <= bike.a_x_max + 1e-9
    # (20^2 - 15^2) / (2 * 4) metres to reach the limit
    reached = prof.s[np.argmax(prof.v >= 20.0 - 1e-9)]
    assert reached == pytest.approx(175.0 / 8.0, abs=1.0)


def test_curve_caps_the_speed(bike):
    road = curve_profile(50.0, 300.0, 80.0, 200.0, u_limit=30.0)
    prof = forward_backward(road, 0.0, 500.0, 30.0, bike)
    assert prof.feasible
    assert np.min(prof.v) == pytest.approx(np.sqrt(7.0 * 50.0), rel=1e-6)
    assert np.all(prof.v <= prof.v_cap + 1e-9)
    assert prof.min_accel >= -bike.a_x_max - 1e-9
    assert prof.min_accel < -1.0
    assert prof.time > 500.0 / 30.0


def test_unbrakeable_start_is_flagged(bike):
    road = curve_profile(50.0, 20.0, 80.0, 200.0, u_limit=30.0)
    prof = forward_backward(road, 0.0, 250.0, 30.0, bike)
    assert not prof.feasible


def test_end_speed_and_rows(bike):
    road = straight_profile(100.0)
    prof = forward_backward(road, 10.0, 50.0, 20.0, bike, d_s=2.0, v_end=10.0)
    assert prof.s[0] == 10.0
    assert prof.s[-1] == pytest.approx(60.0)
    assert prof.v[-1] == pytest.approx(10.0)
    rows = prof.to_rows()
    assert len(rows) == len(prof.s)
    assert np.isnan(rows[-1]["a_long"])
    with pytest.raises(ValueError):
        forward_backward(road, 0.0, 50.0, 0.0, bike)
