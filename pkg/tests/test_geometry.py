import math
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uavlora.geometry import (
    KinematicLimits,
    MotionCommand,
    check_safety,
    collision_flags,
    pairwise_distance,
    reference_angle,
    step_position,
)

CS = (900.0, 900.0, 150.0)


@pytest.mark.parametrize(
    "uav, cs, theta, expected",
    [
        ((0, 0), (100, 100), 0.0, math.pi / 4),
        ((0, 0), (100, 0), math.pi / 6, -math.pi / 6),
        ((900, 100), (900, 900), 0.0, math.pi / 2),
    ],
)
def test_reference_angle(uav, cs, theta, expected):
    assert reference_angle(uav, cs, theta) == pytest.approx(expected, abs=1e-15)


def test_reference_angle_all_quadrants():
    # the CS behind and below the UAV must still give the true bearing
    assert reference_angle((100, 100), (0, 0), 0.0) == pytest.approx(-3 * math.pi / 4)
    assert reference_angle((100, 0), (0, 0), 0.0) == pytest.approx(math.pi)


def test_reference_angle_on_top_of_cs():
    assert reference_angle((5, 5), (5, 5), 0.3) == pytest.approx(-0.3)


def test_step_zero_speed_is_identity():
    out = step_position(np.array([0.0, 0.0, 150.0]), MotionCommand(0.0, 0.0), CS, KinematicLimits())
    assert out.tolist() == [0.0, 0.0, 150.0]


def test_step_straight_along_x():
    # CS due east, no offset: heading 0
    out = step_position([0.0, 0.0, 150.0], MotionCommand(0.0, 30.0), (900.0, 0.0, 150.0), KinematicLimits())
    np.testing.assert_allclose(out, [60.0, 0.0, 150.0], atol=1e-12)


def test_step_clamps_at_boundary():
    out = step_position([999.0, 500.0, 150.0], MotionCommand(0.0, 30.0), (2000.0, 500.0, 150.0), KinematicLimits())
    np.testing.assert_allclose(out, [1000.0, 500.0, 150.0], atol=1e-12)


def test_step_moves_in_both_axes():
    out = step_position([0.0, 0.0, 150.0], MotionCommand(0.0, 10.0), (100.0, 100.0, 150.0), KinematicLimits())
    assert out[0] == pytest.approx(out[1]) and out[0] > 0


@settings(max_examples=200, deadline=None)
@given(
    x=st.floats(0, 1000), y=st.floats(0, 1000),
    theta=st.floats(-math.pi / 3, math.pi / 3), speed=st.floats(0, 30),
)
def test_step_respects_bounds_and_speed(x, y, theta, speed):
    lim = KinematicLimits()
    pos = np.array([x, y, 150.0])
    out = step_position(pos, MotionCommand(theta, speed), CS, lim)
    assert 0 <= out[0] <= lim.x_max and 0 <= out[1] <= lim.y_max and out[2] == 150.0
    assert np.linalg.norm(out - pos) <= lim.s_max * lim.dt + 1e-9
    assert np.array_equal(out, step_position(pos, MotionCommand(theta, speed), CS, lim))


def test_motion_command_validation():
    MotionCommand(math.pi / 3, 30.0).validate(math.radians(120), 30.0)
    with pytest.raises(ValueError):
        MotionCommand(1.2, 10.0).validate(math.radians(120), 30.0)
    with pytest.raises(ValueError):
        MotionCommand(0.0, 31.0).validate(math.radians(120), 30.0)


def test_limits_must_be_positive():
    with pytest.raises(ValueError):
        KinematicLimits(dt=0.0)


def test_pairwise_distance_examples():
    assert pairwise_distance((0, 0, 150), (0, 0, 150)) == 0.0
    assert pairwise_distance((0, 0, 150), (0, 0, 0)) == 150.0
    assert pairwise_distance((3, 4, 150), (0, 0, 150), horizontal=True) == 5.0


def test_check_safety_examples():
    assert check_safety([(0, 0, 150), (100, 0, 150)], 3.0) == set()
    assert check_safety([(0, 0, 150), (2, 0, 150)], 3.0) == {(0, 1)}
    assert check_safety([(0, 0, 150), (1, 0, 150), (10, 0, 150)], 3.0) == {(0, 1)}


def _brute_safety(pos, d_safe):
    out = set()
    for i in range(len(pos)):
        for j in range(len(pos)):
            if i < j and math.dist(pos[i][:2], pos[j][:2]) < d_safe:
                out.add((i, j))
    return out


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 20), st.floats(0, 20)), min_size=0, max_size=8))
def test_check_safety_matches_brute_force(xy):
    pos = [(x, y, 150.0) for x, y in xy]
    got = check_safety(pos, 3.0)
    assert got == _brute_safety(pos, 3.0)
    rev = pos[::-1]
    n = len(pos)
    assert {tuple(sorted((n - 1 - i, n - 1 - j))) for i, j in check_safety(rev, 3.0)} == got


def test_collision_flags():
    flags = collision_flags(np.array([[0, 0, 150], [1, 0, 150], [50, 0, 150]], dtype=float), 3.0)
    assert flags.tolist() == [1.0, 1.0, 0.0]
    assert set(combinations(range(3), 2)) >= check_safety([(0, 0, 0)] * 3, 3.0)
