import math

import numpy as np
import pytest

from rio.errors import ConfigurationError
from rio.trajectory import (
    TrajectoryKind,
    TrajectoryParams,
    generate_trajectory,
    path_length,
    trajectory_arrays,
    trajectory_velocities,
)


def test_line_kinematics():
    traj = generate_trajectory("line", TrajectoryParams(length=1.0, speed=0.5, rate=20.0))
    assert traj[0].t == 0.0
    assert traj[-1].t == pytest.approx(2.0)
    np.testing.assert_allclose(traj[-1].value.position, [1.0, 0.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(np.diff([s.t for s in traj]), 0.05)


def test_infinity_loop_closes():
    traj = generate_trajectory(TrajectoryKind.INFINITY_LOOP, TrajectoryParams(rate=100.0))
    first, last = traj[0].value.position, traj[-1].value.position
    assert np.linalg.norm(first - last) < 0.01


def test_mixed_preset_length():
    traj = generate_trajectory("mixed", TrajectoryParams(rate=100.0))
    assert path_length(traj) == pytest.approx(10.23, rel=0.01)


def test_mixed_speed_stays_in_bounds():
    params = TrajectoryParams(rate=100.0)
    speeds = np.linalg.norm(trajectory_velocities(generate_trajectory("mixed", params)), axis=1)
    assert speeds[1:-1].min() >= params.speed_min - 1e-3
    assert speeds[1:-1].max() <= params.speed_max + 1e-3


def test_arc_heading_follows_curvature():
    params = TrajectoryParams(radius=2.0, arc_angle=math.pi / 2, rate=50.0)
    traj = generate_trajectory("arc", params)
    np.testing.assert_allclose(traj[-1].value.position[:2], [2.0, 2.0], atol=1e-9)
    assert traj[-1].value.orientation.yaw() == pytest.approx(math.pi / 2)


def test_sharp_turns_respect_turn_rate():
    params = TrajectoryParams(rate=100.0)
    traj = generate_trajectory("sharp_turns", params)
    _, _, quat = trajectory_arrays(traj)
    yaw = np.unwrap(2.0 * np.arctan2(quat[:, 3], quat[:, 0]))
    rate = np.abs(np.diff(yaw)) * params.rate
    # turns are sized for the top speed, so the nominal speed turns slower
    assert rate.max() == pytest.approx(params.speed * params.turn_rate / params.speed_max, rel=0.02)
    assert path_length(traj) == pytest.approx(params.length, rel=0.01)


def test_sharp_turns_too_short():
    with pytest.raises(ConfigurationError):
        generate_trajectory("sharp_turns", TrajectoryParams(length=2.0))


@pytest.mark.parametrize("field", ["length", "speed", "rate"])
def test_invalid_params(field):
    with pytest.raises(ValueError):
        TrajectoryParams(**{field: 0.0})


def test_unknown_kind():
    with pytest.raises(ConfigurationError):
        generate_trajectory("spiral")


def test_planar_poses_are_unit():
    for kind in TrajectoryKind:
        for sample in generate_trajectory(kind):
            assert sample.value.orientation.is_unit(1e-12)
            assert sample.value.position[2] == 0.0
