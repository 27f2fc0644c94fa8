import numpy as np
import pytest

from trackopt import (
    AblationMask,
    CameraModel,
    NoiseConfig,
    Pose,
    Trajectory,
    make_scenario,
)


@pytest.fixture
def identity_camera():
    """Camera at the world origin looking down +z, principal point at center."""
    return CameraModel(
        pose=Pose(position=np.zeros(3), orientation=np.zeros(3)),
        fx=1100.0,
        fy=1100.0,
        cx=960.0,
        cy=540.0,
        width=1920.0,
        height=1080.0,
    )


@pytest.fixture
def simple_noise():
    return NoiseConfig.defaults(o_star=np.array([0.0, 0.0, 1.0]))


@pytest.fixture
def full_mask():
    return AblationMask.full()


@pytest.fixture
def simple_scenario(identity_camera):
    """Small deterministic scenario: straight-in-front start and goal."""
    start = Pose(position=np.array([0.03, 0.02, 0.30]), orientation=np.array([0.0, 0.0, 0.9]))
    goal = Pose(position=np.array([-0.04, -0.02, 0.25]), orientation=np.array([0.3, 0.1, 0.6]))
    return make_scenario(start=start, goal=goal, cameras=identity_camera, horizon=8, seed=11)


def straight_trajectory(z0=0.3, z1=0.3, horizon=6):
    """Straight-line trajectory along x at constant depth, identity orientations."""
    waypoints = []
    for i in range(horizon + 1):
        s = i / horizon
        waypoints.append(
            Pose(
                position=np.array([-0.05 + 0.1 * s, 0.0, z0 + (z1 - z0) * s]),
                orientation=np.array([0.0, 0.0, 0.5]),
            )
        )
    return Trajectory(waypoints=tuple(waypoints))
