"""Pose, rotation, and pinhole-camera primitives.

Orientations are axis-angle 3-vectors (axis direction times angle in
radians).  Conversions to and from rotation matrices use the Rodrigues
formula with series expansions below 1e-7 rad so that behaviour is smooth
through the identity rotation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NonPositiveDepth

# Below this rotation angle the sin(t)/t style coefficients switch to
# their Taylor expansions.
_SMALL_ANGLE = 1e-7


def _as_vector(value, size: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.shape != (size,):
        raise ValueError(f"{name} must be a length-{size} vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite, got {arr}")
    return arr


def skew(v: np.ndarray) -> np.ndarray:
    """Skew-symmetric cross-product matrix of a 3-vector."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def canonicalize_axis_angle(o) -> np.ndarray:
    """Wrap an axis-angle vector so its magnitude lies in [0, pi].

    A rotation of magnitude t > pi about an axis equals the rotation of
    magnitude 2*pi - t about the negated axis.  Vectors already in range
    are returned unchanged (same values, fresh array).
    """
    o = _as_vector(o, 3, "axis-angle")
    angle = float(np.linalg.norm(o))
    if angle <= math.pi:
        return o.copy()
    axis = o / angle
    angle = math.fmod(angle, 2.0 * math.pi)
    if angle > math.pi:
        angle = 2.0 * math.pi - angle
        axis = -axis
    return axis * angle


def axis_angle_to_matrix(o) -> np.ndarray:
    """Rotation matrix of an axis-angle vector (Rodrigues formula)."""
    o = np.asarray(o, dtype=np.float64)
    theta2 = float(o @ o)
    theta = math.sqrt(theta2)
    K = skew(o)
    if theta < _SMALL_ANGLE:
        a = 1.0 - theta2 / 6.0
        b = 0.5 - theta2 / 24.0
    else:
        a = math.sin(theta) / theta
        b = (1.0 - math.cos(theta)) / theta2
    return np.eye(3) + a * K + b * (K @ K)


def matrix_to_axis_angle(R: np.ndarray) -> np.ndarray:
    """Axis-angle vector of a rotation matrix, magnitude in [0, pi].

    The angle comes from atan2 of the antisymmetric-part norm against the
    trace, which stays well conditioned near the identity where the pure
    arccos form loses half the available precision.
    """
    cos_angle = 0.5 * (float(np.trace(R)) - 1.0)
    v = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    sin_angle = float(np.linalg.norm(v))
    angle = math.atan2(sin_angle, cos_angle)
    if angle < _SMALL_ANGLE:
        # log(R) ~ (R - R^T)/2 to first order
        return v
    if math.pi - angle < 1e-6:
        # Near a half turn the antisymmetric part vanishes; recover the
        # axis from the dominant diagonal of R + I.
        B = 0.5 * (R + np.eye(3))
        k = int(np.argmax(np.diag(B)))
        axis = B[:, k] / math.sqrt(max(B[k, k], 1e-300))
        axis = axis / np.linalg.norm(axis)
        # Fix the sign so the antisymmetric residual agrees.
        if v @ axis < 0.0:
            axis = -axis
        return axis * angle
    return v * (angle / sin_angle)


def right_jacobian(o) -> np.ndarray:
    """Right Jacobian of the axis-angle exponential map.

    Maps a perturbation of the axis-angle coordinates to the body-frame
    rotation increment: Exp(o + d) ~ Exp(o) Exp(J_r(o) d).
    """
    o = np.asarray(o, dtype=np.float64)
    theta2 = float(o @ o)
    theta = math.sqrt(theta2)
    K = skew(o)
    if theta < _SMALL_ANGLE:
        c1 = 0.5 - theta2 / 24.0
        c2 = 1.0 / 6.0 - theta2 / 120.0
    else:
        c1 = (1.0 - math.cos(theta)) / theta2
        c2 = (theta - math.sin(theta)) / (theta2 * theta)
    return np.eye(3) - c1 * K + c2 * (K @ K)


def relative_axis_angle(a, b) -> np.ndarray:
    """Axis-angle of the rotation taking orientation ``a`` to ``b``."""
    Ra = axis_angle_to_matrix(a)
    Rb = axis_angle_to_matrix(b)
    return matrix_to_axis_angle(Ra.T @ Rb)


def angle_between(a, b) -> float:
    """Geodesic rotation distance between two axis-angle orientations.

    Returns the angle in [0, pi] of the relative rotation, evaluated in
    the atan2 form (equivalent to the clamped arccos of the trace but
    accurate near zero).
    """
    Ra = axis_angle_to_matrix(_as_vector(a, 3, "a"))
    Rb = axis_angle_to_matrix(_as_vector(b, 3, "b"))
    R = Ra.T @ Rb
    cos_angle = 0.5 * (float(np.trace(R)) - 1.0)
    sin_angle = 0.5 * math.sqrt(
        (R[2, 1] - R[1, 2]) ** 2 + (R[0, 2] - R[2, 0]) ** 2 + (R[1, 0] - R[0, 1]) ** 2
    )
    return math.atan2(sin_angle, cos_angle)


def interpolate_orientation(a, b, s: float) -> np.ndarray:
    """Geodesic interpolation between two axis-angle orientations.

    Composes ``a`` with the fraction ``s`` of the relative rotation from
    ``a`` to ``b``.  The endpoints are returned exactly.
    """
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"interpolation fraction must be in [0, 1], got {s}")
    a = _as_vector(a, 3, "a")
    b = _as_vector(b, 3, "b")
    if s == 0.0 or np.array_equal(a, b):
        return a.copy()
    if s == 1.0:
        return b.copy()
    rel = relative_axis_angle(a, b)
    R = axis_angle_to_matrix(a) @ axis_angle_to_matrix(s * rel)
    return matrix_to_axis_angle(R)


def _frozen_array(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=np.float64)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Pose:
    """Position (meters) and axis-angle orientation (radians) of a tracked tool.

    Orientations are canonicalized to magnitude <= pi on construction;
    vectors already in range are stored bit-for-bit as given.
    """

    position: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        p = _as_vector(self.position, 3, "position")
        o = _as_vector(self.orientation, 3, "orientation")
        if np.linalg.norm(o) > math.pi:
            o = canonicalize_axis_angle(o)
        object.__setattr__(self, "position", _frozen_array(p))
        object.__setattr__(self, "orientation", _frozen_array(o))

    @classmethod
    def from_vector(cls, v) -> "Pose":
        v = _as_vector(v, 6, "pose vector")
        return cls(position=v[:3], orientation=v[3:])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.position, self.orientation])

    def rotation_matrix(self) -> np.ndarray:
        return axis_angle_to_matrix(self.orientation)


@dataclass(frozen=True)
class CameraModel:
    """Ideal pinhole camera with a pose in the world frame.

    ``pose`` maps camera coordinates to world coordinates; the optical
    axis is camera +z.  Focal lengths and the principal point are in
    pixels.
    """

    pose: Pose
    fx: float
    fy: float
    cx: float
    cy: float
    width: float = 1920.0
    height: float = 1080.0

    def __post_init__(self):
        if not (self.fx > 0.0 and self.fy > 0.0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0.0 <= self.cx <= self.width and 0.0 <= self.cy <= self.height):
            raise ValueError("principal point must lie inside the image bounds")

    @property
    def image_center(self) -> np.ndarray:
        return np.array([self.width / 2.0, self.height / 2.0])

    @property
    def half_diagonal(self) -> float:
        return 0.5 * math.hypot(self.width, self.height)

    def world_to_camera(self, p) -> np.ndarray:
        p = _as_vector(p, 3, "point")
        R = self.pose.rotation_matrix()
        return R.T @ (p - self.pose.position)


def camera_depth(camera: CameraModel, p) -> float:
    """Depth (z-coordinate) of a world point expressed in the camera frame."""
    return float(camera.world_to_camera(p)[2])


def project(camera: CameraModel, p) -> np.ndarray:
    """Pinhole projection of a world point onto the image plane (pixels).

    Raises NonPositiveDepth if the point lies at or behind the camera
    plane, which signals an invalid scenario or waypoint.
    """
    q = camera.world_to_camera(p)
    if q[2] <= 0.0:
        raise NonPositiveDepth(float(q[2]))
    return np.array([camera.fx * q[0] / q[2] + camera.cx, camera.fy * q[1] / q[2] + camera.cy])


def back_project(camera: CameraModel, pixel, depth: float) -> np.ndarray:
    """World point at a given camera-frame depth along a pixel's viewing ray."""
    pixel = _as_vector(pixel, 2, "pixel")
    if depth <= 0.0:
        raise NonPositiveDepth(float(depth))
    q = np.array([(pixel[0] - camera.cx) / camera.fx * depth, (pixel[1] - camera.cy) / camera.fy * depth, depth])
    R = camera.pose.rotation_matrix()
    return R @ q + camera.pose.position


@dataclass(frozen=True)
class CameraSchedule:
    """Piecewise-constant camera assignment over a trajectory horizon.

    ``entries`` maps timestep indices to cameras; the camera at index i
    applies from timestep i until the next entry.  Indices must be
    strictly increasing and start at 0.
    """

    entries: tuple = field(default_factory=tuple)

    def __post_init__(self):
        entries = tuple((int(i), cam) for i, cam in self.entries)
        if not entries:
            raise ValueError("camera schedule must contain at least one entry")
        if entries[0][0] != 0:
            raise ValueError("camera schedule must start at timestep 0")
        indices = [i for i, _ in entries]
        if any(b <= a for a, b in zip(indices, indices[1:])):
            raise ValueError("camera schedule indices must be strictly increasing")
        for _, cam in entries:
            if not isinstance(cam, CameraModel):
                raise TypeError("schedule entries must hold CameraModel instances")
        object.__setattr__(self, "entries", entries)

    @classmethod
    def static(cls, camera: CameraModel) -> "CameraSchedule":
        return cls(entries=((0, camera),))

    def camera_at(self, t: int) -> CameraModel:
        if t < 0:
            raise ValueError(f"timestep must be non-negative, got {t}")
        current = self.entries[0][1]
        for i, cam in self.entries:
            if i <= t:
                current = cam
            else:
                break
        return current

    def suffix(self, start: int) -> "CameraSchedule":
        """Schedule re-indexed so that timestep ``start`` becomes 0."""
        entries = [(0, self.camera_at(start))]
        for i, cam in self.entries:
            if i > start:
                entries.append((i - start, cam))
        return CameraSchedule(entries=tuple(entries))
