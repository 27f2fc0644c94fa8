"""State- and control-dependent Gaussian covariance generators.

Motion noise grows quadratically with the commanded step (translation
norm and rotation angle).  Observation noise is a sum of three
components: distance from an ideal viewing depth, pixel distance from
the image center, and misalignment of the tool orientation with a
preferred detection orientation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import CameraModel, Pose, angle_between, camera_depth, project

_IDENTITY6 = np.eye(6)

# Below this axis-angle magnitude the orientation misalignment factor is
# fixed at 1: the zero vector carries no axis information, so the cosine
# similarity is undefined there.
_ZERO_ORIENTATION = 1e-9


def _coerce_cov6(value, name: str) -> np.ndarray:
    """Accept a scalar (times identity) or a full 6x6 symmetric PSD matrix."""
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = float(arr) * _IDENTITY6
    if arr.shape != (6, 6):
        raise ValueError(f"{name} must be a scalar or 6x6 matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    if np.max(np.abs(arr - arr.T)) > 1e-9 * max(1.0, np.max(np.abs(arr))):
        raise ValueError(f"{name} must be symmetric")
    arr = 0.5 * (arr + arr.T)
    eigvals = np.linalg.eigvalsh(arr)
    if eigvals.min() < -1e-10 * max(1.0, eigvals.max()):
        raise ValueError(f"{name} must be positive semidefinite (min eigenvalue {eigvals.min():.3g})")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class NoiseConfig:
    """Base covariances and ideal-view constants for the noise models.

    ``fov_normalization`` divides pixel distances before squaring; when
    None, half the image diagonal of the active camera is used, which
    makes the field-of-view factor dimensionless and resolution
    independent.
    """

    w_pos0: np.ndarray
    w_rot0: np.ndarray
    v_depth0: np.ndarray
    v_fov0: np.ndarray
    v_orient0: np.ndarray
    d_star: float
    o_star: np.ndarray
    fov_normalization: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "w_pos0", _coerce_cov6(self.w_pos0, "w_pos0"))
        object.__setattr__(self, "w_rot0", _coerce_cov6(self.w_rot0, "w_rot0"))
        object.__setattr__(self, "v_depth0", _coerce_cov6(self.v_depth0, "v_depth0"))
        object.__setattr__(self, "v_fov0", _coerce_cov6(self.v_fov0, "v_fov0"))
        object.__setattr__(self, "v_orient0", _coerce_cov6(self.v_orient0, "v_orient0"))
        if not self.d_star > 0.0:
            raise ValueError(f"d_star must be positive, got {self.d_star}")
        o_star = np.asarray(self.o_star, dtype=np.float64)
        if o_star.shape != (3,) or not np.all(np.isfinite(o_star)):
            raise ValueError("o_star must be a finite 3-vector")
        if np.linalg.norm(o_star) < _ZERO_ORIENTATION:
            raise ValueError("o_star must be non-zero")
        o_star = o_star.copy()
        o_star.setflags(write=False)
        object.__setattr__(self, "o_star", o_star)
        if self.fov_normalization is not None and not self.fov_normalization > 0.0:
            raise ValueError("fov_normalization must be positive when given")

    @classmethod
    def defaults(cls, o_star, **overrides) -> "NoiseConfig":
        """Standard constants: W = 1e-3 I for motion, V = (1e-1, 1e-2, 5e-3) I
        for the depth / field-of-view / orientation terms, ideal depth 0.15 m."""
        params = dict(
            w_pos0=1e-3,
            w_rot0=1e-3,
            v_depth0=1e-1,
            v_fov0=1e-2,
            v_orient0=5e-3,
            d_star=0.15,
            o_star=o_star,
        )
        params.update(overrides)
        return cls(**params)

    def scaled(self, factor: float) -> "NoiseConfig":
        """Config with every base covariance multiplied by ``factor``."""
        return NoiseConfig(
            w_pos0=factor * self.w_pos0,
            w_rot0=factor * self.w_rot0,
            v_depth0=factor * self.v_depth0,
            v_fov0=factor * self.v_fov0,
            v_orient0=factor * self.v_orient0,
            d_star=self.d_star,
            o_star=self.o_star,
            fov_normalization=self.fov_normalization,
        )


@dataclass(frozen=True)
class AblationMask:
    """Switches zeroing individual noise components during optimization.

    Evaluation-time propagation always runs with the full model; these
    flags only shape the objective a planner sees.
    """

    use_depth: bool = True
    use_fov: bool = True
    use_orientation: bool = True
    use_pose_loss: bool = True

    @classmethod
    def full(cls) -> "AblationMask":
        return cls()

    @classmethod
    def none(cls) -> "AblationMask":
        return cls(use_depth=False, use_fov=False, use_orientation=False, use_pose_loss=False)


def fov_scale(camera: CameraModel, cfg: NoiseConfig) -> float:
    """Pixel-distance normalization for the field-of-view noise factor."""
    if cfg.fov_normalization is not None:
        return cfg.fov_normalization
    return camera.half_diagonal


def depth_error(camera: CameraModel, p, cfg: NoiseConfig) -> float:
    """Signed distance of a point's camera-frame depth from the ideal depth."""
    return camera_depth(camera, p) - cfg.d_star


def pixel_offset(camera: CameraModel, p) -> np.ndarray:
    """Pixel offset of a projected point from the image center."""
    return project(camera, p) - camera.image_center


def orientation_misalignment(orientation, cfg: NoiseConfig) -> float:
    """1 - cosine similarity between an axis-angle vector and the ideal one.

    The factor is taken as 1 (neutral misalignment) when the orientation
    vector is numerically zero.
    """
    o = np.asarray(orientation, dtype=np.float64)
    norm = float(np.linalg.norm(o))
    if norm < _ZERO_ORIENTATION:
        return 1.0
    o_star = cfg.o_star
    cos_sim = float(o @ o_star) / (norm * float(np.linalg.norm(o_star)))
    return 1.0 - cos_sim


def motion_cov(x_t: Pose, x_next: Pose, cfg: NoiseConfig) -> np.ndarray:
    """Motion noise covariance of the step from ``x_t`` to ``x_next``.

    Quadratic in the commanded translation distance and in the geodesic
    rotation angle between the waypoints.
    """
    dp = x_next.position - x_t.position
    pos_factor = float(dp @ dp)
    ang = angle_between(x_t.orientation, x_next.orientation)
    W = pos_factor * cfg.w_pos0 + (ang * ang) * cfg.w_rot0
    return 0.5 * (W + W.T)


def obs_cov(x_t: Pose, camera: CameraModel, cfg: NoiseConfig, mask: AblationMask) -> np.ndarray:
    """Observation noise covariance at a waypoint, per the active mask.

    Raises NonPositiveDepth (from the projection) when the field-of-view
    term is active and the waypoint is not in front of the camera.
    """
    V = np.zeros((6, 6))
    if mask.use_depth:
        e = depth_error(camera, x_t.position, cfg)
        V = V + (e * e) * cfg.v_depth0
    if mask.use_fov:
        u = pixel_offset(camera, x_t.position) / fov_scale(camera, cfg)
        V = V + float(u @ u) * cfg.v_fov0
    if mask.use_orientation:
        m = orientation_misalignment(x_t.orientation, cfg)
        V = V + (m * m) * cfg.v_orient0
    return 0.5 * (V + V.T)
