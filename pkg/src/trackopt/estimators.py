"""Scikit-learn style wrappers around the trajectory machinery.

Waypoint trajectories are plain arrays of shape (n_waypoints, 6), one
row per pose (x, y, z, axis-angle), which makes the optimizer compose
with pipelines, grid search, and everything else that speaks the
estimator protocol.  Both transformers are stateless: ``fit`` only
validates and records the input schema.
"""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .belief import Belief, entropy, propagate
from .errors import NonPositiveDefinite
from .geometry import CameraModel, CameraSchedule
from .noise import AblationMask, NoiseConfig
from .optimize import OptimizerConfig, Trajectory, optimize, worst_case_scale
from .simulate import default_camera, default_o_star


def check_waypoints(X) -> np.ndarray:
    """Validate and coerce a waypoint array: shape (n, 6), finite, n >= 2."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != 6:
        raise ValueError(f"waypoint array must have shape (n_waypoints, 6), got {X.shape}")
    if X.shape[0] < 2:
        raise ValueError("a trajectory needs at least a start and a goal waypoint")
    if not np.all(np.isfinite(X)):
        raise ValueError("waypoint array must be finite")
    return X


def _as_schedule(cameras) -> CameraSchedule:
    if cameras is None:
        return CameraSchedule.static(default_camera())
    if isinstance(cameras, CameraModel):
        return CameraSchedule.static(cameras)
    if isinstance(cameras, CameraSchedule):
        return cameras
    raise TypeError("cameras must be a CameraModel, CameraSchedule, or None")


class _WaypointEstimator(BaseEstimator):
    """Shared validation and problem assembly for the waypoint transformers."""

    def fit(self, X, y=None):
        X = check_waypoints(X)
        self.n_features_in_ = X.shape[1]
        return self

    def _problem(self, X):
        traj = Trajectory.from_array(check_waypoints(X))
        cams = _as_schedule(self.cameras)
        noise = self.noise
        if noise is None:
            noise = NoiseConfig.defaults(o_star=default_o_star(traj.goal, cams.camera_at(traj.horizon)))
        prior = Belief.from_pose(traj.start, self.prior_cov)
        return traj, cams, noise, prior


class TrajectoryOptimizer(_WaypointEstimator, TransformerMixin):
    """Transformer that rewrites a waypoint array to minimize tracking
    uncertainty, holding both endpoints fixed.

    Parameters mirror the underlying optimizer: the noise components the
    objective sees can be switched off individually, the optimization can
    run against worst-case (inflated) noise, and gradients are either the
    adjoint backward pass or finite differences.  After ``transform`` the
    full iteration history is available as ``result_``.
    """

    def __init__(
        self,
        cameras=None,
        noise=None,
        prior_cov=1e-2,
        use_depth_noise=True,
        use_fov_noise=True,
        use_orientation_noise=True,
        use_pose_loss=True,
        worst_case_factor=1.0,
        max_iterations=50,
        inner_steps=20,
        history_size=10,
        gradient_mode="analytic",
        initial_update=True,
    ):
        self.cameras = cameras
        self.noise = noise
        self.prior_cov = prior_cov
        self.use_depth_noise = use_depth_noise
        self.use_fov_noise = use_fov_noise
        self.use_orientation_noise = use_orientation_noise
        self.use_pose_loss = use_pose_loss
        self.worst_case_factor = worst_case_factor
        self.max_iterations = max_iterations
        self.inner_steps = inner_steps
        self.history_size = history_size
        self.gradient_mode = gradient_mode
        self.initial_update = initial_update

    def transform(self, X):
        traj, cams, noise, prior = self._problem(X)
        if self.worst_case_factor != 1.0:
            noise = worst_case_scale(noise, self.worst_case_factor)
        mask = AblationMask(
            use_depth=self.use_depth_noise,
            use_fov=self.use_fov_noise,
            use_orientation=self.use_orientation_noise,
            use_pose_loss=self.use_pose_loss,
        )
        opt = OptimizerConfig(
            max_iterations=self.max_iterations,
            inner_steps=self.inner_steps,
            history_size=self.history_size,
            gradient_mode=self.gradient_mode,
            initial_update=self.initial_update,
        )
        result = optimize(traj, cams, noise, mask, prior, opt)
        self.result_ = result
        return result.trajectory.as_array()


class BeliefPropagator(_WaypointEstimator, TransformerMixin):
    """Transformer mapping a waypoint array to per-waypoint uncertainty features.

    Each output row holds the filtered covariance trace, its entropy
    (NaN when singular), and the Frobenius norm of the Kalman gain at
    that waypoint, under maximum-likelihood observations.
    """

    def __init__(self, cameras=None, noise=None, prior_cov=1e-2, initial_update=True):
        self.cameras = cameras
        self.noise = noise
        self.prior_cov = prior_cov
        self.initial_update = initial_update

    def transform(self, X):
        traj, cams, noise, prior = self._problem(X)
        trace = propagate(traj, cams, noise, AblationMask.full(), prior, initial_update=self.initial_update)

        def safe_entropy(b):
            try:
                return entropy(b)
            except NonPositiveDefinite:
                return math.nan

        rows = [
            [
                trace.initial.trace(),
                safe_entropy(trace.initial),
                float(np.linalg.norm(trace.initial_gain)) if trace.initial_gain is not None else 0.0,
            ]
        ]
        for step in trace.steps:
            rows.append([step.updated.trace(), safe_entropy(step.updated), float(np.linalg.norm(step.gain))])
        return np.asarray(rows)
