"""Gaussian belief propagation along a waypoint trajectory.

The tracked state is a flat 6-vector (position, axis-angle orientation)
and the filter is a vanilla Kalman recursion on it: the commanded motion
shifts the mean one waypoint forward with identity Jacobians, and the
full pose is observed directly, so all of the problem structure lives in
the state-dependent noise covariances.

Planning uses maximum-likelihood observations: the innovation is zero,
the mean follows the commanded waypoints, and the covariance recursion
becomes a deterministic function of the trajectory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NonPositiveDefinite, NonPositiveDepth, SingularInnovation
from .geometry import CameraModel, CameraSchedule, Pose
from .noise import AblationMask, NoiseConfig, motion_cov, obs_cov

_ENTROPY_CONST = 3.0 * (1.0 + math.log(2.0 * math.pi))  # (n/2)(1 + ln 2pi), n = 6


def _symmetrize(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


@dataclass(frozen=True)
class Belief:
    """Gaussian over the 6-dim pose state: mean vector and covariance.

    The covariance is re-symmetrized on construction so that accumulated
    round-off never leaves the symmetric cone.
    """

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.cov, dtype=np.float64)
        if mean.shape != (6,):
            raise ValueError(f"belief mean must be a 6-vector, got shape {mean.shape}")
        if cov.shape != (6, 6):
            raise ValueError(f"belief covariance must be 6x6, got shape {cov.shape}")
        if not np.all(np.isfinite(mean)) or not np.all(np.isfinite(cov)):
            raise ValueError("belief mean and covariance must be finite")
        mean = mean.copy()
        cov = _symmetrize(cov)
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @classmethod
    def from_pose(cls, pose: Pose, cov) -> "Belief":
        cov = np.asarray(cov, dtype=np.float64)
        if cov.ndim == 0:
            cov = float(cov) * np.eye(6)
        return cls(mean=pose.as_vector(), cov=cov)

    def mean_pose(self) -> Pose:
        return Pose(position=self.mean[:3], orientation=self.mean[3:])

    def trace(self) -> float:
        return float(np.trace(self.cov))


@dataclass(frozen=True)
class BeliefStep:
    """Record of one predict/update cycle of the filter."""

    predicted: Belief
    updated: Belief
    motion_noise: np.ndarray
    obs_noise: np.ndarray
    gain: np.ndarray


@dataclass(frozen=True)
class BeliefTrace:
    """Per-timestep diagnostic record of a belief propagation.

    ``initial`` is the belief after the optional update at the start
    waypoint (or the prior itself when that update is disabled);
    ``steps`` holds one record per trajectory step.
    """

    prior: Belief
    initial: Belief
    initial_gain: np.ndarray | None
    steps: tuple

    @property
    def horizon(self) -> int:
        return len(self.steps)

    @property
    def final(self) -> Belief:
        return self.steps[-1].updated if self.steps else self.initial

    def to_dict(self) -> dict:
        """JSON-friendly summary: per-step trace, entropy, and gain norms."""

        def safe_entropy(b: Belief):
            try:
                return entropy(b)
            except NonPositiveDefinite:
                return None

        rows = []
        for t, step in enumerate(self.steps, start=1):
            rows.append(
                {
                    "timestep": t,
                    "trace_predicted": step.predicted.trace(),
                    "trace_updated": step.updated.trace(),
                    "entropy_updated": safe_entropy(step.updated),
                    "gain_norm": float(np.linalg.norm(step.gain)),
                    "motion_noise_trace": float(np.trace(step.motion_noise)),
                    "obs_noise_trace": float(np.trace(step.obs_noise)),
                }
            )
        return {
            "prior_trace": self.prior.trace(),
            "initial_trace": self.initial.trace(),
            "initial_entropy": safe_entropy(self.initial),
            "final_trace": self.final.trace(),
            "final_entropy": safe_entropy(self.final),
            "steps": rows,
        }


class _ConfigNoise:
    """Default noise model: covariances generated from a NoiseConfig."""

    def __init__(self, cfg: NoiseConfig, mask: AblationMask):
        self.cfg = cfg
        self.mask = mask

    def motion(self, x_t: Pose, x_next: Pose) -> np.ndarray:
        return motion_cov(x_t, x_next, self.cfg)

    def observation(self, x: Pose, camera: CameraModel) -> np.ndarray:
        return obs_cov(x, camera, self.cfg, self.mask)

    def visible(self, x: Pose, camera: CameraModel) -> bool:
        """Whether a vision detector can return an observation of ``x`` at all."""
        q = camera.world_to_camera(x.position)
        if q[2] <= 0.0:
            return False
        px = camera.fx * q[0] / q[2] + camera.cx
        py = camera.fy * q[1] / q[2] + camera.cy
        return 0.0 <= px <= camera.width and 0.0 <= py <= camera.height


class FrozenNoise:
    """State-independent noise model with fixed motion/observation covariances.

    Turns the filter into an exactly linear-Gaussian recursion, which is
    what the Monte Carlo consistency oracle needs.
    """

    def __init__(self, motion_noise, obs_noise):
        self._W = _symmetrize(np.asarray(motion_noise, dtype=np.float64))
        self._V = _symmetrize(np.asarray(obs_noise, dtype=np.float64))

    def motion(self, x_t: Pose, x_next: Pose) -> np.ndarray:
        return self._W

    def observation(self, x: Pose, camera: CameraModel) -> np.ndarray:
        return self._V

    def visible(self, x: Pose, camera: CameraModel) -> bool:
        return True


def _kalman_gain(cov: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Gain K = Sigma (Sigma + V)^-1 with a PSD-aware fallback.

    The innovation covariance S = Sigma + V may be singular in exact
    noiseless limits; since null(S) is then also null for Sigma, the
    pseudo-inverse gain is still well defined.  Genuinely indefinite or
    non-finite S raises SingularInnovation.
    """
    S = _symmetrize(cov + V)
    if not np.all(np.isfinite(S)):
        raise SingularInnovation("innovation covariance has non-finite entries")
    try:
        np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        eigvals, eigvecs = np.linalg.eigh(S)
        scale = max(1.0, float(eigvals[-1]))
        if eigvals[0] < -1e-10 * scale:
            raise SingularInnovation(
                f"innovation covariance is indefinite (min eigenvalue {eigvals[0]:.3g})"
            )
        inv = np.where(eigvals > 1e-14 * scale, 1.0 / np.maximum(eigvals, 1e-300), 0.0)
        return cov @ (eigvecs * inv) @ eigvecs.T
    return np.linalg.solve(S, cov).T


def predict(b: Belief, x_t: Pose, x_next: Pose, cfg: NoiseConfig, motion_noise=None) -> Belief:
    """Predict step: advance the mean by the commanded waypoint transform.

    With identity motion Jacobians the covariance simply accumulates the
    step's motion noise.  ``motion_noise`` overrides the config-derived
    covariance (used by frozen-noise testing).
    """
    W = motion_cov(x_t, x_next, cfg) if motion_noise is None else motion_noise
    mean = b.mean + (x_next.as_vector() - x_t.as_vector())
    return Belief(mean=mean, cov=b.cov + W)


def update(
    b: Belief,
    camera: CameraModel,
    cfg: NoiseConfig,
    mask: AblationMask,
    observation=None,
    obs_noise=None,
) -> Belief:
    """Kalman update with a full-pose observation (identity Jacobians).

    The observation noise covariance is evaluated at the predicted mean.
    When ``observation`` is None the maximum-likelihood observation is
    assumed, so the innovation is zero and only the covariance contracts.
    """
    updated, _, _ = _update_with_gain(b, camera, cfg, mask, observation, obs_noise)
    return updated


def _update_with_gain(b, camera, cfg, mask, observation=None, obs_noise=None):
    V = obs_cov(b.mean_pose(), camera, cfg, mask) if obs_noise is None else obs_noise
    K = _kalman_gain(b.cov, V)
    if observation is None:
        mean = b.mean
    else:
        z = np.asarray(observation, dtype=np.float64)
        mean = b.mean + K @ (z - b.mean)
    IK = np.eye(6) - K
    # Joseph form: algebraically (I - K) Sigma, numerically PSD-safe.
    cov = IK @ b.cov @ IK.T + K @ V @ K.T
    return Belief(mean=mean, cov=cov), K, V


def propagate(
    traj,
    cams: CameraSchedule,
    cfg: NoiseConfig,
    mask: AblationMask,
    prior: Belief,
    initial_update: bool = True,
    noise_model=None,
) -> BeliefTrace:
    """Deterministic belief propagation along a trajectory.

    Alternates predict/update over all steps under maximum-likelihood
    observations.  By default the filter also performs one update at the
    start waypoint before any motion; ``initial_update=False`` disables
    it.  Errors from a step are re-raised with the offending timestep.
    """
    waypoints = traj.waypoints
    if len(waypoints) < 2:
        raise ValueError("trajectory must have at least 2 waypoints")
    model = noise_model if noise_model is not None else _ConfigNoise(cfg, mask)

    initial_gain = None
    belief = prior
    if initial_update:
        try:
            camera0 = cams.camera_at(0)
            belief, initial_gain, _ = _update_with_gain(
                belief, camera0, cfg, mask, obs_noise=model.observation(waypoints[0], camera0)
            )
        except (NonPositiveDepth, SingularInnovation) as err:
            err.timestep = 0
            raise
    initial = belief

    steps = []
    for t in range(1, len(waypoints)):
        try:
            W = model.motion(waypoints[t - 1], waypoints[t])
            predicted = predict(belief, waypoints[t - 1], waypoints[t], cfg, motion_noise=W)
            camera = cams.camera_at(t)
            V = model.observation(predicted.mean_pose(), camera)
            updated, gain, _ = _update_with_gain(predicted, camera, cfg, mask, obs_noise=V)
        except (NonPositiveDepth, SingularInnovation) as err:
            err.timestep = t
            raise
        steps.append(BeliefStep(predicted=predicted, updated=updated, motion_noise=W, obs_noise=V, gain=gain))
        belief = updated

    return BeliefTrace(prior=prior, initial=initial, initial_gain=initial_gain, steps=tuple(steps))


def _log_det_pd(cov: np.ndarray) -> float:
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise NonPositiveDefinite("covariance is not positive definite, entropy undefined")
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def entropy(b: Belief) -> float:
    """Differential entropy (nats) of the belief's Gaussian.

    Requires a positive definite covariance; zero eigenvalues leave the
    entropy undefined.
    """
    return _ENTROPY_CONST + 0.5 * _log_det_pd(b.cov)


def check_entropy_bound(b: Belief) -> tuple[float, float, bool]:
    """Entropy, its trace-based upper bound, and whether the bound holds.

    For positive definite covariances, ln|Sigma| < Tr(Sigma), hence the
    entropy is bounded by c + Tr(Sigma)/2.
    """
    logdet = _log_det_pd(b.cov)
    trace = b.trace()
    h = _ENTROPY_CONST + 0.5 * logdet
    bound = _ENTROPY_CONST + 0.5 * trace
    return h, bound, logdet < trace
