"""Scenario generation, noisy Monte Carlo rollouts, and the ablation protocol.

Rollouts simulate a closed loop: the robot commands the step from its
current estimate toward the next waypoint, so the filter's predicted
mean lands exactly on the commanded waypoint while the true state
carries the estimation error plus freshly sampled motion noise.  The
filter evaluates observation noise at its predicted mean; the simulator
samples it at the true state.  Evaluation always runs the full noise
model regardless of which components a variant saw during optimization.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .belief import Belief, BeliefTrace, entropy, predict, propagate, _ConfigNoise, _update_with_gain
from .errors import NonPositiveDefinite, RejectionLimit, TrackOptError, ZeroBaseline
from .geometry import (
    CameraModel,
    CameraSchedule,
    Pose,
    angle_between,
    axis_angle_to_matrix,
    camera_depth,
    interpolate_orientation,
    matrix_to_axis_angle,
    project,
)
from .noise import (
    AblationMask,
    NoiseConfig,
    depth_error,
    fov_scale,
    orientation_misalignment,
    pixel_offset,
)
from .optimize import OptimizerConfig, Trajectory, optimize, worst_case_scale

DEFAULT_HORIZON = 24

_EVAL_MASK = AblationMask.full()


def default_camera() -> CameraModel:
    """1080p endoscope-like pinhole camera at the world origin, looking +z."""
    return CameraModel(
        pose=Pose(position=np.zeros(3), orientation=np.zeros(3)),
        fx=1100.0,
        fy=1100.0,
        cx=960.0,
        cy=540.0,
        width=1920.0,
        height=1080.0,
    )


def default_o_star(goal: Pose, camera: CameraModel) -> np.ndarray:
    """Ideal detection orientation: the goal orientation in the camera frame.

    Falls back to the camera's optical axis when that composition is
    numerically the identity rotation (which carries no axis).
    """
    rel = matrix_to_axis_angle(camera.pose.rotation_matrix().T @ axis_angle_to_matrix(goal.orientation))
    if np.linalg.norm(rel) < 1e-6:
        return np.array([0.0, 0.0, 1.0])
    return rel


@dataclass(frozen=True)
class Scenario:
    """One tracking problem: endpoints, cameras, noise model, prior, seed."""

    start: Pose
    goal: Pose
    cameras: CameraSchedule
    noise: NoiseConfig
    prior: Belief
    horizon: int
    seed: int

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("scenario horizon must be >= 1")
        for t, pose in ((0, self.start), (self.horizon, self.goal)):
            if camera_depth(self.cameras.camera_at(t), pose.position) <= 0.0:
                raise ValueError("start and goal must lie in front of their scheduled cameras")


def make_scenario(
    start: Pose,
    goal: Pose,
    cameras: CameraSchedule | CameraModel | None = None,
    horizon: int = DEFAULT_HORIZON,
    seed: int = 0,
    noise: NoiseConfig | None = None,
    prior_cov=1e-2,
) -> Scenario:
    """Assemble a scenario, filling in default camera/noise/prior pieces."""
    if cameras is None:
        cameras = CameraSchedule.static(default_camera())
    elif isinstance(cameras, CameraModel):
        cameras = CameraSchedule.static(cameras)
    if noise is None:
        noise = NoiseConfig.defaults(o_star=default_o_star(goal, cameras.camera_at(horizon)))
    prior = Belief.from_pose(start, prior_cov)
    return Scenario(start=start, goal=goal, cameras=cameras, noise=noise, prior=prior, horizon=horizon, seed=seed)


@dataclass(frozen=True)
class ScenarioBounds:
    """Sampling region for random scenarios.

    The workspace is a box in front of the camera; samples must project
    inside the central ``frustum_margin`` fraction of the image at depths
    within ``depth_range``.  Endpoints sit deeper than the ideal viewing
    depth so the straight-line baseline has sustained room for
    improvement.  Each sampled scenario draws its own ideal detection
    orientation by rotating the goal orientation (in the camera frame) by
    a random angle in ``o_star_misalignment``; tying it exactly to the
    goal would let every baseline's misalignment decay for free.
    """

    workspace_center: tuple = (0.0, 0.0, 0.29)
    workspace_half_extent: float = 0.09
    depth_range: tuple = (0.20, 0.38)
    orientation_angle_range: tuple = (0.2, 2.5)
    o_star_misalignment: tuple = (0.9, 1.6)
    camera_position_jitter: float = 0.02
    camera_rotation_jitter: float = 0.10
    frustum_margin: float = 0.7
    horizon: int = DEFAULT_HORIZON
    max_rejections: int = 1000


def _sample_orientation(rng: np.random.Generator, angle_range) -> np.ndarray:
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(*angle_range)
    return axis * angle


def _in_frustum(camera: CameraModel, p, depth_range, margin: float = 1.0) -> bool:
    depth = camera_depth(camera, p)
    if not depth_range[0] <= depth <= depth_range[1]:
        return False
    try:
        pix = project(camera, p)
    except TrackOptError:
        return False
    offset = pix - camera.image_center
    return abs(offset[0]) < margin * camera.width / 2.0 and abs(offset[1]) < margin * camera.height / 2.0


def sample_scenario(rng, bounds: ScenarioBounds | None = None) -> Scenario:
    """Random scenario: start/goal poses in the camera frustum, jittered camera.

    ``rng`` may be an integer seed or a numpy Generator; either way the
    scenario records the exact integer seed that reproduces it.
    """
    bounds = bounds or ScenarioBounds()
    if isinstance(rng, (int, np.integer)):
        seed = int(rng)
    else:
        seed = int(rng.integers(2**63))
    gen = np.random.default_rng(seed)

    base = default_camera()
    jitter_pos = gen.uniform(-bounds.camera_position_jitter, bounds.camera_position_jitter, size=3)
    jitter_rot = _sample_orientation(gen, (0.0, bounds.camera_rotation_jitter)) if bounds.camera_rotation_jitter > 0 else np.zeros(3)
    camera = replace(base, pose=Pose(position=jitter_pos, orientation=jitter_rot))

    center = np.asarray(bounds.workspace_center, dtype=np.float64)
    half = bounds.workspace_half_extent

    def sample_pose():
        for _ in range(bounds.max_rejections):
            p = center + gen.uniform(-half, half, size=3)
            if _in_frustum(camera, p, bounds.depth_range, bounds.frustum_margin):
                return Pose(position=p, orientation=_sample_orientation(gen, bounds.orientation_angle_range))
        raise RejectionLimit(
            f"no in-frustum pose found in {bounds.max_rejections} rejection samples"
        )

    start = sample_pose()
    goal = sample_pose()
    goal_in_camera = camera.pose.rotation_matrix().T @ axis_angle_to_matrix(goal.orientation)
    misalign = _sample_orientation(gen, bounds.o_star_misalignment)
    o_star = matrix_to_axis_angle(goal_in_camera @ axis_angle_to_matrix(misalign))
    noise = NoiseConfig.defaults(o_star=o_star)
    return make_scenario(start=start, goal=goal, cameras=camera, horizon=bounds.horizon, seed=seed, noise=noise)


def make_baseline(scenario: Scenario) -> Trajectory:
    """Path-interpolation baseline: linear positions, geodesic orientations."""
    T = scenario.horizon
    start, goal = scenario.start, scenario.goal
    step = goal.position - start.position
    waypoints = [start]
    for i in range(1, T):
        s = i / T
        waypoints.append(
            Pose(
                position=start.position + s * step,
                orientation=interpolate_orientation(start.orientation, goal.orientation, s),
            )
        )
    waypoints.append(goal)
    return Trajectory(waypoints=tuple(waypoints))


def _psd_sqrt(M: np.ndarray) -> np.ndarray:
    eigvals, eigvecs = np.linalg.eigh(0.5 * (M + M.T))
    return eigvecs * np.sqrt(np.clip(eigvals, 0.0, None)) @ eigvecs.T


# A tool sliding out of frame yields a degraded detection, not an
# unboundedly bad one: when sampling true-state noise the field-of-view
# factor saturates a little past the image corner.  Only a tool behind
# the camera plane produces no detection at all.
_TRUE_FOV_FACTOR_CAP = 2.0

# Chi-square validation gate on the squared Mahalanobis innovation
# (6-dim observation; 22.46 is the 99.9% quantile).  Statistically
# impossible detections are discarded instead of swallowed; the gate
# re-opens as the coasting covariance grows.
_INNOVATION_GATE = 30.0


def _true_state_obs_cov(pose: Pose, camera: CameraModel, cfg: NoiseConfig) -> np.ndarray:
    e = depth_error(camera, pose.position, cfg)
    V = (e * e) * cfg.v_depth0
    u = pixel_offset(camera, pose.position) / fov_scale(camera, cfg)
    V = V + min(float(u @ u), _TRUE_FOV_FACTOR_CAP) * cfg.v_fov0
    m = orientation_misalignment(pose.orientation, cfg)
    V = V + (m * m) * cfg.v_orient0
    return 0.5 * (V + V.T)


@dataclass(frozen=True)
class RolloutRow:
    """Outcome of one noisy rollout."""

    position_error: float
    orientation_error: float
    trace: float
    entropy: float  # NaN when the final covariance is singular
    final_state: np.ndarray
    final_mean: np.ndarray
    dropout_steps: int = 0


def rollout_noisy(
    traj: Trajectory,
    scenario: Scenario,
    rng: np.random.Generator,
    noise_model=None,
    initial_update: bool = True,
    sample_initial_state: bool = False,
) -> RolloutRow:
    """Simulate one noisy closed-loop execution of a trajectory.

    The true state starts at the start waypoint and is driven by sampled
    motion noise; each step the commanded control corrects from the
    current estimate toward the next waypoint.  Observation noise
    covariances are sampled at the true state but filtered at the
    predicted mean.  ``sample_initial_state`` instead draws the true
    initial state from the prior (the filter-consistency setting used by
    the Monte Carlo oracle).  Reports final errors against the goal plus
    the tracked trace and entropy.
    """
    cfg = scenario.noise
    model = noise_model if noise_model is not None else _ConfigNoise(cfg, _EVAL_MASK)
    waypoints = traj.waypoints
    cams = scenario.cameras

    x_true = scenario.prior.mean.copy()
    if sample_initial_state:
        x_true = x_true + _psd_sqrt(scenario.prior.cov) @ rng.standard_normal(6)
    belief = scenario.prior
    dropouts = 0
    frozen = noise_model is not None

    def observe(camera):
        # No detection exists behind the camera plane, and detections that
        # fail the filter's validation gate are discarded; in both cases
        # the filter coasts through the step.
        nonlocal belief, dropouts
        true_pose = Pose.from_vector(x_true)
        if frozen:
            v_true = model.observation(true_pose, camera)
        else:
            if camera_depth(camera, true_pose.position) <= 0.0:
                dropouts += 1
                return
            v_true = _true_state_obs_cov(true_pose, camera, cfg)
        z = x_true + _psd_sqrt(v_true) @ rng.standard_normal(6)
        v_filter = model.observation(belief.mean_pose(), camera)
        if not frozen:
            innovation = z - belief.mean
            S = belief.cov + v_filter
            d2 = float(innovation @ np.linalg.solve(S + 1e-15 * np.eye(6), innovation))
            if d2 > _INNOVATION_GATE:
                dropouts += 1
                return
        belief, _, _ = _update_with_gain(belief, camera, cfg, _EVAL_MASK, observation=z, obs_noise=v_filter)

    if initial_update:
        observe(cams.camera_at(0))

    for t in range(1, len(waypoints)):
        target = waypoints[t]
        mean_pose = belief.mean_pose()
        W = model.motion(mean_pose, target)
        control = target.as_vector() - belief.mean
        x_true = x_true + control + _psd_sqrt(W) @ rng.standard_normal(6)
        belief = predict(belief, mean_pose, target, cfg, motion_noise=W)
        observe(cams.camera_at(t))

    goal = scenario.goal
    try:
        h = entropy(belief)
    except NonPositiveDefinite:
        h = math.nan
    return RolloutRow(
        position_error=float(np.linalg.norm(x_true[:3] - goal.position)),
        orientation_error=angle_between(x_true[3:], goal.orientation),
        trace=belief.trace(),
        entropy=h,
        final_state=x_true.copy(),
        final_mean=belief.mean.copy(),
        dropout_steps=dropouts,
    )


def relative_scale(y: float, b: float) -> float:
    """Scale a metric relative to its baseline value.

    y/b when both are positive; 1 - (y - b)/b when the baseline is
    negative (entropies).  Lower is better in both conventions.
    """
    if b == 0.0:
        raise ZeroBaseline("baseline metric is zero; relative scaling undefined")
    if b > 0.0:
        return y / b
    return 1.0 - (y - b) / b


# ---------------------------------------------------------------------------
# ablation protocol
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VariantSpec:
    """One ablation arm: whether to optimize, and with which mask."""

    name: str
    optimize: bool
    mask: AblationMask


VARIANTS = {
    "baseline": VariantSpec("baseline", optimize=False, mask=AblationMask.full()),
    "all": VariantSpec("all", optimize=True, mask=AblationMask.full()),
    "no_pose_loss": VariantSpec("no_pose_loss", optimize=True, mask=AblationMask(use_pose_loss=False)),
    "no_depth": VariantSpec("no_depth", optimize=True, mask=AblationMask(use_depth=False)),
    "no_fov": VariantSpec("no_fov", optimize=True, mask=AblationMask(use_fov=False)),
    "no_orientation": VariantSpec("no_orientation", optimize=True, mask=AblationMask(use_orientation=False)),
}


@dataclass(frozen=True)
class AblationSuite:
    variants: tuple

    def __post_init__(self):
        if not self.variants:
            raise ValueError("ablation suite must contain at least one variant")
        names = [v.name for v in self.variants]
        if len(set(names)) != len(names):
            raise ValueError("ablation suite variant names must be unique")
        object.__setattr__(self, "variants", tuple(self.variants))

    @classmethod
    def default(cls) -> "AblationSuite":
        return cls(variants=tuple(VARIANTS[k] for k in ("baseline", "all", "no_pose_loss", "no_depth", "no_fov", "no_orientation")))

    @classmethod
    def from_names(cls, names) -> "AblationSuite":
        unknown = [n for n in names if n not in VARIANTS]
        if unknown:
            raise KeyError(f"unknown ablation variant(s): {', '.join(unknown)}")
        return cls(variants=tuple(VARIANTS[n] for n in names))


_METRIC_KEYS = (
    "position_mean",
    "position_std",
    "orientation_mean",
    "orientation_std",
    "trace_noisy",
    "trace_ml",
    "entropy_noisy",
    "entropy_ml",
)


@dataclass
class VariantOutcome:
    """Pooled per-variant raw samples across all successful scenarios."""

    name: str
    position_errors: list = field(default_factory=list)
    orientation_errors: list = field(default_factory=list)
    noisy_traces: list = field(default_factory=list)
    noisy_entropies: list = field(default_factory=list)
    ml_traces: list = field(default_factory=list)
    ml_entropies: list = field(default_factory=list)

    def metrics(self) -> dict:
        return {
            "position_mean": float(np.mean(self.position_errors)),
            "position_std": float(np.std(self.position_errors)),
            "orientation_mean": float(np.mean(self.orientation_errors)),
            "orientation_std": float(np.std(self.orientation_errors)),
            "trace_noisy": float(np.mean(self.noisy_traces)),
            "trace_ml": float(np.mean(self.ml_traces)),
            "entropy_noisy": float(np.nanmean(self.noisy_entropies)),
            "entropy_ml": float(np.nanmean(self.ml_entropies)),
        }


@dataclass(frozen=True)
class AblationTable:
    """Raw and baseline-relative aggregate metrics per variant.

    ``trials`` holds one record per (scenario, variant, rollout) and
    ``curves`` one per (scenario, variant, timestep) of the
    maximum-likelihood propagation, for the per-trial and plot-data CSV
    emissions.
    """

    raw: dict
    relative: dict
    n_scenarios: int
    n_rollouts: int
    failures: tuple
    seed: int
    trials: tuple = ()
    curves: tuple = ()

    def to_dict(self) -> dict:
        return {
            "n_scenarios": self.n_scenarios,
            "n_rollouts": self.n_rollouts,
            "seed": self.seed,
            "failures": [list(f) for f in self.failures],
            "raw": self.raw,
            "relative": self.relative,
        }


def _safe_entropy(belief) -> float:
    try:
        return entropy(belief)
    except NonPositiveDefinite:
        return math.nan


def _ml_curve(traj, scenario, trace) -> list:
    """Per-step rows of the ML propagation: uncertainty plus world/pixel path."""
    rows = []
    beliefs = [trace.initial] + [s.updated for s in trace.steps]
    for t, (w, b) in enumerate(zip(traj.waypoints, beliefs)):
        camera = scenario.cameras.camera_at(t)
        try:
            px, py = project(camera, w.position)
        except TrackOptError:
            px, py = math.nan, math.nan
        rows.append(
            {
                "step": t,
                "trace": b.trace(),
                "entropy": _safe_entropy(b),
                "x": float(w.position[0]),
                "y": float(w.position[1]),
                "z": float(w.position[2]),
                "pixel_u": float(px),
                "pixel_v": float(py),
            }
        )
    return rows


def _evaluate_scenario(scenario, suite, opt_config, master_seed, index, n_rollouts, worst_case_factor):
    """Optimize and evaluate every variant on one scenario.

    Returns {variant name: per-scenario samples} or raises on failure.
    """
    baseline = make_baseline(scenario)
    eval_cfg = scenario.noise
    opt_cfg_noise = worst_case_scale(eval_cfg, worst_case_factor) if worst_case_factor != 1.0 else eval_cfg

    out = {}
    for variant in suite.variants:
        if variant.optimize:
            result = optimize(baseline, scenario.cameras, opt_cfg_noise, variant.mask, scenario.prior, opt_config)
            traj = result.trajectory
        else:
            traj = baseline

        ml = propagate(traj, scenario.cameras, eval_cfg, _EVAL_MASK, scenario.prior,
                       initial_update=opt_config.initial_update)

        rows = []
        for j in range(n_rollouts):
            rng = np.random.default_rng(np.random.SeedSequence((master_seed, index, j)))
            rows.append(rollout_noisy(traj, scenario, rng, initial_update=opt_config.initial_update))

        out[variant.name] = {
            "position_errors": [r.position_error for r in rows],
            "orientation_errors": [r.orientation_error for r in rows],
            "noisy_traces": [r.trace for r in rows],
            "noisy_entropies": [r.entropy for r in rows],
            "dropout_steps": [r.dropout_steps for r in rows],
            "ml_trace": ml.final.trace(),
            "ml_entropy": _safe_entropy(ml.final),
            "curve": _ml_curve(traj, scenario, ml),
        }
    return out


def _scenario_job(args):
    (master_seed, index, bounds, suite, opt_config, n_rollouts, worst_case_factor) = args
    scenario_rng = np.random.default_rng(np.random.SeedSequence((master_seed, index)))
    scenario = sample_scenario(scenario_rng, bounds)
    try:
        result = _evaluate_scenario(scenario, suite, opt_config, master_seed, index, n_rollouts, worst_case_factor)
        return index, result, None
    except TrackOptError as err:
        return index, None, f"{type(err).__name__}: {err}"


def run_ablation(
    n_scenarios: int,
    n_rollouts: int,
    suite: AblationSuite | None = None,
    opt_config: OptimizerConfig | None = None,
    seed: int = 0,
    bounds: ScenarioBounds | None = None,
    worst_case_factor: float = 1.0,
    parallel: int = 1,
) -> AblationTable:
    """Run the full ablation protocol and aggregate baseline-relative metrics.

    Every variant is evaluated under the complete noise model with
    common random numbers per (scenario, trial); masks only shape what
    the optimizer sees.  Scenarios where any variant fails are excluded
    from the aggregates and recorded with their cause.
    """
    if n_scenarios < 1 or n_rollouts < 1:
        raise ValueError("n_scenarios and n_rollouts must be >= 1")
    suite = suite or AblationSuite.default()
    opt_config = opt_config or OptimizerConfig()
    bounds = bounds or ScenarioBounds()

    jobs = [
        (seed, i, bounds, suite, opt_config, n_rollouts, worst_case_factor)
        for i in range(n_scenarios)
    ]
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(_scenario_job, jobs))
    else:
        results = [_scenario_job(job) for job in jobs]
    results.sort(key=lambda item: item[0])

    outcomes = {v.name: VariantOutcome(name=v.name) for v in suite.variants}
    failures = []
    trials = []
    curves = []
    for index, per_variant, error in results:
        if error is not None:
            failures.append((index, error))
            continue
        for name, samples in per_variant.items():
            o = outcomes[name]
            o.position_errors.extend(samples["position_errors"])
            o.orientation_errors.extend(samples["orientation_errors"])
            o.noisy_traces.extend(samples["noisy_traces"])
            o.noisy_entropies.extend(samples["noisy_entropies"])
            o.ml_traces.append(samples["ml_trace"])
            o.ml_entropies.append(samples["ml_entropy"])
            for j in range(n_rollouts):
                trials.append(
                    {
                        "scenario": index,
                        "variant": name,
                        "trial": j,
                        "position_error": samples["position_errors"][j],
                        "orientation_error": samples["orientation_errors"][j],
                        "trace": samples["noisy_traces"][j],
                        "entropy": samples["noisy_entropies"][j],
                        "dropout_steps": samples["dropout_steps"][j],
                    }
                )
            for row in samples["curve"]:
                curves.append({"scenario": index, "variant": name, **row})

    used = n_scenarios - len(failures)
    if used == 0:
        raise TrackOptError("every scenario failed; no aggregates to report")

    raw = {name: outcome.metrics() for name, outcome in outcomes.items()}
    baseline_name = suite.variants[0].name
    base = raw.get("baseline", raw[baseline_name])
    # Self-relative entries are exactly 1 by identity, which also keeps a
    # degenerate all-zero baseline metric (e.g. the std of one trial)
    # well defined.
    relative = {
        name: {
            key: 1.0 if metrics[key] == base[key] else relative_scale(metrics[key], base[key])
            for key in _METRIC_KEYS
        }
        for name, metrics in raw.items()
    }
    return AblationTable(
        raw=raw,
        relative=relative,
        n_scenarios=used,
        n_rollouts=n_rollouts,
        failures=tuple(failures),
        seed=seed,
        trials=tuple(trials),
        curves=tuple(curves),
    )


def reoptimize_on_camera_change(
    traj: Trajectory,
    scenario: Scenario,
    step: int,
    opt_config: OptimizerConfig | None = None,
    mask: AblationMask | None = None,
) -> Trajectory:
    """Re-optimize the trajectory suffix from a mid-horizon timestep.

    The belief tracked so far (under maximum-likelihood observations and
    the full noise model) becomes the suffix prior; its mean is the
    waypoint at ``step``, so the suffix starts there and still ends at
    the goal.  The suffix sees the camera schedule from ``step`` on.
    """
    opt_config = opt_config or OptimizerConfig()
    mask = mask or AblationMask.full()
    T = traj.horizon
    if not 0 <= step <= T - 1:
        raise ValueError(f"step must be in [0, horizon-1], got {step}")

    trace = propagate(traj, scenario.cameras, scenario.noise, _EVAL_MASK, scenario.prior,
                      initial_update=opt_config.initial_update)
    tracked = trace.initial if step == 0 else trace.steps[step - 1].updated

    suffix = Trajectory(waypoints=traj.waypoints[step:])
    suffix_prior = Belief(mean=tracked.mean, cov=tracked.cov)
    suffix_cams = scenario.cameras.suffix(step)
    # The observation at `step` is already folded into the tracked belief.
    suffix_opt = replace(opt_config, initial_update=False)

    result = optimize(suffix, suffix_cams, scenario.noise, mask, suffix_prior, suffix_opt)
    return Trajectory(waypoints=traj.waypoints[:step] + result.trajectory.waypoints)


def view_metrics(traj: Trajectory, camera: CameraModel, cfg: NoiseConfig) -> tuple[float, float]:
    """Mean pixel distance from the image center and mean |depth - d*|."""
    pix = []
    depths = []
    for w in traj.waypoints:
        pix.append(float(np.linalg.norm(project(camera, w.position) - camera.image_center)))
        depths.append(abs(camera_depth(camera, w.position) - cfg.d_star))
    return float(np.mean(pix)), float(np.mean(depths))


def ml_belief_trace(traj: Trajectory, scenario: Scenario, initial_update: bool = True) -> BeliefTrace:
    """Maximum-likelihood propagation of a trajectory under the full model."""
    return propagate(traj, scenario.cameras, scenario.noise, _EVAL_MASK, scenario.prior,
                     initial_update=initial_update)
