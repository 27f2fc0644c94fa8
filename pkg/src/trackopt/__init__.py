"""Uncertainty-aware trajectory optimization for visually tracked tools."""

from .belief import Belief, BeliefTrace, check_entropy_bound, entropy, FrozenNoise, predict, propagate, update
from .errors import (
    ConfigError,
    NonFiniteGradient,
    NonPositiveDefinite,
    NonPositiveDepth,
    RejectionLimit,
    SingularInnovation,
    TrackOptError,
    ZeroBaseline,
)
from .geometry import (
    CameraModel,
    CameraSchedule,
    Pose,
    angle_between,
    back_project,
    camera_depth,
    canonicalize_axis_angle,
    interpolate_orientation,
    project,
)
from .estimators import BeliefPropagator, TrajectoryOptimizer, check_waypoints
from .noise import AblationMask, NoiseConfig, motion_cov, obs_cov
from .optimize import (
    IterationRecord,
    LossBreakdown,
    OptimizeResult,
    OptimizerConfig,
    Trajectory,
    gradient,
    loss,
    optimize,
    worst_case_scale,
)
from .simulate import (
    AblationSuite,
    AblationTable,
    RolloutRow,
    Scenario,
    ScenarioBounds,
    VariantSpec,
    VARIANTS,
    default_camera,
    make_baseline,
    make_scenario,
    ml_belief_trace,
    relative_scale,
    reoptimize_on_camera_change,
    rollout_noisy,
    run_ablation,
    sample_scenario,
    view_metrics,
)

__all__ = [name for name in dir() if not name.startswith("_")]

__version__ = "0.1.0"
