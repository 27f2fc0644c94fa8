"""Scenario/trajectory file formats and report writers.

All files are JSON or RFC-4180 CSV.  Parsing is strict: unknown keys are
rejected rather than silently defaulted, so a typo cannot quietly change
an experiment.  Floats serialize with 17 significant digits, which
round-trips double precision exactly and keeps reruns byte-identical.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .belief import Belief
from .errors import ConfigError
from .geometry import CameraModel, CameraSchedule, Pose
from .noise import NoiseConfig
from .optimize import Trajectory
from .simulate import Scenario, default_camera, default_o_star


def fmt_float(x) -> str:
    return format(float(x), ".17g")


def _num(value):
    """JSON-ready representation of a scalar or (nested) array."""
    if isinstance(value, np.ndarray):
        value = value.tolist()
    if isinstance(value, list):
        return [_num(v) for v in value]
    return float(value)


def _require_keys(obj: dict, allowed: set, context: str, required: set = frozenset()):
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {context}: {', '.join(sorted(unknown))}")
    missing = required - set(obj)
    if missing:
        raise ConfigError(f"missing key(s) in {context}: {', '.join(sorted(missing))}")


def _parse_vec3(value, context: str) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.shape != (3,):
        raise ConfigError(f"{context} must be a 3-vector")
    return arr


def _parse_pose(obj, context: str) -> Pose:
    if not isinstance(obj, dict):
        raise ConfigError(f"{context} must be an object with position/orientation")
    _require_keys(obj, {"position", "orientation"}, context, {"position", "orientation"})
    return Pose(position=_parse_vec3(obj["position"], f"{context}.position"),
                orientation=_parse_vec3(obj["orientation"], f"{context}.orientation"))


def _pose_dict(pose: Pose) -> dict:
    return {"position": _num(pose.position), "orientation": _num(pose.orientation)}


_CAMERA_KEYS = {"timestep", "position", "orientation", "fx", "fy", "cx", "cy", "width", "height"}


def _parse_camera(obj, context: str) -> tuple[int, CameraModel]:
    _require_keys(obj, _CAMERA_KEYS, context, {"fx", "fy", "cx", "cy"})
    base = default_camera()
    pose = Pose(
        position=_parse_vec3(obj.get("position", [0.0, 0.0, 0.0]), f"{context}.position"),
        orientation=_parse_vec3(obj.get("orientation", [0.0, 0.0, 0.0]), f"{context}.orientation"),
    )
    try:
        camera = CameraModel(
            pose=pose,
            fx=float(obj["fx"]),
            fy=float(obj["fy"]),
            cx=float(obj["cx"]),
            cy=float(obj["cy"]),
            width=float(obj.get("width", base.width)),
            height=float(obj.get("height", base.height)),
        )
    except ValueError as err:
        raise ConfigError(f"invalid camera in {context}: {err}")
    return int(obj.get("timestep", 0)), camera


def _camera_dict(timestep: int, camera: CameraModel) -> dict:
    return {
        "timestep": timestep,
        "position": _num(camera.pose.position),
        "orientation": _num(camera.pose.orientation),
        "fx": camera.fx,
        "fy": camera.fy,
        "cx": camera.cx,
        "cy": camera.cy,
        "width": camera.width,
        "height": camera.height,
    }


_NOISE_KEYS = {"w_pos0", "w_rot0", "v_depth0", "v_fov0", "v_orient0", "ideal_depth",
               "ideal_orientation", "fov_normalization"}


def _parse_noise(obj, goal: Pose, cameras: CameraSchedule, horizon: int) -> NoiseConfig:
    _require_keys(obj, _NOISE_KEYS, "noise")
    o_star = obj.get("ideal_orientation")
    if o_star is None:
        o_star = default_o_star(goal, cameras.camera_at(horizon))
    else:
        o_star = _parse_vec3(o_star, "noise.ideal_orientation")
    overrides = {}
    for key in ("w_pos0", "w_rot0", "v_depth0", "v_fov0", "v_orient0"):
        if key in obj:
            overrides[key] = np.asarray(obj[key], dtype=np.float64)
    if "ideal_depth" in obj:
        overrides["d_star"] = float(obj["ideal_depth"])
    if obj.get("fov_normalization") is not None:
        overrides["fov_normalization"] = float(obj["fov_normalization"])
    try:
        return NoiseConfig.defaults(o_star=o_star, **overrides)
    except ValueError as err:
        raise ConfigError(f"invalid noise config: {err}")


_SCENARIO_KEYS = {"start", "goal", "horizon", "seed", "prior_covariance", "cameras", "noise"}


def load_scenario(path) -> Scenario:
    """Read a scenario file, rejecting unknown keys."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"scenario file not found: {path}")
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise ConfigError(f"scenario file {path} is not valid JSON: {err}")
    if not isinstance(obj, dict):
        raise ConfigError(f"scenario file {path} must hold a JSON object")
    _require_keys(obj, _SCENARIO_KEYS, "scenario", {"start", "goal", "horizon"})

    start = _parse_pose(obj["start"], "start")
    goal = _parse_pose(obj["goal"], "goal")
    horizon = int(obj["horizon"])
    if horizon < 1:
        raise ConfigError("horizon must be >= 1")
    seed = int(obj.get("seed", 0))

    cam_list = obj.get("cameras")
    if cam_list is None:
        cameras = CameraSchedule.static(default_camera())
    else:
        if not isinstance(cam_list, list) or not cam_list:
            raise ConfigError("cameras must be a non-empty list")
        entries = [_parse_camera(c, f"cameras[{i}]") for i, c in enumerate(cam_list)]
        try:
            cameras = CameraSchedule(entries=tuple(entries))
        except ValueError as err:
            raise ConfigError(f"invalid camera schedule: {err}")

    noise = _parse_noise(obj.get("noise", {}), goal, cameras, horizon)

    prior = obj.get("prior_covariance", 1e-2)
    prior_cov = np.asarray(prior, dtype=np.float64)
    try:
        belief = Belief.from_pose(start, prior_cov)
        return Scenario(start=start, goal=goal, cameras=cameras, noise=noise,
                        prior=belief, horizon=horizon, seed=seed)
    except ValueError as err:
        raise ConfigError(f"invalid scenario: {err}")


def scenario_dict(scenario: Scenario) -> dict:
    return {
        "start": _pose_dict(scenario.start),
        "goal": _pose_dict(scenario.goal),
        "horizon": scenario.horizon,
        "seed": scenario.seed,
        "prior_covariance": _num(scenario.prior.cov),
        "cameras": [_camera_dict(t, cam) for t, cam in scenario.cameras.entries],
        "noise": {
            "w_pos0": _num(scenario.noise.w_pos0),
            "w_rot0": _num(scenario.noise.w_rot0),
            "v_depth0": _num(scenario.noise.v_depth0),
            "v_fov0": _num(scenario.noise.v_fov0),
            "v_orient0": _num(scenario.noise.v_orient0),
            "ideal_depth": scenario.noise.d_star,
            "ideal_orientation": _num(scenario.noise.o_star),
            "fov_normalization": scenario.noise.fov_normalization,
        },
    }


def save_scenario(scenario: Scenario, path) -> None:
    Path(path).write_text(dump_json(scenario_dict(scenario)))


def dump_json(obj) -> str:
    """Deterministic JSON text: sorted keys, exact float round-trip."""
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


_TRAJECTORY_KEYS = {"horizon", "waypoints", "cameras", "metadata"}


def save_trajectory(traj: Trajectory, path, cameras: CameraSchedule | None = None, metadata: dict | None = None) -> None:
    obj = {
        "horizon": traj.horizon,
        "waypoints": [_num(w.as_vector()) for w in traj.waypoints],
    }
    if cameras is not None:
        obj["cameras"] = [_camera_dict(t, cam) for t, cam in cameras.entries]
    if metadata is not None:
        obj["metadata"] = metadata
    Path(path).write_text(dump_json(obj))


def load_trajectory(path) -> Trajectory:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"trajectory file not found: {path}")
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise ConfigError(f"trajectory file {path} is not valid JSON: {err}")
    _require_keys(obj, _TRAJECTORY_KEYS, "trajectory", {"waypoints"})
    waypoints = np.asarray(obj["waypoints"], dtype=np.float64)
    if waypoints.ndim != 2 or waypoints.shape[1] != 6:
        raise ConfigError("trajectory waypoints must be a list of 6-vectors")
    traj = Trajectory.from_array(waypoints)
    if "horizon" in obj and int(obj["horizon"]) != traj.horizon:
        raise ConfigError("trajectory horizon does not match its waypoint count")
    return traj


def write_csv(path, fieldnames, rows) -> None:
    """RFC-4180 CSV with 17-significant-digit floats."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(fieldnames)
        for row in rows:
            writer.writerow([fmt_float(v) if isinstance(v, float) else v for v in row])


def write_history_csv(path, history) -> None:
    write_csv(
        path,
        ["iteration", "trace_term", "position_loss", "orientation_loss", "total", "gradient_norm"],
        [
            [rec.iteration, rec.loss.trace_term, rec.loss.position_term,
             rec.loss.orientation_term, rec.loss.total, rec.gradient_norm]
            for rec in history
        ],
    )
