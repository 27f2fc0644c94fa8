"""Command-line entry point.

Subcommands: optimize, rollout, ablation, propagate, gradcheck.  All
outputs are deterministic files (JSON + RFC-4180 CSV) carrying the
resolved configuration and seed; reruns with identical inputs are
byte-identical.

Exit codes: 0 success, 2 configuration error, 3 optimization or ablation
failure, 4 gradient mismatch.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import fileio
from .belief import propagate
from .errors import ConfigError, TrackOptError
from .noise import AblationMask
from .optimize import OptimizerConfig, gradient, optimize, worst_case_scale
from .simulate import (
    AblationSuite,
    ScenarioBounds,
    make_baseline,
    rollout_noisy,
    run_ablation,
    sample_scenario,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FAILURE = 3
EXIT_GRADIENT = 4

_FULL_MASK = AblationMask.full()


def _add_common(parser: argparse.ArgumentParser, scenario_required: bool = True) -> None:
    parser.add_argument("--scenario", type=Path, required=scenario_required, help="scenario JSON file")
    parser.add_argument("--out", type=Path, required=True, help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="RNG seed (overrides the scenario's)")
    parser.add_argument("--grad-mode", choices=("analytic", "fd"), default="analytic")
    parser.add_argument("--max-iterations", type=int, default=50)
    parser.add_argument("--inner-steps", type=int, default=20)
    parser.add_argument("--worst-case-factor", type=float, default=1.0)
    parser.add_argument(
        "--disable",
        action="append",
        choices=("depth", "fov", "orientation", "pose-loss"),
        default=[],
        help="noise/loss components to drop from the optimization objective",
    )


def _mask_from_args(args) -> AblationMask:
    return AblationMask(
        use_depth="depth" not in args.disable,
        use_fov="fov" not in args.disable,
        use_orientation="orientation" not in args.disable,
        use_pose_loss="pose-loss" not in args.disable,
    )


def _opt_config(args) -> OptimizerConfig:
    return OptimizerConfig(
        max_iterations=args.max_iterations,
        inner_steps=args.inner_steps,
        gradient_mode=args.grad_mode,
    )


def _resolved_config(args, scenario) -> dict:
    return {
        "command": args.command,
        "seed": args.seed if args.seed is not None else scenario.seed if scenario else 0,
        "grad_mode": args.grad_mode,
        "max_iterations": args.max_iterations,
        "inner_steps": args.inner_steps,
        "worst_case_factor": args.worst_case_factor,
        "disabled_components": sorted(args.disable),
        "scenario": fileio.scenario_dict(scenario) if scenario else None,
    }


def _prepare_out(args, scenario) -> tuple[Path, dict]:
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    config = _resolved_config(args, scenario)
    (out / "config.json").write_text(fileio.dump_json(config))
    return out, config


def cmd_optimize(args) -> int:
    scenario = fileio.load_scenario(args.scenario)
    out, config = _prepare_out(args, scenario)
    mask = _mask_from_args(args)
    opt = _opt_config(args)
    noise = scenario.noise
    if args.worst_case_factor != 1.0:
        noise = worst_case_scale(noise, args.worst_case_factor)

    baseline = make_baseline(scenario)
    before = propagate(baseline, scenario.cameras, scenario.noise, _FULL_MASK, scenario.prior)
    try:
        result = optimize(baseline, scenario.cameras, noise, mask, scenario.prior, opt)
    except (TrackOptError, ValueError) as err:
        print(f"optimization failed: {err}", file=sys.stderr)
        return EXIT_FAILURE
    after = propagate(result.trajectory, scenario.cameras, scenario.noise, _FULL_MASK, scenario.prior)

    fileio.save_trajectory(
        result.trajectory,
        out / "trajectory.json",
        cameras=scenario.cameras,
        metadata={"status": result.status, "config": config},
    )
    fileio.write_history_csv(out / "history.csv", result.history)
    (out / "trace_before.json").write_text(fileio.dump_json({"config": config, **before.to_dict()}))
    (out / "trace_after.json").write_text(fileio.dump_json({"config": config, **after.to_dict()}))
    print(f"optimize: status={result.status} total_loss={result.history[-1].loss.total:.6g}")
    return EXIT_OK


def cmd_propagate(args) -> int:
    scenario = fileio.load_scenario(args.scenario)
    out, config = _prepare_out(args, scenario)
    traj = fileio.load_trajectory(args.trajectory) if args.trajectory else make_baseline(scenario)
    trace = propagate(traj, scenario.cameras, scenario.noise, _FULL_MASK, scenario.prior)
    (out / "trace.json").write_text(fileio.dump_json({"config": config, **trace.to_dict()}))
    summary = trace.to_dict()
    print(f"propagate: final_trace={summary['final_trace']:.6g}")
    return EXIT_OK


def cmd_rollout(args) -> int:
    scenario = fileio.load_scenario(args.scenario)
    out, config = _prepare_out(args, scenario)
    traj = fileio.load_trajectory(args.trajectory) if args.trajectory else make_baseline(scenario)
    seed = args.seed if args.seed is not None else scenario.seed

    rows = []
    for j in range(args.rollouts):
        rng = np.random.default_rng(np.random.SeedSequence((seed, 0, j)))
        r = rollout_noisy(traj, scenario, rng)
        rows.append([j, r.position_error, r.orientation_error, r.trace, r.entropy, r.dropout_steps])
    fileio.write_csv(
        out / "rollouts.csv",
        ["trial", "position_error", "orientation_error", "trace", "entropy", "dropout_steps"],
        rows,
    )
    pos = [r[1] for r in rows]
    ori = [r[2] for r in rows]
    summary = {
        "config": config,
        "n_rollouts": args.rollouts,
        "seed": seed,
        "position_error_mean": float(np.mean(pos)),
        "position_error_std": float(np.std(pos)),
        "orientation_error_mean": float(np.mean(ori)),
        "orientation_error_std": float(np.std(ori)),
        "trace_mean": float(np.mean([r[3] for r in rows])),
    }
    (out / "rollout_summary.json").write_text(fileio.dump_json(summary))
    print(f"rollout: n={args.rollouts} position_error_mean={summary['position_error_mean']:.6g}")
    return EXIT_OK


def cmd_ablation(args) -> int:
    try:
        suite = AblationSuite.from_names(args.variants.split(",")) if args.variants else AblationSuite.default()
    except KeyError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    out, config = _prepare_out(args, None)
    seed = args.seed if args.seed is not None else 0
    bounds = ScenarioBounds(horizon=args.horizon) if args.horizon else ScenarioBounds()

    table = run_ablation(
        n_scenarios=args.scenarios,
        n_rollouts=args.rollouts,
        suite=suite,
        opt_config=_opt_config(args),
        seed=seed,
        bounds=bounds,
        worst_case_factor=args.worst_case_factor,
        parallel=args.parallel,
    )

    (out / "ablation.json").write_text(fileio.dump_json({"config": config, **table.to_dict()}))
    metric_keys = list(next(iter(table.relative.values())).keys())
    ablation_rows = []
    for name in table.raw:
        ablation_rows.append([name, "raw"] + [table.raw[name][k] for k in metric_keys])
        ablation_rows.append([name, "relative"] + [table.relative[name][k] for k in metric_keys])
    fileio.write_csv(out / "ablation.csv", ["variant", "kind"] + metric_keys, ablation_rows)
    fileio.write_csv(
        out / "trials.csv",
        ["scenario", "variant", "trial", "position_error", "orientation_error", "trace", "entropy", "dropout_steps"],
        [[t["scenario"], t["variant"], t["trial"], t["position_error"], t["orientation_error"],
          t["trace"], t["entropy"], t["dropout_steps"]] for t in table.trials],
    )
    fileio.write_csv(
        out / "curves.csv",
        ["scenario", "variant", "step", "trace", "entropy", "x", "y", "z", "pixel_u", "pixel_v"],
        [[c["scenario"], c["variant"], c["step"], c["trace"], c["entropy"],
          c["x"], c["y"], c["z"], c["pixel_u"], c["pixel_v"]] for c in table.curves],
    )

    failure_rate = len(table.failures) / args.scenarios
    print(f"ablation: scenarios_used={table.n_scenarios} failures={len(table.failures)}")
    for name, rel in table.relative.items():
        print(f"  {name}: relative trace_ml={rel['trace_ml']:.4f} position_mean={rel['position_mean']:.4f}")
    if failure_rate > 0.10:
        print(f"ablation failed: {failure_rate:.0%} of scenarios failed", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    scenario = fileio.load_scenario(args.scenario)
    out, config = _prepare_out(args, scenario)
    mask = _mask_from_args(args)
    traj = fileio.load_trajectory(args.trajectory) if args.trajectory else make_baseline(scenario)

    analytic = gradient(traj, scenario.cameras, scenario.noise, mask, scenario.prior, mode="analytic")
    fd = gradient(traj, scenario.cameras, scenario.noise, mask, scenario.prior, mode="fd", fd_step=1e-6)
    if args.corrupt_gradient:
        analytic = analytic + 1e-2
    denom = max(float(np.max(np.abs(fd))), 1e-12)
    rel_err = float(np.max(np.abs(analytic - fd))) / denom
    (out / "gradcheck.json").write_text(
        fileio.dump_json({"config": config, "max_relative_error": rel_err, "tolerance": 1e-4})
    )
    print(f"gradcheck: max relative error {rel_err:.3e}")
    return EXIT_OK if rel_err <= 1e-4 else EXIT_GRADIENT


def cmd_sample(args) -> int:
    out, _ = _prepare_out(args, None)
    seed = args.seed if args.seed is not None else 0
    bounds = ScenarioBounds(horizon=args.horizon) if args.horizon else ScenarioBounds()
    scenario = sample_scenario(seed, bounds)
    fileio.save_scenario(scenario, out / "scenario.json")
    print(f"sample: wrote scenario with seed {scenario.seed}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trackopt",
                                     description="Uncertainty-aware trajectory optimization for tracked tools")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("optimize", help="optimize a scenario's baseline trajectory")
    _add_common(p)

    p = sub.add_parser("propagate", help="propagate the belief along a trajectory")
    _add_common(p)
    p.add_argument("--trajectory", type=Path, default=None, help="trajectory JSON (default: baseline)")

    p = sub.add_parser("rollout", help="run noisy Monte Carlo rollouts")
    _add_common(p)
    p.add_argument("--trajectory", type=Path, default=None, help="trajectory JSON (default: baseline)")
    p.add_argument("--rollouts", type=int, default=50)

    p = sub.add_parser("ablation", help="run the ablation study over sampled scenarios")
    _add_common(p, scenario_required=False)
    p.add_argument("--scenarios", type=int, default=20)
    p.add_argument("--rollouts", type=int, default=20)
    p.add_argument("--variants", type=str, default=None,
                   help="comma-separated variant names (default: the full suite)")
    p.add_argument("--parallel", type=int, default=1)
    p.add_argument("--horizon", type=int, default=None)

    p = sub.add_parser("gradcheck", help="compare analytic and finite-difference gradients")
    _add_common(p)
    p.add_argument("--trajectory", type=Path, default=None, help="trajectory JSON (default: baseline)")
    p.add_argument("--corrupt-gradient", action="store_true", help=argparse.SUPPRESS)

    p = sub.add_parser("sample", help="sample a random scenario file")
    _add_common(p, scenario_required=False)
    p.add_argument("--horizon", type=int, default=None)

    return parser


_COMMANDS = {
    "optimize": cmd_optimize,
    "propagate": cmd_propagate,
    "rollout": cmd_rollout,
    "ablation": cmd_ablation,
    "gradcheck": cmd_gradcheck,
    "sample": cmd_sample,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except TrackOptError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
