"""Loss, gradients, and the trajectory optimizer."""

import numpy as np
import pytest

import trackopt
from trackopt import (
    AblationMask,
    Belief,
    OptimizerConfig,
    Pose,
    Trajectory,
    gradient,
    loss,
    make_baseline,
    ml_belief_trace,
    optimize,
    sample_scenario,
)
from trackopt.belief import BeliefStep, BeliefTrace


def scenario_for(seed):
    return sample_scenario(seed)


class TestLoss:
    def test_identical_final_waypoints_zero_pose_loss(self, simple_scenario):
        base = make_baseline(simple_scenario)
        waypoints = base.waypoints[:-1] + (base.waypoints[-2],)
        traj = Trajectory(waypoints=waypoints)
        bd = loss(traj, simple_scenario.cameras, simple_scenario.noise,
                  AblationMask.full(), simple_scenario.prior)
        assert bd.position_term == 0.0
        assert bd.orientation_term == 0.0
        assert bd.total == bd.trace_term

    def test_all_noise_masked_leaves_pose_loss_only(self, simple_scenario):
        base = make_baseline(simple_scenario)
        mask = AblationMask(use_depth=False, use_fov=False, use_orientation=False, use_pose_loss=True)
        bd = loss(base, simple_scenario.cameras, simple_scenario.noise, mask, simple_scenario.prior)
        assert bd.trace_term == pytest.approx(0.0, abs=1e-30)
        assert bd.total == bd.trace_term + bd.position_term + bd.orientation_term
        assert bd.position_term + bd.orientation_term > 0.0

    def test_trace_term_is_trace_of_final_covariance(self, simple_scenario, monkeypatch):
        import sys
        diag = np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0]) * 1e-3
        stub_belief = Belief(mean=np.zeros(6), cov=np.diag(diag))
        stub_step = BeliefStep(predicted=stub_belief, updated=stub_belief,
                               motion_noise=np.zeros((6, 6)), obs_noise=np.zeros((6, 6)),
                               gain=np.zeros((6, 6)))
        stub = BeliefTrace(prior=stub_belief, initial=stub_belief, initial_gain=None,
                           steps=(stub_step,))
        monkeypatch.setattr(sys.modules["trackopt.optimize"], "propagate", lambda *a, **k: stub)
        base = make_baseline(simple_scenario)
        bd = loss(base, simple_scenario.cameras, simple_scenario.noise,
                  AblationMask(use_pose_loss=False), simple_scenario.prior)
        assert bd.trace_term == pytest.approx(float(diag.sum()))

    def test_mask_disables_pose_loss(self, simple_scenario):
        base = make_baseline(simple_scenario)
        bd = loss(base, simple_scenario.cameras, simple_scenario.noise,
                  AblationMask(use_pose_loss=False), simple_scenario.prior)
        assert bd.position_term == 0.0
        assert bd.orientation_term == 0.0


class TestGradient:
    def test_endpoint_rows_are_zero(self, simple_scenario):
        base = make_baseline(simple_scenario)
        for mode in ("analytic", "fd"):
            g = gradient(base, simple_scenario.cameras, simple_scenario.noise,
                         AblationMask.full(), simple_scenario.prior, mode=mode)
            np.testing.assert_array_equal(g[0], np.zeros(6))
            np.testing.assert_array_equal(g[-1], np.zeros(6))

    @pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
    def test_analytic_matches_finite_differences(self, seed):
        scen = scenario_for(seed)
        base = make_baseline(scen)
        arr = base.as_array()
        arr[1:-1] += np.random.default_rng(seed).normal(0.0, 0.004, arr[1:-1].shape)
        traj = Trajectory.from_array(arr)
        ga = gradient(traj, scen.cameras, scen.noise, AblationMask.full(), scen.prior, mode="analytic")
        gf = gradient(traj, scen.cameras, scen.noise, AblationMask.full(), scen.prior, mode="fd")
        denom = max(float(np.max(np.abs(gf))), 1e-12)
        assert float(np.max(np.abs(ga - gf))) / denom <= 1e-4

    @pytest.mark.parametrize("mask", [
        AblationMask(use_depth=False),
        AblationMask(use_fov=False),
        AblationMask(use_orientation=False),
        AblationMask(use_pose_loss=False),
    ])
    def test_analytic_matches_fd_under_masks(self, mask):
        scen = scenario_for(17)
        base = make_baseline(scen)
        ga = gradient(base, scen.cameras, scen.noise, mask, scen.prior, mode="analytic")
        gf = gradient(base, scen.cameras, scen.noise, mask, scen.prior, mode="fd")
        denom = max(float(np.max(np.abs(gf))), 1e-12)
        assert float(np.max(np.abs(ga - gf))) / denom <= 1e-4

    def test_translation_equivariance(self):
        scen = scenario_for(23)
        base = make_baseline(scen)
        g1 = gradient(base, scen.cameras, scen.noise, AblationMask.full(), scen.prior, mode="analytic")

        offset = np.array([0.013, -0.007, 0.021])
        def shift_pose(p):
            return Pose(position=p.position + offset, orientation=p.orientation)

        cam = scen.cameras.camera_at(0)
        from dataclasses import replace
        cam2 = replace(cam, pose=shift_pose(cam.pose))
        scen2 = trackopt.make_scenario(
            start=shift_pose(scen.start), goal=shift_pose(scen.goal),
            cameras=cam2, horizon=scen.horizon, seed=scen.seed, noise=scen.noise,
        )
        traj2 = Trajectory(waypoints=tuple(shift_pose(w) for w in base.waypoints))
        g2 = gradient(traj2, scen2.cameras, scen2.noise, AblationMask.full(), scen2.prior, mode="analytic")
        np.testing.assert_allclose(g1, g2, atol=1e-10)

    def test_unknown_mode_rejected(self, simple_scenario):
        base = make_baseline(simple_scenario)
        with pytest.raises(ValueError):
            gradient(base, simple_scenario.cameras, simple_scenario.noise,
                     AblationMask.full(), simple_scenario.prior, mode="autodiff")


class TestOptimize:
    def test_endpoints_bit_identical(self):
        scen = scenario_for(31)
        base = make_baseline(scen)
        res = optimize(base, scen.cameras, scen.noise, AblationMask.full(), scen.prior, OptimizerConfig())
        assert np.array_equal(res.trajectory.start.position, base.start.position)
        assert np.array_equal(res.trajectory.start.orientation, base.start.orientation)
        assert np.array_equal(res.trajectory.goal.position, base.goal.position)
        assert np.array_equal(res.trajectory.goal.orientation, base.goal.orientation)

    def test_returned_loss_never_exceeds_initial(self):
        for seed in (41, 42, 43):
            scen = scenario_for(seed)
            base = make_baseline(scen)
            mask = AblationMask.full()
            res = optimize(base, scen.cameras, scen.noise, mask, scen.prior, OptimizerConfig())
            final = loss(res.trajectory, scen.cameras, scen.noise, mask, scen.prior).total
            initial = loss(base, scen.cameras, scen.noise, mask, scen.prior).total
            assert final <= initial + 1e-15

    def test_monotone_best_so_far(self):
        scen = scenario_for(44)
        base = make_baseline(scen)
        res = optimize(base, scen.cameras, scen.noise, AblationMask.full(), scen.prior, OptimizerConfig())
        best = np.inf
        mins = []
        for rec in res.history:
            best = min(best, rec.loss.total)
            mins.append(best)
        assert all(b2 <= b1 + 1e-15 for b1, b2 in zip(mins, mins[1:]))

    def test_deterministic(self):
        scen = scenario_for(45)
        base = make_baseline(scen)
        r1 = optimize(base, scen.cameras, scen.noise, AblationMask.full(), scen.prior, OptimizerConfig())
        r2 = optimize(base, scen.cameras, scen.noise, AblationMask.full(), scen.prior, OptimizerConfig())
        np.testing.assert_array_equal(r1.trajectory.as_array(), r2.trajectory.as_array())
        assert [h.loss.total for h in r1.history] == [h.loss.total for h in r2.history]

    def test_constant_loss_converges_immediately(self):
        # With every component masked the objective is identically zero.
        scen = scenario_for(46)
        base = make_baseline(scen)
        res = optimize(base, scen.cameras, scen.noise, AblationMask.none(), scen.prior, OptimizerConfig())
        assert res.status == "converged"
        np.testing.assert_allclose(res.trajectory.as_array(), base.as_array(), atol=1e-12)

    def test_history_bounded_by_max_iterations(self):
        scen = scenario_for(47)
        base = make_baseline(scen)
        opt = OptimizerConfig(max_iterations=5, inner_steps=4)
        res = optimize(base, scen.cameras, scen.noise, AblationMask.full(), scen.prior, opt)
        assert len(res.history) <= 6  # initial entry plus at most 5 iterations
        iterations = [h.iteration for h in res.history]
        assert iterations == sorted(iterations)

    def test_improves_over_baseline_on_suite(self):
        # Optimized maximum-likelihood trace should beat the straight-line
        # baseline on every scenario of a small suite.
        for seed in range(8):
            scen = scenario_for(100 + seed)
            base = make_baseline(scen)
            res = optimize(base, scen.cameras, scen.noise, AblationMask.full(), scen.prior, OptimizerConfig())
            tb = ml_belief_trace(base, scen).final.trace()
            to = ml_belief_trace(res.trajectory, scen).final.trace()
            assert to <= tb

    def test_horizon_one_returns_input(self, simple_scenario):
        traj = Trajectory(waypoints=(simple_scenario.start, simple_scenario.goal))
        res = optimize(traj, simple_scenario.cameras, simple_scenario.noise,
                       AblationMask.full(), simple_scenario.prior, OptimizerConfig())
        assert res.trajectory is traj
        assert res.status == "converged"

    def test_optimizer_config_validation(self):
        with pytest.raises(ValueError):
            OptimizerConfig(max_iterations=0)
        with pytest.raises(ValueError):
            OptimizerConfig(gradient_mode="newton")
        with pytest.raises(ValueError):
            OptimizerConfig(convergence_tol=0.0)
