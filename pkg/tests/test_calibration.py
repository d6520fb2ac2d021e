from dataclasses import replace

import numpy as np
import pytest
from scipy.optimize import minimize

from carm_pivot.calibration import (
    calibrate,
    estimate_center,
    estimate_major_radius,
    estimate_normal,
    estimate_orientation_offset,
    eq6_energy,
    sensor_torus_distance,
    solve_eq6,
)
from carm_pivot.errors import DegenerateInput, InconsistentNormals, InsufficientData, NoConsensus, NoConvergence
from carm_pivot.fitting import Circle3D, RansacConfig
from carm_pivot.geometry import Pose, SensorOffset, phase_params, rotation_error_deg, sensor_point
from carm_pivot.observations import TrajectoryObservations, TrajectorySet
from carm_pivot.simulator import NoiseConfig, ScenarioConfig, add_noise, generate, random_scenario

from conftest import random_rotation
from helpers import two_shell

CFG = RansacConfig()


def errors(result, sc):
    return (
        float(np.linalg.norm(result.offset - sc.expected_offset())),
        rotation_error_deg(sc.orientation, result.orientation),
    )


@pytest.fixture(scope="module")
def identity_scenario():
    return ScenarioConfig(r_min=700.0, r_maj=300.0, offset=SensorOffset(40.0, -25.0, 60.0))


class TestSteps:
    def test_normal_identity_frame(self, identity_scenario):
        obs = generate(identity_scenario)
        n, c_x, per_set, oriented = estimate_normal(obs.x_sets, CFG)
        np.testing.assert_allclose(n, (1, 0, 0), atol=1e-9)
        np.testing.assert_allclose(c_x[1:], 0, atol=1e-9)
        assert oriented and len(per_set) == 9

    def test_normal_rotated_frame(self, scenario, clean_obs):
        n, _, _, _ = estimate_normal(clean_obs.x_sets, CFG)
        np.testing.assert_allclose(n, scenario.normal, atol=1e-9)

    def test_single_x_set(self, scenario, clean_obs):
        s = clean_obs.x_sets[2]
        n, _, per_set, _ = estimate_normal([s], CFG)
        assert abs(abs(n @ per_set[0].normal) - 1) < 1e-12
        assert abs(abs(n @ scenario.normal) - 1) < 1e-9

    def test_mislabeled_set_is_caught(self, clean_obs):
        c = clean_obs.c_sets[5]
        impostor = TrajectorySet("x", c.rotations, c.positions, order_index=99, set_id="bogus")
        with pytest.raises(InconsistentNormals):
            estimate_normal(list(clean_obs.x_sets) + [impostor], CFG)

    def test_center_and_major_radius(self, scenario, clean_obs):
        n, c_x, _, _ = estimate_normal(clean_obs.x_sets, CFG)
        c, circles, degenerate = estimate_center(clean_obs.c_sets, n, c_x, CFG)
        assert not degenerate
        np.testing.assert_allclose(c, scenario.center, atol=1e-9)
        assert estimate_major_radius(c, circles) == pytest.approx(scenario.r_maj, abs=1e-9)
        b = phase_params(scenario.r_min, scenario.r_maj, scenario.offset).b
        assert all(k.radius == pytest.approx(b, abs=1e-9) for k in circles)

    def test_major_radius_300(self, identity_scenario):
        obs = generate(identity_scenario)
        n, c_x, _, _ = estimate_normal(obs.x_sets, CFG)
        c, circles, _ = estimate_center(obs.c_sets, n, c_x, CFG)
        assert estimate_major_radius(c, circles) == pytest.approx(300.0, abs=1e-9)

    def test_zero_major_radius_is_sphere_branch(self):
        sc = ScenarioConfig(r_min=700.0, r_maj=0.0, offset=SensorOffset(20.0, 0.0, -30.0),
                            world_pose=Pose(np.eye(3), (5.0, 6.0, 7.0)))
        obs = generate(sc)
        n, c_x, _, _ = estimate_normal(obs.x_sets, CFG)
        c, circles, degenerate = estimate_center(obs.c_sets, n, c_x, CFG)
        assert degenerate
        np.testing.assert_allclose(c, sc.center, atol=1e-9)
        np.testing.assert_allclose(c, np.mean([k.center for k in circles], axis=0), atol=1e-9)

    def test_zero_major_radius_with_lateral_offset(self):
        sc = ScenarioConfig(r_min=700.0, r_maj=0.0, offset=SensorOffset(20.0, 80.0, -30.0))
        obs = generate(sc)
        n, c_x, _, _ = estimate_normal(obs.x_sets, CFG)
        c, circles, _ = estimate_center(obs.c_sets, n, c_x, CFG)
        assert estimate_major_radius(c, circles) == pytest.approx(0.0, abs=1e-9)

    def test_axis_lines_through_center_give_zero(self):
        circles = [Circle3D(np.array([0.0, 0, z]), np.array([0.0, 0, 1]), 5.0) for z in (1.0, 2.0, 3.0)]
        assert estimate_major_radius(np.zeros(3), circles) == 0.0

    def test_orientation_and_offset(self, scenario, clean_obs):
        n, c_x, _, oriented = estimate_normal(clean_obs.x_sets, CFG)
        c, circles, _ = estimate_center(clean_obs.c_sets, n, c_x, CFG)
        tagged = clean_obs.tagged_sets()
        circle_of = {s.set_id: k for s, k in zip(clean_obs.c_sets, circles)}
        R, offset, n2 = estimate_orientation_offset(
            tagged, {t: circle_of[s.set_id] for t, s in tagged.items()}, n, c, scenario.r_maj, oriented
        )
        assert rotation_error_deg(scenario.orientation, R) < 1e-9
        np.testing.assert_allclose(offset, scenario.expected_offset(), atol=1e-9)
        np.testing.assert_allclose(n2, scenario.normal, atol=1e-12)

    def test_zero_offset(self):
        sc = replace(random_scenario(4), offset=SensorOffset())
        result = calibrate(generate(sc), CFG)
        np.testing.assert_allclose(result.offset, (0, 0, -sc.r_min), atol=1e-9)


class TestCalibrate:
    def test_noise_free_exact(self, scenario, clean_result):
        t_err, r_err = errors(clean_result, scenario)
        assert t_err < 1e-9 and r_err < 1e-9
        d = clean_result.diagnostics
        assert d.inliers_detected == d.n_poses == 10080
        assert d.inliers_required == 8064
        np.testing.assert_allclose(clean_result.center, scenario.center, atol=1e-9)
        assert clean_result.major_radius == pytest.approx(scenario.r_maj, abs=1e-9)

    def test_result_invariants(self, clean_result):
        r = clean_result
        assert np.linalg.norm(r.normal) == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(r.orientation @ r.orientation.T, np.eye(3), atol=1e-12)
        np.testing.assert_array_equal(r.orientation[:, 0], r.normal)
        locus = r.diagnostics.pivot_locus
        np.testing.assert_array_equal(locus.center, r.center)
        assert locus.radius == r.major_radius

    def test_pivot_point_is_constant_in_sensor_frame(self, clean_obs, clean_result):
        s = clean_obs.tagged_sets()[90.0]
        pivot = clean_result.pivot_point(np.pi / 2)
        local = np.einsum("nji,nj->ni", s.rotations, pivot - s.positions)
        np.testing.assert_allclose(local, np.broadcast_to(clean_result.offset, local.shape), atol=1e-9)

    def test_frame_invariance(self, clean_obs, clean_result, rng):
        W = Pose(random_rotation(rng), rng.uniform(-2000, 2000, 3))
        moved = calibrate(clean_obs.transformed(W), CFG)
        np.testing.assert_allclose(moved.center, W.apply(clean_result.center), atol=1e-9)
        np.testing.assert_allclose(moved.normal, W.rotation @ clean_result.normal, atol=1e-12)
        assert rotation_error_deg(moved.orientation, W.rotation @ clean_result.orientation) < 1e-9
        np.testing.assert_allclose(moved.offset, clean_result.offset, atol=1e-9)
        assert moved.major_radius == pytest.approx(clean_result.major_radius, abs=1e-9)

    def test_rotations_do_not_affect_geometry(self, noisy_obs, rng):
        base = calibrate(noisy_obs, CFG)
        scrambled = noisy_obs.with_rotations(lambda s: np.array([random_rotation(rng) for _ in range(len(s))]))
        other = calibrate(scrambled, CFG)
        for name in ("center", "normal", "orientation"):
            assert np.array_equal(getattr(base, name), getattr(other, name))
        assert base.major_radius == other.major_radius
        assert not np.allclose(base.offset, other.offset)

    def test_deterministic(self, noisy_obs):
        a = calibrate(noisy_obs, RansacConfig(rng_seed=4))
        b = calibrate(noisy_obs, RansacConfig(rng_seed=4))
        assert np.array_equal(a.offset, b.offset) and np.array_equal(a.orientation, b.orientation)
        assert a.diagnostics.inliers_detected == b.diagnostics.inliers_detected

    def test_noisy_accuracy_and_diagnostics(self, scenario, noisy_obs):
        result = calibrate(noisy_obs, CFG)
        t_err, r_err = errors(result, scenario)
        assert t_err < 0.5 and r_err < 0.1
        d = result.diagnostics
        assert d.inliers_detected >= d.inliers_required
        assert 0.33 < d.inliers_detected / d.n_poses < 0.43
        assert d.mean_inlier_residual_mm < 0.5 <= d.mean_all_residual_mm

    def test_missing_tag(self, clean_obs):
        obs = TrajectoryObservations(clean_obs.x_sets, tuple(s for s in clean_obs.c_sets if s.alpha_tag != 90.0))
        with pytest.raises(InsufficientData, match=r"alpha=\+90"):
            calibrate(obs, CFG)

    def test_no_x_sets(self, clean_obs):
        with pytest.raises(InsufficientData):
            calibrate(TrajectoryObservations((), clean_obs.c_sets), CFG)

    def test_two_c_sets(self, clean_obs):
        tagged = tuple(s for s in clean_obs.c_sets if s.alpha_tag in (0.0, 90.0))
        with pytest.raises(InsufficientData):
            calibrate(TrajectoryObservations(clean_obs.x_sets, tagged), CFG)

    def test_no_consensus(self, scenario, clean_obs):
        with pytest.raises(NoConsensus):
            calibrate(two_shell(clean_obs, scenario), CFG)

    def test_short_set_rejected(self):
        with pytest.raises(DegenerateInput):
            TrajectorySet("c", np.tile(np.eye(3), (2, 1, 1)), np.zeros((2, 3)))

    @pytest.mark.parametrize("seed", [1, 2])
    def test_rotation_noise_only(self, seed):
        sc = random_scenario(seed)
        clean = calibrate(generate(sc), RansacConfig(rng_seed=seed))
        noisy = calibrate(add_noise(generate(sc), NoiseConfig(0.0, 0.5, seed)), RansacConfig(rng_seed=seed))
        assert np.array_equal(noisy.orientation, clean.orientation)
        assert errors(noisy, sc)[0] < 2.0


class TestSurfaceDistance:
    def test_matches_brute_force(self, rng):
        sc = random_scenario(8)
        p = phase_params(sc.r_min, sc.r_maj, sc.offset)

        def g(ab):
            return sc.world_pose.apply(sensor_point(ab[..., 0], ab[..., 1], sc.r_min, sc.r_maj, sc.offset))

        grid = np.stack(np.meshgrid(np.linspace(-np.pi, np.pi, 361), np.linspace(-np.pi, np.pi, 361)), axis=-1)
        grid = grid.reshape(-1, 2)
        surface = g(grid)
        queries = g(rng.uniform(-np.pi, np.pi, (40, 2))) + rng.normal(scale=8.0, size=(40, 3))
        ours = sensor_torus_distance(queries, sc.center, sc.normal, sc.r_maj, p.b, p.t_y)
        for q, d in zip(queries, ours):
            start = grid[np.argmin(np.linalg.norm(surface - q, axis=1))]
            res = minimize(lambda ab: np.linalg.norm(g(ab) - q), start, method="Nelder-Mead",
                           options={"xatol": 1e-12, "fatol": 1e-12, "maxiter": 4000})
            assert d == pytest.approx(res.fun, abs=1e-6)

    def test_zero_on_surface(self, scenario, clean_obs):
        p = phase_params(scenario.r_min, scenario.r_maj, scenario.offset)
        d = sensor_torus_distance(clean_obs.positions(), scenario.center, scenario.normal, scenario.r_maj, p.b, p.t_y)
        assert d.max() < 1e-9


def _x_poses(obs):
    return (
        np.concatenate([s.rotations for s in obs.x_sets]),
        np.concatenate([s.positions for s in obs.x_sets]),
    )


@pytest.fixture(scope="module")
def truth(scenario):
    return scenario.center, scenario.normal, scenario.r_maj, scenario.expected_offset()


class TestDirectBaseline:
    def test_energy_vanishes_at_truth(self, clean_obs, truth):
        assert np.abs(eq6_energy(truth, _x_poses(clean_obs))).max() < 1e-9

    def test_energy_is_flat_along_the_gauge(self, scenario, clean_obs, truth):
        c, n, r_maj, t = truth
        s = 25.0
        # slide the pivot along the c-arm-axis seen from the sensor, the radius follows
        t_moved = t + s * np.array([0.0, 1.0, 0.0])
        e = eq6_energy((c, n, np.hypot(r_maj, s), t_moved), _x_poses(clean_obs))
        assert np.abs(e).max() < 1e-9

    def test_truth_is_a_fixed_point(self, clean_obs, truth):
        sol = solve_eq6(_x_poses(clean_obs), truth)
        assert sol.converged and sol.cost < 1e-18
        np.testing.assert_allclose(sol.center, truth[0], atol=1e-9)

    def test_recovers_from_displaced_center(self, scenario, clean_obs, truth):
        c, n, r_maj, t = truth
        sol = solve_eq6(_x_poses(clean_obs), (c + np.array([30.0, -40.0, 0.0]), n, r_maj, t))
        assert sol.converged
        assert np.linalg.norm(sol.center - c) < 1e-6
        assert abs(sol.major_radius - r_maj) < 1e-6
        assert np.all(np.diff(sol.cost_history) <= 0)

    def test_monotone_from_geometric_init(self, noisy_obs):
        r = calibrate(noisy_obs, CFG)
        sol = solve_eq6(_x_poses(noisy_obs), (r.center, r.normal, r.major_radius, r.offset))
        assert sol.converged
        assert np.all(np.diff(sol.cost_history) <= 0)

    def test_strict_raises_with_best(self, clean_obs, truth):
        c, n, r_maj, t = truth
        start = (c + 50.0, n, r_maj, t)
        with pytest.raises(NoConvergence) as info:
            solve_eq6(_x_poses(clean_obs), start, max_iterations=1, strict=True)
        best = info.value.best
        assert best.iterations == 1 and best.cost < best.cost_history[0]

    def test_accepts_pose_lists(self, clean_obs, truth):
        poses = clean_obs.x_sets[0].poses + clean_obs.x_sets[-1].poses
        assert eq6_energy(truth, poses).shape == (2 * len(poses),)
