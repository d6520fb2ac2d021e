import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from carm_pivot.errors import DegeneratePhase
from carm_pivot.fitting import fit_circle_3d
from carm_pivot.geometry import (
    Pose,
    SensorOffset,
    TorusModel,
    axis_angle,
    orthonormalize,
    phase_params,
    pivot_point,
    pose_of_sensor,
    rot_x,
    rot_y,
    rotation_error_deg,
    sensor_point,
    sensor_point_matrix,
    sensor_point_phase,
    torus_point,
    torus_point_matrix,
)

from conftest import random_rotation

angles = st.floats(-2 * np.pi, 2 * np.pi, allow_nan=False)


def _random_inputs(rng, n):
    alpha = rng.uniform(-np.pi, np.pi, n)
    beta = rng.uniform(-np.pi, np.pi, n)
    t = rng.uniform(-200, 200, (n, 3))
    r_min = rng.uniform(600, 800, n)
    r_maj = rng.uniform(0, 400, n)
    return alpha, beta, t, r_min, r_maj


class TestTorusPoint:
    @pytest.mark.parametrize(
        "alpha, beta, expected",
        [(0.0, 0.0, (0, 0, 1000)), (np.pi / 2, 0.0, (0, -1000, 0))],
    )
    def test_closed_form_values(self, alpha, beta, expected):
        np.testing.assert_allclose(torus_point(alpha, beta, 700, 300), expected, atol=1e-9)

    def test_matches_two_rotation_construction(self, rng):
        alpha, beta, _, r_min, r_maj = _random_inputs(rng, 2000)
        for a, b, rm, rM in zip(alpha, beta, r_min, r_maj):
            np.testing.assert_allclose(torus_point(a, b, rm, rM), torus_point_matrix(a, b, rm, rM), rtol=0, atol=1e-12)

    @given(angles, angles)
    def test_sphere_when_major_radius_is_zero(self, a, b):
        assert np.linalg.norm(torus_point(a, b, 650.0, 0.0)) == pytest.approx(650.0, abs=1e-9)

    def test_broadcasting(self):
        pts = torus_point(np.zeros((4, 1)), np.linspace(0, 1, 5), 700, 300)
        assert pts.shape == (4, 5, 3)


class TestSensorPoint:
    def test_direct_substitution(self):
        np.testing.assert_allclose(sensor_point(0, 0, 700, 300, SensorOffset(10, 20, 30)), (10, 20, 1030))

    def test_zero_offset_equals_torus(self, rng):
        alpha, beta, _, _, _ = _random_inputs(rng, 100)
        np.testing.assert_array_almost_equal(
            sensor_point(alpha, beta, 700, 300, (0, 0, 0)), torus_point(alpha, beta, 700, 300), decimal=12
        )

    def test_matches_matrix_oracle(self, rng):
        alpha, beta, t, r_min, r_maj = _random_inputs(rng, 500)
        for args in zip(alpha, beta, r_min, r_maj, t):
            np.testing.assert_allclose(sensor_point(*args), sensor_point_matrix(*args), rtol=0, atol=1e-9)

    def test_phase_form_agrees(self, rng):
        alpha, beta, t, r_min, r_maj = _random_inputs(rng, 1000)
        for args in zip(alpha, beta, r_min, r_maj, t):
            np.testing.assert_allclose(sensor_point_phase(*args), sensor_point(*args), rtol=0, atol=1e-9)

    def test_phase_params_without_offset(self):
        p = phase_params(700, 300, (0, 0, 0))
        assert p.b == 700 and p.gamma == 0

    def test_phase_x_component_with_only_t_y(self, rng):
        beta = rng.uniform(-np.pi, np.pi, 50)
        g = sensor_point_phase(0.3, beta, 700, 300, (0, 15, 0))
        np.testing.assert_allclose(g[:, 0], 700 * np.sin(beta), atol=1e-9)

    def test_phase_degenerate_case_is_flagged(self):
        # b cos(beta) + r_maj = 0 at beta = pi with b = r_maj
        with pytest.raises(DegeneratePhase):
            sensor_point_phase(0.1, np.pi, 300, 300, (0, 0, 0))

    @pytest.mark.parametrize("t_y", [5.0, -5.0])
    def test_phase_limit_when_sine_of_delta_vanishes(self, t_y):
        # b cos(beta) + r_maj = 0 at beta = pi makes sin(delta) = 0
        args = (0.4, np.pi, 300, 300, (0, t_y, 0))
        np.testing.assert_allclose(sensor_point_phase(*args), sensor_point(*args), atol=1e-9)

    def test_c_circle_axis_touches_x_circle(self):
        """For fixed alpha the sensor circle's axis passes through c_c tangent to the x-circle."""
        model = TorusModel(np.zeros(3), np.eye(3), 250.0, 700.0)
        t = SensorOffset(30, -40, 50)
        for alpha in (-1.2, 0.0, 0.7):
            pts = sensor_point(alpha, np.linspace(0, 2 * np.pi, 60, endpoint=False), 700, 250, t)
            circle = fit_circle_3d(pts)
            cc = pivot_point(alpha, model)
            d = cc - circle.center
            assert np.linalg.norm(d - (d @ circle.normal) * circle.normal) < 1e-9
            tangent = rot_x(alpha) @ np.array([0.0, 1.0, 0.0])
            assert abs(abs(circle.normal @ tangent) - 1.0) < 1e-12


class TestPose:
    def test_rejects_non_rotation(self):
        with pytest.raises(ValueError):
            Pose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))
        with pytest.raises(ValueError):
            Pose(2 * np.eye(3), np.zeros(3))

    def test_inverse_and_composition(self, rng):
        a = Pose(random_rotation(rng), rng.normal(size=3))
        b = Pose(random_rotation(rng), rng.normal(size=3))
        np.testing.assert_allclose((a @ a.inverse()).as_matrix(), np.eye(4), atol=1e-12)
        p = rng.normal(size=(5, 3))
        np.testing.assert_allclose((a @ b).apply(p), a.apply(b.apply(p)), atol=1e-12)

    def test_pose_of_sensor_at_origin(self):
        model = TorusModel(np.zeros(3), np.eye(3), 300.0, 700.0)
        pose = pose_of_sensor(0.0, 0.0, model, SensorOffset())
        np.testing.assert_allclose(pose.translation, (0, 0, 1000))
        np.testing.assert_allclose(pose.rotation, np.eye(3))
        np.testing.assert_allclose(pose.inverse().apply(pose.translation), 0, atol=1e-12)

    def test_rotation_center_is_fixed_in_sensor_frame(self, rng):
        model = TorusModel(rng.normal(size=3) * 100, random_rotation(rng), 180.0, 720.0)
        t = SensorOffset(12, -70, 33)
        for alpha in rng.uniform(-np.pi, np.pi, 4):
            cc = pivot_point(alpha, model)
            local = np.array([pose_of_sensor(alpha, b, model, t).inverse().apply(cc) for b in np.linspace(0, 6, 25)])
            np.testing.assert_allclose(local, np.broadcast_to(-np.array([12, -70, 720 + 33]), local.shape), atol=1e-9)


class TestRotationError:
    def test_identity(self, rng):
        R = random_rotation(rng)
        assert rotation_error_deg(R, R) == pytest.approx(0.0, abs=1e-6)

    @pytest.mark.parametrize("angle_deg", [10.0, 0.5, 1e-4, 90.0, 179.0, 180.0])
    def test_axis_angle_oracle(self, rng, angle_deg):
        R = random_rotation(rng)
        Q = R @ axis_angle(rng.normal(size=3), np.radians(angle_deg))
        assert rotation_error_deg(R, Q) == pytest.approx(angle_deg, abs=1e-9)

    def test_symmetric(self, rng):
        R, Q = random_rotation(rng), random_rotation(rng)
        assert rotation_error_deg(R, Q) == pytest.approx(rotation_error_deg(Q, R), abs=1e-12)

    @settings(max_examples=50)
    @given(st.floats(0.0, 180.0), st.integers(0, 2**31))
    def test_range(self, angle, seed):
        r = np.random.default_rng(seed)
        err = rotation_error_deg(np.eye(3), axis_angle(r.normal(size=3), np.radians(angle)))
        assert 0.0 <= err <= 180.0
        assert err == pytest.approx(angle, abs=1e-7)


def test_rot_matrices_are_rotations(rng):
    for a in rng.uniform(-7, 7, 10):
        for R in (rot_x(a), rot_y(a)):
            np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-12)
            assert np.linalg.det(R) == pytest.approx(1.0)


def test_orthonormalize_returns_nearest_rotation(rng):
    R = random_rotation(rng)
    noisy = R + 1e-4 * rng.normal(size=(3, 3))
    Q = orthonormalize(noisy)
    np.testing.assert_allclose(Q @ Q.T, np.eye(3), atol=1e-12)
    assert rotation_error_deg(R, Q) < 0.05
