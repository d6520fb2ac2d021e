"""Kinematic model of the C-arm and of a sensor rigidly attached to it.

Two rotations drive the motion: the orbital rotation about the c-arm-axis
(angle ``beta``, the *c-circle*) and the rotation about the x-axis (angle
``alpha``, the *x-circle*).  The c-circle center moves on the x-circle, so
the reachable set is a torus with major radius ``r_maj`` (x-circle radius)
and minor radius ``r_min`` (c-circle radius).  For typical mobile C-arms
``r_maj < r_min`` and the surface is a spindle torus.

Conventions
-----------
* All angles are radians.
* The torus local frame has its x-axis along the torus normal and the
  c-circle reference point ``(0, 0, r_min)`` at ``alpha = beta = 0``.
* The symbols written ``r`` / ``R`` in the sensor-torus formulas are the
  minor / major radius; the code always says ``r_min`` / ``r_maj``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegeneratePhase

__all__ = [
    "Pose",
    "TorusModel",
    "SensorOffset",
    "PhaseParams",
    "rot_x",
    "rot_y",
    "axis_angle",
    "orthonormalize",
    "torus_point",
    "torus_point_matrix",
    "sensor_point",
    "sensor_point_matrix",
    "phase_params",
    "sensor_point_phase",
    "pivot_point",
    "pose_of_sensor",
    "rotation_error_deg",
]


def rot_x(angle):
    """Rotation matrix about the x-axis. Broadcasts over ``angle``."""
    angle = np.asarray(angle, dtype=float)
    c, s = np.cos(angle), np.sin(angle)
    one, zero = np.ones_like(c), np.zeros_like(c)
    return np.stack(
        [
            np.stack([one, zero, zero], axis=-1),
            np.stack([zero, c, -s], axis=-1),
            np.stack([zero, s, c], axis=-1),
        ],
        axis=-2,
    )


def rot_y(angle):
    """Rotation matrix about the y-axis. Broadcasts over ``angle``."""
    angle = np.asarray(angle, dtype=float)
    c, s = np.cos(angle), np.sin(angle)
    one, zero = np.ones_like(c), np.zeros_like(c)
    return np.stack(
        [
            np.stack([c, zero, s], axis=-1),
            np.stack([zero, one, zero], axis=-1),
            np.stack([-s, zero, c], axis=-1),
        ],
        axis=-2,
    )


def axis_angle(axis, angle):
    """Rodrigues' formula: rotation by ``angle`` radians about ``axis``."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    K = np.array(
        [[0.0, -axis[2], axis[1]], [axis[2], 0.0, -axis[0]], [-axis[1], axis[0], 0.0]]
    )
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def orthonormalize(M):
    """Closest proper rotation to ``M`` (polar decomposition via SVD)."""
    U, _, Vt = np.linalg.svd(np.asarray(M, dtype=float))
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def _check_rotation(R, tol=1e-9):
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        raise ValueError("rotation must be a finite 3x3 matrix")
    if np.abs(R.T @ R - np.eye(3)).max() > tol or abs(np.linalg.det(R) - 1.0) > tol:
        raise ValueError("matrix is not a proper rotation")
    return R


@dataclass(frozen=True)
class Pose:
    """Rigid transform ``x -> rotation @ x + translation`` (translation in mm)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", _check_rotation(self.rotation))
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points):
        """Map points (shape ``(3,)`` or ``(N, 3)``) from local to parent frame."""
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation

    def inverse(self):
        return Pose(self.rotation.T, -self.rotation.T @ self.translation)

    def __matmul__(self, other):
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def as_matrix(self):
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T


@dataclass(frozen=True)
class SensorOffset:
    """Offset ``t`` of the sensor from the c-circle reference point ``(0, 0, r_min)``.

    Expressed in the C-arm frame at ``alpha = beta = 0``, in mm.
    """

    t_x: float = 0.0
    t_y: float = 0.0
    t_z: float = 0.0

    def __post_init__(self):
        if not np.all(np.isfinite(self.as_array())):
            raise ValueError("offset components must be finite")

    def as_array(self):
        return np.array([self.t_x, self.t_y, self.t_z], dtype=float)

    @classmethod
    def from_array(cls, t):
        t = np.asarray(t, dtype=float).reshape(3)
        return cls(float(t[0]), float(t[1]), float(t[2]))


@dataclass(frozen=True)
class TorusModel:
    """C-arm motion surface placed in the tracker frame.

    ``orientation`` holds the C-arm axes as columns; its first column is the
    torus normal (the x-axis of rotation).  ``center`` is the x-circle center.
    """

    center: np.ndarray
    orientation: np.ndarray
    major_radius: float
    minor_radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(3))
        object.__setattr__(self, "orientation", _check_rotation(self.orientation))
        if not self.minor_radius > 0:
            raise ValueError("minor_radius must be positive")
        if not self.major_radius >= 0:
            raise ValueError("major_radius must be non-negative")

    @property
    def normal(self):
        return self.orientation[:, 0].copy()

    @property
    def world_pose(self):
        return Pose(self.orientation, self.center)

    @classmethod
    def from_pose(cls, world_pose, minor_radius, major_radius):
        return cls(world_pose.translation, world_pose.rotation, major_radius, minor_radius)


@dataclass(frozen=True)
class PhaseParams:
    """Amplitude ``b`` and phase ``gamma`` of the sine form of the sensor torus."""

    b: float
    gamma: float
    t_y: float
    r_maj: float

    def delta(self, beta):
        """Phase of the x-circle component; depends on ``beta``."""
        k = self.b * np.cos(np.asarray(beta, dtype=float) + self.gamma) + self.r_maj
        return np.arctan2(k, self.t_y)


def torus_point(alpha, beta, r_min, r_maj):
    """Closed-form torus point; broadcasts over ``alpha`` and ``beta``."""
    alpha, beta = np.broadcast_arrays(np.asarray(alpha, float), np.asarray(beta, float))
    ring = r_min * np.cos(beta) + r_maj
    return np.stack([r_min * np.sin(beta), -ring * np.sin(alpha), ring * np.cos(alpha)], axis=-1)


def torus_point_matrix(alpha, beta, r_min, r_maj):
    """Torus point built from the two rotation matrices (reference form)."""
    Rx, Ry = rot_x(alpha), rot_y(beta)
    return Rx @ (Ry @ np.array([0.0, 0.0, r_min])) + Rx @ np.array([0.0, 0.0, r_maj])


def _offset_array(t):
    return t.as_array() if isinstance(t, SensorOffset) else np.asarray(t, float).reshape(3)


def sensor_point(alpha, beta, r_min, r_maj, t):
    """Sensor position in the torus frame for offset ``t``; broadcasts."""
    tx, ty, tz = _offset_array(t)
    alpha, beta = np.broadcast_arrays(np.asarray(alpha, float), np.asarray(beta, float))
    a = r_min + tz
    ring = a * np.cos(beta) - tx * np.sin(beta) + r_maj
    return np.stack(
        [
            a * np.sin(beta) + tx * np.cos(beta),
            ty * np.cos(alpha) - ring * np.sin(alpha),
            ty * np.sin(alpha) + ring * np.cos(alpha),
        ],
        axis=-1,
    )


def sensor_point_matrix(alpha, beta, r_min, r_maj, t):
    """Sensor position composed from explicit rotation matrices (reference form)."""
    tx, ty, tz = _offset_array(t)
    Rx, Ry = rot_x(alpha), rot_y(beta)
    return Rx @ (Ry @ np.array([tx, ty, r_min + tz])) + Rx @ np.array([0.0, 0.0, r_maj])


def phase_params(r_min, r_maj, t):
    tx, ty, tz = _offset_array(t)
    a = r_min + tz
    return PhaseParams(b=float(np.hypot(a, tx)), gamma=float(np.arctan2(tx, a)), t_y=float(ty), r_maj=float(r_maj))


def sensor_point_phase(alpha, beta, r_min, r_maj, t):
    """Sensor position from the amplitude/phase-shift form.

    Raises
    ------
    DegeneratePhase
        If ``t_y == 0`` and ``b cos(beta + gamma) + r_maj == 0`` for some sample,
        where the phase ``delta`` is undefined.
    """
    p = phase_params(r_min, r_maj, t)
    alpha, beta = np.broadcast_arrays(np.asarray(alpha, float), np.asarray(beta, float))
    k = p.b * np.cos(beta + p.gamma) + r_maj
    if np.any((k == 0.0) & (p.t_y == 0.0)):
        raise DegeneratePhase("phase delta undefined: t_y = 0 and b*cos(beta+gamma) + r_maj = 0")
    delta = np.arctan2(k, p.t_y)
    sin_d = np.sin(delta)
    # k * csc(delta) tends to |hypot(k, t_y)| as sin(delta) -> 0
    with np.errstate(divide="ignore", invalid="ignore"):
        amp = np.where(np.abs(sin_d) > 1e-12, k / sin_d, np.hypot(k, p.t_y))
    return np.stack(
        [p.b * np.sin(beta + p.gamma), amp * np.cos(alpha + delta), amp * np.sin(alpha + delta)],
        axis=-1,
    )


def pivot_point(alpha, model):
    """C-arm rotation center ``c_c(alpha)`` in the tracker frame."""
    local = rot_x(alpha) @ np.array([0.0, 0.0, model.major_radius])
    return model.world_pose.apply(local)


def pose_of_sensor(alpha, beta, model, t):
    """Full tracker pose of the sensor at C-arm angles ``(alpha, beta)``.

    Rotation is ``world @ Rx(alpha) @ Ry(beta)``; the translation is
    :func:`sensor_point` mapped through the torus world pose.
    """
    world = model.world_pose
    local = sensor_point(alpha, beta, model.minor_radius, model.major_radius, t)
    rotation = world.rotation @ rot_x(alpha) @ rot_y(beta)
    return Pose(rotation, world.apply(local))


def rotation_error_deg(R_sim, R_est):
    """Angle of ``R_sim @ R_est.T`` in degrees, in ``[0, 180]``.

    Equal to ``acos((tr - 1) / 2)``; evaluated with ``atan2`` on the
    symmetric and skew parts so small angles keep full precision.
    """
    D = np.asarray(R_sim, float) @ np.asarray(R_est, float).T
    cos_t = np.clip((np.trace(D) - 1.0) / 2.0, -1.0, 1.0)
    skew = np.array([D[2, 1] - D[1, 2], D[0, 2] - D[2, 0], D[1, 0] - D[0, 1]])
    sin_t = min(np.linalg.norm(skew) / 2.0, 1.0)
    return float(np.degrees(np.arctan2(sin_t, cos_t)))
