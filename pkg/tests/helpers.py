"""Shared constructions for the test-suite (not fixtures)."""

from dataclasses import replace

import numpy as np

from carm_pivot.geometry import sensor_point
from carm_pivot.observations import TrajectoryObservations


def _grid_angles(scenario, s):
    """(alpha, beta) arrays in radians for every pose of a generated set."""
    if s.axis_kind == "c":
        alpha = np.full(len(scenario.c_betas), scenario.c_alphas[s.order_index])
        beta = np.array(scenario.c_betas)
    else:
        beta = np.full(len(scenario.x_alphas), float(s.set_id[1:]))
        alpha = np.array(scenario.x_alphas)
    return np.radians(alpha), np.radians(beta)


def surface_normals(scenario, s, h=1e-6):
    """Unit normals of the sensor torus at the poses of a generated set (tracker frame)."""
    a, b = _grid_angles(scenario, s)

    def g(a, b):
        return sensor_point(a, b, scenario.r_min, scenario.r_maj, scenario.offset)

    da = (g(a + h, b) - g(a - h, b)) / (2 * h)
    db = (g(a, b + h) - g(a, b - h)) / (2 * h)
    n = np.cross(da, db)
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    return n @ scenario.orientation.T


def two_shell(obs, scenario, offset_mm=1.5, seed=0):
    """Every pose pushed ``offset_mm`` off the surface, alternating sides at random."""
    rng = np.random.default_rng(seed)

    def shift(s):
        sign = rng.choice([-1.0, 1.0], size=len(s))
        return replace(s, positions=s.positions + offset_mm * sign[:, None] * surface_normals(scenario, s))

    return TrajectoryObservations(tuple(shift(s) for s in obs.x_sets), tuple(shift(s) for s in obs.c_sets))
