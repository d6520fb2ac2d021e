"""Geometric fitting primitives and a RANSAC wrapper around them.

Every fitter takes an ``(N, d)`` array-like of points and raises
:class:`~carm_pivot.errors.DegenerateInput` when the points do not pin the
model down.  Circle and sphere fits are algebraic (Kasa) least squares on
centered, scaled coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AmbiguousOrientation, DegenerateInput, NoConsensus

__all__ = [
    "Plane",
    "Circle3D",
    "RansacConfig",
    "fit_plane",
    "fit_circle_2d",
    "fit_circle_3d",
    "fit_circle_3d_fixed_normal",
    "orient_normal",
    "fit_line_pair_orthogonal",
    "fit_sphere",
    "point_line_distance",
    "model_distances",
    "ransac_fit",
    "MINIMAL_SAMPLE",
]

MINIMAL_SAMPLE = {"plane": 3, "circle3d": 3, "circle3d_fixed_normal": 3, "sphere": 4}


@dataclass(frozen=True)
class Plane:
    point: np.ndarray
    normal: np.ndarray

    def distance(self, points):
        return np.abs((np.asarray(points, float) - self.point) @ self.normal)


@dataclass(frozen=True)
class Circle3D:
    center: np.ndarray
    normal: np.ndarray
    radius: float

    def distance(self, points):
        """Euclidean distance from each point to the circle curve."""
        d = np.asarray(points, float) - self.center
        axial = d @ self.normal
        radial = np.linalg.norm(d - np.outer(axial, self.normal), axis=1)
        return np.hypot(axial, radial - self.radius)

    def in_plane_distance(self, points):
        """Distance to the circle after projecting points onto its plane."""
        d = np.asarray(points, float) - self.center
        axial = d @ self.normal
        radial = np.sqrt(np.maximum((d**2).sum(axis=1) - axial**2, 0.0))
        return np.abs(radial - self.radius)


@dataclass(frozen=True)
class RansacConfig:
    """RANSAC settings.

    ``min_inlier_fraction`` is the share of the input that must support the
    final model; ``inlier_threshold`` is in mm.
    """

    iterations: int = 500
    inlier_threshold: float = 1.0
    min_inlier_fraction: float = 0.8
    rng_seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not self.inlier_threshold > 0:
            raise ValueError("inlier_threshold must be positive")
        if not 0 < self.min_inlier_fraction <= 1:
            raise ValueError("min_inlier_fraction must be in (0, 1]")


def _as_points(points, dim, minimum):
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != dim:
        raise DegenerateInput(f"expected an (N, {dim}) array of points, got shape {pts.shape}")
    if len(pts) < minimum:
        raise DegenerateInput(f"need at least {minimum} points, got {len(pts)}")
    if not np.all(np.isfinite(pts)):
        raise DegenerateInput("points must be finite")
    return pts


def _plane_basis(normal):
    """Two unit vectors completing ``normal`` to a right-handed frame."""
    helper = np.eye(3)[np.argmin(np.abs(normal))]
    u = np.cross(normal, helper)
    u /= np.linalg.norm(u)
    return u, np.cross(normal, u)


def fit_plane(points):
    """Total least squares plane through the centroid.

    The normal is the eigenvector of the smallest eigenvalue of the
    scatter matrix.
    """
    pts = _as_points(points, 3, 3)
    centroid = pts.mean(axis=0)
    d = pts - centroid
    evals, evecs = np.linalg.eigh(d.T @ d)
    scale = max(evals[2], np.finfo(float).tiny)
    if evals[1] <= 1e-20 * scale or evals[2] == 0.0:
        raise DegenerateInput("points are collinear or coincident")
    if evals[1] - evals[0] <= 1e-9 * scale:
        raise DegenerateInput("plane normal is ambiguous (isotropic scatter)")
    return Plane(centroid, evecs[:, 0].copy())


def fit_circle_2d(points):
    """Algebraic circle fit on ``x^2 + y^2 + D x + E y + F = 0``.

    Returns ``(center, radius)``.
    """
    pts = _as_points(points, 2, 3)
    mean = pts.mean(axis=0)
    d = pts - mean
    scale = np.sqrt((d**2).sum(axis=1).mean())
    if scale == 0.0:
        raise DegenerateInput("points are coincident")
    d = d / scale
    A = np.column_stack([d, np.ones(len(d))])
    rhs = -(d**2).sum(axis=1)
    sv = np.linalg.svd(A, compute_uv=False)
    if sv[-1] <= 1e-10 * sv[0]:
        raise DegenerateInput("points are collinear")
    (D, E, F), *_ = np.linalg.lstsq(A, rhs, rcond=None)
    center = np.array([-D / 2.0, -E / 2.0])
    r2 = center @ center - F
    if not r2 > 0:
        raise DegenerateInput("circle fit produced a non-positive radius")
    return center * scale + mean, float(np.sqrt(r2) * scale)


def _circle_in_plane(pts, origin, normal):
    u, v = _plane_basis(normal)
    d = pts - origin
    center2, radius = fit_circle_2d(np.column_stack([d @ u, d @ v]))
    return Circle3D(origin + center2[0] * u + center2[1] * v, normal, radius)


def fit_circle_3d(points):
    """Plane fit, then 2D circle fit inside the plane.

    The sign of the returned normal is arbitrary; see :func:`orient_normal`.
    """
    pts = _as_points(points, 3, 3)
    plane = fit_plane(pts)
    return _circle_in_plane(pts, plane.point, plane.normal)


def fit_circle_3d_fixed_normal(points, normal):
    """Circle fit with a prescribed normal; the plane passes through the centroid."""
    pts = _as_points(points, 3, 3)
    n = np.asarray(normal, dtype=float).reshape(3)
    n = n / np.linalg.norm(n)
    return _circle_in_plane(pts, pts.mean(axis=0), n)


def orient_normal(n, reference_direction, tol=1e-12):
    """Return ``n`` or ``-n``, whichever points along ``reference_direction``."""
    n = np.asarray(n, dtype=float)
    ref = np.asarray(reference_direction, dtype=float)
    norm = np.linalg.norm(ref)
    if norm == 0.0:
        raise ValueError("reference_direction must be nonzero")
    dot = n @ ref / norm
    if abs(dot) < tol:
        raise AmbiguousOrientation("normal is perpendicular to the reference direction")
    return n if dot > 0 else -n


def fit_line_pair_orthogonal(points_a, points_b):
    """Fit two mutually orthogonal 2D lines, each through its own set's centroid.

    The shared orientation minimizes the summed squared perpendicular
    residuals of both sets.  With scatter matrices ``S_a`` and ``S_b`` the
    cost is ``tr(S_a) + d^T (S_b - S_a) d`` for the direction ``d`` of line a,
    so ``d`` is the leading eigenvector of ``S_a - S_b``.

    Returns ``(dir_a, dir_b)``; ``dir_b`` is ``dir_a`` rotated by +90 degrees.
    """
    a = _as_points(points_a, 2, 2)
    b = _as_points(points_b, 2, 2)
    da, db = a - a.mean(axis=0), b - b.mean(axis=0)
    if not np.any(da) or not np.any(db):
        raise DegenerateInput("a line set consists of a single repeated point")
    evals, evecs = np.linalg.eigh(da.T @ da - db.T @ db)
    if evals[1] - evals[0] <= 1e-12 * max(abs(evals).max(), 1e-300):
        raise DegenerateInput("line directions are not determined by the data")
    dir_a = evecs[:, 1]
    return dir_a, np.array([-dir_a[1], dir_a[0]])


def fit_sphere(points):
    """Algebraic least squares sphere. Returns ``(center, radius)``."""
    pts = _as_points(points, 3, 4)
    mean = pts.mean(axis=0)
    d = pts - mean
    scale = np.sqrt((d**2).sum(axis=1).mean())
    if scale == 0.0:
        raise DegenerateInput("points are coincident")
    d = d / scale
    A = np.column_stack([2.0 * d, np.ones(len(d))])
    sv = np.linalg.svd(A, compute_uv=False)
    if sv[-1] <= 1e-10 * sv[0]:
        raise DegenerateInput("points are coplanar")
    sol, *_ = np.linalg.lstsq(A, (d**2).sum(axis=1), rcond=None)
    center = sol[:3]
    r2 = sol[3] + center @ center
    return center * scale + mean, float(np.sqrt(r2) * scale)


def point_line_distance(p, line_point, line_dir):
    """Perpendicular distance from ``p`` to the line through ``line_point`` along unit ``line_dir``."""
    d = np.asarray(p, float) - np.asarray(line_point, float)
    u = np.asarray(line_dir, float)
    return float(np.linalg.norm(d - (d @ u) * u))


def model_distances(kind, model, points):
    """Geometric distance of each point to a fitted model."""
    pts = np.asarray(points, float)
    if kind == "plane":
        return model.distance(pts)
    if kind == "circle3d":
        return model.distance(pts)
    if kind == "circle3d_fixed_normal":
        return model.in_plane_distance(pts)
    if kind == "sphere":
        center, radius = model
        return np.abs(np.linalg.norm(pts - center, axis=1) - radius)
    raise ValueError(f"unknown model kind {kind!r}")


# -- batched minimal solvers -------------------------------------------------
# Each returns per-hypothesis arrays plus a validity mask; shapes are (H, ...).


def _circumcircle(p0, p1, p2):
    a, b = p0 - p2, p1 - p2
    axb = np.cross(a, b)
    axb2 = (axb**2).sum(axis=1)
    la, lb = (a**2).sum(axis=1), (b**2).sum(axis=1)
    valid = axb2 > (1e-18 * la * lb)
    denom = np.where(valid, 2.0 * axb2, 1.0)
    center = p2 + np.cross(la[:, None] * b - lb[:, None] * a, axb) / denom[:, None]
    normal = axb / np.sqrt(np.where(valid, axb2, 1.0))[:, None]
    radius = np.linalg.norm(center - p0, axis=1)
    return center, normal, radius, valid


def _hypothesis_distances(kind, pts, samples, normal):
    s = pts[samples]  # (H, k, 3)
    if kind == "plane":
        p0, p1, p2 = s[:, 0], s[:, 1], s[:, 2]
        nrm = np.cross(p1 - p0, p2 - p0)
        n2 = (nrm**2).sum(axis=1)
        scale = ((p1 - p0) ** 2).sum(axis=1) * ((p2 - p0) ** 2).sum(axis=1)
        valid = n2 > 1e-18 * scale
        nrm = nrm / np.sqrt(np.where(valid, n2, 1.0))[:, None]
        dist = np.abs(np.einsum("hnk,hk->hn", pts[None] - p0[:, None], nrm))
        return dist, valid
    if kind in ("circle3d", "circle3d_fixed_normal"):
        if kind == "circle3d_fixed_normal":
            offset = (s @ normal).mean(axis=1)
            flat = s - (s @ normal)[..., None] * normal
            center, _, radius, valid = _circumcircle(flat[:, 0], flat[:, 1], flat[:, 2])
            center = center + offset[:, None] * normal
            nrm = np.broadcast_to(normal, center.shape)
        else:
            center, nrm, radius, valid = _circumcircle(s[:, 0], s[:, 1], s[:, 2])
        d = pts[None] - center[:, None]
        axial = np.einsum("hnk,hk->hn", d, nrm)
        radial = np.sqrt(np.maximum((d**2).sum(axis=2) - axial**2, 0.0))
        if kind == "circle3d_fixed_normal":
            # the plane offset is not part of the model; score in-plane only
            return np.abs(radial - radius[:, None]), valid
        return np.hypot(axial, radial - radius[:, None]), valid
    if kind == "sphere":
        p0 = s[:, 0]
        A = 2.0 * (s[:, 1:] - p0[:, None])
        rhs = (s[:, 1:] ** 2).sum(axis=2) - (p0**2).sum(axis=1)[:, None]
        det = np.linalg.det(A)
        scale = np.prod(np.linalg.norm(A, axis=2), axis=1)
        valid = np.abs(det) > 1e-12 * scale
        A = np.where(valid[:, None, None], A, np.eye(3))
        center = np.linalg.solve(A, rhs[..., None])[..., 0]
        radius = np.linalg.norm(center - p0, axis=1)
        dist = np.abs(np.linalg.norm(pts[None] - center[:, None], axis=2) - radius[:, None])
        return dist, valid
    raise ValueError(f"unknown model kind {kind!r}")


def _refit(kind, pts, normal):
    if kind == "plane":
        return fit_plane(pts)
    if kind == "circle3d":
        return fit_circle_3d(pts)
    if kind == "circle3d_fixed_normal":
        return fit_circle_3d_fixed_normal(pts, normal)
    return fit_sphere(pts)


def _draw_samples(rng, n, k, iterations):
    keys = rng.random((iterations, n))
    return np.argpartition(keys, k - 1, axis=1)[:, :k]


def ransac_fit(kind, points, config, *, normal=None, min_inliers=None):
    """Robust fit of ``kind`` in ``{"plane", "circle3d", "circle3d_fixed_normal", "sphere"}``.

    Hypotheses come from minimal samples drawn without replacement; the one
    with the most points closer than ``config.inlier_threshold`` wins (ties go
    to the smaller summed inlier distance) and the model is refit by least
    squares on its inliers.  Degenerate samples use up an iteration.

    Parameters
    ----------
    normal : array_like, optional
        Required for ``"circle3d_fixed_normal"``.
    min_inliers : int, optional
        Overrides the consensus requirement
        ``max(minimal sample, min_inlier_fraction * N)``.

    Returns
    -------
    model, inlier_indices
    """
    if kind not in MINIMAL_SAMPLE:
        raise ValueError(f"unknown model kind {kind!r}")
    k = MINIMAL_SAMPLE[kind]
    pts = _as_points(points, 3, k)
    if kind == "circle3d_fixed_normal":
        if normal is None:
            raise ValueError("circle3d_fixed_normal needs a normal")
        normal = np.asarray(normal, float) / np.linalg.norm(normal)

    rng = np.random.default_rng(config.rng_seed)
    samples = _draw_samples(rng, len(pts), k, config.iterations)
    counts = np.zeros(len(samples), dtype=int)
    cost = np.zeros(len(samples))
    valid = np.zeros(len(samples), dtype=bool)
    chunk = max(1, 200_000 // len(pts))
    for start in range(0, len(samples), chunk):
        sl = slice(start, start + chunk)
        dist, ok = _hypothesis_distances(kind, pts, samples[sl], normal)
        mask = (dist < config.inlier_threshold) & ok[:, None]
        counts[sl] = mask.sum(axis=1)
        cost[sl] = np.where(mask, dist, 0.0).sum(axis=1)
        valid[sl] = ok
    if not valid.any():
        raise DegenerateInput("every minimal sample was degenerate")
    best = np.lexsort((cost, -counts))[0]

    required = min_inliers
    if required is None:
        required = int(np.ceil(config.min_inlier_fraction * len(pts)))
    required = max(k, required)
    dist, _ = _hypothesis_distances(kind, pts, samples[best : best + 1], normal)
    inliers = np.flatnonzero(dist[0] < config.inlier_threshold)
    if len(inliers) < required:
        raise NoConsensus(f"best {kind} hypothesis has {len(inliers)} inliers, {required} required")
    return _refit(kind, pts[inliers], normal), inliers
