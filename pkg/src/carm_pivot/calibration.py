"""C-arm pivot calibration.

The geometric pipeline decomposes the problem into plane, circle and line
fits on separately acquired trajectories:

1. x-axis sweeps give the torus normal ``n`` and a first center ``c_x``;
2. c-arm-axis sweeps give circle centers whose normal-constrained circle,
   together with ``c_x``, fixes the torus center ``c``;
3. the normal lines of the c-arm-axis circles pass through the x-circle, so
   their distance to ``c`` is the major radius;
4. the sweeps tagged -90/0/+90 degrees give the two in-plane C-arm axes and
   three known rotation centers, from which the sensor offset is averaged.

:func:`calibrate` wraps those steps in an inlier reselection loop driven by
each pose's distance to the fitted sensor torus.  :func:`solve_eq6` is the
direct nonlinear least-squares formulation, kept as a baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import erf

from .errors import (
    AmbiguousOrientation,
    DegenerateInput,
    InconsistentNormals,
    InsufficientData,
    NoConsensus,
    NoConvergence,
)
from .fitting import (
    Circle3D,
    RansacConfig,
    _plane_basis,
    fit_circle_3d_fixed_normal,
    fit_line_pair_orthogonal,
    orient_normal,
    point_line_distance,
    ransac_fit,
)
from .geometry import orthonormalize
from .observations import TrajectoryObservations

__all__ = [
    "CalibrationResult",
    "Diagnostics",
    "DirectFitSolution",
    "estimate_normal",
    "estimate_center",
    "estimate_major_radius",
    "estimate_orientation_offset",
    "calibrate",
    "sensor_torus_distance",
    "eq6_energy",
    "solve_eq6",
]

MAX_NORMAL_SPREAD_DEG = 30.0
MAX_REFINEMENT_ROUNDS = 10
RESELECT_SIGMAS = 3.0
# reselection stops once fewer than this fraction of poses change membership
MASK_CHANGE_TOL = 2e-3
MAD_TO_SIGMA = 1.482602218505602


@dataclass
class Diagnostics:
    inliers_required: int = 0
    inliers_detected: int = 0
    n_poses: int = 0
    mean_inlier_residual_mm: float = 0.0
    mean_all_residual_mm: float = 0.0
    residual_sigma_mm: float = 0.0
    rounds: int = 0
    c_circle_radius_mm: float = 0.0
    c_circle_axis_offset_mm: float = 0.0
    stage_residuals_mm: dict = field(default_factory=dict)
    pivot_locus: Circle3D | None = None


@dataclass
class CalibrationResult:
    """Torus pose and sensor calibration.

    ``offset`` is the C-arm rotation center in sensor coordinates, so
    ``pose.apply(offset)`` is the rotation center for any tracked sensor pose.
    ``orientation`` has the C-arm x, y and z axes (tracker frame) as columns;
    its first column equals ``normal``.
    """

    center: np.ndarray
    normal: np.ndarray
    major_radius: float
    offset: np.ndarray
    orientation: np.ndarray
    diagnostics: Diagnostics = field(default_factory=Diagnostics)

    def pivot_point(self, alpha):
        """Rotation center on the x-circle at x-axis angle ``alpha`` (radians)."""
        y, z = self.orientation[:, 1], self.orientation[:, 2]
        return self.center + self.major_radius * (np.cos(alpha) * z - np.sin(alpha) * y)


def _stage_seed(cfg, *keys):
    ss = np.random.SeedSequence([int(cfg.rng_seed), *keys])
    return int(ss.generate_state(1)[0])


def _set_circle(points, cfg, seed_keys):
    """RANSAC plane, then RANSAC circle inside that plane."""
    plane, _ = ransac_fit("plane", points, replace(cfg, rng_seed=_stage_seed(cfg, 1, *seed_keys)), min_inliers=3)
    circle, inliers = ransac_fit(
        "circle3d_fixed_normal",
        points,
        replace(cfg, rng_seed=_stage_seed(cfg, 2, *seed_keys)),
        normal=plane.normal,
        min_inliers=3,
    )
    return circle, inliers


def estimate_normal(x_sets, cfg=RansacConfig()):
    """Torus normal from the x-axis sweeps.

    Each set yields a circle whose normal is oriented along the acquisition
    order of the sets.  Sets whose circle radius is below ten inlier
    thresholds (or whose points are degenerate) carry no usable direction
    and are left out of the average.

    Returns
    -------
    n : ndarray
        Mean of the per-set normals, normalized.
    c_x : ndarray
        Mean of the per-set circle centers.
    per_set : list of Circle3D
        Per-set circles, ``None`` for skipped sets.
    oriented : bool
        False when the set order could not fix the sign of ``n``.
    """
    if len(x_sets) == 0:
        raise InsufficientData("no x-axis trajectory set; at least one is required")
    circles = []
    for j, s in enumerate(x_sets):
        try:
            circle, _ = _set_circle(s.positions, cfg, (0, j))
        except DegenerateInput:
            circle = None
        circles.append(circle)
    usable = [c for c in circles if c is not None and c.radius >= 10.0 * cfg.inlier_threshold]
    if not usable:
        usable = [c for c in circles if c is not None]
    if not usable:
        raise DegenerateInput("no x-axis trajectory set supports a circle fit")

    # flip every normal to agree with the largest circle, then fix the global sign
    ref = max(usable, key=lambda c: c.radius).normal
    normals = np.array([c.normal if c.normal @ ref >= 0 else -c.normal for c in usable])
    centers = np.array([c.center for c in circles if c is not None])
    oriented = False
    if len(centers) >= 2:
        k = np.arange(len(centers)) - (len(centers) - 1) / 2.0
        direction = k @ (centers - centers.mean(axis=0))
        if abs(direction @ ref) > cfg.inlier_threshold:
            if direction @ ref < 0:
                normals = -normals
            oriented = True

    cos_spread = normals @ normals.T
    if cos_spread.min() < np.cos(np.radians(MAX_NORMAL_SPREAD_DEG)):
        raise InconsistentNormals("x-axis set normals differ by more than 30 degrees")
    n = normals.mean(axis=0)
    n /= np.linalg.norm(n)
    per_set = [
        Circle3D(c.center, c.normal if c.normal @ n >= 0 else -c.normal, c.radius) if c is not None else None
        for c in circles
    ]
    return n, centers.mean(axis=0), per_set, oriented


def estimate_center(c_sets, n, c_x, cfg=RansacConfig()):
    """Torus center from the c-arm-axis sweeps and the x-axis center estimate.

    Returns ``(c, per_set_circles, degenerate)``.  ``degenerate`` is True when
    the c-circle centers collapse onto one point (zero major radius), in
    which case ``c`` comes from a sphere fit to all c-arm-axis positions.
    """
    if len(c_sets) < 3:
        raise InsufficientData(f"{len(c_sets)} c-arm-axis sets given; at least 3 are required")
    circles = []
    for j, s in enumerate(c_sets):
        circle, _ = _set_circle(s.positions, cfg, (1, j))
        try:
            normal = orient_normal(circle.normal, c_x - circle.center)
        except AmbiguousOrientation:
            normal = circle.normal
        circles.append(Circle3D(circle.center, normal, circle.radius))

    centers = np.array([c.center for c in circles])
    spread = np.linalg.norm(centers - centers.mean(axis=0), axis=1).max()
    if spread < 10.0 * cfg.inlier_threshold:
        points = np.concatenate([s.positions for s in c_sets])
        (center, _), _ = ransac_fit("sphere", points, replace(cfg, rng_seed=_stage_seed(cfg, 3)), min_inliers=4)
        return center, circles, True

    ring = fit_circle_3d_fixed_normal(centers, n)
    c_x_proj = c_x - ((c_x - ring.center) @ n) * n
    return 0.5 * (ring.center + c_x_proj), circles, False


def _pivot_feet(c, circles):
    """Closest point to ``c`` on each c-circle axis line."""
    return np.array([k.center + ((c - k.center) @ k.normal) * k.normal for k in circles])


def estimate_major_radius(c, per_set_circles):
    """Mean distance from ``c`` to the axis lines of the c-arm-axis circles."""
    return float(np.mean([point_line_distance(c, k.center, k.normal) for k in per_set_circles]))


def estimate_orientation_offset(tagged, tagged_circles, n, c, r_maj, normal_oriented=True):
    """C-arm axes and sensor offset from the sweeps at alpha = -90, 0, +90 degrees.

    Parameters
    ----------
    tagged : dict
        ``{-90.0: set, 0.0: set, 90.0: set}``.
    tagged_circles : dict
        Fitted c-circles of the same sets, keyed alike.
    normal_oriented : bool
        If False the sign of ``n`` is taken from the tagged sets instead.

    Returns
    -------
    R : ndarray
        Columns are the C-arm x (``n``), y and z axes.
    offset : ndarray
        Mean of ``T_i^-1(c_c)`` over all tagged poses.
    n : ndarray
        The normal, possibly flipped.
    """
    u, v = _plane_basis(n)

    def project(points):
        d = points - c
        return np.column_stack([d @ u, d @ v])

    def lift(d2):
        return d2[0] * u + d2[1] * v

    p0 = project(tagged[0.0].positions)
    pp = project(tagged[90.0].positions)
    pm = project(tagged[-90.0].positions)
    side = np.vstack([pp - pp.mean(axis=0), pm - pm.mean(axis=0)])
    dir_a, dir_b = fit_line_pair_orthogonal(p0 - p0.mean(axis=0), side)
    z_axis, y_axis = lift(dir_a), lift(dir_b)

    # directions from c to the rotation centers of the tagged sweeps
    feet = {tag: _pivot_feet(c, [k])[0] - c for tag, k in tagged_circles.items()}
    scale = max(r_maj, 1e-300)
    if normal_oriented:
        y_axis = np.cross(z_axis, n)
        score = z_axis @ feet[0.0] + y_axis @ (feet[-90.0] - feet[90.0])
        if abs(score) <= 1e-9 * scale:
            raise AmbiguousOrientation("tagged sweeps are radially degenerate; cannot orient the C-arm axes")
        if score < 0:
            z_axis, y_axis = -z_axis, -y_axis
    else:
        sz = z_axis @ feet[0.0]
        sy = y_axis @ (feet[-90.0] - feet[90.0])
        if abs(sz) <= 1e-9 * scale or abs(sy) <= 1e-9 * scale:
            raise AmbiguousOrientation("tagged sweeps are radially degenerate; cannot orient the C-arm axes")
        z_axis = z_axis if sz > 0 else -z_axis
        y_axis = y_axis if sy > 0 else -y_axis
        n = np.cross(y_axis, z_axis)

    R = orthonormalize(np.column_stack([n, y_axis, z_axis]))
    y_axis, z_axis = R[:, 1], R[:, 2]

    local = []
    for tag, s in tagged.items():
        a = np.radians(tag)
        pivot = c + r_maj * (np.cos(a) * z_axis - np.sin(a) * y_axis)
        local.append(np.einsum("nji,nj->ni", s.rotations, pivot - s.positions))
    offset = np.concatenate(local).mean(axis=0)
    return R, offset, R[:, 0].copy()


def sensor_torus_distance(points, center, normal, r_maj, b, t_y):
    """Distance from each point to the surface swept by the sensor.

    The surface is the revolution about ``normal`` of the profile curve
    ``(b sin(th), sqrt(t_y^2 + (b cos(th) + r_maj)^2))`` in (axial, radial)
    coordinates, where ``b`` is the c-circle radius and ``t_y`` the offset of
    the c-circle center from the x-circle along the c-arm-axis.
    """
    d = np.asarray(points, float) - center
    axial = d @ normal
    radial = np.sqrt(np.maximum((d**2).sum(axis=1) - axial**2, 0.0))

    def sqdist(th):
        ring = np.sqrt(t_y**2 + (b * np.cos(th) + r_maj) ** 2)
        return (b * np.sin(th) - axial[:, None]) ** 2 + (ring - radial[:, None]) ** 2

    # the profile bends sharply where it passes closest to the axis
    # (b cos(th) = -r_maj); sample densely there so each bracket is unimodal
    grid = [np.linspace(-np.pi, np.pi, 361)]
    if b > 0 and abs(r_maj) <= b:
        kink = np.arccos(-r_maj / b)
        width = min(np.radians(5.0), 20.0 * (abs(t_y) + 1e-3) / b + np.radians(0.5))
        local = np.linspace(-width, width, 201)
        grid += [kink + local, -kink + local]
    grid = np.unique(np.mod(np.concatenate(grid) + np.pi, 2 * np.pi) - np.pi)
    grid = np.concatenate([grid, [grid[0] + 2 * np.pi]])
    best = np.argmin(sqdist(grid[None, :-1]), axis=1)
    lo = np.where(best > 0, grid[best - 1], grid[-2] - 2 * np.pi)
    hi = grid[best + 1]
    ratio = (np.sqrt(5.0) - 1.0) / 2.0
    x1, x2 = hi - ratio * (hi - lo), lo + ratio * (hi - lo)
    f1, f2 = sqdist(x1[:, None])[:, 0], sqdist(x2[:, None])[:, 0]
    for _ in range(48):
        left = f1 < f2
        hi = np.where(left, x2, hi)
        lo = np.where(left, lo, x1)
        x_new = np.where(left, hi - ratio * (hi - lo), lo + ratio * (hi - lo))
        f_new = sqdist(x_new[:, None])[:, 0]
        x1, x2, f1, f2 = (
            np.where(left, x_new, x2),
            np.where(left, x1, x_new),
            np.where(left, f_new, f2),
            np.where(left, f1, f_new),
        )
    th = 0.5 * (lo + hi)
    return np.sqrt(sqdist(th[:, None])[:, 0])


def _pipeline(obs, cfg, round_index):
    cfg_round = replace(cfg, rng_seed=_stage_seed(cfg, 100 + round_index))
    tagged = obs.tagged_sets()
    n, c_x, x_circles, oriented = estimate_normal(obs.x_sets, cfg_round)
    c, c_circles, degenerate = estimate_center(obs.c_sets, n, c_x, cfg_round)
    r_maj = 0.0 if degenerate else estimate_major_radius(c, c_circles)
    circle_of = {id(s): k for s, k in zip(obs.c_sets, c_circles)}
    tagged_circles = {tag: circle_of[id(s)] for tag, s in tagged.items()}
    R, offset, n = estimate_orientation_offset(tagged, tagged_circles, n, c, r_maj, oriented)

    feet = _pivot_feet(c, c_circles)
    b = float(np.mean([k.radius for k in c_circles]))
    t_y = float(np.sqrt(np.mean(((np.array([k.center for k in c_circles]) - feet) ** 2).sum(axis=1))))
    stage = {
        "x_circle_center_spread": float(
            np.std([k.center @ n for k in x_circles if k is not None]) if x_circles else 0.0
        ),
        "major_radius_spread": 0.0
        if degenerate
        else float(np.std([point_line_distance(c, k.center, k.normal) for k in c_circles])),
        "c_circle_radius_spread": float(np.std([k.radius for k in c_circles])),
    }
    result = CalibrationResult(
        center=c,
        normal=n,
        major_radius=r_maj,
        offset=offset,
        orientation=R,
        diagnostics=Diagnostics(
            c_circle_radius_mm=b,
            c_circle_axis_offset_mm=t_y,
            stage_residuals_mm=stage,
            pivot_locus=Circle3D(c.copy(), n.copy(), r_maj),
        ),
    )
    return result


def _residuals(obs, result):
    d = result.diagnostics
    return sensor_torus_distance(
        obs.positions(), result.center, result.normal, result.major_radius, d.c_circle_radius_mm, d.c_circle_axis_offset_mm
    )


def _filter(obs, masks):
    def keep(s, mask):
        return s.subset(mask) if mask.sum() >= 3 else s

    x = tuple(keep(s, m) for s, m in zip(obs.x_sets, masks[: len(obs.x_sets)]))
    c = tuple(keep(s, m) for s, m in zip(obs.c_sets, masks[len(obs.x_sets) :]))
    return TrajectoryObservations(x, c)


def calibrate(obs, cfg=RansacConfig()):
    """Run the full calibration with inlier reselection.

    After each pass every pose is scored by its distance to the fitted
    sensor torus.  ``cfg.inlier_threshold`` is the width of the accepted
    band around the surface, so poses within half of it count as inliers.
    The pipeline reruns on the inliers until the inlier set settles (at most
    :data:`MASK_CHANGE_TOL` of the poses switch membership) or
    :data:`MAX_REFINEMENT_ROUNDS` passes have run.

    The number of inliers required is ``cfg.min_inlier_fraction`` of the
    count a Gaussian residual with the observed robust spread would put
    inside the band.

    Raises
    ------
    InsufficientData
        No x-axis set, or a missing tagged c-arm-axis set.
    NoConsensus
        Fewer inliers than required.
    """
    obs.tagged_sets()  # fail early on missing tags or x-axis sets
    if len(obs.c_sets) < 3:
        raise InsufficientData("at least three c-arm-axis sets are required")
    half_band = 0.5 * cfg.inlier_threshold
    sizes = [len(s) for s in obs.all_sets]
    split = np.cumsum(sizes)[:-1]

    current = obs
    mask = None
    rounds = 0
    for rounds in range(1, MAX_REFINEMENT_ROUNDS + 1):
        result = _pipeline(current, cfg, rounds - 1)
        dist = _residuals(obs, result)
        sigma = MAD_TO_SIGMA * float(np.median(dist))
        new_mask = dist < max(half_band, RESELECT_SIGMAS * sigma)
        if mask is not None and np.count_nonzero(mask != new_mask) <= MASK_CHANGE_TOL * len(dist):
            break
        mask = new_mask
        if mask.all():
            break
        current = _filter(obs, np.split(mask, split))

    inside = dist < half_band
    expected = 1.0 if sigma == 0.0 else float(erf(half_band / (sigma * np.sqrt(2.0))))
    required = int(np.ceil(cfg.min_inlier_fraction * len(dist) * expected))
    d = result.diagnostics
    d.inliers_required = required
    d.inliers_detected = int(inside.sum())
    d.n_poses = len(dist)
    d.mean_inlier_residual_mm = float(dist[inside].mean()) if inside.any() else float("nan")
    d.mean_all_residual_mm = float(dist.mean())
    d.residual_sigma_mm = sigma
    d.rounds = rounds
    if d.inliers_detected < required:
        raise NoConsensus(f"{d.inliers_detected} poses lie on the fitted sensor torus; {required} required")
    return result


# -- direct nonlinear baseline ----------------------------------------------


def _pose_arrays(poses):
    if isinstance(poses, tuple) and len(poses) == 2 and np.asarray(poses[0]).ndim == 3:
        return np.asarray(poses[0], float), np.asarray(poses[1], float)
    if hasattr(poses, "rotations"):
        return poses.rotations, poses.positions
    poses = list(poses)
    return np.array([p.rotation for p in poses]), np.array([p.translation for p in poses])


def eq6_energy(params, poses):
    """Circle-fitting residuals of the pivot points ``T_i(t)``.

    ``params`` is ``(c, n, r_maj, t)``.  For each pose two residuals are
    returned, interleaved: ``|T_i(t) - c| - r_maj`` and ``<T_i(t) - c, n>``.
    """
    c, n, r_maj, t = params
    rot, pos = _pose_arrays(poses)
    q = rot @ np.asarray(t, float) + pos
    d = q - np.asarray(c, float)
    return np.column_stack([np.linalg.norm(d, axis=1) - r_maj, d @ np.asarray(n, float)]).ravel()


@dataclass
class DirectFitSolution:
    center: np.ndarray
    normal: np.ndarray
    major_radius: float
    offset: np.ndarray
    cost: float
    iterations: int
    converged: bool
    cost_history: list


def _eq6_jacobian(c, n, t, rot, pos, e1, e2):
    d = rot @ t + pos - c
    rho = np.linalg.norm(d, axis=1)
    dhat = d / np.where(rho > 0, rho, 1.0)[:, None]
    N = len(d)
    J = np.zeros((2 * N, 9))
    # parameter order: c (3), normal tangent (2), r_maj (1), t (3)
    J[0::2, 0:3] = -dhat
    J[0::2, 5] = -1.0
    J[0::2, 6:9] = np.einsum("ni,nij->nj", dhat, rot)
    J[1::2, 0:3] = -n
    J[1::2, 3] = d @ e1
    J[1::2, 4] = d @ e2
    J[1::2, 6:9] = np.einsum("i,nij->nj", n, rot)
    return J


def solve_eq6(poses, initial, *, max_iterations=200, strict=False, fix_gauge=True):
    """Levenberg-Marquardt on :func:`eq6_energy` with ``|n| = 1`` enforced.

    The normal is updated in its local tangent plane and renormalized, so it
    has two degrees of freedom.  Stops when the relative cost decrease of an
    accepted step falls below 1e-12 or the step norm below 1e-10.

    Any pivot on the c-arm-axis line traces a circle under x-axis rotation,
    so the cost is flat along that line (the offset moves along the axis and
    ``r_maj`` grows accordingly); only ``c`` and ``n`` are fully determined.
    With ``fix_gauge`` the offset is held fixed along that axis.  Seen from
    the sensor, the c-arm-axis is the direction orthogonal to the x-axis in
    every pose, i.e. the least eigenvector of ``sum (R_i^T n)(R_i^T n)^T``.

    Returns an :class:`DirectFitSolution`; ``converged`` is False when the
    iteration cap was hit (``strict=True`` raises ``NoConvergence`` instead).
    """
    rot, pos = _pose_arrays(poses)
    c, n, r_maj, t = initial
    c = np.asarray(c, float).copy()
    n = np.asarray(n, float) / np.linalg.norm(n)
    r_maj = float(r_maj)
    t = np.asarray(t, float).copy()
    if fix_gauge:
        axes = np.einsum("nji,j->ni", rot, n)
        _, vecs = np.linalg.eigh(axes.T @ axes)
        t_basis = vecs[:, 1:]
    else:
        t_basis = np.eye(3)
    k = 6 + t_basis.shape[1]

    def cost_of(c, n, r, t):
        e = eq6_energy((c, n, r, t), (rot, pos))
        return 0.5 * float(e @ e), e

    cost, e = cost_of(c, n, r_maj, t)
    history = [cost]
    lam = 1e-3
    converged = cost == 0.0
    it = 0
    while not converged and it < max_iterations:
        it += 1
        e1, e2 = _plane_basis(n)
        J = _eq6_jacobian(c, n, t, rot, pos, e1, e2)
        J = np.column_stack([J[:, :6], J[:, 6:] @ t_basis])
        JtJ = J.T @ J
        g = J.T @ e
        diag = np.diag(JtJ).copy()
        diag[diag == 0] = 1.0
        accepted = False
        while lam < 1e16:
            step = np.linalg.solve(JtJ + lam * np.diag(diag), -g)
            nc = c + step[0:3]
            nn = n + step[3] * e1 + step[4] * e2
            nn /= np.linalg.norm(nn)
            nr = r_maj + step[5]
            nt = t + t_basis @ step[6:k]
            new_cost, new_e = cost_of(nc, nn, nr, nt)
            if new_cost < cost:
                accepted = True
                break
            lam *= 4.0
        if not accepted:
            converged = True
            break
        rel = (cost - new_cost) / cost
        c, n, r_maj, t, e = nc, nn, nr, nt, new_e
        cost = new_cost
        history.append(cost)
        lam = max(lam / 3.0, 1e-12)
        if rel < 1e-12 or np.linalg.norm(step) < 1e-10 or cost == 0.0:
            converged = True
    sol = DirectFitSolution(c, n, r_maj, t, cost, it, converged, history)
    if strict and not converged:
        raise NoConvergence(f"no convergence after {max_iterations} iterations", best=sol)
    return sol
