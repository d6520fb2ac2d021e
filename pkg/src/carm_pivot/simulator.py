"""Synthetic C-arm sensor trajectories with known ground truth."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import DegenerateInput
from .geometry import Pose, SensorOffset, TorusModel, rot_x, rot_y, sensor_point
from .observations import REQUIRED_TAGS, TrajectoryObservations, TrajectorySet

__all__ = [
    "ScenarioConfig",
    "NoiseConfig",
    "generate",
    "add_noise",
    "random_scenario",
    "decimate",
    "select_sets",
    "DEFAULT_C_ALPHAS",
    "DEFAULT_C_BETAS",
    "DEFAULT_X_ALPHAS",
    "DEFAULT_X_BETAS",
]

DEFAULT_C_ALPHAS = tuple(float(a) for a in range(-90, 91, 10))
DEFAULT_C_BETAS = tuple(float(b) for b in range(0, 360))
DEFAULT_X_ALPHAS = tuple(float(a) for a in range(0, 360))
DEFAULT_X_BETAS = tuple(float(b) for b in range(0, 161, 20))


@dataclass(frozen=True)
class ScenarioConfig:
    """Ground truth for one simulated acquisition.

    Angles in the sweep grids are degrees; lengths are mm.  ``world_pose``
    places the torus (center and C-arm axes) in the tracker frame.
    """

    r_min: float = 700.0
    r_maj: float = 300.0
    world_pose: Pose = field(default_factory=Pose.identity)
    offset: SensorOffset = field(default_factory=SensorOffset)
    c_alphas: tuple = DEFAULT_C_ALPHAS
    c_betas: tuple = DEFAULT_C_BETAS
    x_alphas: tuple = DEFAULT_X_ALPHAS
    x_betas: tuple = DEFAULT_X_BETAS

    def __post_init__(self):
        if not self.r_min > 0:
            raise ValueError("r_min must be positive")
        if not self.r_maj >= 0:
            raise ValueError("r_maj must be non-negative")
        for name in ("c_alphas", "c_betas", "x_alphas", "x_betas"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))

    @property
    def n_poses(self):
        return len(self.c_alphas) * len(self.c_betas) + len(self.x_alphas) * len(self.x_betas)

    @property
    def torus(self):
        return TorusModel.from_pose(self.world_pose, self.r_min, self.r_maj)

    @property
    def orientation(self):
        return self.world_pose.rotation

    @property
    def center(self):
        return self.world_pose.translation

    @property
    def normal(self):
        return self.world_pose.rotation[:, 0].copy()

    def expected_offset(self):
        """Rotation center expressed in the sensor frame, as calibration reports it.

        The sensor sits at ``(t_x, t_y, r_min + t_z)`` from the rotation
        center in the rotating C-arm frame, so the center is at minus that.
        """
        t = self.offset.as_array()
        return -np.array([t[0], t[1], self.r_min + t[2]])

    def to_dict(self):
        return {
            "r_min": self.r_min,
            "r_maj": self.r_maj,
            "world_rotation": self.world_pose.rotation.tolist(),
            "world_translation": self.world_pose.translation.tolist(),
            "offset": self.offset.as_array().tolist(),
            "c_alphas_deg": list(self.c_alphas),
            "c_betas_deg": list(self.c_betas),
            "x_alphas_deg": list(self.x_alphas),
            "x_betas_deg": list(self.x_betas),
            "expected_offset_mm": self.expected_offset().tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        kwargs = {}
        if "r_min" in d:
            kwargs["r_min"] = float(d["r_min"])
        if "r_maj" in d:
            kwargs["r_maj"] = float(d["r_maj"])
        if "world_rotation" in d or "world_translation" in d:
            R = np.asarray(d.get("world_rotation", np.eye(3)), dtype=float).reshape(3, 3)
            kwargs["world_pose"] = Pose(R, d.get("world_translation", [0.0, 0.0, 0.0]))
        if "offset" in d:
            kwargs["offset"] = SensorOffset.from_array(d["offset"])
        for key, name in (
            ("c_alphas_deg", "c_alphas"),
            ("c_betas_deg", "c_betas"),
            ("x_alphas_deg", "x_alphas"),
            ("x_betas_deg", "x_betas"),
        ):
            if key in d:
                kwargs[name] = tuple(d[key])
        return cls(**kwargs)


@dataclass(frozen=True)
class NoiseConfig:
    """Zero-mean Gaussian pose noise: per-axis translation (mm) and Euler angles (deg)."""

    sigma_translation: float = 0.0
    sigma_rotation: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.sigma_translation < 0 or self.sigma_rotation < 0:
            raise ValueError("noise standard deviations must be non-negative")


def _sweep(cfg, alpha_deg, beta_deg):
    alpha, beta = np.broadcast_arrays(np.radians(alpha_deg), np.radians(beta_deg))
    world = cfg.world_pose
    local = sensor_point(alpha, beta, cfg.r_min, cfg.r_maj, cfg.offset)
    rotations = world.rotation @ rot_x(alpha) @ rot_y(beta)
    return rotations, world.apply(local)


def generate(cfg):
    """Noise-free poses for every sweep in ``cfg``.

    One c-arm-axis set per entry of ``cfg.c_alphas`` (tagged when the angle is
    -90, 0 or +90 degrees) and one x-axis set per entry of ``cfg.x_betas``.
    The x-axis sets are ordered along the physical +x axis of the C-arm, as
    an operator would acquire them.
    """
    c_sets = []
    for i, alpha in enumerate(cfg.c_alphas):
        rot, pos = _sweep(cfg, alpha, np.asarray(cfg.c_betas))
        tag = alpha if any(np.isclose(alpha, t) for t in REQUIRED_TAGS) else None
        c_sets.append(TrajectorySet("c", rot, pos, alpha_tag=tag, order_index=i, set_id=f"c{alpha:+g}"))

    x_sets = []
    for beta in cfg.x_betas:
        rot, pos = _sweep(cfg, np.asarray(cfg.x_alphas), beta)
        x_sets.append((rot, pos, beta))
    # position along the torus axis is independent of alpha
    axial = [sensor_point(0.0, np.radians(b), cfg.r_min, cfg.r_maj, cfg.offset)[0] for _, _, b in x_sets]
    order = np.argsort(axial, kind="stable")
    x_sets = [
        TrajectorySet("x", x_sets[j][0], x_sets[j][1], order_index=k, set_id=f"x{x_sets[j][2]:g}")
        for k, j in enumerate(order)
    ]
    return TrajectoryObservations(tuple(x_sets), tuple(c_sets))


def _set_rng(seed, kind, index):
    return np.random.default_rng(np.random.SeedSequence([int(seed), 0 if kind == "c" else 1, int(index)]))


def add_noise(obs, noise):
    """Perturb every pose with i.i.d. Gaussian noise.

    Translations get ``N(0, sigma_translation)`` per component.  Rotations are
    right-multiplied by a perturbation whose xyz Euler angles are
    ``N(0, sigma_rotation)`` degrees.  Each set draws from its own stream
    derived from ``(rng_seed, axis_kind, set position)``; zero sigmas leave
    the data untouched.
    """

    def perturb(s, kind, index):
        rng = _set_rng(noise.rng_seed, kind, index)
        dt = rng.normal(0.0, 1.0, size=(len(s), 3))
        dr = rng.normal(0.0, 1.0, size=(len(s), 3))
        positions, rotations = s.positions, s.rotations
        if noise.sigma_translation > 0:
            positions = positions + noise.sigma_translation * dt
        if noise.sigma_rotation > 0:
            pert = Rotation.from_euler("xyz", noise.sigma_rotation * dr, degrees=True).as_matrix()
            rotations = rotations @ pert
        return replace(s, rotations=rotations, positions=positions)

    return TrajectoryObservations(
        tuple(perturb(s, "x", i) for i, s in enumerate(obs.x_sets)),
        tuple(perturb(s, "c", i) for i, s in enumerate(obs.c_sets)),
    )


def random_scenario(
    rng_seed,
    *,
    r_min_range=(600.0, 800.0),
    r_maj_range=(0.0, 400.0),
    offset_range=(-200.0, 200.0),
    translation_range=(-1000.0, 1000.0),
    **grids,
):
    """Random torus placement, radii and sensor offset, deterministic per seed.

    ``r_maj`` is drawn from the half-open interval excluding its lower bound.
    Extra keyword arguments override the sweep grids of :class:`ScenarioConfig`.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(rng_seed), 7]))
    r_min = rng.uniform(*r_min_range)
    lo, hi = r_maj_range
    r_maj = hi - rng.uniform(0.0, hi - lo)  # in (lo, hi]
    offset = SensorOffset.from_array(rng.uniform(*offset_range, size=3))
    translation = rng.uniform(*translation_range, size=3)
    rotation = Rotation.random(random_state=rng).as_matrix()
    return ScenarioConfig(
        r_min=r_min,
        r_maj=r_maj,
        world_pose=Pose(rotation, translation),
        offset=offset,
        **grids,
    )


def decimate(obs, stride):
    """Keep every ``stride``-th pose of each trajectory.

    Raises
    ------
    DegenerateInput
        If a trajectory would keep fewer than three poses.
    """
    stride = int(stride)
    if stride < 1:
        raise ValueError("stride must be >= 1")
    for s in obs.all_sets:
        kept = len(range(0, len(s), stride))
        if kept < 3:
            raise DegenerateInput(
                f"stride {stride} leaves {kept} poses in set {s.set_id!r}; plane and circle fits need 3"
            )
    return TrajectoryObservations(
        tuple(s.subset(slice(None, None, stride)) for s in obs.x_sets),
        tuple(s.subset(slice(None, None, stride)) for s in obs.c_sets),
    )


def select_sets(obs, n_c_sets=None, n_x_sets=None):
    """Reduce the number of trajectories while keeping the tagged c-arm-axis sets.

    Extra c-arm-axis sets are taken from the remaining ones spreading outward
    from +-45 degrees; x-axis sets are spread evenly over the acquisition order.
    """
    c_sets = list(obs.c_sets)
    if n_c_sets is not None:
        tagged = [s for s in c_sets if s.alpha_tag is not None]
        others = [s for s in c_sets if s.alpha_tag is None]
        alphas = [_set_alpha(s) for s in others]
        rank = sorted(range(len(others)), key=lambda i: (abs(abs(alphas[i]) - 45.0), alphas[i]))
        n_extra = max(0, n_c_sets - len(tagged))
        keep = tagged[:n_c_sets] + [others[i] for i in rank[:n_extra]]
        c_sets = sorted(keep, key=lambda s: s.order_index)
    x_sets = list(obs.x_sets)
    if n_x_sets is not None:
        if n_x_sets < 1:
            x_sets = []
        else:
            idx = np.unique(np.round(np.linspace(0, len(x_sets) - 1, n_x_sets)).astype(int))
            x_sets = [x_sets[i] for i in idx]
    return TrajectoryObservations(tuple(x_sets), tuple(c_sets))


def _set_alpha(s):
    try:
        return float(s.set_id.lstrip("c"))
    except ValueError:
        return float(s.order_index)
