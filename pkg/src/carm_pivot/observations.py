"""Containers for tracked sensor poses grouped into C-arm trajectories."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegenerateInput, InsufficientData
from .geometry import Pose

__all__ = ["TrajectorySet", "TrajectoryObservations", "REQUIRED_TAGS"]

REQUIRED_TAGS = (-90.0, 0.0, 90.0)


@dataclass(frozen=True)
class TrajectorySet:
    """Poses recorded while only one C-arm axis moves.

    ``axis_kind`` is ``"c"`` for an orbital sweep (c-arm-axis, fixed
    ``alpha``) and ``"x"`` for a sweep about the x-axis (fixed ``beta``).
    Poses are stored as stacked arrays: ``rotations`` ``(N, 3, 3)`` and
    ``positions`` ``(N, 3)`` in mm.
    """

    axis_kind: str
    rotations: np.ndarray
    positions: np.ndarray
    alpha_tag: float | None = None
    order_index: int = 0
    set_id: str = ""

    def __post_init__(self):
        if self.axis_kind not in ("c", "x"):
            raise ValueError(f"axis_kind must be 'c' or 'x', got {self.axis_kind!r}")
        rot = np.asarray(self.rotations, dtype=float).reshape(-1, 3, 3)
        pos = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        if len(rot) != len(pos):
            raise ValueError("rotations and positions differ in length")
        if len(pos) < 3:
            raise DegenerateInput(f"trajectory set {self.set_id!r} has {len(pos)} poses; at least 3 needed")
        object.__setattr__(self, "rotations", rot)
        object.__setattr__(self, "positions", pos)
        if self.alpha_tag is not None:
            object.__setattr__(self, "alpha_tag", float(self.alpha_tag))

    def __len__(self):
        return len(self.positions)

    @property
    def poses(self):
        return [Pose(R, p) for R, p in zip(self.rotations, self.positions)]

    def subset(self, index):
        """New set restricted to ``index`` (boolean mask or integer indices)."""
        return replace(self, rotations=self.rotations[index], positions=self.positions[index])

    def transformed(self, pose):
        """Same trajectory observed from another tracker frame: ``pose @ T_i``."""
        return replace(
            self,
            rotations=pose.rotation @ self.rotations,
            positions=self.positions @ pose.rotation.T + pose.translation,
        )


@dataclass(frozen=True)
class TrajectoryObservations:
    """A calibration bundle: x-axis sweeps and c-arm-axis sweeps.

    ``x_sets`` are kept sorted by ``order_index`` which must follow the
    physical +x direction of the C-arm.
    """

    x_sets: tuple = field(default_factory=tuple)
    c_sets: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "x_sets", tuple(sorted(self.x_sets, key=lambda s: s.order_index)))
        object.__setattr__(self, "c_sets", tuple(self.c_sets))
        if any(s.axis_kind != "x" for s in self.x_sets):
            raise ValueError("x_sets must contain only x-axis trajectories")
        if any(s.axis_kind != "c" for s in self.c_sets):
            raise ValueError("c_sets must contain only c-arm-axis trajectories")

    @property
    def n_poses(self):
        return sum(len(s) for s in self.all_sets)

    @property
    def all_sets(self):
        return self.x_sets + self.c_sets

    def positions(self):
        return np.concatenate([s.positions for s in self.all_sets])

    def tagged_sets(self):
        """Map ``alpha_tag -> TrajectorySet`` for the three required tags.

        Raises
        ------
        InsufficientData
            If a required tag is missing, repeated, or no x-axis set exists.
        """
        if not self.x_sets:
            raise InsufficientData("no x-axis trajectory set; at least one is required")
        found = {}
        for s in self.c_sets:
            if s.alpha_tag is None:
                continue
            for tag in REQUIRED_TAGS:
                if np.isclose(s.alpha_tag, tag):
                    if tag in found:
                        raise InsufficientData(f"c-arm-axis set tagged alpha={tag:g} appears twice")
                    found[tag] = s
        missing = [tag for tag in REQUIRED_TAGS if tag not in found]
        if missing:
            names = ", ".join(f"alpha={t:+g}" for t in missing)
            raise InsufficientData(f"missing tagged c-arm-axis sets: {names}")
        return found

    def transformed(self, pose):
        return TrajectoryObservations(
            tuple(s.transformed(pose) for s in self.x_sets),
            tuple(s.transformed(pose) for s in self.c_sets),
        )

    def with_rotations(self, rotations_for):
        """Replace every rotation; ``rotations_for(set)`` returns the new ``(N, 3, 3)`` stack."""
        return TrajectoryObservations(
            tuple(replace(s, rotations=rotations_for(s)) for s in self.x_sets),
            tuple(replace(s, rotations=rotations_for(s)) for s in self.c_sets),
        )
