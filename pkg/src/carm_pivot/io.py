"""File formats: pose CSV, ground-truth sidecar JSON and calibration result JSON.

Pose files hold one tracked pose per line::

    set_id,axis_kind,alpha_tag_deg,order_index,r00,...,r22,tx,ty,tz

Rows sharing a ``set_id`` form one trajectory, in file order.  Floats are
written with ``repr`` so translations survive a round trip bit for bit.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .geometry import orthonormalize
from .observations import TrajectoryObservations, TrajectorySet

__all__ = [
    "POSE_HEADER",
    "PoseFileError",
    "ORTHONORMAL_TOL",
    "write_poses",
    "read_poses",
    "truth_path_for",
    "write_truth",
    "read_truth",
    "result_to_dict",
    "write_result",
]

ROTATION_FIELDS = [f"r{i}{j}" for i in range(3) for j in range(3)]
POSE_HEADER = ["set_id", "axis_kind", "alpha_tag_deg", "order_index", *ROTATION_FIELDS, "tx", "ty", "tz"]
ORTHONORMAL_TOL = 1e-6


class PoseFileError(ValueError):
    """A pose file is malformed or holds an invalid rotation."""


def write_poses(path, obs):
    """Write every trajectory of ``obs`` to ``path`` (x-axis sets first)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(POSE_HEADER)
        for s in obs.all_sets:
            tag = "" if s.alpha_tag is None else repr(float(s.alpha_tag))
            for R, p in zip(s.rotations, s.positions):
                writer.writerow(
                    [s.set_id, s.axis_kind, tag, s.order_index]
                    + [repr(float(v)) for v in R.ravel()]
                    + [repr(float(v)) for v in p]
                )


def _parse_row(row, line_no):
    try:
        rot = np.array([float(row[k]) for k in ROTATION_FIELDS]).reshape(3, 3)
        pos = np.array([float(row[k]) for k in ("tx", "ty", "tz")])
        order = int(row["order_index"])
        tag = row["alpha_tag_deg"].strip()
        tag = float(tag) if tag else None
    except (TypeError, ValueError) as exc:
        raise PoseFileError(f"line {line_no}: {exc}") from None
    if not (np.all(np.isfinite(rot)) and np.all(np.isfinite(pos))):
        raise PoseFileError(f"line {line_no}: non-finite value")
    err = np.abs(rot.T @ rot - np.eye(3)).max()
    if err > ORTHONORMAL_TOL or np.linalg.det(rot) < 0:
        raise PoseFileError(f"line {line_no}: rotation is not orthonormal (deviation {err:.3g})")
    return rot, pos, order, tag


def read_poses(path):
    """Load a pose file written by :func:`write_poses` (or by a tracker exporter).

    Rotations must be orthonormal within :data:`ORTHONORMAL_TOL`; they are
    then projected onto the nearest proper rotation.

    Raises
    ------
    PoseFileError
        Missing columns, unparsable numbers, bad rotations or inconsistent
        per-set metadata.
    """
    groups = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [k for k in POSE_HEADER if k not in (reader.fieldnames or [])]
        if missing:
            raise PoseFileError(f"missing columns: {', '.join(missing)}")
        for line_no, row in enumerate(reader, start=2):
            rot, pos, order, tag = _parse_row(row, line_no)
            kind = row["axis_kind"].strip()
            if kind not in ("c", "x"):
                raise PoseFileError(f"line {line_no}: axis_kind must be 'c' or 'x', got {kind!r}")
            key = row["set_id"]
            meta = (kind, tag, order)
            g = groups.setdefault(key, {"meta": meta, "rot": [], "pos": []})
            if g["meta"] != meta:
                raise PoseFileError(f"line {line_no}: set {key!r} changes axis_kind, tag or order_index")
            g["rot"].append(rot)
            g["pos"].append(pos)

    x_sets, c_sets = [], []
    for key, g in groups.items():
        kind, tag, order = g["meta"]
        rot = np.array([orthonormalize(R) for R in g["rot"]])
        s = TrajectorySet(kind, rot, np.array(g["pos"]), alpha_tag=tag, order_index=order, set_id=key)
        (x_sets if kind == "x" else c_sets).append(s)
    return TrajectoryObservations(tuple(x_sets), tuple(c_sets))


def truth_path_for(pose_path):
    """Sidecar location for the ground truth of ``pose_path``."""
    p = Path(pose_path)
    return p.with_name(p.stem + ".truth.json")


def write_truth(path, scenario, noise=None):
    payload = {"scenario": scenario.to_dict()}
    if noise is not None:
        payload["noise"] = {
            "sigma_translation_mm": noise.sigma_translation,
            "sigma_rotation_deg": noise.sigma_rotation,
            "rng_seed": noise.rng_seed,
        }
    Path(path).write_text(json.dumps(payload, indent=2))


def read_truth(path):
    """Return the :class:`~carm_pivot.simulator.ScenarioConfig` stored in a sidecar."""
    from .simulator import ScenarioConfig

    data = json.loads(Path(path).read_text())
    return ScenarioConfig.from_dict(data["scenario"])


def _finite_or_none(x):
    x = float(x)
    return x if math.isfinite(x) else None


def result_to_dict(result):
    d = result.diagnostics
    return {
        "center": result.center.tolist(),
        "normal": result.normal.tolist(),
        "major_radius_mm": float(result.major_radius),
        "offset_mm": np.asarray(result.offset).tolist(),
        "orientation_row_major": np.asarray(result.orientation).ravel().tolist(),
        "diagnostics": {
            "inliers_required": int(d.inliers_required),
            "inliers_detected": int(d.inliers_detected),
            "total_poses": int(d.n_poses),
            "mean_inlier_residual_mm": _finite_or_none(d.mean_inlier_residual_mm),
            "mean_all_residual_mm": _finite_or_none(d.mean_all_residual_mm),
            "residual_sigma_mm": _finite_or_none(d.residual_sigma_mm),
            "refinement_rounds": int(d.rounds),
        },
    }


def write_result(path, result):
    Path(path).write_text(json.dumps(result_to_dict(result), indent=2))
