"""Radiation-free pivot calibration of a tracked sensor to a mobile C-arm.

The sensor rigidly attached to a C-arm sweeps a torus when the C-arm
rotates about its c-arm-axis and x-axis.  Fitting planes, circles and lines
to separately acquired sweeps recovers the torus and, from it, the rotation
center in sensor coordinates together with the C-arm orientation.
"""

from .calibration import (
    CalibrationResult,
    Diagnostics,
    DirectFitSolution,
    calibrate,
    eq6_energy,
    estimate_center,
    estimate_major_radius,
    estimate_normal,
    estimate_orientation_offset,
    sensor_torus_distance,
    solve_eq6,
)
from .errors import (
    AmbiguousOrientation,
    CalibrationError,
    DegenerateInput,
    DegeneratePhase,
    InconsistentNormals,
    InsufficientData,
    NoConsensus,
    NoConvergence,
)
from .evaluation import ExperimentReport, error_metrics, run_density_sweep, run_noise_sweep, run_trajectory_sweep
from .fitting import Circle3D, Plane, RansacConfig, ransac_fit
from .geometry import Pose, SensorOffset, TorusModel, rotation_error_deg
from .io import read_poses, write_poses
from .observations import TrajectoryObservations, TrajectorySet
from .simulator import NoiseConfig, ScenarioConfig, add_noise, generate, random_scenario

__all__ = [
    "AmbiguousOrientation",
    "CalibrationError",
    "CalibrationResult",
    "Circle3D",
    "DegenerateInput",
    "DegeneratePhase",
    "Diagnostics",
    "DirectFitSolution",
    "ExperimentReport",
    "InconsistentNormals",
    "InsufficientData",
    "NoConsensus",
    "NoConvergence",
    "NoiseConfig",
    "Plane",
    "Pose",
    "RansacConfig",
    "ScenarioConfig",
    "SensorOffset",
    "TorusModel",
    "TrajectoryObservations",
    "TrajectorySet",
    "add_noise",
    "calibrate",
    "eq6_energy",
    "error_metrics",
    "estimate_center",
    "estimate_major_radius",
    "estimate_normal",
    "estimate_orientation_offset",
    "generate",
    "random_scenario",
    "ransac_fit",
    "read_poses",
    "rotation_error_deg",
    "run_density_sweep",
    "run_noise_sweep",
    "run_trajectory_sweep",
    "sensor_torus_distance",
    "solve_eq6",
    "write_poses",
]

__version__ = "0.1.0"
