"""Simulation experiments: noise, trajectory-count and pose-density sweeps.

Every run is a pure function of its sweep parameters and seed.  The seed
picks the random scenario (:func:`~carm_pivot.simulator.random_scenario`),
the noise stream and the RANSAC stream, so any row of a report can be
reproduced on its own.
"""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .calibration import calibrate
from .errors import CalibrationError, DegenerateInput
from .fitting import RansacConfig
from .geometry import rotation_error_deg
from .simulator import (
    DEFAULT_C_BETAS,
    DEFAULT_X_ALPHAS,
    NoiseConfig,
    add_noise,
    decimate,
    generate,
    random_scenario,
    select_sets,
)

__all__ = [
    "ExperimentRow",
    "ExperimentReport",
    "error_metrics",
    "run_case",
    "run_noise_sweep",
    "run_trajectory_sweep",
    "run_density_sweep",
    "DEFAULT_SIGMAS_T",
    "DEFAULT_SIGMAS_R",
    "DEFAULT_C_COUNTS",
    "DEFAULT_X_COUNTS",
    "DEFAULT_DENSITY_FACTORS",
    "DEFAULT_SEEDS",
]

DEFAULT_SIGMAS_T = tuple(round(0.5 * k, 10) for k in range(11))
DEFAULT_SIGMAS_R = tuple(round(0.05 * k, 10) for k in range(11))
DEFAULT_C_COUNTS = tuple(range(3, 14))
DEFAULT_X_COUNTS = tuple(range(1, 10))
# stride per trajectory; values below one refine the 1 degree grid instead
DEFAULT_DENSITY_FACTORS = (0.25, 0.5, 1, 2, 3, 4, 6, 8, 10, 14)
DEFAULT_SEEDS = tuple(range(5))

# noise used for the trajectory and density experiments
FIXED_SIGMA_T = 1.0
FIXED_SIGMA_R = 0.1


def error_metrics(result, truth):
    """Translation error (mm) of the offset and orientation error (degrees).

    The offset is compared with ``truth.expected_offset()``, the rotation
    center in sensor coordinates.
    """
    t_err = float(np.linalg.norm(np.asarray(result.offset) - truth.expected_offset()))
    return t_err, rotation_error_deg(truth.orientation, result.orientation)


@dataclass
class ExperimentRow:
    """One calibration run of a sweep."""

    sweep_variable: str
    sweep_value: float
    seed: int
    translation_error_mm: float = math.nan
    orientation_error_deg: float = math.nan
    inliers_required: int = 0
    inliers_detected: int = 0
    total_poses: int = 0
    mean_inlier_residual_mm: float = math.nan
    mean_all_residual_mm: float = math.nan
    runtime_s: float = 0.0
    status: str = "ok"

    @property
    def ok(self):
        return self.status == "ok"


SUMMARY_FIELDS = [
    "sweep_variable",
    "sweep_value",
    "n_runs",
    "n_failed",
    "translation_error_mm",
    "translation_error_std_mm",
    "orientation_error_deg",
    "orientation_error_std_deg",
    "inliers_required",
    "inliers_detected",
    "total_poses",
    "mean_inlier_residual_mm",
    "mean_all_residual_mm",
    "runtime_s",
    "seeds",
    "status",
]


@dataclass
class ExperimentReport:
    """Rows of a sweep plus per-point averages.

    ``rows`` keep the order of the sweep grid (then seed), independent of
    the order in which parallel workers finish.
    """

    name: str
    rows: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    def points(self):
        """Distinct ``(sweep_variable, sweep_value)`` pairs in grid order."""
        seen = []
        for r in self.rows:
            key = (r.sweep_variable, r.sweep_value)
            if key not in seen:
                seen.append(key)
        return seen

    def rows_at(self, variable, value):
        return [r for r in self.rows if r.sweep_variable == variable and r.sweep_value == value]

    def summary(self):
        """One dict per sweep point, averaging successful runs over seeds."""
        out = []
        for variable, value in self.points():
            rows = self.rows_at(variable, value)
            good = [r for r in rows if r.ok]
            failed = sorted({r.status for r in rows if not r.ok})

            def mean(name, rows=good):
                return float(np.mean([getattr(r, name) for r in rows])) if rows else math.nan

            def std(name):
                return float(np.std([getattr(r, name) for r in good])) if good else math.nan

            out.append(
                {
                    "sweep_variable": variable,
                    "sweep_value": value,
                    "n_runs": len(rows),
                    "n_failed": len(rows) - len(good),
                    "translation_error_mm": mean("translation_error_mm"),
                    "translation_error_std_mm": std("translation_error_mm"),
                    "orientation_error_deg": mean("orientation_error_deg"),
                    "orientation_error_std_deg": std("orientation_error_deg"),
                    "inliers_required": mean("inliers_required"),
                    "inliers_detected": mean("inliers_detected"),
                    "total_poses": mean("total_poses", rows),
                    "mean_inlier_residual_mm": mean("mean_inlier_residual_mm"),
                    "mean_all_residual_mm": mean("mean_all_residual_mm"),
                    "runtime_s": mean("runtime_s", rows),
                    "seeds": ";".join(str(r.seed) for r in rows),
                    "status": "ok" if not failed else "+".join(failed),
                }
            )
        return out

    def to_csv(self, path):
        """Write one averaged row per sweep point."""
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS, lineterminator="\n")
            writer.writeheader()
            for row in self.summary():
                writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})

    def to_dict(self):
        def clean(d):
            return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in d.items()}

        return {
            "name": self.name,
            "extras": self.extras,
            "summary": [clean(s) for s in self.summary()],
            "runs": [clean(asdict(r)) for r in self.rows],
        }

    def to_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    def format_table(self):
        """Fixed-width text table of the per-point averages."""
        head = f"{'variable':<22}{'value':>8}{'t_err mm':>11}{'R_err deg':>11}{'inliers':>16}{'poses':>8}{'fail':>6}"
        lines = [head, "-" * len(head)]
        for s in self.summary():
            inl = f"{s['inliers_detected']:.0f}/{s['inliers_required']:.0f}" if s["n_failed"] < s["n_runs"] else "-"
            lines.append(
                f"{s['sweep_variable']:<22}{s['sweep_value']:>8g}{s['translation_error_mm']:>11.4f}"
                f"{s['orientation_error_deg']:>11.4f}{inl:>16}{s['total_poses']:>8.0f}{s['n_failed']:>6d}"
            )
        for k, v in self.extras.items():
            lines.append(f"{k}: {v:.6g}" if isinstance(v, float) else f"{k}: {v}")
        return "\n".join(lines)


def _prepare(case):
    """Observations and truth for one run description."""
    seed = case["seed"]
    factor = case.get("density_factor", 1)
    grids = {}
    if factor < 1:
        step = float(factor)
        grids = {
            "c_betas": tuple(np.arange(0.0, 360.0, step)),
            "x_alphas": tuple(np.arange(0.0, 360.0, step)),
        }
    truth = random_scenario(seed, **grids)
    obs = generate(truth)
    obs = add_noise(obs, NoiseConfig(case["sigma_t"], case["sigma_r"], seed))
    if case.get("n_c_sets") is not None or case.get("n_x_sets") is not None:
        obs = select_sets(obs, case.get("n_c_sets"), case.get("n_x_sets"))
    if factor > 1:
        obs = decimate(obs, int(factor))
    return obs, truth


def run_case(case):
    """Run one calibration described by a plain dict and return an :class:`ExperimentRow`.

    Keys: ``variable``, ``value``, ``seed``, ``sigma_t``, ``sigma_r``,
    ``iterations``, ``threshold`` and optionally ``n_c_sets``, ``n_x_sets``,
    ``density_factor``.  Calibration failures become rows whose ``status``
    is the exception class name.
    """
    row = ExperimentRow(case["variable"], float(case["value"]), int(case["seed"]))
    cfg = RansacConfig(iterations=case["iterations"], inlier_threshold=case["threshold"], rng_seed=case["seed"])
    start = time.perf_counter()
    try:
        obs, truth = _prepare(case)
        row.total_poses = obs.n_poses
        result = calibrate(obs, cfg)
    except CalibrationError as exc:
        row.status = type(exc).__name__
        row.runtime_s = time.perf_counter() - start
        return row
    row.runtime_s = time.perf_counter() - start
    row.translation_error_mm, row.orientation_error_deg = error_metrics(result, truth)
    d = result.diagnostics
    row.inliers_required = d.inliers_required
    row.inliers_detected = d.inliers_detected
    row.mean_inlier_residual_mm = d.mean_inlier_residual_mm
    row.mean_all_residual_mm = d.mean_all_residual_mm
    return row


def _run_all(cases, workers):
    if workers is None or workers <= 1:
        return [run_case(c) for c in cases]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_case, cases))


def _base(cfg, seed, sigma_t, sigma_r):
    return {
        "seed": int(seed),
        "sigma_t": float(sigma_t),
        "sigma_r": float(sigma_r),
        "iterations": cfg.iterations,
        "threshold": cfg.inlier_threshold,
    }


def run_noise_sweep(
    sigmas_t=DEFAULT_SIGMAS_T,
    sigmas_r=DEFAULT_SIGMAS_R,
    seeds=DEFAULT_SEEDS,
    cfg=RansacConfig(),
    *,
    workers=1,
):
    """Translation noise sweep (no rotation noise), then rotation noise sweep (no translation noise)."""
    cases = []
    for s in sigmas_t:
        cases += [dict(_base(cfg, seed, s, 0.0), variable="sigma_translation_mm", value=s) for seed in seeds]
    for s in sigmas_r:
        cases += [dict(_base(cfg, seed, 0.0, s), variable="sigma_rotation_deg", value=s) for seed in seeds]
    return ExperimentReport("noise", _run_all(cases, workers))


def run_trajectory_sweep(
    n_c_sets=DEFAULT_C_COUNTS,
    n_x_sets=DEFAULT_X_COUNTS,
    seeds=DEFAULT_SEEDS,
    cfg=RansacConfig(),
    *,
    sigma_t=FIXED_SIGMA_T,
    sigma_r=FIXED_SIGMA_R,
    workers=1,
):
    """Vary the number of c-arm-axis sets with all x-axis sets kept, then the reverse.

    Counts below the minimum (three tagged c-arm-axis sets, one x-axis set)
    yield rows with status ``InsufficientData``.
    """
    cases = []
    for n in n_c_sets:
        cases += [
            dict(_base(cfg, seed, sigma_t, sigma_r), variable="n_c_sets", value=n, n_c_sets=int(n)) for seed in seeds
        ]
    for n in n_x_sets:
        cases += [
            dict(_base(cfg, seed, sigma_t, sigma_r), variable="n_x_sets", value=n, n_x_sets=int(n)) for seed in seeds
        ]
    return ExperimentReport("trajectories", _run_all(cases, workers))


def run_density_sweep(
    decimation_factors=DEFAULT_DENSITY_FACTORS,
    seeds=DEFAULT_SEEDS,
    cfg=RansacConfig(),
    *,
    sigma_t=FIXED_SIGMA_T,
    sigma_r=FIXED_SIGMA_R,
    workers=1,
):
    """Vary the number of poses per trajectory, keeping every trajectory.

    A factor ``k >= 1`` keeps every ``k``-th pose (``k`` must be an integer);
    ``k < 1`` samples the sweeps every ``k`` degrees instead of every degree.
    ``extras`` holds least-squares slopes of the mean errors against
    ``log10(total poses)``, the trend line of the density plot.

    Raises
    ------
    DegenerateInput
        If a factor would leave fewer than three poses in a trajectory.
    ValueError
        For non-positive or non-integer factors above one.
    """
    shortest = min(len(DEFAULT_C_BETAS), len(DEFAULT_X_ALPHAS))
    for f in decimation_factors:
        if f <= 0 or (f > 1 and f != int(f)):
            raise ValueError(f"density factor {f!r}: use an integer stride or a step below one degree")
        if f > 1 and len(range(0, shortest, int(f))) < 3:
            raise DegenerateInput(f"stride {f} leaves fewer than 3 poses per trajectory")
    cases = []
    for f in decimation_factors:
        cases += [
            dict(_base(cfg, seed, sigma_t, sigma_r), variable="density_factor", value=f, density_factor=f)
            for seed in seeds
        ]
    report = ExperimentReport("density", _run_all(cases, workers))
    summary = [s for s in report.summary() if s["n_failed"] < s["n_runs"]]
    if len(summary) >= 2:
        x = np.log10([s["total_poses"] for s in summary])
        for key, name in (
            ("translation_error_mm", "trend_slope_translation_mm_per_decade"),
            ("orientation_error_deg", "trend_slope_orientation_deg_per_decade"),
        ):
            report.extras[name] = float(np.polyfit(x, [s[key] for s in summary], 1)[0])
    return report
