"""Command-line interface: ``carm-pivot {simulate,calibrate,eval}``.

Exit codes: 0 success, 2 usage or configuration error, 3 file I/O error
(including malformed pose files), 4 insufficient or degenerate data, 5 no
consensus or another calibration failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .calibration import calibrate
from .errors import CalibrationError, DegenerateInput, InsufficientData, NoConsensus
from .evaluation import (
    DEFAULT_C_COUNTS,
    DEFAULT_DENSITY_FACTORS,
    DEFAULT_SIGMAS_R,
    DEFAULT_SIGMAS_T,
    DEFAULT_X_COUNTS,
    FIXED_SIGMA_R,
    FIXED_SIGMA_T,
    run_density_sweep,
    run_noise_sweep,
    run_trajectory_sweep,
)
from .fitting import RansacConfig
from .io import PoseFileError, read_poses, truth_path_for, write_poses, write_result, write_truth
from .simulator import NoiseConfig, ScenarioConfig, add_noise, generate, random_scenario

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_INSUFFICIENT = 4
EXIT_NO_CONSENSUS = 5

SCENARIO_KEYS = {
    "r_min",
    "r_maj",
    "world_rotation",
    "world_translation",
    "offset",
    "c_alphas_deg",
    "c_betas_deg",
    "x_alphas_deg",
    "x_betas_deg",
    "expected_offset_mm",
    "random_seed",
}
EVAL_KEYS = {
    "seeds",
    "ransac_iterations",
    "inlier_mm",
    "sigmas_t",
    "sigmas_r",
    "c_counts",
    "x_counts",
    "density_factors",
    "sigma_t",
    "sigma_r",
}


class ConfigError(Exception):
    """Invalid command-line value or configuration file."""


def _load_json(path, allowed):
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {', '.join(unknown)}")
    return data


def scenario_from_config(data, seed):
    """Scenario described by a config dict.

    An empty config, or one with ``random_seed``, draws a random scenario
    (from ``--seed`` when ``random_seed`` is absent); explicit scenario keys
    override the drawn values.
    """
    explicit = {k: v for k, v in data.items() if k not in ("random_seed", "expected_offset_mm")}
    try:
        if "random_seed" in data or not explicit:
            base = random_scenario(int(data.get("random_seed", seed))).to_dict()
            base.update(explicit)
            return ScenarioConfig.from_dict(base)
        return ScenarioConfig.from_dict(explicit)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid scenario: {exc}") from None


def cmd_simulate(args):
    if args.noise_sigma_t < 0 or args.noise_sigma_r < 0:
        raise ConfigError("noise standard deviations must be non-negative")
    scenario = scenario_from_config(_load_json(args.config, SCENARIO_KEYS), args.seed)
    noise = NoiseConfig(args.noise_sigma_t, args.noise_sigma_r, args.seed)
    obs = add_noise(generate(scenario), noise)
    write_poses(args.out, obs)
    truth = truth_path_for(args.out)
    write_truth(truth, scenario, noise)
    print(f"wrote {obs.n_poses} poses to {args.out} (truth: {truth})")
    return EXIT_OK


def _ransac_config(iterations, inlier_mm, seed):
    try:
        return RansacConfig(iterations=int(iterations), inlier_threshold=float(inlier_mm), rng_seed=int(seed))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def cmd_calibrate(args):
    cfg = _ransac_config(args.ransac_iters, args.inlier_mm, args.seed)
    obs = read_poses(args.poses)
    result = calibrate(obs, cfg)
    write_result(args.out, result)
    d = result.diagnostics
    share = d.inliers_detected / d.n_poses if d.n_poses else 0.0
    print(
        f"offset (mm): {' '.join(f'{v:.6f}' for v in result.offset)}\n"
        f"major radius (mm): {result.major_radius:.6f}\n"
        f"inliers: {d.inliers_detected}/{d.n_poses} ({100 * share:.1f}%), required {d.inliers_required}\n"
        f"mean residual (mm): inliers {d.mean_inlier_residual_mm:.4f}, all {d.mean_all_residual_mm:.4f}"
    )
    return EXIT_OK


def _grid(data, key, default):
    value = data.get(key, default)
    if not isinstance(value, (list, tuple)) or not value:
        raise ConfigError(f"{key} must be a non-empty list")
    return tuple(value)


def cmd_eval(args):
    data = _load_json(args.config, EVAL_KEYS)
    seeds = data.get("seeds", args.n_seeds)
    seeds = tuple(range(args.seed, args.seed + int(seeds))) if isinstance(seeds, int) else tuple(seeds)
    cfg = _ransac_config(data.get("ransac_iterations", 500), data.get("inlier_mm", 1.0), 0)
    workers = args.threads
    sigma_t = float(data.get("sigma_t", FIXED_SIGMA_T))
    sigma_r = float(data.get("sigma_r", FIXED_SIGMA_R))
    try:
        if args.sweep == "noise":
            report = run_noise_sweep(
                _grid(data, "sigmas_t", DEFAULT_SIGMAS_T), _grid(data, "sigmas_r", DEFAULT_SIGMAS_R), seeds, cfg,
                workers=workers,
            )
        elif args.sweep == "trajectories":
            report = run_trajectory_sweep(
                _grid(data, "c_counts", DEFAULT_C_COUNTS), _grid(data, "x_counts", DEFAULT_X_COUNTS), seeds, cfg,
                sigma_t=sigma_t, sigma_r=sigma_r, workers=workers,
            )
        else:
            report = run_density_sweep(
                _grid(data, "density_factors", DEFAULT_DENSITY_FACTORS), seeds, cfg,
                sigma_t=sigma_t, sigma_r=sigma_r, workers=workers,
            )
    except CalibrationError:
        raise  # DegenerateInput is also a ValueError but maps to its own exit code
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    report.to_csv(args.out)
    json_path = Path(args.out).with_suffix(".json")
    report.to_json(json_path)
    print(report.format_table())
    print(f"wrote {args.out} and {json_path}")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    """Argument parser whose usage errors exit with :data:`EXIT_USAGE`."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _Parser(prog="carm-pivot", description="Radiation-free C-arm pivot calibration toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="write a simulated pose file and its ground-truth sidecar")
    p.add_argument("config", nargs="?", help="scenario JSON (default: random scenario from --seed)")
    p.add_argument("out", help="pose CSV to write; truth goes to <stem>.truth.json")
    p.add_argument("--noise-sigma-t", type=float, default=0.0, help="translation noise std (mm)")
    p.add_argument("--noise-sigma-r", type=float, default=0.0, help="rotation noise std per Euler angle (deg)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("calibrate", help="calibrate from a pose file")
    p.add_argument("poses", help="pose CSV")
    p.add_argument("out", help="result JSON to write")
    p.add_argument("--ransac-iters", type=int, default=500)
    p.add_argument("--inlier-mm", type=float, default=1.0, help="inlier band width (mm)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("eval", help="run a simulation sweep")
    p.add_argument("sweep", choices=["noise", "trajectories", "density"])
    p.add_argument("config", nargs="?", help="sweep JSON overriding grids, seeds and RANSAC settings")
    p.add_argument("out", help="CSV of per-point averages; a JSON with every run is written next to it")
    p.add_argument("--seed", type=int, default=0, help="first scenario seed")
    p.add_argument("--n-seeds", type=int, default=5, help="scenarios per sweep point")
    p.add_argument("--threads", type=int, default=1, help="worker processes (1 = serial)")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InsufficientData, DegenerateInput) as exc:
        print(f"insufficient data: {exc}", file=sys.stderr)
        return EXIT_INSUFFICIENT
    except NoConsensus as exc:
        print(f"no consensus: {exc}", file=sys.stderr)
        return EXIT_NO_CONSENSUS
    except CalibrationError as exc:
        print(f"calibration failed: {exc}", file=sys.stderr)
        return EXIT_NO_CONSENSUS
    except (OSError, PoseFileError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
