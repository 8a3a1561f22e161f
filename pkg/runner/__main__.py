"""
Command line interface: python -m runner {simulate,run,eval,export,profile}.

Failures end with a nonzero exit code and one json line on stderr naming the error category.
"""

from dataclasses import replace

from geometry.tum import load_tum
from mapping.exceptions import FusionError, MapLifecycleError
from mapping.export import cloud_from_trajectory, save_ply
from runner.config import RunConfig, load_config
from runner.exceptions import ConfigError, EvaluationError, PipelineError
from runner.metrics import evaluate_ate, evaluate_end_to_end, load_profile
from runner.pipeline import load_run_scenario, replay_frame_log, run_pipeline
from simulation.exceptions import LoadingError, ScenarioError, TrajectoryRangeError
from simulation.frame_log import FrameLogWriter, iter_frame_log
from simulation.simulator import Simulator

import argparse
import json
import logging
import os
import sys

from tqdm import tqdm

EXIT_CODES = {"config": 2, "scenario": 3, "evaluation": 4, "pipeline": 5, "io": 6}

def error_category(error: BaseException) -> str | None:
    if isinstance(error, ConfigError):
        return "config"
    if isinstance(error, (ScenarioError, TrajectoryRangeError)):
        return "scenario"
    if isinstance(error, EvaluationError):
        return "evaluation"
    if isinstance(error, (PipelineError, FusionError, MapLifecycleError)):
        return "pipeline"
    if isinstance(error, (OSError, LoadingError)):
        return "io"
    return None

def add_run_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="json run configuration, overridden by the flags below")
    parser.add_argument("--scenario", help="built-in scenario name or json scenario file")
    parser.add_argument("--out", help="result directory")
    parser.add_argument("--name", help="run name, the result sub-directory")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--events", type=int, help="number of over-degeneracy events of a built-in scenario")
    parser.add_argument("--duration-scale", type=float, help="size factor of a built-in scenario")
    parser.add_argument("--no-fusion", action="store_true", help="never fuse sleeping maps")
    parser.add_argument("--no-enhanced", action="store_true", help="fuse with the best pair only, without graph optimization")
    parser.add_argument("--detector", choices=("ours", "zhang"))
    parser.add_argument("--static-init-only", action="store_true", help="re-initialize only when the platform is at rest")
    parser.add_argument("--single-threaded", action="store_true", help="simulate frames on the mapping thread")
    parser.add_argument("--plot", action="store_true", help="save trajectory and degeneracy plots")

def build_config(args: argparse.Namespace) -> RunConfig:
    """Run configuration from an optional json file, with the command line flags applied on top."""
    config = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {}
    for name, key in (("scenario", "scenario"), ("out", "output_dir"), ("name", "run_name"), ("seed", "seed"), ("events", "events"),
                      ("duration_scale", "duration_scale"), ("detector", "detector")):
        value = getattr(args, name, None)
        if value is not None:
            overrides[key] = value
    for name, key, value in (("no_fusion", "fusion", False), ("no_enhanced", "enhanced", False), ("static_init_only", "dynamic_init", False),
                             ("single_threaded", "single_threaded", True), ("plot", "plot", True)):
        if getattr(args, name, False):
            overrides[key] = value
    return replace(config, **overrides)

def simulate(args: argparse.Namespace) -> int:
    config = build_config(args)
    scenario = load_run_scenario(config)
    simulator = Simulator(scenario, config.get_run_name(), config.seed, config.output_dir)
    os.makedirs(simulator.get_simulation_dir(), exist_ok=True)
    log_path = os.path.join(simulator.get_simulation_dir(), "frames.mmlf")
    with FrameLogWriter(log_path, scenario, config.seed) as writer:
        for frame in tqdm(simulator.frames(), total=simulator.frame_count(), disable=args.quiet, unit="frame", desc=scenario.name):
            writer.write(frame)
    simulator.save_config()
    simulator.save_ground_truth()
    if config.plot:
        from simulation.visualization import save_world_and_trajectory
        save_world_and_trajectory(simulator)
    print(json.dumps({"frame_log": log_path, "frames": simulator.frame_count()}))
    return 0

def run(args: argparse.Namespace) -> int:
    config = build_config(args)
    if args.frames:
        report = replay_frame_log(config, args.frames, progress=not args.quiet)
    else:
        report = run_pipeline(config, progress=not args.quiet)
    print(json.dumps({"run_dir": config.get_run_dir(), "ate_rmse": report.ate_rmse, "end_to_end": report.end_to_end,
                      "submap_count": report.submap_count, "frame_count": report.frame_count}))
    return 0

def evaluate(args: argparse.Namespace) -> int:
    estimate = load_tum(args.estimate)
    result = {"ate_rmse": evaluate_ate(estimate, load_tum(args.truth), args.max_difference), "end_to_end": evaluate_end_to_end(estimate)}
    print(json.dumps(result))
    return 0

def export(args: argparse.Namespace) -> int:
    trajectory = load_tum(args.trajectory)
    scans = ((frame.timestamp, frame.scan) for frame in iter_frame_log(args.frames))
    cloud = cloud_from_trajectory(scans, trajectory, args.voxel_size)
    save_ply(args.out, cloud)
    print(json.dumps({"ply": args.out, "points": len(cloud)}))
    return 0

def profile(args: argparse.Namespace) -> int:
    for run_dir in args.run_dirs:
        fractions = load_profile(os.path.join(run_dir, "profile.csv"))
        print(json.dumps({"run_dir": run_dir, **{module: round(100.0 * fraction, 4) for module, fraction in fractions.items()}}))
    return 0

def get_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="python -m runner", description="Multi-map LiDAR-inertial mapping on simulated runs.")
    parser.add_argument("--log-level", default="WARNING", choices=("DEBUG", "INFO", "WARNING", "ERROR"))
    parser.add_argument("--quiet", action="store_true", help="no progress bar")
    commands = parser.add_subparsers(dest="command", required=True)

    simulate_parser = commands.add_parser("simulate", help="record a scenario as a frame log")
    add_run_arguments(simulate_parser)
    simulate_parser.set_defaults(handler=simulate)

    run_parser = commands.add_parser("run", help="simulate, map and evaluate a run")
    add_run_arguments(run_parser)
    run_parser.add_argument("--frames", help="frame log to replay instead of simulating")
    run_parser.set_defaults(handler=run)

    eval_parser = commands.add_parser("eval", help="ATE and end-to-end distance of a TUM trajectory")
    eval_parser.add_argument("estimate")
    eval_parser.add_argument("truth")
    eval_parser.add_argument("--max-difference", type=float, default=0.05, help="timestamp association tolerance (s)")
    eval_parser.set_defaults(handler=evaluate)

    export_parser = commands.add_parser("export", help="point cloud of a frame log along a TUM trajectory, as ASCII PLY")
    export_parser.add_argument("frames")
    export_parser.add_argument("trajectory")
    export_parser.add_argument("--out", default="map.ply")
    export_parser.add_argument("--voxel-size", type=float, default=0.2)
    export_parser.set_defaults(handler=export)

    profile_parser = commands.add_parser("profile", help="wall-time share of the modules of finished runs")
    profile_parser.add_argument("run_dirs", nargs="+")
    profile_parser.set_defaults(handler=profile)
    return parser

def main(argv: list[str] | None = None) -> int:
    args = get_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.handler(args)
    except Exception as error:
        category = error_category(error)
        if category is None:
            raise
        payload = {"category": category, "error": type(error).__name__, "message": str(error)}
        for attribute in ("key", "field", "frame_index"):
            if hasattr(error, attribute):
                payload[attribute] = getattr(error, attribute)
        print(json.dumps(payload), file=sys.stderr)
        return EXIT_CODES[category]

if __name__ == "__main__":
    sys.exit(main())
