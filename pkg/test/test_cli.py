import unittest

from contextlib import redirect_stderr, redirect_stdout
from geometry.pose import Pose
from geometry.rotation import Rotation
from geometry.tum import save_tum
from mapping.export import load_ply
from runner.__main__ import EXIT_CODES, build_config, get_parser, main
from runner.metrics import save_profile
from simulation.frame_log import FrameLogWriter
from simulation.library import build_scenario
from simulation.simulator import Simulator

import io
import json
import numpy as np
import os
import tempfile

def run_main(argv: list[str]) -> tuple[int, str, str]:
    stdout, stderr = io.StringIO(), io.StringIO()
    with redirect_stdout(stdout), redirect_stderr(stderr):
        code = main(argv)
    return code, stdout.getvalue(), stderr.getvalue()

def circle(count: int, offset: Pose | None = None) -> tuple[list[float], list[Pose]]:
    offset = offset if offset is not None else Pose()
    angles = np.linspace(0.0, 2.0 * np.pi, count)
    return [0.1 * k for k in range(count)], [offset @ Pose(Rotation.rotz(angle), (5.0 * np.cos(angle), 5.0 * np.sin(angle), 0.0)) for angle in angles]

class TestArguments(unittest.TestCase):
    def test_flags_override_the_defaults(self):
        args = get_parser().parse_args(["run", "--scenario", "room", "--seed", "4", "--no-fusion", "--detector", "zhang", "--static-init-only",
                                        "--duration-scale", "0.5", "--out", "elsewhere", "--single-threaded"])
        config = build_config(args)
        self.assertEqual(config.scenario, "room")
        self.assertEqual(config.seed, 4)
        self.assertFalse(config.fusion)
        self.assertTrue(config.enhanced)
        self.assertFalse(config.dynamic_init)
        self.assertTrue(config.single_threaded)
        self.assertEqual(config.detector, "zhang")
        self.assertEqual(config.duration_scale, 0.5)
        self.assertEqual(config.output_dir, "elsewhere")

    def test_config_file_then_flags(self):
        with tempfile.TemporaryDirectory() as directory:
            file_path = os.path.join(directory, "config.json")
            with open(file_path, "w") as config_file:
                json.dump({"scenario": "figure-eight", "seed": 8, "enhanced": False}, config_file)
            config = build_config(get_parser().parse_args(["run", "--config", file_path, "--seed", "9"]))
        self.assertEqual(config.scenario, "figure-eight")
        self.assertEqual(config.seed, 9)
        self.assertFalse(config.enhanced)

class TestCommands(unittest.TestCase):
    def test_eval(self):
        with tempfile.TemporaryDirectory() as directory:
            truth_path, estimate_path = os.path.join(directory, "truth.tum"), os.path.join(directory, "estimate.tum")
            save_tum(truth_path, *circle(50))
            save_tum(estimate_path, *circle(50, Pose(Rotation.rotz(1.0), (3.0, 2.0, 1.0))))
            code, stdout, _ = run_main(["eval", estimate_path, truth_path])
        self.assertEqual(code, 0)
        result = json.loads(stdout)
        self.assertLess(result["ate_rmse"], 1e-6)
        self.assertLess(result["end_to_end"], 1e-6)

    def test_export(self):
        scenario = build_scenario("room", scale=0.4)
        simulator = Simulator(scenario, "export", 1)
        frames = [frame for _, frame in zip(range(5), simulator.frames())]
        with tempfile.TemporaryDirectory() as directory:
            log_path = os.path.join(directory, "frames.mmlf")
            with FrameLogWriter(log_path, scenario, 1) as writer:
                for frame in frames:
                    writer.write(frame)
            trajectory_path = os.path.join(directory, "trajectory.tum")
            save_tum(trajectory_path, [frame.timestamp for frame in frames], [frame.true_pose for frame in frames])
            ply_path = os.path.join(directory, "map.ply")
            code, stdout, _ = run_main(["--quiet", "export", log_path, trajectory_path, "--out", ply_path, "--voxel-size", "0.5"])
            self.assertEqual(code, 0)
            cloud = load_ply(ply_path)
        self.assertEqual(json.loads(stdout)["points"], len(cloud))
        self.assertGreater(len(cloud), 10)

    def test_profile(self):
        with tempfile.TemporaryDirectory() as directory:
            save_profile(os.path.join(directory, "profile.csv"), {"detector": 0.02, "dynamic_init": 1.0}, 10.0)
            code, stdout, _ = run_main(["profile", directory])
        self.assertEqual(code, 0)
        result = json.loads(stdout)
        self.assertAlmostEqual(result["detector"], 0.2)
        self.assertAlmostEqual(result["dynamic_init"], 10.0)

class TestExitCodes(unittest.TestCase):
    def test_config_error(self):
        code, _, stderr = run_main(["run", "--scenario", "moon-base"])
        self.assertEqual(code, EXIT_CODES["config"])
        error = json.loads(stderr.strip().splitlines()[-1])
        self.assertEqual(error["category"], "config")
        self.assertEqual(error["key"], "scenario")

    def test_scenario_error(self):
        with tempfile.TemporaryDirectory() as directory:
            file_path = os.path.join(directory, "broken.json")
            with open(file_path, "w") as scenario_file:
                json.dump({"schema_version": 1, "name": "broken"}, scenario_file)
            code, _, stderr = run_main(["--quiet", "run", "--scenario", file_path, "--out", directory])
        self.assertEqual(code, EXIT_CODES["scenario"])
        self.assertEqual(json.loads(stderr.strip().splitlines()[-1])["field"], "trajectory")

    def test_evaluation_error(self):
        with tempfile.TemporaryDirectory() as directory:
            truth_path, estimate_path = os.path.join(directory, "truth.tum"), os.path.join(directory, "estimate.tum")
            save_tum(truth_path, *circle(50))
            timestamps, poses = circle(2)
            save_tum(estimate_path, timestamps, poses)
            code, _, stderr = run_main(["eval", estimate_path, truth_path])
        self.assertEqual(code, EXIT_CODES["evaluation"])
        self.assertEqual(json.loads(stderr.strip().splitlines()[-1])["error"], "InsufficientOverlapError")

    def test_io_error(self):
        with tempfile.TemporaryDirectory() as directory:
            code, _, stderr = run_main(["eval", os.path.join(directory, "missing.tum"), os.path.join(directory, "truth.tum")])
        self.assertEqual(code, EXIT_CODES["io"])
        self.assertEqual(json.loads(stderr.strip().splitlines()[-1])["category"], "io")

if __name__ == "__main__":
    unittest.main()
