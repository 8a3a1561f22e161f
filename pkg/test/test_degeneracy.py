import unittest

from mapping.degeneracy import (DIAGNOSTICS_CSV_HEADER, DegeneracyConfig, DegeneracyState, Detector, assess, load_diagnostics,
                                split_covariance, zhang_degeneracy_factor)
from geometry.eigen import sym_eig3
from simulation.library import build_scenario
from test.test_frontend import run_frontend

from numpy.random import Generator, PCG64
import csv
import numpy as np
import numpy.testing as npt
import os
import tempfile

def random_spd(generator: Generator, size: int = 6) -> np.ndarray:
    a = generator.normal(size=(size, size))
    return a @ a.T + 1e-3 * np.eye(size)

class TestSplitCovariance(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.generator_seed = 31

    def test_diagonal(self):
        rotation_block, translation_block = split_covariance(np.diag([2.0] * 3 + [5.0] * 3))
        npt.assert_array_equal(rotation_block, 2.0 * np.eye(3))
        npt.assert_array_equal(translation_block, 5.0 * np.eye(3))

    def test_zero(self):
        for block in split_covariance(np.zeros((6, 6))):
            npt.assert_array_equal(block, np.zeros((3, 3)))

    def test_blocks_of_spd_matrices(self):
        generator = Generator(PCG64(TestSplitCovariance.generator_seed))
        for _ in range(50):
            p = random_spd(generator)
            full = np.linalg.eigvalsh(p)
            for block in split_covariance(p):
                eigenvalues = sym_eig3(block).eigenvalues
                self.assertGreater(eigenvalues[-1], 0.0)
                # interlacing
                self.assertLessEqual(eigenvalues[0], full[-1] + 1e-9)
                self.assertGreaterEqual(eigenvalues[-1], full[0] - 1e-9)

    def test_wrong_shape(self):
        with self.assertRaises(ValueError):
            split_covariance(np.eye(3))

class TestAssess(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.generator_seed = 57
        cls.config = DegeneracyConfig()

    def test_major_translation(self):
        p = np.diag([1e-6] * 3 + [0.006, 1e-6, 1e-6])
        flag, state, diagnostics = assess(p, self.config, DegeneracyState())
        self.assertEqual(flag, 1)
        self.assertEqual(state.gamma_lambda, 0)
        self.assertEqual(state.last_flag, "over")
        self.assertAlmostEqual(diagnostics["lambda_t"], 0.006)

    def test_zero_covariance(self):
        flag, state, diagnostics = assess(np.zeros((6, 6)), self.config, DegeneracyState())
        self.assertEqual(flag, 0)
        self.assertEqual(state.gamma_lambda, 0)
        self.assertEqual(diagnostics["gamma"], 0)

    def test_persistence_counter(self):
        p = np.diag([1e-6] * 3 + [0.003] * 3)
        state = DegeneracyState()
        flags = []
        for _ in range(11):
            flag, state, _ = assess(p, self.config, state)
            flags.append(flag)
        self.assertEqual(flags, [0] * 10 + [1])
        self.assertEqual(state.gamma_lambda, 0)

    def test_counter_resets_below_minor(self):
        state = DegeneracyState()
        for _ in range(5):
            _, state, _ = assess(np.diag([1e-6] * 3 + [0.003] * 3), self.config, state)
        self.assertEqual(state.gamma_lambda, 5)
        self.assertEqual(state.last_flag, "minor")
        _, state, _ = assess(np.diag([1e-6] * 6), self.config, state)
        self.assertEqual(state.gamma_lambda, 0)
        self.assertEqual(state.last_flag, "normal")

    def test_translation_scaling_leaves_rotation_alone(self):
        generator = Generator(PCG64(TestAssess.generator_seed))
        for _ in range(20):
            p = random_spd(generator) * 1e-4
            scaled = p.copy()
            scaled[3:, 3:] *= 50.0
            _, _, diagnostics = assess(p, self.config, DegeneracyState())
            _, _, scaled_diagnostics = assess(scaled, self.config, DegeneracyState())
            self.assertEqual(diagnostics["lambda_r"], scaled_diagnostics["lambda_r"])

    def test_monotone_in_eigenvalues(self):
        generator = Generator(PCG64(TestAssess.generator_seed))
        for _ in range(200):
            values = generator.uniform(0.0, 0.01, size=2)
            gamma = int(generator.integers(0, 12))
            state = DegeneracyState(gamma)
            flag, _, _ = assess(np.diag([values[0]] * 3 + [values[1]] * 3), self.config, state)
            raised, _, _ = assess(np.diag([values[0] * 2.0] * 3 + [values[1] * 3.0] * 3), self.config, state)
            self.assertGreaterEqual(raised, flag)

    def test_counter_ignores_frames_above_major(self):
        config = DegeneracyConfig(require_both_axes=True)
        state = DegeneracyState()
        for _ in range(20):
            flag, state, _ = assess(np.diag([1e-6] * 3 + [0.006] * 3), config, state)
            self.assertEqual(flag, 0)
        self.assertEqual(state.gamma_lambda, 0)
        self.assertEqual(state.last_flag, "minor")

        for _ in range(3):
            _, state, _ = assess(np.diag([1e-6] * 3 + [0.003] * 3), config, state)
        for _ in range(20):
            _, state, diagnostics = assess(np.diag([1e-6] * 3 + [0.006] * 3), config, state)
        self.assertEqual(diagnostics["gamma"], 3)
        _, state, _ = assess(np.diag([0.0003] * 3 + [0.006] * 3), config, state)
        self.assertEqual(state.gamma_lambda, 4)

    def test_both_axes_switch(self):
        p = np.diag([1e-6] * 3 + [0.006] * 3)
        flag, _, _ = assess(p, DegeneracyConfig(require_both_axes=True), DegeneracyState())
        self.assertEqual(flag, 0)
        flag, _, _ = assess(np.diag([0.001] * 3 + [0.006] * 3), DegeneracyConfig(require_both_axes=True), DegeneracyState())
        self.assertEqual(flag, 1)

    def test_deterministic(self):
        p = np.diag([0.0003] * 3 + [0.002] * 3)
        self.assertEqual(assess(p, self.config, DegeneracyState(4)), assess(p, self.config, DegeneracyState(4)))

    def test_invalid_config(self):
        with self.assertRaises(ValueError):
            DegeneracyConfig(xi_minor_t=0.01)
        with self.assertRaises(ValueError):
            DegeneracyConfig(n_kappa=0)
        with self.assertRaises(TypeError):
            DegeneracyConfig(n_kappa=2.5)
        with self.assertRaises(ValueError):
            DegeneracyConfig(mode="x-icp")
        config = DegeneracyConfig()
        self.assertAlmostEqual(config.xi_minor_t, 0.001)
        self.assertAlmostEqual(config.xi_minor_r, 0.00012)

class TestZhangFactor(unittest.TestCase):
    def test_identity(self):
        self.assertAlmostEqual(zhang_degeneracy_factor(np.eye(6)), 1.0)

    def test_smallest_diagonal(self):
        self.assertAlmostEqual(zhang_degeneracy_factor(np.diag([1000.0] * 5 + [50.0])), 50.0)

class TestDetector(unittest.TestCase):
    def test_diagnostics_file(self):
        detector = Detector()
        detector.update(0.0, np.diag([1e-6] * 6))
        detector.update(0.1, np.diag([1e-6] * 3 + [0.01] * 3))
        self.assertEqual(detector.flagged_times(), [0.1])
        with tempfile.TemporaryDirectory() as directory:
            file_path = os.path.join(directory, "diagnostics.csv")
            detector.save_diagnostics(file_path)
            with open(file_path, newline="") as diagnostics_file:
                self.assertEqual(tuple(next(csv.reader(diagnostics_file))), DIAGNOSTICS_CSV_HEADER)
            rows = load_diagnostics(file_path)
        self.assertEqual([row.flag for row in rows], [False, True])
        self.assertAlmostEqual(rows[1].lambda_t, 0.01)

    def test_baseline_mode(self):
        detector = Detector(DegeneracyConfig(mode="zhang"))
        self.assertFalse(detector.update(0.0, np.diag([0.01] * 6), np.eye(6) * 1000.0))
        self.assertTrue(detector.update(0.1, np.diag([1e-6] * 6), np.diag([1000.0] * 5 + [10.0])))
        self.assertTrue(detector.update(0.2, np.diag([1e-6] * 6), None))
        self.assertAlmostEqual(detector.get_diagnostics()[1].factor, 10.0)

    def test_invalid_config(self):
        with self.assertRaises(TypeError):
            Detector(config={"mode": "ours"})

class TestDetectorsAgree(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.scenario = build_scenario("room", events=1, scale=0.6, seed=5)
        event = cls.scenario.events[0]
        cls.records, _, _ = run_frontend(cls.scenario, until=event.t_start + 1.5)

    def first_flag(self, mode: str) -> int:
        detector = Detector(DegeneracyConfig(mode=mode))
        # the first record only seeds the map
        flags = [detector.update(record.timestamp, record.covariance, record.information) for record in self.records[1:]]
        self.assertTrue(any(flags))
        return flags.index(True)

    def test_first_flags_within_five_frames(self):
        event = self.scenario.events[0]
        ours, zhang = self.first_flag("ours"), self.first_flag("zhang")
        self.assertLessEqual(abs(ours - zhang), 5)
        self.assertGreaterEqual(self.records[ours + 1].timestamp, event.t_start - 1e-9)

if __name__ == "__main__":
    unittest.main()
