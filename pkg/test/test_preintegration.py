import unittest

from geometry.rotation import Rotation
from mapping.exceptions import EmptyWindowError, TimestampOrderError
from mapping.preintegration import (ImuSample, Preintegration, integrate, load_imu_csv, repropagate,
                                    save_imu_csv)

from numpy.random import Generator, PCG64
import numpy as np
import numpy.testing as npt
import os
import tempfile

def constant_stream(gyro, accel, duration: float, rate: float = 200.0) -> list[ImuSample]:
    count = int(round(duration * rate)) + 1
    return [ImuSample.from_values(k / rate, gyro, accel) for k in range(count)]

def random_stream(generator: Generator, duration: float, rate: float = 200.0) -> list[ImuSample]:
    count = int(round(duration * rate)) + 1
    gyro = generator.uniform(-1.0, 1.0, size=3)
    accel = generator.uniform(-2.0, 2.0, size=3)
    samples = []
    for k in range(count):
        t = k / rate
        samples.append(ImuSample.from_values(t, gyro + 0.3 * np.sin(3.0 * t + np.arange(3)), accel + np.cos(2.0 * t + np.arange(3))))
    return samples

class TestPreintegration(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.generator_seed = 4444

    def setUp(self):
        self.generator = Generator(PCG64(TestPreintegration.generator_seed))

    def test_zero_motion(self):
        result = integrate(constant_stream((0.0, 0.0, 0.0), (0.0, 0.0, 0.0), 1.0))
        npt.assert_allclose(result.alpha, np.zeros(3), atol=1e-15)
        npt.assert_allclose(result.beta, np.zeros(3), atol=1e-15)
        self.assertEqual(result.gamma, Rotation())
        self.assertAlmostEqual(result.dt_total, 1.0, places=12)

    def test_constant_rotation(self):
        result = integrate(constant_stream((0.0, 0.0, 0.5), (0.0, 0.0, 0.0), 1.0))
        npt.assert_allclose(result.gamma.as_rotvec(), [0.0, 0.0, 0.5], atol=1e-6)

    def test_constant_acceleration(self):
        result = integrate(constant_stream((0.0, 0.0, 0.0), (1.0, 0.0, 0.0), 2.0))
        npt.assert_allclose(result.beta, [2.0, 0.0, 0.0], atol=1e-9)
        npt.assert_allclose(result.alpha, [2.0, 0.0, 0.0], atol=1e-9)

    def test_biases_are_subtracted(self):
        samples = constant_stream((0.1, 0.0, 0.0), (0.2, 0.0, 0.0), 1.0)
        result = integrate(samples, b_w=(0.1, 0.0, 0.0), b_a=(0.2, 0.0, 0.0))
        npt.assert_allclose(result.beta, np.zeros(3), atol=1e-12)
        self.assertEqual(result.gamma, Rotation())

    def test_errors(self):
        with self.assertRaises(EmptyWindowError):
            integrate([ImuSample.from_values(0.0, np.zeros(3), np.zeros(3))])
        with self.assertRaises(TimestampOrderError):
            integrate([ImuSample.from_values(0.0, np.zeros(3), np.zeros(3)),
                       ImuSample.from_values(0.1, np.zeros(3), np.zeros(3)),
                       ImuSample.from_values(0.1, np.zeros(3), np.zeros(3))])

    def test_repropagate_zero_delta(self):
        result = integrate(random_stream(self.generator, 0.5))
        self.assertIs(repropagate(result, np.zeros(3)), result)

    def test_repropagate_exact_vs_first_order(self):
        samples = constant_stream((0.0, 0.0, 0.5), (0.3, 0.0, 9.81), 0.5)
        result = integrate(samples)
        new_bias = np.array([0.01, 0.0, 0.0])
        exact = repropagate(result, new_bias)
        fast = repropagate(result, new_bias, exact=False)
        self.assertLess(np.linalg.norm((exact.gamma.inverse() * fast.gamma).as_rotvec()), 1e-4)
        npt.assert_equal(fast.bias_gyro, new_bias)

    def test_bias_correction_bound(self):
        for _ in range(20):
            samples = random_stream(self.generator, 0.5)
            result = integrate(samples)
            delta = self.generator.normal(size=3)
            delta *= self.generator.uniform(0.0, 0.02) / np.linalg.norm(delta)
            full = repropagate(result, delta)
            error = np.linalg.norm((full.gamma.inverse() * result.corrected_gamma(delta)).as_rotvec())
            self.assertLessEqual(error, 5.0 * np.dot(delta, delta) * result.dt_total**2 + 1e-12)

    def test_jacobian_finite_differences(self):
        epsilon = 1e-6
        for _ in range(10):
            samples = random_stream(self.generator, 0.5)
            result = integrate(samples)
            for axis in range(3):
                shifted = np.zeros(3)
                shifted[axis] = epsilon
                perturbed = integrate(samples, b_w=shifted)
                numerical = (result.gamma.inverse() * perturbed.gamma).as_rotvec() / epsilon
                analytic = result.jac_gamma_bw[:, axis]
                self.assertLess(np.linalg.norm(numerical - analytic) / np.linalg.norm(analytic), 1e-3)

    def test_concatenation(self):
        samples = random_stream(self.generator, 1.0)
        first = integrate(samples[:81])
        second = integrate(samples[80:])
        whole = integrate(samples)
        joined = first.concatenate(second)
        npt.assert_allclose(joined.alpha, whole.alpha, atol=1e-8)
        npt.assert_allclose(joined.beta, whole.beta, atol=1e-8)
        self.assertLess(np.linalg.norm((whole.gamma.inverse() * joined.gamma).as_rotvec()), 1e-8)
        npt.assert_allclose(joined.jac_gamma_bw, whole.jac_gamma_bw, atol=1e-8)
        self.assertAlmostEqual(joined.dt_total, whole.dt_total, places=12)

    def test_concatenation_requires_consecutive_windows(self):
        samples = random_stream(self.generator, 1.0)
        with self.assertRaises(TimestampOrderError):
            integrate(samples[:50]).concatenate(integrate(samples[60:]))

    def test_imu_csv_file(self):
        samples = random_stream(self.generator, 0.1)
        with tempfile.TemporaryDirectory() as directory:
            file_path = os.path.join(directory, "imu.csv")
            save_imu_csv(file_path, samples)
            loaded = load_imu_csv(file_path)

        self.assertEqual(len(loaded), len(samples))
        for expected, result in zip(samples, loaded):
            self.assertEqual(result.timestamp, expected.timestamp)
            npt.assert_equal(result.gyro, expected.gyro)
            npt.assert_equal(result.accel, expected.accel)

    def test_preintegration_is_a_value(self):
        result = Preintegration(random_stream(self.generator, 0.2))
        samples = result.get_samples()
        samples.clear()
        self.assertEqual(len(result.get_samples()), 41)

if __name__ == "__main__":
    unittest.main()
