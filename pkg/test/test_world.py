import unittest

from geometry.pose import Pose
from geometry.rotation import Rotation
from simulation.lidar import cast_rays, inject_degeneracy, raycast_scan
from simulation.scenario import DegeneracyEvent, LidarSpec, Scenario
from simulation.trajectory import Trajectory
from simulation.world.box import Box, intersect_boxes
from simulation.world.patch import Patch

from numpy.random import Generator, PCG64
import numpy as np
import numpy.testing as npt

def still_scenario(world, lidar_spec: LidarSpec | None = None) -> Scenario:
    return Scenario(world, Trajectory([0.0, 1.0], [Pose(), Pose()]), lidar_spec=lidar_spec)

class TestShapes(unittest.TestCase):
    def test_box_validation(self):
        with self.assertRaises(ValueError):
            Box((0.0, 0.0, 0.0), (1.0, 0.0, 1.0))
        with self.assertRaises(ValueError):
            Box((0.0, 0.0), (1.0, 1.0, 1.0))

    def test_box_intersection(self):
        box = Box((5.0, 0.0, 0.0), (2.0, 2.0, 2.0))
        origins = np.zeros((3, 3))
        directions = np.array([[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        npt.assert_allclose(box.intersect(origins, directions), (4.0, np.inf, np.inf))

    def test_ray_from_inside_box_hits_its_exit(self):
        box = Box((0.0, 0.0, 0.0), (4.0, 6.0, 2.0))
        directions = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]])
        npt.assert_allclose(box.intersect(np.zeros((3, 3)), directions), (2.0, 3.0, 1.0))

    def test_batched_boxes(self):
        lowers = np.array([[1.0, -1.0, -1.0], [3.0, -1.0, -1.0]])
        uppers = np.array([[2.0, 1.0, 1.0], [4.0, 1.0, 1.0]])
        distances = intersect_boxes(np.zeros((1, 3)), np.array([[1.0, 0.0, 0.0]]), lowers, uppers)
        npt.assert_allclose(distances, [[1.0, 3.0]])

    def test_box_distance_to_surface(self):
        box = Box((0.0, 0.0, 0.0), (2.0, 2.0, 2.0))
        points = np.array([[0.0, 0.0, 0.0], [3.0, 0.0, 0.0], [1.0, 0.5, 0.0], [2.0, 2.0, 1.0]])
        npt.assert_allclose(box.distance_to_surface(points), (1.0, 2.0, 0.0, np.sqrt(2.0)))

    def test_infinite_patch(self):
        floor = Patch((0.0, 0.0, 0.0), (0.0, 0.0, 1.0))
        origins = np.array([[0.0, 0.0, 1.0], [100.0, -50.0, 2.0]])
        directions = np.array([[0.0, 0.0, -1.0], [0.0, 0.6, -0.8]])
        npt.assert_allclose(floor.intersect(origins, directions), (1.0, 2.5))
        self.assertTrue(np.isinf(floor.intersect(origins[:1], np.array([[1.0, 0.0, 0.0]]))[0]))
        self.assertIsNone(floor.get_footprint())

    def test_finite_patch(self):
        wall = Patch((2.0, 0.0, 0.0), (-1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (1.0, 1.0))
        directions = np.array([[1.0, 0.0, 0.0], [np.cos(0.6), np.sin(0.6), 0.0]])
        distances = wall.intersect(np.zeros((2, 3)), directions)
        self.assertAlmostEqual(distances[0], 2.0)
        self.assertTrue(np.isinf(distances[1]))

    def test_equality_and_dict(self):
        box = Box((1.0, 2.0, 3.0), (1.0, 1.0, 1.0))
        self.assertEqual(box, Box([1.0, 2.0, 3.0], np.ones(3)))
        self.assertNotEqual(box, Box((1.0, 2.0, 3.0), (1.0, 1.0, 2.0)))
        self.assertEqual(Patch((0.0, 0.0, 0.0), (0.0, 0.0, 2.0)).to_dict()["half_extents"], [None, None])

class TestLidar(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.generator_seed = 3333

    def setUp(self):
        self.generator = Generator(PCG64(TestLidar.generator_seed))

    def test_single_wall(self):
        spec = LidarSpec(channels=1, elevation_min=0.0, elevation_max=0.0, horizontal_resolution=90.0, noise_sigma=0.01)
        scenario = still_scenario([Box((2.1, 0.0, 0.0), (0.2, 10.0, 10.0))], spec)
        scan = raycast_scan(scenario, Pose(), self.generator)
        self.assertEqual(scan.shape, (1, 3))
        self.assertLess(abs(np.linalg.norm(scan[0]) - 2.0), 4.0 * 0.01)
        self.assertGreater(scan[0, 0], 0.0)

    def test_empty_world(self):
        scan = raycast_scan(still_scenario([]), Pose(), self.generator)
        self.assertEqual(scan.shape, (0, 3))

    def test_points_lie_on_enclosing_box(self):
        box = Box((0.0, 0.0, 0.0), (10.0, 10.0, 3.0))
        scenario = still_scenario([box], LidarSpec(noise_sigma=0.0))
        for pose in (Pose(), Pose(Rotation.rotz(0.4), (1.0, -2.0, 0.5))):
            scan = raycast_scan(scenario, pose, self.generator)
            self.assertEqual(len(scan), len(scenario.lidar_spec.beam_directions()))
            self.assertLess(np.max(box.distance_to_surface(pose.transform_points(scan))), 1e-9)

    def test_noisy_points_stay_near_geometry(self):
        sigma = 0.02
        box = Box((0.0, 0.0, 0.0), (10.0, 10.0, 3.0))
        scenario = still_scenario([box], LidarSpec(noise_sigma=sigma))
        scan = raycast_scan(scenario, Pose(), self.generator)
        residuals = box.distance_to_surface(scan)
        self.assertGreaterEqual(np.mean(residuals < 3.0 * sigma), 0.99)

    def test_max_range(self):
        spec = LidarSpec(channels=1, elevation_min=0.0, elevation_max=0.0, horizontal_resolution=180.0, max_range=5.0, noise_sigma=0.0)
        scenario = still_scenario([Box((6.0, 0.0, 0.0), (1.0, 1.0, 1.0)), Box((-3.0, 0.0, 0.0), (1.0, 1.0, 1.0))], spec)
        scan = raycast_scan(scenario, Pose(), self.generator)
        npt.assert_allclose(scan, [[-2.5, 0.0, 0.0]], atol=1e-12)

    def test_nearest_surface_wins(self):
        world = [Patch((0.0, 0.0, 0.0), (0.0, 0.0, 1.0)), Box((0.0, 0.0, 0.5), (1.0, 1.0, 0.2))]
        distances = cast_rays(world, np.array([[0.0, 0.0, 2.0]]), np.array([[0.0, 0.0, -1.0], [1.0, 0.0, 0.0]]))
        npt.assert_allclose(distances, (1.4, np.inf))

class TestDegeneracyInjection(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.generator_seed = 4444

    def setUp(self):
        self.generator = Generator(PCG64(TestDegeneracyInjection.generator_seed))
        self.scan = self.generator.uniform(-20.0, 20.0, size=(10000, 3))

    def test_drop_more_than_available(self):
        event = DegeneracyEvent(0.0, 1.0, "drop", 20000)
        npt.assert_array_equal(inject_degeneracy(self.scan, event, self.generator), self.scan)

    def test_drop_is_deterministic(self):
        event = DegeneracyEvent(0.0, 1.0, "drop", 20)
        first = inject_degeneracy(self.scan, event, Generator(PCG64(5)))
        second = inject_degeneracy(self.scan, event, Generator(PCG64(5)))
        self.assertEqual(first.shape, (20, 3))
        npt.assert_array_equal(first, second)

    def test_clamp(self):
        event = DegeneracyEvent(0.0, 1.0, "clamp", 10.0)
        clamped = inject_degeneracy(self.scan, event, self.generator)
        self.assertTrue(np.all(np.linalg.norm(clamped, axis=1) <= 10.0))
        self.assertEqual(len(clamped), np.sum(np.linalg.norm(self.scan, axis=1) <= 10.0))

    def test_full_occlusion(self):
        event = DegeneracyEvent(0.0, 1.0, "occlude", 360.0)
        self.assertEqual(inject_degeneracy(self.scan, event, self.generator).shape, (0, 3))

    def test_sector_occlusion(self):
        event = DegeneracyEvent(0.0, 1.0, "occlude", 90.0, azimuth=180.0)
        occluded = inject_degeneracy(self.scan, event, self.generator)
        azimuths = np.degrees(np.arctan2(occluded[:, 1], occluded[:, 0]))
        self.assertTrue(np.all(np.abs(azimuths) < 135.0))
        self.assertGreater(len(occluded), 0.7 * len(self.scan))

if __name__ == "__main__":
    unittest.main()
