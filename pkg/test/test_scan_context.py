import unittest

from geometry.pose import Pose
from geometry.rotation import Rotation
from mapping.exceptions import DescriptorError
from mapping.scan_context import (MatchedPair, ScanContextConfig, ScanContextIndex, ScDescriptor, SimilarityHit, SimilarityState, distance,
                                  load_descriptor_csv, make_descriptor, save_descriptor_csv, search, update_temporal_consistency)
from simulation.library import build_scenario
from simulation.lidar import raycast_scan
from simulation.scenario import LidarSpec

from numpy.random import Generator, PCG64
import numpy as np
import numpy.testing as npt
import os
import tempfile

def bin_centered_cloud(generator: Generator, count: int, config: ScanContextConfig) -> np.ndarray:
    """Points kept away from the ring and sector boundaries."""
    ring_width = config.max_radius / config.rings
    rings = generator.integers(0, config.rings, size=count)
    sectors = generator.integers(0, config.sectors, size=count)
    ranges = (rings + 0.5 + generator.uniform(-0.3, 0.3, size=count)) * ring_width
    azimuths = (sectors + 0.5 + generator.uniform(-0.3, 0.3, size=count)) * config.sector_width
    heights = generator.uniform(-1.5, 4.0, size=count)
    return np.column_stack((ranges * np.cos(azimuths), ranges * np.sin(azimuths), heights))

def hit(map_id: int, active: int, sleeping: int) -> SimilarityHit:
    return SimilarityHit(map_id, MatchedPair(active, sleeping, Pose()))

class TestDescriptor(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.generator_seed = 606
        cls.config = ScanContextConfig()

    def setUp(self):
        self.generator = Generator(PCG64(TestDescriptor.generator_seed))

    def test_empty_cloud(self):
        descriptor = make_descriptor(np.empty((0, 3)))
        npt.assert_array_equal(descriptor.ring_key, np.zeros(20))
        self.assertTrue(descriptor.is_empty())
        self.assertEqual(descriptor.shape, (20, 60))

    def test_identical_clouds(self):
        cloud = bin_centered_cloud(self.generator, 500, self.config)
        self.assertEqual(make_descriptor(cloud), make_descriptor(cloud.copy()))

    def test_rotation_by_one_sector(self):
        cloud = bin_centered_cloud(self.generator, 800, self.config)
        rotated = Rotation.rotz(self.config.sector_width).apply(cloud)
        original, turned = make_descriptor(cloud), make_descriptor(rotated)
        npt.assert_array_equal(turned.matrix, np.roll(original.matrix, 1, axis=1))
        npt.assert_array_equal(turned.ring_key, original.ring_key)

    def test_ring_key_nearly_invariant(self):
        scenario = build_scenario("room", lidar_spec=LidarSpec(noise_sigma=0.0))
        scan = raycast_scan(scenario, Pose(translation=(0.0, -4.0, 1.0)), self.generator)
        rotated = Rotation.rotz(np.radians(23.0)).apply(scan)
        npt.assert_allclose(make_descriptor(rotated).ring_key, make_descriptor(scan).ring_key, atol=0.05)

    def test_points_beyond_the_radius_are_ignored(self):
        descriptor = make_descriptor([[100.0, 0.0, 1.0], [0.0, -90.0, 1.0]])
        self.assertTrue(descriptor.is_empty())

class TestDistance(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.generator_seed = 707
        cls.config = ScanContextConfig()

    def setUp(self):
        self.generator = Generator(PCG64(TestDistance.generator_seed))

    def test_self_distance(self):
        descriptor = make_descriptor(bin_centered_cloud(self.generator, 600, self.config))
        score, shift = distance(descriptor, descriptor)
        self.assertAlmostEqual(score, 0.0, places=12)
        self.assertEqual(shift, 0)

    def test_cyclic_shift(self):
        descriptor = make_descriptor(bin_centered_cloud(self.generator, 600, self.config))
        shifted = ScDescriptor(np.roll(descriptor.matrix, 10, axis=1), descriptor.ring_key.copy())
        score, shift = distance(descriptor, shifted)
        self.assertAlmostEqual(score, 0.0, places=12)
        self.assertEqual(shift, 10)

    def test_symmetry(self):
        for _ in range(10):
            a = make_descriptor(bin_centered_cloud(self.generator, 300, self.config))
            b = make_descriptor(bin_centered_cloud(self.generator, 300, self.config))
            self.assertAlmostEqual(distance(a, b)[0], distance(b, a)[0], delta=1e-12)
            self.assertTrue(0.0 <= distance(a, b)[0] <= 2.0)

    def test_yaw_estimate(self):
        scenario = build_scenario("room", lidar_spec=LidarSpec(noise_sigma=0.0))
        candidate = Pose(translation=(1.0, -4.0, 1.0))
        query = Pose(Rotation.rotz(np.radians(37.0)), (1.0, -4.0, 1.0))
        score, shift = distance(make_descriptor(raycast_scan(scenario, query, self.generator)),
                                make_descriptor(raycast_scan(scenario, candidate, self.generator)))
        self.assertLess(abs(np.degrees(shift * self.config.sector_width) - 37.0), 6.0)
        self.assertLess(score, self.config.score_threshold)

    def test_dimension_mismatch(self):
        with self.assertRaises(DescriptorError):
            distance(make_descriptor(np.ones((5, 3))), make_descriptor(np.ones((5, 3)), ScanContextConfig(rings=10)))

class TestIndex(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.generator_seed = 808

    def setUp(self):
        self.generator = Generator(PCG64(TestIndex.generator_seed))

    def test_empty_index(self):
        self.assertEqual(search(ScanContextIndex(), make_descriptor(np.ones((5, 3)))), [])

    def test_revisit_finds_itself(self):
        config = ScanContextConfig()
        index = ScanContextIndex(config)
        descriptors = [make_descriptor(bin_centered_cloud(self.generator, 400, config), config) for _ in range(15)]
        for keyframe_id, descriptor in enumerate(descriptors):
            index.add(descriptor, keyframe_id, map_id=keyframe_id % 2)
        candidates = index.search(descriptors[7])
        self.assertEqual(candidates[0].keyframe_id, 7)
        self.assertAlmostEqual(candidates[0].score, 0.0, places=12)
        self.assertEqual(index.search(descriptors[7], map_ids={0}), [])
        self.assertEqual(index.search(descriptors[7], exclude={7}), [])

    def test_reassign(self):
        index = ScanContextIndex()
        for keyframe_id in range(4):
            index.add(make_descriptor(bin_centered_cloud(self.generator, 100, index.config)), keyframe_id, map_id=keyframe_id // 2)
        self.assertEqual(index.reassign(0, 1), 2)
        self.assertEqual(index.keyframe_ids(1), [0, 1, 2, 3])
        self.assertEqual(index.keyframe_ids(0), [])

    def test_wrong_shape(self):
        with self.assertRaises(DescriptorError):
            ScanContextIndex().add(make_descriptor(np.ones((5, 3)), ScanContextConfig(sectors=30)), 0, 0)

class TestCorridorPlaces(unittest.TestCase):
    """Noise-free keyframes every meter along the corridor loop, which drives past its start a second time."""
    @classmethod
    def setUpClass(cls):
        cls.generator_seed = 4242
        generator = Generator(PCG64(cls.generator_seed))
        scenario = build_scenario("corridor-loop", scale=0.5, lidar_spec=LidarSpec(noise_sigma=0.0))
        trajectory = scenario.trajectory
        positions, descriptors = [], []
        for t in np.arange(trajectory.start_time, trajectory.end_time, 0.1):
            pose = trajectory.pose_at(t)
            if positions and np.linalg.norm(pose.translation - positions[-1]) < 1.0:
                continue
            positions.append(pose.translation)
            descriptors.append(make_descriptor(raycast_scan(scenario, pose, generator)))
        cls.positions = np.array(positions)
        cls.descriptors = descriptors
        cls.config = ScanContextConfig()

    def test_revisits_on_a_loop(self):
        index = ScanContextIndex()
        successes, revisits = 0, 0
        for keyframe_id, descriptor in enumerate(self.descriptors):
            older = keyframe_id - 20
            if older > 0:
                gaps = np.linalg.norm(self.positions[:older] - self.positions[keyframe_id], axis=1)
                nearest = int(np.argmin(gaps))
                if gaps[nearest] < 1.0:
                    revisits += 1
                    candidates = index.search(descriptor, exclude=set(range(older, keyframe_id)))
                    successes += bool(candidates) and abs(candidates[0].keyframe_id - nearest) <= 2
            index.add(descriptor, keyframe_id, 0)
        self.assertGreater(revisits, 3)
        self.assertGreaterEqual(successes / revisits, 0.9)

    def test_distant_places_do_not_match(self):
        matches, pairs = 0, 0
        for i in range(len(self.descriptors)):
            for j in range(i + 1, len(self.descriptors)):
                if np.linalg.norm(self.positions[i] - self.positions[j]) > 10.0:
                    pairs += 1
                    matches += distance(self.descriptors[i], self.descriptors[j])[0] < self.config.score_threshold
        self.assertGreater(pairs, 500)
        self.assertLessEqual(matches / pairs, 0.01)

    def test_opposite_sides_of_the_loop(self):
        # the loop is point-symmetric about the origin, the walls around it are not
        opposite = 0
        for i in range(len(self.descriptors)):
            for j in range(i + 1, len(self.descriptors)):
                if np.linalg.norm(self.positions[i] + self.positions[j]) < 1.0 and np.linalg.norm(self.positions[i] - self.positions[j]) > 10.0:
                    opposite += 1
                    score, _ = distance(self.descriptors[i], self.descriptors[j])
                    self.assertGreaterEqual(score, self.config.score_threshold, f"keyframes {i} and {j}")
        self.assertGreater(opposite, 5)

class TestTemporalConsistency(unittest.TestCase):
    def test_streak_is_accepted(self):
        state = SimilarityState()
        accepted = []
        for k in range(4):
            state, flag = update_temporal_consistency(state, hit(1, 10 + k, 3 + k), eps_th=3)
            accepted.append(flag)
        self.assertEqual(accepted, [False, False, False, True])
        self.assertEqual(state.gamma_s, 4)
        self.assertEqual(len(state.matched_pairs), 4)

    def test_miss_breaks_the_streak(self):
        state = SimilarityState()
        for event in (hit(1, 0, 0), hit(1, 1, 1), None, hit(1, 2, 2)):
            state, flag = update_temporal_consistency(state, event, eps_th=3)
            self.assertFalse(flag)
        self.assertEqual(state.gamma_s, 1)

    def test_other_map_starts_a_new_streak(self):
        state = SimilarityState()
        for event in (hit(1, 0, 0), hit(1, 1, 1), hit(2, 2, 5)):
            state, _ = update_temporal_consistency(state, event, eps_th=3)
        self.assertEqual((state.gamma_s, state.target_map), (1, 2))
        self.assertEqual(state.matched_pairs[0].sleeping_keyframe, 5)

    def test_single_spurious_hit(self):
        _, flag = update_temporal_consistency(SimilarityState(), hit(1, 0, 0), eps_th=1)
        self.assertFalse(flag)

class TestDescriptorFile(unittest.TestCase):
    def test_save_and_load(self):
        descriptor = make_descriptor([[3.0, 0.1, 0.5], [-10.0, 4.0, 2.5]])
        with tempfile.TemporaryDirectory() as directory:
            file_path = os.path.join(directory, "descriptor.csv")
            save_descriptor_csv(file_path, descriptor)
            self.assertEqual(load_descriptor_csv(file_path), descriptor)

if __name__ == "__main__":
    unittest.main()
