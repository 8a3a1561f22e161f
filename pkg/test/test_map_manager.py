import unittest

from geometry.pose import Pose
from geometry.rotation import Rotation
from mapping.exceptions import FusionError, MapLifecycleError
from mapping.initialization import InitResult
from mapping.map_manager import (ALLOWED_TRANSITIONS, FusionRequest, MapDatabase, MapManagerConfig, loop_information, odometry_information)
from mapping.registration import RegistrationResult
from mapping.scan_context import MatchedPair, ScanContextConfig, distance, shift_to_yaw
from simulation.library import build_scenario
from simulation.lidar import raycast_scan
from simulation.scenario import LidarSpec

from numpy.random import Generator, PCG64
import numpy as np
import numpy.testing as npt
import unittest.mock as mock

def init_result() -> InitResult:
    return InitResult(b_w=np.zeros(3), velocities=[np.zeros(3)], gravity=np.array([0.0, 0.0, -9.81]))

def random_cloud(generator: Generator, count: int = 300) -> np.ndarray:
    return generator.uniform((-20.0, -20.0, -1.0), (20.0, 20.0, 3.0), size=(count, 3))

class TestEdgeInformation(unittest.TestCase):
    def test_odometry_information(self):
        npt.assert_allclose(odometry_information(np.diag([1e-2] * 3 + [1e-1] * 3)), np.diag([100.0] * 3 + [10.0] * 3))
        npt.assert_array_equal(odometry_information(None), np.eye(6))
        # eigenvalues are floored before inverting
        npt.assert_allclose(odometry_information(np.zeros((6, 6)), floor=1e-6), np.eye(6) * 1e6)

    def test_loop_information(self):
        config = MapManagerConfig()
        npt.assert_allclose(loop_information(0.01, config), np.diag(config.loop_information))
        npt.assert_allclose(loop_information(0.1, config), np.diag(config.loop_information) / 2.0)

class TestLifecycle(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.generator_seed = 4242

    def setUp(self):
        self.generator = Generator(PCG64(TestLifecycle.generator_seed))
        self.database = MapDatabase()

    def assert_transitions_allowed(self):
        for transition in self.database.transitions:
            self.assertIn((transition.before, transition.after), ALLOWED_TRANSITIONS)

    def test_stationary_stream(self):
        self.database.try_start_new_map(init_result(), 0.0)
        keyframes = [self.database.maybe_add_keyframe(0.1 * k, Pose(), random_cloud(self.generator)) for k in range(20)]
        self.assertEqual(keyframes, [0] + [None] * 19)
        self.assertEqual(self.database.keyframe_count(), 1)
        self.assertEqual(len(self.database.active_map().graph.edges_of_kind("prior")), 1)

    def test_straight_path(self):
        self.database.try_start_new_map(init_result(), 0.0)
        for k, x in enumerate(np.arange(0.0, 10.25, 0.5)):
            self.database.maybe_add_keyframe(0.5 * k, Pose(translation=(x, 0.0, 0.0)), random_cloud(self.generator), np.eye(6) * 1e-4)
        self.assertEqual(self.database.keyframe_count(), 11)
        graph = self.database.active_map().graph
        self.assertEqual(len(graph.edges_of_kind("odometry")), 10)
        npt.assert_allclose(graph.edges_of_kind("odometry")[0].information, np.eye(6) * 1e4)
        timestamps, poses = self.database.trajectory(self.database.active_id)
        self.assertEqual(len(timestamps), 11)
        npt.assert_allclose(poses[-1].translation, (10.0, 0.0, 0.0))

    def test_pure_rotation(self):
        self.database.try_start_new_map(init_result(), 0.0)
        self.database.maybe_add_keyframe(0.0, Pose(), random_cloud(self.generator))
        self.assertIsNone(self.database.maybe_add_keyframe(0.1, Pose(Rotation.rotz(np.radians(5.0))), random_cloud(self.generator)))
        self.assertIsNotNone(self.database.maybe_add_keyframe(0.2, Pose(Rotation.rotz(np.radians(12.0))), random_cloud(self.generator)))

    def test_keyframe_needs_an_active_map(self):
        with self.assertRaises(MapLifecycleError):
            self.database.maybe_add_keyframe(0.0, Pose(), random_cloud(self.generator))

    def test_hibernate(self):
        first = self.database.try_start_new_map(init_result(), 0.0)
        self.database.maybe_add_keyframe(0.0, Pose(), random_cloud(self.generator))
        self.assertEqual(self.database.hibernate(1.0), first)
        self.assertIsNone(self.database.active_map())
        with self.assertRaises(MapLifecycleError):
            self.database.hibernate(1.1)

        # rejected initialization windows leave the database without an active map
        self.assertIsNone(self.database.try_start_new_map(None, 1.5))
        self.assertIsNone(self.database.active_id)

        second = self.database.try_start_new_map(init_result(), 2.0)
        self.assertEqual(self.database.maybe_add_keyframe(2.0, Pose(translation=(4.0, 0.0, 0.0)), random_cloud(self.generator)), 1)
        self.assertEqual(self.database.keyframe_count(second), 1)
        self.assertEqual(self.database.hibernate(3.0), second)
        self.assertNotEqual(first, second)
        self.assertEqual(self.database.map_ids("sleeping"), [first, second])
        self.assertEqual(self.database.submap_count(), 2)
        self.assert_transitions_allowed()

    def test_single_active_map(self):
        self.database.try_start_new_map(init_result(), 0.0)
        with self.assertRaises(MapLifecycleError):
            self.database.try_start_new_map(init_result(), 1.0)

    def test_no_sleeping_map(self):
        self.database.try_start_new_map(init_result(), 0.0)
        keyframe_id = self.database.maybe_add_keyframe(0.0, Pose(), random_cloud(self.generator))
        self.assertIsNone(self.database.detect_similarity(keyframe_id))

    def test_invalid_config(self):
        with self.assertRaises(ValueError):
            MapManagerConfig(keyframe_distance=0.0)
        with self.assertRaises(TypeError):
            MapManagerConfig(loop_cooldown=2.5)
        with self.assertRaises(TypeError):
            MapDatabase(config={"fusion": False})

class TestFusion(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.generator_seed = 777
        cls.scenario = build_scenario("room", lidar_spec=LidarSpec(noise_sigma=0.0))
        cls.config = MapManagerConfig(keyframe_distance=0.5)

    def setUp(self):
        self.generator = Generator(PCG64(TestFusion.generator_seed))

    def scan(self, pose: Pose) -> np.ndarray:
        return raycast_scan(self.scenario, pose, self.generator)

    def build(self, sleeping_truth: list[Pose], active_truth: list[Pose], offset: Pose, config: MapManagerConfig | None = None) -> MapDatabase:
        """Sleeping map built in the world frame, active map built in the frame mapped to the world by offset."""
        database = MapDatabase(config if config is not None else self.config)
        database.try_start_new_map(init_result(), 0.0)
        for k, pose in enumerate(sleeping_truth):
            database.maybe_add_keyframe(float(k), pose, self.scan(pose))
        database.hibernate(len(sleeping_truth))
        database.try_start_new_map(init_result(), 10.0)
        for k, pose in enumerate(active_truth):
            database.maybe_add_keyframe(10.0 + k, offset.inverse() @ pose, self.scan(pose))
        return database

    def request(self, database: MapDatabase) -> FusionRequest:
        sleeping, active = database.map_ids("sleeping")[0], database.active_id
        pairs = []
        for active_keyframe, sleeping_keyframe in zip(database.maps[active].keyframes, database.maps[sleeping].keyframes):
            _, shift = distance(database.keyframes[active_keyframe].descriptor, database.keyframes[sleeping_keyframe].descriptor)
            pairs.append(MatchedPair(active_keyframe, sleeping_keyframe, Pose(Rotation.rotz(shift_to_yaw(shift)))))
        return FusionRequest(active, sleeping, tuple(pairs))

    def test_transform_recovery(self):
        sleeping_truth = [Pose(translation=(x, -4.0, 1.0)) for x in range(-3, 4)]
        active_truth = [Pose(Rotation.rotz(0.1), (x + 0.4, -4.0, 1.0)) for x in range(-3, 4)]
        offset = Pose(Rotation.rotz(0.6), (2.0, -1.5, 0.0))
        database = self.build(sleeping_truth, active_truth, offset)
        active, sleeping = database.active_id, database.map_ids("sleeping")[0]

        result = database.fuse(self.request(database))
        self.assertTrue(result.transform.is_close(offset, 0.05, np.radians(0.5)))
        self.assertEqual(result.pairs_used, 7)
        self.assertEqual((result.map_id, result.merged_map), (active, sleeping))
        for keyframe_id, pose in zip(database.maps[active].keyframes[7:], active_truth):
            self.assertTrue(database.keyframes[keyframe_id].pose.is_close(pose, 0.05, np.radians(0.5)))

        # bookkeeping
        self.assertEqual(database.map_ids("active"), [active])
        self.assertEqual(database.maps[sleeping].status, "merged")
        self.assertEqual(database.keyframe_count(), 14)
        self.assertEqual(database.submap_count(), 1)
        self.assertEqual(sorted(database.index.keyframe_ids(active)), list(range(14)))
        self.assertEqual(len(database.active_map().graph.edges_of_kind("prior")), 1)
        self.assertTrue(database.active_map().origin_prior.is_close(sleeping_truth[0], 1e-9, 1e-9))
        for transition in database.transitions:
            self.assertIn((transition.before, transition.after), ALLOWED_TRANSITIONS)

    def test_self_fusion(self):
        truth = [Pose(translation=(x, -4.0, 1.0)) for x in range(-2, 3)]
        database = self.build(truth, truth, Pose())
        result = database.fuse(self.request(database))
        self.assertTrue(result.transform.is_close(Pose(), 1e-3, 1e-3))
        self.assertTrue(result.correction.is_close(Pose(), 1e-3, 1e-3))

    def test_without_enhanced_constraints(self):
        truth = [Pose(translation=(x, -4.0, 1.0)) for x in range(-2, 3)]
        offset = Pose(Rotation.rotz(-0.3), (1.0, 0.5, 0.0))
        database = self.build(truth, truth, offset, MapManagerConfig(keyframe_distance=0.5, enhanced=False))
        result = database.fuse(self.request(database))
        self.assertEqual(result.pairs_used, 1)
        self.assertEqual(result.stats.iterations, 0)
        self.assertTrue(result.transform.is_close(offset, 0.05, np.radians(0.5)))

    def test_failed_registration_aborts_the_fusion(self):
        database = MapDatabase(self.config)
        database.try_start_new_map(init_result(), 0.0)
        database.maybe_add_keyframe(0.0, Pose(translation=(0.0, -4.0, 1.0)), self.scan(Pose(translation=(0.0, -4.0, 1.0))))
        sleeping = database.hibernate(1.0)
        active = database.try_start_new_map(init_result(), 2.0)
        database.maybe_add_keyframe(2.0, Pose(), random_cloud(self.generator, 10))
        with self.assertRaises(FusionError):
            database.fuse(FusionRequest(active, sleeping, (MatchedPair(1, 0, Pose()),)))
        self.assertEqual(database.maps[sleeping].status, "sleeping")
        self.assertEqual(database.similarity_state.gamma_s, 0)

    def test_fusion_needs_a_sleeping_map(self):
        database = MapDatabase(self.config)
        active = database.try_start_new_map(init_result(), 0.0)
        with self.assertRaises(MapLifecycleError):
            database.fuse(FusionRequest(active, 5, ()))

    def test_similarity_detection(self):
        truth = [Pose(translation=(x, -4.0, 1.0)) for x in range(-3, 4)]
        database = MapDatabase(self.config)
        database.try_start_new_map(init_result(), 0.0)
        for k, pose in enumerate(truth):
            database.maybe_add_keyframe(float(k), pose, self.scan(pose))
        sleeping = database.hibernate(len(truth))

        database.try_start_new_map(init_result(), 10.0)
        offset = Pose(Rotation.rotz(0.35), (5.0, 3.0, 0.0))
        requests = []
        for k, pose in enumerate(truth):
            turned = pose @ Pose(Rotation.rotz(np.radians(20.0)))
            keyframe_id = database.maybe_add_keyframe(10.0 + k, offset.inverse() @ turned, self.scan(turned))
            requests.append(database.detect_similarity(keyframe_id))
        accepted = [request for request in requests if request is not None]
        self.assertGreaterEqual(len(accepted), 1)
        self.assertEqual(accepted[0].sleeping_map, sleeping)
        self.assertEqual(len(accepted[0].matched_pairs), database.config.scan_context.consistency_threshold + 1)

class TestFusionVerification(unittest.TestCase):
    """Fusion requests whose registrations are replaced by results implying chosen frame transforms."""
    @classmethod
    def setUpClass(cls):
        cls.generator_seed = 979
        cls.transform = Pose(Rotation.rotz(0.3), (1.0, 2.0, 0.0))

    def setUp(self):
        generator = Generator(PCG64(TestFusionVerification.generator_seed))
        self.database = MapDatabase(MapManagerConfig(keyframe_distance=0.5))
        self.database.try_start_new_map(init_result(), 0.0)
        for k in range(4):
            self.database.maybe_add_keyframe(float(k), Pose(translation=(float(k), 0.0, 1.0)), random_cloud(generator))
        self.sleeping = self.database.hibernate(4.0)
        self.active = self.database.try_start_new_map(init_result(), 10.0)
        for k in range(4):
            self.database.maybe_add_keyframe(10.0 + k, Pose(translation=(float(k), 0.0, 1.0)), random_cloud(generator))

    def request(self, yaws: list[float]) -> FusionRequest:
        pairs = [MatchedPair(active, sleeping, Pose(Rotation.rotz(yaw)))
                 for active, sleeping, yaw in zip(self.database.maps[self.active].keyframes, self.database.maps[self.sleeping].keyframes, yaws)]
        return FusionRequest(self.active, self.sleeping, tuple(pairs))

    def registered(self, request: FusionRequest, transforms: list[Pose]) -> list[RegistrationResult]:
        """Registration results of the pairs of a request, each one implying a transform from the active to the sleeping frame."""
        results = []
        for pair, transform in zip(request.matched_pairs, transforms):
            query, target = self.database.keyframes[pair.active_keyframe], self.database.keyframes[pair.sleeping_keyframe]
            pose = target.pose.inverse() @ transform @ query.pose
            results.append(RegistrationResult(pose, np.eye(6) * 1e-4, np.eye(6) * 1e4, True, 5, 400, 0.05))
        return results

    def fuse(self, request: FusionRequest, transforms: list[Pose]):
        with mock.patch.object(self.database, "_register_pair", side_effect=self.registered(request, transforms)) as register:
            result = self.database.fuse(request)
        self.assertEqual(register.call_count, len(request.matched_pairs))
        return result

    def assert_not_fused(self):
        self.assertEqual(self.database.maps[self.sleeping].status, "sleeping")
        self.assertEqual(self.database.submap_count(), 2)
        self.assertEqual(self.database.similarity_state.gamma_s, 0)

    def test_agreeing_pairs(self):
        result = self.fuse(self.request([0.3] * 4), [self.transform] * 4)
        self.assertEqual(result.pairs_used, 4)
        self.assertTrue(result.transform.is_close(self.transform, 1e-3, 1e-3))
        self.assertEqual(self.database.maps[self.sleeping].status, "merged")

    def test_outlier_pair_is_dropped(self):
        shifted = Pose(Rotation.rotz(0.3), (4.0, 2.0, 0.0))
        result = self.fuse(self.request([0.3] * 4), [self.transform, shifted, self.transform, self.transform])
        self.assertEqual(result.pairs_used, 3)
        self.assertTrue(result.transform.is_close(self.transform, 1e-3, 1e-3))

    def test_inconsistent_pairs_abort_the_fusion(self):
        # half of the pairs imply the transform turned by half a turn about the origin
        opposite = Pose(Rotation.rotz(0.3 + np.pi), (-1.0, -2.0, 0.0))
        request = self.request([0.3, 0.3, 0.3 + np.pi, 0.3 + np.pi])
        with self.assertRaises(FusionError):
            self.fuse(request, [self.transform, self.transform, opposite, opposite])
        self.assert_not_fused()

    def test_registration_turning_away_from_the_descriptor_yaw(self):
        sector = self.database.config.scan_context.sector_width
        result = self.fuse(self.request([0.3, 0.3 + 2.0 * sector, 0.3, 0.3]), [self.transform] * 4)
        self.assertEqual(result.pairs_used, 3)

    def test_too_few_verified_pairs(self):
        sector = self.database.config.scan_context.sector_width
        request = self.request([0.3, 0.3 - 2.0 * sector, 0.3 + 2.0 * sector, 0.3 + 3.0 * sector])
        with self.assertRaises(FusionError):
            self.fuse(request, [self.transform] * 4)
        self.assert_not_fused()

class TestLoopClosure(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.generator_seed = 888
        cls.scenario = build_scenario("room", lidar_spec=LidarSpec(noise_sigma=0.0))

    def test_revisit_closes_a_loop(self):
        generator = Generator(PCG64(TestLoopClosure.generator_seed))
        config = MapManagerConfig(loop_cooldown=0, scan_context=ScanContextConfig(exclude_recent=3))
        database = MapDatabase(config)
        database.try_start_new_map(init_result(), 0.0)
        path = [Pose(translation=(x, -4.0, 1.0)) for x in (-3.0, -2.0, -1.0, 0.0)]
        path += [Pose(Rotation.rotz(np.pi), (x, 4.0, 1.0)) for x in (0.0, -1.0, -2.0, -3.0)]
        path += [Pose(translation=(-2.8, -3.9, 1.0))]

        closures = []
        for k, pose in enumerate(path):
            keyframe_id = database.maybe_add_keyframe(float(k), pose, raycast_scan(self.scenario, pose, generator))
            self.assertIsNotNone(keyframe_id)
            closures.append(database.detect_loop(keyframe_id))
        closure = closures[-1]
        self.assertIsNotNone(closure)
        candidate = path[closure.candidate_keyframe]
        self.assertLess(np.linalg.norm(candidate.translation - path[-1].translation), 1.5)
        self.assertTrue(closure.measurement.is_close(candidate.inverse() @ path[-1], 0.05, np.radians(1.0)))
        self.assertGreaterEqual(len(database.active_map().graph.edges_of_kind("loop")), 1)
        self.assertTrue(closure.correction.is_close(Pose(), 0.05, np.radians(1.0)))

    def test_cooldown(self):
        generator = Generator(PCG64(TestLoopClosure.generator_seed))
        database = MapDatabase()
        database.try_start_new_map(init_result(), 0.0)
        keyframe_id = database.maybe_add_keyframe(0.0, Pose(translation=(0.0, -4.0, 1.0)), raycast_scan(self.scenario, Pose(translation=(0.0, -4.0, 1.0)), generator))
        self.assertIsNone(database.detect_loop(keyframe_id))

if __name__ == "__main__":
    unittest.main()
