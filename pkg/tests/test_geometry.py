import math

import numpy as np
import pytest

from scanplace.errors import (
    ContractError,
    DatasetIOError,
    EmptyScanError,
    InvalidParameterError,
    InvalidPoseError,
    ShapeError,
)
from scanplace.geometry import (
    DEFAULT_PROFILES,
    SENSOR_TAGS,
    ManifestEntry,
    PointCloud,
    Pose,
    generate_synthetic_scene_scan,
    preprocess_scan,
    ray_directions,
    read_manifest,
    read_scan,
    transform_cloud,
    voxel_downsample,
    write_manifest,
    write_scan,
)

from _oracles import brute_voxel_downsample


class TestPose:
    def test_identity_roundtrip(self, rng):
        cloud = PointCloud(rng.normal(size=(50, 3)))
        out = transform_cloud(cloud, Pose.identity())
        np.testing.assert_array_equal(out.points, cloud.points)

    def test_yaw_quarter_turn(self):
        # [PAPER-style hand case] 90 degree yaw maps +x to +y
        pose = Pose.from_yaw(math.pi / 2)
        cloud = PointCloud(np.array([[1.0, 0.0, 0.0]]))
        out = transform_cloud(cloud, pose)
        np.testing.assert_allclose(out.points, [[0.0, 1.0, 0.0]], atol=1e-12)

    def test_compose_then_apply_equals_apply_twice(self, rng):
        a = Pose.from_yaw(0.3, (1.0, -2.0, 0.5))
        b = Pose.from_yaw(-1.1, (0.0, 4.0, 0.0))
        cloud = PointCloud(rng.normal(size=(20, 3)))
        once = transform_cloud(cloud, a.compose(b))
        twice = transform_cloud(transform_cloud(cloud, b), a)
        np.testing.assert_allclose(once.points, twice.points, atol=1e-12)

    def test_inverse_restores(self, rng):
        pose = Pose.from_yaw(2.2, (3.0, -1.0, 2.0))
        cloud = PointCloud(rng.normal(size=(30, 3)))
        back = transform_cloud(transform_cloud(cloud, pose), pose.inverse())
        np.testing.assert_allclose(back.points, cloud.points, atol=1e-12)

    def test_rejects_non_orthonormal(self):
        bad = np.eye(3)
        bad[0, 0] = 1.5
        with pytest.raises(InvalidPoseError):
            Pose(bad, np.zeros(3))

    def test_rejects_reflection(self):
        flip = np.diag([-1.0, 1.0, 1.0])   # orthonormal but det -1
        with pytest.raises(InvalidPoseError):
            Pose(flip, np.zeros(3))

    def test_rejects_bad_translation_shape(self):
        with pytest.raises((InvalidPoseError, ShapeError, ValueError)):
            Pose(np.eye(3), np.zeros(4))


class TestPointCloud:
    def test_rejects_wrong_shape(self):
        with pytest.raises(ShapeError):
            PointCloud(np.zeros((4, 2)))

    def test_rejects_nonfinite(self):
        pts = np.zeros((3, 3))
        pts[1, 2] = np.nan
        with pytest.raises(ContractError):
            PointCloud(pts)

    def test_points_read_only(self):
        cloud = PointCloud(np.zeros((3, 3)))
        with pytest.raises(ValueError):
            cloud.points[0, 0] = 1.0


class TestVoxelDownsample:
    def test_matches_brute_force(self, rng):
        pts = rng.uniform(-20, 20, size=(400, 3))
        got = voxel_downsample(pts, 2.5)
        want = brute_voxel_downsample(pts, 2.5)
        # [DERIVED: dict-loop oracle] same cells, same centroids
        np.testing.assert_allclose(np.sort(got, axis=0), np.sort(want, axis=0),
                                   atol=1e-9)

    def test_single_cell_centroid(self):
        pts = np.array([[0.1, 0.2, 0.3], [0.4, 0.1, 0.2], [0.1, 0.1, 0.1]])
        got = voxel_downsample(pts, 1.0)
        # [TRIVIAL] all three points share voxel (0,0,0)
        np.testing.assert_allclose(got, pts.mean(axis=0, keepdims=True))

    def test_negative_coordinates_floor(self):
        # floor semantics: -0.1 falls in voxel -1, not 0
        pts = np.array([[-0.1, 0.0, 0.0], [0.1, 0.0, 0.0]])
        got = voxel_downsample(pts, 1.0)
        assert got.shape == (2, 3)

    def test_idempotent_on_sparse_points(self):
        # points in distinct voxels survive unchanged (output is key-ordered)
        pts = np.array([[0.0, 0.0, 0.0], [10.0, 0.0, 0.0], [0.0, 10.0, 0.0]])
        got = voxel_downsample(pts, 1.0)
        np.testing.assert_allclose(np.sort(got, axis=0), np.sort(pts, axis=0))

    def test_rejects_bad_voxel_size(self):
        with pytest.raises(InvalidParameterError):
            voxel_downsample(np.zeros((2, 3)), 0.0)


class TestPreprocess:
    def test_crop_removes_beyond_range_only(self):
        # strictly-beyond point removed, at-range point kept
        pts = np.array([[100.0, 0.0, 0.0], [99.0, 0.0, 0.0], [101.0, 0.0, 0.0]])
        out = preprocess_scan(PointCloud(pts), max_range=100.0, point_budget=2)
        norms = np.sort(np.linalg.norm(out.points, axis=1))
        np.testing.assert_allclose(norms, [0.99, 1.0], atol=1e-12)

    def test_far_point_removed(self):
        # point at (150,0,0) with max_range 100 is cropped
        pts = np.array([[150.0, 0.0, 0.0], [10.0, 0.0, 0.0]])
        out = preprocess_scan(PointCloud(pts), max_range=100.0, point_budget=4)
        np.testing.assert_allclose(out.points, np.tile([[0.1, 0.0, 0.0]], (4, 1)))

    def test_budget_exact(self, rng):
        pts = rng.uniform(-50, 50, size=(300, 3))
        for budget in (64, 300, 500):
            out = preprocess_scan(PointCloud(pts), max_range=100.0, point_budget=budget)
            assert out.points.shape == (budget, 3)

    def test_normalized_to_unit_ball(self, rng):
        pts = rng.uniform(-80, 80, size=(200, 3))
        out = preprocess_scan(PointCloud(pts), max_range=100.0, point_budget=200)
        assert np.max(np.linalg.norm(out.points, axis=1)) <= 1.0

    def test_deterministic(self, rng):
        pts = rng.uniform(-50, 50, size=(100, 3))
        a = preprocess_scan(PointCloud(pts), point_budget=64, seed=3)
        b = preprocess_scan(PointCloud(pts), point_budget=64, seed=3)
        np.testing.assert_array_equal(a.points, b.points)

    def test_empty_after_crop_raises(self):
        pts = np.array([[500.0, 0.0, 0.0]])
        with pytest.raises(EmptyScanError):
            preprocess_scan(PointCloud(pts), max_range=100.0, point_budget=10)

    def test_upsample_tiles_all_points(self):
        pts = np.array([[1.0, 0.0, 0.0], [0.0, 2.0, 0.0]])
        out = preprocess_scan(PointCloud(pts), max_range=10.0, point_budget=5)
        assert out.points.shape == (5, 3)
        # both originals appear at least twice in a 5-point tile of 2
        scaled = pts / 10.0
        for row in scaled:
            matches = np.all(np.isclose(out.points, row), axis=1)
            assert np.sum(matches) >= 2


class TestSynthetic:
    def test_profiles_cover_three_sensor_types(self):
        assert set(DEFAULT_PROFILES) == set(SENSOR_TAGS)

    def test_ray_counts(self):
        # grid patterns round down to full rows, never exceeding the budget
        for profile in DEFAULT_PROFILES.values():
            dirs = ray_directions(profile)
            assert 0.9 * profile.point_budget <= dirs.shape[0] <= profile.point_budget
            np.testing.assert_allclose(np.linalg.norm(dirs, axis=1), 1.0, atol=1e-12)

    def test_scan_deterministic(self):
        profile = DEFAULT_PROFILES["wide-spinning"]
        pose = Pose.from_yaw(0.5, (1.0, 2.0, 1.5))
        a = generate_synthetic_scene_scan(42, pose, profile)
        b = generate_synthetic_scene_scan(42, pose, profile)
        np.testing.assert_array_equal(a.points, b.points)

    def test_same_scene_different_pose_overlaps(self):
        # two nearby poses of one scene see mostly the same surfaces
        profile = DEFAULT_PROFILES["wide-spinning"]
        a = generate_synthetic_scene_scan(7, Pose.from_yaw(0.0, (0, 0, 1.5)), profile)
        b = generate_synthetic_scene_scan(7, Pose.from_yaw(1.0, (3, -2, 1.5)), profile)
        assert len(a.points) > 500 and len(b.points) > 500

    def test_different_scene_seeds_differ(self):
        profile = DEFAULT_PROFILES["rosette"]
        pose = Pose.from_yaw(0.0, (0, 0, 1.5))
        a = generate_synthetic_scene_scan(1, pose, profile)
        b = generate_synthetic_scene_scan(2, pose, profile)
        assert a.points.shape != b.points.shape or not np.allclose(a.points, b.points)

    def test_sensor_frame_range_bounded(self):
        for tag, profile in DEFAULT_PROFILES.items():
            cloud = generate_synthetic_scene_scan(3, Pose.from_yaw(0.2, (0, 0, 1.5)),
                                                  profile)
            ranges = np.linalg.norm(cloud.points, axis=1)
            assert np.all(ranges <= profile.max_range + 1e-9), tag
            assert cloud.sensor_tag == profile.tag


class TestScanIO:
    def test_roundtrip(self, tmp_path, sample_scans):
        for cloud in sample_scans[:3]:
            path = tmp_path / f"{cloud.scan_id}.hlks"
            write_scan(cloud, path)
            back = read_scan(path, scan_id=cloud.scan_id)
            np.testing.assert_allclose(back.points, cloud.points.astype(np.float32),
                                       atol=0)
            assert back.sensor_tag == cloud.sensor_tag
            assert back.timestamp == cloud.timestamp
            assert back.scan_id == cloud.scan_id

    def test_deterministic_bytes(self, tmp_path, sample_scans):
        p1, p2 = tmp_path / "a.hlks", tmp_path / "b.hlks"
        write_scan(sample_scans[0], p1)
        write_scan(sample_scans[0], p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_missing_file_names_producer(self, tmp_path):
        with pytest.raises(DatasetIOError, match="gen command"):
            read_scan(tmp_path / "nope.hlks")

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.hlks"
        path.write_bytes(b"XXXX" + b"\x00" * 32)
        with pytest.raises(DatasetIOError, match="magic"):
            read_scan(path)

    def test_truncated(self, tmp_path, sample_scans):
        path = tmp_path / "t.hlks"
        write_scan(sample_scans[0], path)
        path.write_bytes(path.read_bytes()[:-7])
        with pytest.raises(DatasetIOError):
            read_scan(path)


class TestManifestIO:
    def test_roundtrip_exact_poses(self, tmp_path):
        entries = []
        for i in range(4):
            rng = np.random.default_rng(i)
            pose = Pose.from_yaw(rng.uniform(0, 6.28), rng.uniform(-9, 9, size=3))
            entries.append(ManifestEntry(f"scan{i}", f"scans/scan{i}.hlks",
                                         SENSOR_TAGS[i % 3], 60.0 * i, pose))
        path = tmp_path / "manifest.txt"
        write_manifest(entries, path, header={"seed": 0})
        back = read_manifest(path)
        assert [e.scan_id for e in back] == [e.scan_id for e in entries]
        for got, want in zip(back, entries):
            # repr-based floats survive the text roundtrip bit-exactly
            np.testing.assert_array_equal(got.pose.rotation, want.pose.rotation)
            np.testing.assert_array_equal(got.pose.translation, want.pose.translation)
            assert got.timestamp == want.timestamp
            assert got.sensor_tag == want.sensor_tag

    def test_missing_names_producer(self, tmp_path):
        with pytest.raises(DatasetIOError, match="gen command"):
            read_manifest(tmp_path / "missing.txt")

    def test_malformed_line(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("a,b,c\n")
        with pytest.raises(DatasetIOError, match="16 fields"):
            read_manifest(path)
