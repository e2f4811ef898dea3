import numpy as np
import pytest

from reflectmap.errors import ParseError, ShapeError
from reflectmap.geometry import Pose
from reflectmap.ingest import (LAYER_LAST, LAYER_STRONGEST, GroundTruthLabels,
                               OrganizedCloud, Return, Trajectory,
                               load_dual_scan, load_labels, load_trajectory,
                               organize_points, save_dual_scan, save_labels,
                               save_trajectory)


def make_return(ring, bin_, point, intensity=0.5):
    point = np.asarray(point, dtype=float)
    return Return(point, float(np.linalg.norm(point)), intensity, ring, bin_)


class TestOrganize:
    def test_empty(self):
        cloud = organize_points([], [], 16, 360)
        assert cloud.n_returns() == 0

    def test_single_strongest(self):
        cloud = organize_points([make_return(0, 0, [1.0, 0.0, 0.0])], [], 4, 8)
        assert cloud.get(LAYER_STRONGEST, 0, 0) is not None
        assert cloud.get(LAYER_LAST, 0, 0) is None

    def test_collision_keeps_higher_intensity_in_strongest(self):
        a = make_return(1, 2, [2.0, 0.0, 0.0], intensity=0.3)
        b = make_return(1, 2, [3.0, 0.0, 0.0], intensity=0.9)
        cloud = organize_points([a, b], [], 4, 8)
        assert cloud.get(LAYER_STRONGEST, 1, 2).intensity == pytest.approx(0.9)

    def test_collision_keeps_larger_range_in_last(self):
        a = make_return(1, 2, [2.0, 0.0, 0.0])
        b = make_return(1, 2, [5.0, 0.0, 0.0])
        cloud = organize_points([], [b, a], 4, 8)
        assert cloud.get(LAYER_LAST, 1, 2).range == pytest.approx(5.0)

    def test_out_of_range_indices(self):
        with pytest.raises(ShapeError):
            organize_points([make_return(9, 0, [1.0, 0.0, 0.0])], [], 4, 8)

    def test_flattening_order_row_major_strongest_first(self):
        returns_s = [make_return(1, 3, [1.0, 0, 0]), make_return(0, 5, [1.0, 0, 0])]
        returns_l = [make_return(0, 1, [2.0, 0, 0])]
        cloud = organize_points(returns_s, returns_l, 4, 8)
        assert cloud.flattened_cells() == [("S", 0, 5), ("S", 1, 3), ("L", 0, 1)]


class TestScanIO:
    def test_empty_scan_round_trip(self, tmp_path):
        path = tmp_path / "s.drs"
        path.write_text("DRS1 16 360\n")
        cloud = load_dual_scan(path)
        assert cloud.n_rings == 16 and cloud.n_bins == 360
        assert cloud.n_returns() == 0

    def test_single_record(self, tmp_path):
        path = tmp_path / "s.drs"
        path.write_text("DRS1 4 8\n0 0 S 1.0 0.0 0.0 0.25\n")
        cloud = load_dual_scan(path)
        ret = cloud.get(LAYER_STRONGEST, 0, 0)
        assert ret.range == pytest.approx(1.0)
        assert cloud.get(LAYER_LAST, 0, 0) is None

    def test_write_read_identity(self, tmp_path):
        rng = np.random.default_rng(0)
        cloud = OrganizedCloud(8, 16)
        for _ in range(40):
            r, b = rng.integers(0, 8), rng.integers(0, 16)
            p = rng.uniform(1.0, 10.0) * np.array([1.0, 0.2, -0.1])
            cloud.set_return(LAYER_STRONGEST,
                             Return(p, float(np.linalg.norm(p)),
                                    rng.uniform(0, 1), int(r), int(b)))
            q = p * 1.2
            cloud.set_return(LAYER_LAST,
                             Return(q, float(np.linalg.norm(q)),
                                    rng.uniform(0, 1), int(r), int(b)))
        path = tmp_path / "s.drs"
        save_dual_scan(cloud, path)
        loaded = load_dual_scan(path)
        assert loaded.flattened_cells() == cloud.flattened_cells()
        np.testing.assert_allclose(loaded.strongest.xyz, cloud.strongest.xyz,
                                   atol=1e-9)
        np.testing.assert_allclose(loaded.last.intensity, cloud.last.intensity,
                                   atol=1e-12)
        # second write is byte-identical
        path2 = tmp_path / "s2.drs"
        save_dual_scan(loaded, path2)
        assert path.read_text() == path2.read_text()

    def test_bad_header(self, tmp_path):
        path = tmp_path / "bad.drs"
        path.write_text("NOPE 4 8\n")
        with pytest.raises(ParseError):
            load_dual_scan(path)

    def test_bad_layer(self, tmp_path):
        path = tmp_path / "bad.drs"
        path.write_text("DRS1 4 8\n0 0 X 1 0 0 0.5\n")
        with pytest.raises(ParseError):
            load_dual_scan(path)

    def test_ring_out_of_declared_range(self, tmp_path):
        path = tmp_path / "bad.drs"
        path.write_text("DRS1 4 8\n7 0 S 1 0 0 0.5\n")
        with pytest.raises(ShapeError):
            load_dual_scan(path)

    def test_strongest_farther_than_last_rejected(self, tmp_path):
        path = tmp_path / "bad.drs"
        path.write_text("DRS1 4 8\n0 0 S 5 0 0 0.5\n0 0 L 2 0 0 0.5\n")
        with pytest.raises(ShapeError):
            load_dual_scan(path)


class TestTrajectoryIO:
    def test_identity_pose(self, tmp_path):
        path = tmp_path / "t.tum"
        path.write_text("0 0 0 0 0 0 0 1\n")
        traj = load_trajectory(path)
        pose = traj.pose(0)
        np.testing.assert_allclose(pose.rotation, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(pose.translation, np.zeros(3))

    def test_quaternion_z_rotation(self, tmp_path):
        path = tmp_path / "t.tum"
        path.write_text("3 1 2 3 0 0 0.7071068 0.7071068\n")
        pose = load_trajectory(path).pose(3)
        expected = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        np.testing.assert_allclose(pose.rotation, expected, atol=1e-6)

    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        entries = []
        for k in range(10):
            vec = np.concatenate([rng.normal(size=3), rng.uniform(-1, 1, 3)])
            entries.append((k, Pose.from_vec6(vec)))
        traj = Trajectory(entries)
        path = tmp_path / "t.tum"
        save_trajectory(traj, path)
        loaded = load_trajectory(path)
        for k, pose in traj:
            got = loaded.pose(k)
            np.testing.assert_allclose(got.rotation, pose.rotation, atol=1e-9)
            np.testing.assert_allclose(got.translation, pose.translation,
                                       atol=1e-9)

    def test_decreasing_frame_ids_rejected(self, tmp_path):
        path = tmp_path / "t.tum"
        path.write_text("2 0 0 0 0 0 0 1\n1 0 0 0 0 0 0 1\n")
        with pytest.raises(ParseError):
            load_trajectory(path)


class TestLabelIO:
    def test_count_matches_lines(self, tmp_path):
        path = tmp_path / "l.lbl"
        path.write_text("LBL1 7 4\n0\n1\n4\n5\n")
        labels = load_labels(path)
        assert labels.frame_id == 7
        assert labels.labels.tolist() == [0, 1, 4, 5]

    def test_round_trip(self, tmp_path):
        labels = GroundTruthLabels(3, np.array([0, 1, 2, 3, 4, 5, 0]))
        path = tmp_path / "l.lbl"
        save_labels(labels, path)
        loaded = load_labels(path)
        assert loaded.frame_id == 3
        np.testing.assert_array_equal(loaded.labels, labels.labels)
        path2 = tmp_path / "l2.lbl"
        save_labels(loaded, path2)
        assert path.read_text() == path2.read_text()

    def test_header_count_mismatch(self, tmp_path):
        path = tmp_path / "l.lbl"
        path.write_text("LBL1 0 3\n0\n1\n")
        with pytest.raises(ParseError):
            load_labels(path)

    def test_label_outside_set(self, tmp_path):
        path = tmp_path / "l.lbl"
        path.write_text("LBL1 0 1\n9\n")
        with pytest.raises(ParseError):
            load_labels(path)
