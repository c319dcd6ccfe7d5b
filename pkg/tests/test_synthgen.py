import math

import numpy as np
import pytest

from parkocc import kitti_io
from parkocc.errors import ParseError, ValidationError
from parkocc.semantics import default_remap_table
from parkocc.synthgen import (
    Box,
    EgoPose,
    LidarConfig,
    Plane,
    RigSpec,
    SceneSpec,
    Trajectory,
    builtin_parking_lot,
    camera_poses,
    cast_rays,
    distance_to_primitive,
    format_scene,
    generate_sequence,
    obstacle_clearance,
    parse_scene,
    raycast_sweep,
)
from parkocc.transforms import apply, lidar_to_lidar, lift_3x4, orthonormality_error

from oracles import ray_box

SMALL = LidarConfig(channels=8, points_per_second=8 * 90 * 10)


def test_lidar_table_values():
    cfg = LidarConfig()
    assert cfg.points_per_sweep == 220_000
    assert cfg.azimuth_steps == 3437
    assert cfg.rays_per_sweep == 219_968
    el = np.rad2deg(cfg.elevations())
    assert el[0] == pytest.approx(-24.8) and el[-1] == pytest.approx(2.0)


def test_ground_plane_closed_form():
    frame_hits = cast_rays(SceneSpec([Plane(0.0, 9)]), EgoPose(0, 0, 0.3))
    cfg = LidarConfig()
    el = cfg.elevations()
    # downward rays shallower than asin(1.8 / 100) reach the floor beyond range
    reach = 1.8 / np.sin(-el[el < 0])
    n_in_range = int(np.count_nonzero(reach <= cfg.range))
    assert 0 < n_in_range < len(reach)
    assert len(frame_hits.distance) == n_in_range * cfg.azimuth_steps
    ch = frame_hits.ray_index // cfg.azimuth_steps
    np.testing.assert_allclose(frame_hits.distance, 1.8 / np.sin(-el[ch]), rtol=1e-12)
    assert set(frame_hits.labels.tolist()) == {9}


def test_empty_scene():
    assert len(raycast_sweep(SceneSpec([]), EgoPose(0, 0))) == 0


def test_box_ahead_not_hit_by_rays_pointing_back():
    scene = SceneSpec([Box((15.0, 0.0, 1.0), (2.0, 3.0, 2.0), 4)])
    hits = cast_rays(scene, EgoPose(0, 0, 0))
    assert len(hits.distance) > 0
    assert np.all(hits.directions[:, 0] > 0)
    for d, t in zip(hits.directions[::50], hits.distance[::50]):
        assert ray_box(np.array([0, 0, 1.8]), d, np.array([14, -1.5, 0]), np.array([16, 1.5, 2])) == pytest.approx(t)


def test_culled_caster_matches_brute_force(rng):
    for trial in range(5):
        boxes = []
        for _ in range(15):
            c = rng.uniform([-30, -30, 0], [30, 30, 3])
            e = rng.uniform(0.05, 6, 3)
            if np.all(np.abs(c[:2]) < e[:2] / 2 + 0.5):
                continue
            boxes.append(Box(tuple(c), tuple(e), int(rng.integers(1, 200))))
        scene = SceneSpec([Plane(0.0, 1)] + boxes)
        ego = EgoPose(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-np.pi, np.pi))
        hits = cast_rays(scene, ego, SMALL)
        got = dict(zip(hits.ray_index.tolist(), zip(hits.distance.tolist(), hits.primitive.tolist())))

        world = ego.world_from_ego() @ RigSpec().ego_from_lidar()
        dirs = SMALL.directions().reshape(-1, 3) @ world.rotation.T
        o = world.translation
        for r, d in enumerate(dirs):
            best, owner = math.inf, -1
            if d[2] < 0:
                best, owner = (0.0 - o[2]) / d[2], 0
            for n, b in enumerate(boxes, start=1):
                t = ray_box(o, d, b.lo, b.hi)
                if t is not None and t < best:
                    best, owner = t, n
            if best <= SMALL.range:
                assert r in got
                assert got[r][0] == pytest.approx(best, rel=1e-12)
                assert got[r][1] == owner
            else:
                assert r not in got


@pytest.fixture(scope="module")
def sweep():
    scene, trajectories = builtin_parking_lot(0)
    ego = trajectories[0][5]
    return scene, ego, cast_rays(scene, ego)


class TestBuiltinSweep:

    def test_point_budget(self, sweep):
        _, _, hits = sweep
        assert len(hits.distance) <= 64 * 3437

    def test_points_on_surfaces(self, sweep):
        scene, ego, hits = sweep
        world = (ego.world_from_ego() @ RigSpec().ego_from_lidar()).apply(hits.points)
        for n in np.unique(hits.primitive):
            sel = hits.primitive == n
            assert distance_to_primitive(world[sel], scene.primitives[n]).max() < 1e-4

    def test_range_and_elevation(self, sweep):
        _, _, hits = sweep
        pts = hits.points
        assert np.linalg.norm(pts, axis=1).max() <= 100.0
        el = np.arctan2(pts[:, 2], np.hypot(pts[:, 0], pts[:, 1]))
        assert el.min() >= math.radians(-24.8) - 1e-9
        assert el.max() <= math.radians(2.0) + 1e-9

    def test_intensity(self):
        frame = raycast_sweep(SceneSpec([Plane(0.0, 1)]), EgoPose(0, 0))
        np.testing.assert_allclose(frame.intensity, 1 - np.linalg.norm(frame.xyz, axis=1) / 100.0)


class TestBuiltinScene:
    def test_22_regions(self):
        _, trajectories = builtin_parking_lot(0)
        assert len(trajectories) == 22
        assert [t.region for t in trajectories] == list(range(22))
        segments = {(round(t[0].x), round(t[0].y), round(t[-1].x), round(t[-1].y)) for t in trajectories}
        assert len(segments) == 22

    @pytest.mark.parametrize("seed", [0, 1, 7])
    def test_clearance(self, seed):
        scene, trajectories = builtin_parking_lot(seed)
        for traj in trajectories:
            assert obstacle_clearance(scene, traj) >= 0.5

    def test_deterministic(self):
        a, ta = builtin_parking_lot(3)
        b, tb = builtin_parking_lot(3)
        assert format_scene(a) == format_scene(b)
        assert [t.poses for t in ta] == [t.poses for t in tb]
        assert format_scene(builtin_parking_lot(4)[0]) != format_scene(a)

    def test_ids_valid(self):
        scene, _ = builtin_parking_lot(0)
        scene.validate()

    def test_byte_identical_sequences(self, tmp_path):
        scene, trajectories = builtin_parking_lot(0)
        for name in ("a", "b"):
            generate_sequence(scene, trajectories[4][:2], out=tmp_path / name, remap_table=default_remap_table())
        for rel in ("calib.txt", "poses.txt", "velodyne/000001.bin", "labels/000001.label"):
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


class TestSceneFile:
    def test_round_trip(self):
        scene, _ = builtin_parking_lot(0)
        assert parse_scene(format_scene(scene)).primitives == scene.primitives

    @pytest.mark.parametrize(
        "text, line",
        [
            ("plane 0 1\nbox 1 2 3 1 1 1\n", 2),
            ("plane 0 1\n\n# c\nsphere 1 1\n", 4),
            ("box 0 0 0 1 -1 1 3\n", 1),
            ("plane 0 0\n", 1),
            ("plane zero 1\n", 1),
        ],
    )
    def test_errors_cite_line(self, text, line):
        with pytest.raises(ParseError) as e:
            parse_scene(text)
        assert e.value.line_no == line


class TestSequence:
    def test_single_frame_identity_pose(self, tmp_path):
        generate_sequence(SceneSpec([Plane(0.0, 1)]), Trajectory([EgoPose(0, 0)]), out=tmp_path)
        lines = (tmp_path / "poses.txt").read_text().splitlines()
        assert len(lines) == 1
        np.testing.assert_array_equal(np.array(lines[0].split(), float).reshape(3, 4), np.eye(3, 4))

    def test_forward_motion_is_camera_z(self):
        poses = camera_poses(Trajectory([EgoPose(0, 0), EgoPose(1, 0)]), RigSpec())
        np.testing.assert_allclose(poses[1], [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 1]], atol=1e-15)

    def test_turned_trajectory_pose(self):
        # ego turned 90 deg left then moved 1 m along world y: camera frame 0 sees that as -x
        poses = camera_poses(Trajectory([EgoPose(0, 0), EgoPose(0, 1, math.pi / 2)]), RigSpec())
        m = lift_3x4(poses[1])
        cam_pos_in_cam0 = m.translation
        # camera sits 0.3 m ahead of the ego point: world (-0.3, 1.3) relative to cam0 at (0.3, 0)
        np.testing.assert_allclose(cam_pos_in_cam0, [-1.3, 0.0, -0.3], atol=1e-12)

    def test_calib_values(self):
        calib = RigSpec().calib()
        assert calib.p0[0, 0] == pytest.approx(738.9, abs=0.05)
        assert calib.p0[0, 2] == 620 and calib.p0[1, 2] == 185
        assert calib.p1[0, 3] == pytest.approx(-0.5 * calib.p1[0, 0])
        assert orthonormality_error(calib.tr[:, :3]) < 1e-12
        # LiDAR origin is 0.1 m above and 0.3 m behind the left camera
        np.testing.assert_allclose(apply(lift_3x4(calib.tr), [0.0, 0.0, 0.0]), [0.0, -0.1, -0.3], atol=1e-15)

    def test_readers_accept_generated_sequence(self, seed0_sequence):
        seq = kitti_io.SequenceDir(seed0_sequence)
        assert len(seq) == 20
        lift_3x4(seq.calib.tr)
        assert np.abs(seq.poses[0] - np.eye(3, 4)).max() < 1e-9
        for pose in seq.poses:
            lift_3x4(pose)
        for i in range(len(seq)):
            frame = seq.load_frame(i)
            assert frame.is_labeled and set(np.unique(frame.labels)) <= {1, 2, 3, 4, 5}

    def test_validation_before_writing(self, tmp_path):
        out = tmp_path / "never"
        with pytest.raises(ValidationError):
            generate_sequence(SceneSpec([Plane(0.0, 0)]), Trajectory([EgoPose(0, 0)]), out=out)
        with pytest.raises(ValidationError):
            generate_sequence(SceneSpec([Plane(0.0, 1)]), Trajectory([]), out=out)
        with pytest.raises(ValidationError, match="exceeds"):
            generate_sequence(SceneSpec([Plane(0.0, 1)]), Trajectory([EgoPose(0, 0), EgoPose(6, 0)]), out=out)
        assert not out.exists()


@pytest.fixture(scope="module")
def pair_data():
    scene, trajectories = builtin_parking_lot(0)
    traj = trajectories[0][:6]
    frames = [raycast_sweep(scene, p) for p in traj.poses]
    return scene, traj, RigSpec(), frames


class TestPoseConsistency:
    def test_fused_points_land_on_scene_surfaces(self, pair_data):
        scene, traj, rig, frames = pair_data
        calib, poses = rig.calib(), camera_poses(traj, rig)
        t = 3
        world_from_t = traj[t].world_from_ego() @ rig.ego_from_lidar()
        for i in (0, 5):
            hits = cast_rays(scene, traj[i])
            in_t = lidar_to_lidar(i, t, calib, poses).apply(hits.points)
            world = world_from_t.apply(in_t)
            for n in np.unique(hits.primitive):
                sel = hits.primitive == n
                assert distance_to_primitive(world[sel], scene.primitives[n]).max() < 1e-4

    @pytest.mark.xfail(
        strict=True,
        reason="sampling, not geometry: far floor rings and the near blind circle leave ~4% of "
        "adjacent-frame points more than one voxel from any point of the other sweep",
    )
    def test_nearest_neighbour_overlap(self, pair_data):
        cKDTree = pytest.importorskip("scipy.spatial").cKDTree

        _, traj, rig, frames = pair_data
        calib, poses = rig.calib(), camera_poses(traj, rig)
        moved = lidar_to_lidar(0, 1, calib, poses).apply(frames[0].xyz)
        dist, _ = cKDTree(frames[1].xyz).query(moved)
        assert np.mean(dist < 0.2) >= 0.99
