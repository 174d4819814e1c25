import math

import numpy as np
import pytest

from marionette.geom import (
    IDENTITY_QUAT,
    RigidPose,
    quat_angle,
    quat_from_axis_angle,
)
from marionette.motion import (
    CharacterState,
    ClipParseError,
    MotionClip,
    derive_velocities,
    load_clip,
    load_manifest,
    resample_speed,
    save_clip,
    save_manifest,
    split_dataset,
    stats,
)


def make_clip(n=10, j=2, fps=60.0, clip_id="c0", label=("root", "test"), move=None):
    frames = []
    for i in range(n):
        root = RigidPose(np.zeros(3), IDENTITY_QUAT)
        jp = np.tile(np.arange(j, dtype=float)[:, None], (1, 3))
        jq = np.tile(IDENTITY_QUAT, (j, 1))
        if move is not None:
            root, jp, jq = move(i, root, jp, jq)
        frames.append(CharacterState(root, jp, jq))
    return MotionClip(frames, fps, list(label), clip_id)


BVH_ONE_JOINT = """HIERARCHY
ROOT Hips
{
    OFFSET 0.0 0.0 0.0
    CHANNELS 6 Xposition Yposition Zposition Zrotation Yrotation Xrotation
    JOINT Chest
    {
        OFFSET 0.0 1.0 0.0
        CHANNELS 3 Zrotation Yrotation Xrotation
        End Site
        {
            OFFSET 0.0 0.5 0.0
        }
    }
}
MOTION
Frames: 2
Frame Time: 0.0166667
0.0 0.0 0.0 0.0 0.0 0.0 0.0 0.0 0.0
0.0 0.0 0.0 0.0 0.0 0.0 90.0 0.0 0.0
"""


class TestNativeFormat:
    def test_round_trip_identity(self):
        clip = derive_velocities(make_clip())
        data = save_clip(clip)
        back = load_clip(data, "native")
        assert back.id == clip.id
        assert back.fps == clip.fps
        assert back.label_path == clip.label_path
        for a, b in zip(clip.frames, back.frames):
            np.testing.assert_array_equal(a.root_pose.position, b.root_pose.position)
            np.testing.assert_array_equal(a.joint_positions, b.joint_positions)
            np.testing.assert_array_equal(a.joint_orientations, b.joint_orientations)
            np.testing.assert_array_equal(a.joint_velocities.angular, b.joint_velocities.angular)
        # byte-level: save(load(save(x))) == save(x)
        assert save_clip(back) == data

    def test_minimal_two_frame_clip(self):
        clip = make_clip(n=2, j=1)
        back = load_clip(save_clip(clip), "native")
        assert back.num_frames == 2
        assert back.num_joints == 1
        assert not back.has_velocities

    def test_truncated_frames_error(self):
        data = save_clip(make_clip(n=5))
        truncated = b"\n".join(data.splitlines()[:-2]) + b"\n"
        with pytest.raises(ClipParseError, match="frame-count mismatch"):
            load_clip(truncated, "native")

    def test_bad_header_error(self):
        with pytest.raises(ClipParseError, match="line 1"):
            load_clip(b"not json\n1 2 3\n", "native")

    def test_wrong_value_count_names_line(self):
        data = save_clip(make_clip(n=3)).decode().splitlines()
        data[2] = data[2] + " 0.5"
        with pytest.raises(ClipParseError, match="line 3"):
            load_clip(("\n".join(data) + "\n").encode(), "native")


class TestBvhSubset:
    def test_single_joint_rotation(self):
        clip = load_clip(BVH_ONE_JOINT.encode(), "bvh-subset", clip_id="bvh0", up_axis="z")
        assert clip.num_joints == 1
        assert clip.fps == pytest.approx(1.0 / 0.0166667, rel=1e-4)
        # frame 1: chest rotated 90 deg about local z
        got = clip.frames[1].joint_orientations[0]
        want = quat_from_axis_angle(np.array([0.0, 0.0, 1.0]), math.pi / 2)
        assert quat_angle(got, want) < 1e-9
        # frame 0 identity
        assert quat_angle(clip.frames[0].joint_orientations[0], IDENTITY_QUAT) < 1e-12

    def test_joint_world_position_follows_offset(self):
        clip = load_clip(BVH_ONE_JOINT.encode(), "bvh-subset", up_axis="z")
        np.testing.assert_allclose(clip.frames[0].joint_positions[0], [0.0, 1.0, 0.0], atol=1e-12)

    def test_up_axis_conversion(self):
        clip = load_clip(BVH_ONE_JOINT.encode(), "bvh-subset", up_axis="y")
        # +y offset in file becomes +z in the clip
        np.testing.assert_allclose(clip.frames[0].joint_positions[0], [0.0, 0.0, 1.0], atol=1e-12)

    def test_truncated_motion_block(self):
        bad = BVH_ONE_JOINT.rsplit("\n", 2)[0] + "\n0.0 0.0 0.0\n"
        with pytest.raises(ClipParseError, match="frame-count mismatch"):
            load_clip(bad.encode(), "bvh-subset")

    def test_malformed_header(self):
        with pytest.raises(ClipParseError, match="expected"):
            load_clip(b"HIERARCHY\nJOINT oops\n", "bvh-subset")


class TestDeriveVelocities:
    def test_constant_clip_zero_velocity(self):
        clip = derive_velocities(make_clip())
        for f in clip.frames:
            np.testing.assert_allclose(f.root_velocity.linear, np.zeros(3), atol=1e-12)
            np.testing.assert_allclose(f.joint_velocities.angular, np.zeros((2, 3)), atol=1e-12)

    def test_linear_root_motion(self):
        def move(i, root, jp, jq):
            root.position = np.array([i * 1.0, 0.0, 0.0])  # +1 m per frame
            return root, jp, jq

        clip = derive_velocities(make_clip(move=move))
        for f in clip.frames[1:-1]:
            np.testing.assert_allclose(f.root_velocity.linear, [60.0, 0.0, 0.0], atol=1e-9)

    def test_rotating_joint_log_map_oracle(self):
        rate = math.radians(1.0)  # 1 deg per frame about y

        def move(i, root, jp, jq):
            jq[0] = quat_from_axis_angle(np.array([0.0, 1.0, 0.0]), rate * i)
            return root, jp, jq

        clip = derive_velocities(make_clip(n=20, move=move))
        want = rate * 60.0  # rad/s
        for f in clip.frames[1:-1]:
            got = np.linalg.norm(f.joint_velocities.angular[0])
            assert got == pytest.approx(want, abs=1e-6)

    def test_idempotent(self):
        clip = derive_velocities(make_clip())
        again = derive_velocities(clip)
        for a, b in zip(clip.frames, again.frames):
            np.testing.assert_array_equal(a.root_velocity.linear, b.root_velocity.linear)
            np.testing.assert_array_equal(a.joint_velocities.linear, b.joint_velocities.linear)


class TestResampleSpeed:
    def _moving_clip(self, n=61):
        def move(i, root, jp, jq):
            root.position = np.array([0.1 * i, 0.0, 0.0])
            jq[0] = quat_from_axis_angle(np.array([0, 0, 1.0]), 0.01 * i)
            return root, jp, jq

        return derive_velocities(make_clip(n=n, move=move))

    def test_identity_ratio(self):
        clip = self._moving_clip()
        out = resample_speed(clip, 1.0)
        assert out.num_frames == clip.num_frames
        for a, b in zip(clip.frames, out.frames):
            np.testing.assert_allclose(a.root_pose.position, b.root_pose.position, atol=1e-9)
            assert quat_angle(a.joint_orientations[0], b.joint_orientations[0]) < 1e-9

    def test_double_speed_halves_frames_doubles_velocity(self):
        clip = self._moving_clip(61)
        out = resample_speed(clip, 2.0)
        assert out.num_frames == 31
        # finite-difference oracle on the resampled positions
        dt = 1.0 / out.fps
        fd = (out.frames[2].root_pose.position - out.frames[0].root_pose.position) / (2 * dt)
        np.testing.assert_allclose(out.frames[1].root_velocity.linear, fd, atol=1e-9)
        np.testing.assert_allclose(
            out.frames[1].root_velocity.linear,
            2.0 * clip.frames[1].root_velocity.linear,
            atol=1e-9,
        )

    def test_half_speed(self):
        clip = self._moving_clip(61)
        out = resample_speed(clip, 0.5)
        assert out.num_frames == 121
        np.testing.assert_allclose(
            out.frames[2].root_velocity.linear,
            0.5 * clip.frames[1].root_velocity.linear,
            atol=1e-9,
        )

    def test_round_trip_orientation_tolerance(self):
        clip = self._moving_clip(41)
        back = resample_speed(resample_speed(clip, 2.0), 0.5)
        assert back.num_frames == clip.num_frames
        for a, b in zip(clip.frames, back.frames):
            assert quat_angle(a.joint_orientations[0], b.joint_orientations[0]) < 1e-3

    def test_out_of_bounds_ratio(self):
        with pytest.raises(ValueError):
            resample_speed(self._moving_clip(), 8.0)


class TestSplitDataset:
    def _corpus(self):
        clips = []
        for i in range(10):
            clips.append(make_clip(n=10, clip_id=f"walk{i}", label=("root", "walk", "forward")))
        clips.append(make_clip(n=30, clip_id="flip0", label=("root", "acro", "flip")))
        for i in range(3):
            clips.append(make_clip(n=20, clip_id=f"run{i}", label=("root", "run")))
        return clips

    def test_singleton_class_goes_to_test(self):
        ds = split_dataset(self._corpus(), 0.8, seed=1)
        assert "flip0" in ds.test_ids

    def test_uniform_class_fraction(self):
        clips = [make_clip(n=10, clip_id=f"c{i}", label=("root", "x")) for i in range(10)]
        ds = split_dataset(clips, 0.8, seed=0)
        assert len(ds.train_ids) == 8
        assert len(ds.test_ids) == 2

    def test_deterministic(self):
        a = split_dataset(self._corpus(), 0.8, seed=7)
        b = split_dataset(self._corpus(), 0.8, seed=7)
        assert a.train_ids == b.train_ids
        assert a.test_ids == b.test_ids

    def test_disjoint_and_covering(self):
        ds = split_dataset(self._corpus(), 0.8, seed=3)
        assert not (ds.train_ids & ds.test_ids)
        assert ds.train_ids | ds.test_ids == {c.id for c in ds.clips}

    def test_empty_input(self):
        with pytest.raises(ValueError):
            split_dataset([], 0.8, seed=0)


class TestStats:
    def test_arithmetic(self):
        clips = [
            make_clip(n=10, clip_id="a", label=("root", "x")),
            make_clip(n=30, clip_id="b", label=("root", "x")),
        ]
        from marionette.motion import Dataset

        ds = Dataset(clips, train_ids={"a", "b"}, test_ids=set())
        s = stats(ds)
        assert s["train"] == {"num_motions": 2, "num_frames": 40, "avg_length": 20.0}
        assert s["test"] == {"num_motions": 0, "num_frames": 0, "avg_length": 0.0}


class TestManifest:
    def test_round_trip(self, tmp_path):
        clips = [
            make_clip(n=4, clip_id="a", label=("root", "x")),
            make_clip(n=6, clip_id="b", label=("root", "y")),
        ]
        for c in clips:
            (tmp_path / f"{c.id}.clip").write_bytes(save_clip(c))
        ds = split_dataset(clips, 0.5, seed=0)
        text = save_manifest(ds, {c.id: f"{c.id}.clip" for c in clips})
        back = load_manifest(text, base_dir=tmp_path)
        assert {c.id for c in back.clips} == {"a", "b"}
        assert back.train_ids == ds.train_ids

    def test_exclude_list(self, tmp_path):
        clips = [make_clip(n=4, clip_id="a", label=("root", "x"))]
        (tmp_path / "a.clip").write_bytes(save_clip(clips[0]))
        from marionette.motion import Dataset

        ds = Dataset(clips, {"a"}, set())
        text = save_manifest(ds, {"a": "a.clip"}, exclude=["a"])
        back = load_manifest(text, base_dir=tmp_path)
        assert back.clips == []
