import math

import numpy as np
import pytest

from marionette.geom import IDENTITY_QUAT, RigidPose, quat_angle, quat_from_axis_angle
from marionette.motion import CharacterState, MotionClip, derive_velocities
from marionette.schedulers import (
    Command,
    CommandScheduler,
    DatasetScheduler,
    PoseBuffer,
    SchedulerExhausted,
    StitchBuffer,
    StitchScheduler,
    dataset_next,
    stitch_push,
    stream_next,
)
from marionette.wire import PosePacket, serialize


def make_clip(n=10, j=2, fps=60.0, clip_id="c", start_pos=(0.0, 0.0, 1.0), step=(0.0, 0.0, 0.0),
              yaw=0.0):
    frames = []
    rot = quat_from_axis_angle(np.array([0.0, 0.0, 1.0]), yaw)
    for i in range(n):
        pos = np.array(start_pos) + i * np.array(step)
        jp = pos + np.array([[0.1 * (k + 1), 0.0, 0.2] for k in range(j)])
        jq = np.tile(IDENTITY_QUAT, (j, 1))
        frames.append(CharacterState(RigidPose(pos, rot), jp, jq))
    return derive_velocities(MotionClip(frames, fps, ["root", "test"], clip_id))


def make_packet(seq, ts, root=(0.0, 0.0, 1.0), j=1, quat=None):
    quat = list(quat) if quat is not None else [1.0, 0.0, 0.0, 0.0]
    return PosePacket(
        seq=seq, timestamp_ms=ts, root_position=list(root), root_quat=quat,
        num_joints=j, joint_quats=[1.0, 0.0, 0.0, 0.0] * j,
        joint_positions=[0.1, 0.0, 1.2] * j,
    )


class TestDatasetScheduler:
    def test_index_arithmetic(self):
        clip = make_clip(10)
        frames = dataset_next(clip, start=0, t=0, tau=2)
        assert frames[0] is clip.frames[1]
        assert frames[1] is clip.frames[2]

    def test_boundary_and_exhaustion(self):
        clip = make_clip(10)
        tau, j = 2, 0
        last_valid_t = clip.num_frames - j - tau - 1
        frames = dataset_next(clip, j, last_valid_t, tau)
        assert frames[-1] is clip.frames[-1]
        with pytest.raises(SchedulerExhausted):
            dataset_next(clip, j, last_valid_t + 1, tau)

    def test_frames_are_clip_frames(self):
        clip = make_clip(6)
        sched = DatasetScheduler(clip, start=1)
        a = sched.next(1)[0]
        assert a is clip.frames[2]  # no copy drift

    def test_stateful_walks_forward(self):
        clip = make_clip(8)
        sched = DatasetScheduler(clip)
        seen = [sched.next(1)[0] for _ in range(5)]
        indices = [next(i for i, fr in enumerate(clip.frames) if fr is f) for f in seen]
        assert indices == [1, 2, 3, 4, 5]


class TestStitch:
    def test_push_into_empty_no_transition(self):
        buf = StitchBuffer()
        clip = make_clip(7)
        stitch_push(buf, clip)
        assert len(buf) == 7

    def test_seam_inserts_transition_frames(self):
        buf = StitchBuffer(transition_frames=6)
        a = make_clip(5, clip_id="a")
        b = make_clip(8, clip_id="b", start_pos=(1.0, 0.0, 1.0))
        stitch_push(buf, a)
        stitch_push(buf, b)
        assert len(buf) == 5 + 6 + 8

    def test_transition_orientation_jump_bound(self):
        buf = StitchBuffer(transition_frames=6)
        a = make_clip(4, clip_id="a", yaw=0.0)
        b = make_clip(4, clip_id="b", yaw=2.0)
        stitch_push(buf, a)
        stitch_push(buf, b)
        frames = list(buf.frames)
        total = quat_angle(a.frames[-1].root_pose.orientation, b.frames[0].root_pose.orientation)
        bound = total / buf.transition_frames + 1e-6
        for prev, cur in zip(frames, frames[1:]):
            jump = quat_angle(prev.root_pose.orientation, cur.root_pose.orientation)
            assert jump <= bound

    def test_fifo_order_and_exhaustion(self):
        sched = StitchScheduler(transition_frames=2)
        a = make_clip(3, clip_id="a")
        sched.push(a)
        out = [sched.next(1)[0] for _ in range(3)]
        np.testing.assert_array_equal(
            out[0].root_pose.position, a.frames[0].root_pose.position
        )
        with pytest.raises(SchedulerExhausted):
            sched.next(1)

    def test_pop_exactly_tau(self):
        sched = StitchScheduler()
        sched.push(make_clip(5))
        frames = sched.next(2)
        assert len(frames) == 2
        assert len(sched) == 3

    def test_concatenation_reproduces_clips(self):
        sched = StitchScheduler(transition_frames=3)
        a = make_clip(4, clip_id="a")
        b = make_clip(5, clip_id="b", start_pos=(0.5, 0.5, 1.0))
        sched.push(a)
        sched.push(b)
        popped = [sched.next(1)[0] for _ in range(len(sched))]
        assert len(popped) == 4 + 3 + 5
        for i in range(4):
            np.testing.assert_array_equal(
                popped[i].root_pose.position, a.frames[i].root_pose.position
            )
        for i in range(5):
            np.testing.assert_array_equal(
                popped[4 + 3 + i].root_pose.position, b.frames[i].root_pose.position
            )


class TestCommandScheduler:
    def _walk_gait(self, n=40):
        # straight +x walk at 1.2 m/s, cyclic in z
        return make_clip(n, clip_id="walk", step=(0.02, 0.0, 0.0))

    def test_identity_command_follows_clip(self):
        clip = self._walk_gait()
        sched = CommandScheduler({"walk": clip})
        frames = [sched.command_next(Command(0.0, 1.0, "walk"), 1)[0] for _ in range(20)]
        for i, f in enumerate(frames):
            np.testing.assert_allclose(
                f.root_pose.position, clip.frames[i + 1].root_pose.position, atol=1e-9
            )

    def test_heading_converges_under_turn_rate(self):
        clip = self._walk_gait(120)
        sched = CommandScheduler({"walk": clip})
        target_heading = math.pi / 2
        headings = []
        for _ in range(120):  # 2 s at 120 deg/s limit: converges within ~0.75 s
            sched.command_next(Command(target_heading, 1.0, "walk"), 1)
            headings.append(sched.heading)
        assert abs(headings[-1] - target_heading) < 1e-6
        # bounded turn rate: no step exceeds the per-frame limit
        steps = np.abs(np.diff([0.0] + headings))
        assert steps.max() <= math.radians(120.0) / clip.fps + 1e-9

    def test_half_speed_halves_displacement(self):
        clip = self._walk_gait()
        full = CommandScheduler({"walk": clip})
        half = CommandScheduler({"walk": clip})
        f_frames = [full.command_next(Command(0.0, 1.0, "walk"), 1)[0] for _ in range(10)]
        h_frames = [half.command_next(Command(0.0, 0.5, "walk"), 1)[0] for _ in range(10)]
        fd = np.diff([f.root_pose.position[0] for f in f_frames])
        hd = np.diff([f.root_pose.position[0] for f in h_frames])
        np.testing.assert_allclose(hd, 0.5 * fd, atol=1e-9)

    def test_independent_of_actual_state(self):
        clip = self._walk_gait()
        a = CommandScheduler({"walk": clip})
        b = CommandScheduler({"walk": clip})
        garbage = [make_clip(3).frames[0]]
        cmd = Command(0.3, 1.0, "walk")
        for _ in range(15):
            fa = a.command_next(cmd, 1, state_history=None)[0]
            fb = b.command_next(cmd, 1, state_history=garbage)[0]
            np.testing.assert_array_equal(fa.root_pose.position, fb.root_pose.position)

    def test_unknown_gait(self):
        sched = CommandScheduler({"walk": self._walk_gait()})
        with pytest.raises(KeyError):
            sched.command_next(Command(0.0, 1.0, "sprint"), 1)


class TestPoseStream:
    def test_ingest_into_empty(self):
        buf = PoseBuffer()
        assert buf.ingest(serialize(make_packet(0, 0.0)))
        assert len(buf) == 1

    def test_stale_dropped_and_counted(self):
        buf = PoseBuffer()
        buf.ingest(serialize(make_packet(0, 100.0)))
        assert not buf.ingest(serialize(make_packet(1, 50.0)))
        assert buf.dropped == 1
        assert len(buf) == 1

    def test_capacity_evicts_oldest(self):
        buf = PoseBuffer(capacity=3)
        for i in range(5):
            buf.ingest(serialize(make_packet(i, float(i * 16))))
        assert len(buf) == 3

    def test_parse_error_counted(self):
        buf = PoseBuffer()
        assert not buf.ingest(b"not json at all\n")
        assert buf.parse_errors == 1
        assert len(buf) == 0

    def test_two_point_velocity(self):
        buf = PoseBuffer(smoothing=1.0)
        buf.ingest(serialize(make_packet(0, 0.0, root=(0.0, 0.0, 1.0))))
        buf.ingest(serialize(make_packet(1, 100.0, root=(0.5, 0.0, 1.0))))  # 0.5 m in 0.1 s
        frames = stream_next(buf, tau=1)
        np.testing.assert_allclose(frames[0].root_velocity.linear, [5.0, 0.0, 0.0], atol=1e-9)

    def test_constant_stream_zero_velocity(self):
        buf = PoseBuffer(smoothing=1.0)
        for i in range(5):
            buf.ingest(serialize(make_packet(i, float(i * 16))))
        frames = stream_next(buf)
        np.testing.assert_allclose(frames[0].root_velocity.linear, np.zeros(3), atol=1e-12)

    def test_underfull_exhausts(self):
        buf = PoseBuffer()
        buf.ingest(serialize(make_packet(0, 0.0)))
        with pytest.raises(SchedulerExhausted):
            stream_next(buf)

    def test_smoothing_reduces_velocity_variance(self):
        rng = np.random.default_rng(3)
        smooth = PoseBuffer(smoothing=0.3)
        raw = PoseBuffer(smoothing=1.0)
        smooth_v, raw_v = [], []
        for i in range(200):
            pos = (1.0 * i * 0.01 + 0.01 * rng.normal(), 0.0, 1.0)
            pkt = serialize(make_packet(i, float(i * 16.66), root=pos))
            smooth.ingest(pkt)
            raw.ingest(pkt)
            if i >= 2:
                smooth_v.append(stream_next(smooth)[0].root_velocity.linear[0])
                raw_v.append(stream_next(raw)[0].root_velocity.linear[0])
        assert np.var(smooth_v) < np.var(raw_v)
