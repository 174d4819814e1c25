"""High-level target schedulers: dataset replay, FIFO stitching,
command-driven gait warping, and live pose streaming.

Every scheduler fulfils one contract: asked for tau future frames it either
returns exactly tau CharacterStates or raises SchedulerExhausted.  tau stays
short (1 or 2) so schedulers never have to predict far ahead.
"""

from __future__ import annotations

import math
import threading
from collections import deque
from dataclasses import dataclass

import numpy as np

from .geom import (
    RigidPose,
    SpatialVelocity,
    angular_velocity_between,
    quat_from_axis_angle,
    quat_mul,
    quat_rotate,
    quat_slerp,
)
from .motion import CharacterState, JointVelocities, MotionClip
from .wire import PosePacket, WireError, pose_packet_to_state

DEFAULT_TRANSITION_FRAMES = 6  # 0.1 s at 60 fps
DEFAULT_TURN_RATE = math.radians(120.0)  # rad/s


class SchedulerExhausted(Exception):
    """No more target frames available from this scheduler."""


class Scheduler:
    """Contract: next(tau) -> exactly tau frames, or SchedulerExhausted."""

    def next(self, tau: int) -> list[CharacterState]:
        raise NotImplementedError


# ---------------------------------------------------------------------------
# dataset replay


def dataset_next(clip: MotionClip, start: int, t: int, tau: int) -> list[CharacterState]:
    """Frames [start+t+1, start+t+tau] of the clip; exhausts at the end."""
    first = start + t + 1
    if first + tau - 1 >= clip.num_frames:
        raise SchedulerExhausted(f"clip {clip.id} ended")
    return [clip.frames[first + k] for k in range(tau)]


class DatasetScheduler(Scheduler):
    def __init__(self, clip: MotionClip, start: int = 0):
        self.clip = clip
        self.start = start
        self.t = 0

    def next(self, tau: int) -> list[CharacterState]:
        frames = dataset_next(self.clip, self.start, self.t, tau)
        self.t += 1
        return frames


# ---------------------------------------------------------------------------
# motion stitching


@dataclass
class StitchBuffer:
    fps: float = 60.0
    transition_frames: int = DEFAULT_TRANSITION_FRAMES

    def __post_init__(self):
        self.frames: deque[CharacterState] = deque()

    def __len__(self) -> int:
        return len(self.frames)


def _interpolate_states(a: CharacterState, b: CharacterState, t: float) -> CharacterState:
    j = a.num_joints
    root = RigidPose(
        (1 - t) * a.root_pose.position + t * b.root_pose.position,
        quat_slerp(a.root_pose.orientation, b.root_pose.orientation, t),
    )
    jp = (1 - t) * a.joint_positions + t * b.joint_positions
    jq = np.stack(
        [quat_slerp(a.joint_orientations[k], b.joint_orientations[k], t) for k in range(j)]
    )
    return CharacterState(root, jp, jq)


def stitch_push(buffer: StitchBuffer, clip: MotionClip) -> None:
    """Append a clip; when the buffer is non-empty, first insert the
    transition frames bridging the seam (slerped orientations, lerped
    positions, finite-differenced velocities)."""
    if not clip.has_velocities:
        raise ValueError("stitch clips must carry velocities")
    if buffer.frames:
        tail = buffer.frames[-1]
        head = clip.frames[0]
        n_tr = buffer.transition_frames
        synth = [
            _interpolate_states(tail, head, i / (n_tr + 1)) for i in range(1, n_tr + 1)
        ]
        dt = 1.0 / buffer.fps
        chainlet = [tail, *synth, head]
        for i, state in enumerate(synth, start=1):
            prev_s, next_s = chainlet[i - 1], chainlet[i + 1]
            span = 2 * dt
            state.root_velocity = SpatialVelocity(
                (next_s.root_pose.position - prev_s.root_pose.position) / span,
                angular_velocity_between(
                    prev_s.root_pose.orientation, next_s.root_pose.orientation, span
                ),
            )
            lin = (next_s.joint_positions - prev_s.joint_positions) / span
            ang = np.stack(
                [
                    angular_velocity_between(
                        prev_s.joint_orientations[k], next_s.joint_orientations[k], span
                    )
                    for k in range(state.num_joints)
                ]
            )
            state.joint_velocities = JointVelocities(lin, ang)
        buffer.frames.extend(synth)
    buffer.frames.extend(f.copy() for f in clip.frames)


def stitch_next(buffer: StitchBuffer, tau: int) -> list[CharacterState]:
    """Pop tau frames FIFO; exhausts when fewer than tau remain."""
    if len(buffer.frames) < tau:
        raise SchedulerExhausted("stitch buffer underrun")
    return [buffer.frames.popleft() for _ in range(tau)]


class StitchScheduler(Scheduler):
    def __init__(self, fps: float = 60.0, transition_frames: int = DEFAULT_TRANSITION_FRAMES):
        self.buffer = StitchBuffer(fps, transition_frames)

    def push(self, clip: MotionClip) -> None:
        stitch_push(self.buffer, clip)

    def next(self, tau: int) -> list[CharacterState]:
        return stitch_next(self.buffer, tau)

    def __len__(self) -> int:
        return len(self.buffer)


# ---------------------------------------------------------------------------
# command-driven gait warping


@dataclass
class Command:
    heading: float = 0.0  # rad, world yaw
    speed: float = 1.0  # time-warp factor
    gait: str = "walk"


def _yaw_of(quat: np.ndarray) -> float:
    fwd = quat_rotate(quat, np.array([1.0, 0.0, 0.0]))
    return math.atan2(fwd[1], fwd[0])


def _wrap_angle(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


class CommandScheduler(Scheduler):
    """Replays a gait clip cyclically, steering its root trajectory toward
    the commanded heading under a bounded turn rate and warping time by the
    speed scalar.

    The scheduler is auto-regressive in its own emitted frames: simulated
    state never feeds back, so scheduling errors are left for the executor
    to absorb.
    """

    def __init__(
        self,
        gaits: dict[str, MotionClip],
        turn_rate: float = DEFAULT_TURN_RATE,
    ):
        if not gaits:
            raise ValueError("need at least one gait clip")
        for clip in gaits.values():
            if not clip.has_velocities:
                raise ValueError("gait clips must carry velocities")
        self.gaits = gaits
        self.turn_rate = turn_rate
        self.command = Command(gait=next(iter(gaits)))
        first = self.gaits[self.command.gait]
        self.phase = 0.0
        self.heading = _yaw_of(first.frames[0].root_pose.orientation)
        self.position = first.frames[0].root_pose.position.copy()
        self.command.heading = self.heading

    def set_command(self, command: Command) -> None:
        if command.gait not in self.gaits:
            raise KeyError(f"unknown gait {command.gait!r}")
        self.command = command

    def _clip_pose(self, clip: MotionClip, phase: float) -> CharacterState:
        n = clip.num_frames
        lo = int(math.floor(phase)) % n
        hi = (lo + 1) % n
        t = phase - math.floor(phase)
        if hi == 0:  # seam: hold the last pose of the cycle
            hi = lo
        return _interpolate_states(clip.frames[lo], clip.frames[hi], t)

    def _emit_one(self) -> CharacterState:
        clip = self.gaits[self.command.gait]
        dt = 1.0 / clip.fps
        err = _wrap_angle(self.command.heading - self.heading)
        max_step = self.turn_rate * dt
        self.heading += float(np.clip(err, -max_step, max_step))

        here = self._clip_pose(clip, self.phase)
        nxt_phase = self.phase + self.command.speed
        there = self._clip_pose(clip, nxt_phase % clip.num_frames)
        # displacement in the clip's own heading frame, re-aimed at ours
        clip_yaw = _yaw_of(here.root_pose.orientation)
        raw = there.root_pose.position - here.root_pose.position
        if nxt_phase >= clip.num_frames:  # cyclic splice: no teleport jumps
            raw = np.zeros(3)
            raw[2] = there.root_pose.position[2] - here.root_pose.position[2]
        turn = quat_from_axis_angle(np.array([0.0, 0.0, 1.0]), self.heading - clip_yaw)
        delta = quat_rotate(turn, raw)
        self.position = self.position + delta
        self.phase = nxt_phase % clip.num_frames

        pose = self._clip_pose(clip, self.phase)
        out = pose.copy()
        out.root_pose.position = np.array(
            [self.position[0], self.position[1], pose.root_pose.position[2]]
        )
        self.position = out.root_pose.position.copy()
        out.root_pose.orientation = quat_mul(turn, pose.root_pose.orientation)
        # joints ride along with the warped root
        local = pose.joint_positions - pose.root_pose.position
        out.joint_positions = out.root_pose.position + quat_rotate(turn, local)
        base = clip.frames[int(math.floor(self.phase)) % clip.num_frames]
        base.ensure_velocities()
        out.root_velocity = SpatialVelocity(
            quat_rotate(turn, base.root_velocity.linear) * self.command.speed,
            quat_rotate(turn, base.root_velocity.angular) * self.command.speed,
        )
        out.joint_velocities = JointVelocities(
            quat_rotate(turn, base.joint_velocities.linear) * self.command.speed,
            base.joint_velocities.angular * self.command.speed,
        )
        return out

    def next(self, tau: int) -> list[CharacterState]:
        return [self._emit_one() for _ in range(tau)]

    def command_next(
        self, command: Command, tau: int, state_history: list[CharacterState] | None = None
    ) -> list[CharacterState]:
        """state_history is accepted for contract parity and deliberately
        ignored: the emitted trajectory never reads the simulated state."""
        del state_history
        self.set_command(command)
        return self.next(tau)


# ---------------------------------------------------------------------------
# pose streaming


class PoseBuffer:
    """Ring of timestamped pose samples with atomic append/snapshot.

    Stale packets (timestamp not newer than the newest retained sample) are
    dropped and counted; parse errors likewise never disturb the buffer.
    """

    def __init__(self, capacity: int = 8, smoothing: float = 0.3):
        if capacity < 2:
            raise ValueError("capacity must be >= 2")
        self.capacity = capacity
        self.smoothing = smoothing
        self._lock = threading.Lock()
        self._samples: deque[tuple[float, CharacterState]] = deque(maxlen=capacity)
        self.dropped = 0
        self.parse_errors = 0
        self._vel: JointVelocities | None = None
        self._root_vel = SpatialVelocity()

    def __len__(self) -> int:
        with self._lock:
            return len(self._samples)

    def ingest_packet(self, pkt: PosePacket, joint_positions=None) -> bool:
        state = pose_packet_to_state(pkt, joint_positions)
        with self._lock:
            if self._samples and pkt.timestamp_ms <= self._samples[-1][0]:
                self.dropped += 1
                return False
            if self._samples:
                prev_ts, prev = self._samples[-1]
                dt = (pkt.timestamp_ms - prev_ts) / 1000.0
                a = self.smoothing
                raw_lin = (state.root_pose.position - prev.root_pose.position) / dt
                raw_ang = angular_velocity_between(
                    prev.root_pose.orientation, state.root_pose.orientation, dt
                )
                raw_jl = (state.joint_positions - prev.joint_positions) / dt
                raw_ja = np.stack(
                    [
                        angular_velocity_between(
                            prev.joint_orientations[k], state.joint_orientations[k], dt
                        )
                        for k in range(state.num_joints)
                    ]
                )
                if self._vel is None:
                    self._root_vel = SpatialVelocity(raw_lin, raw_ang)
                    self._vel = JointVelocities(raw_jl, raw_ja)
                else:
                    self._root_vel = SpatialVelocity(
                        a * raw_lin + (1 - a) * self._root_vel.linear,
                        a * raw_ang + (1 - a) * self._root_vel.angular,
                    )
                    self._vel = JointVelocities(
                        a * raw_jl + (1 - a) * self._vel.linear,
                        a * raw_ja + (1 - a) * self._vel.angular,
                    )
            self._samples.append((pkt.timestamp_ms, state))
            return True

    def ingest(self, msg: bytes, joint_positions=None) -> bool:
        """Parse raw packet bytes; errors are counted, buffer untouched."""
        from .wire import deserialize

        try:
            pkt = deserialize(msg)
            if not isinstance(pkt, PosePacket):
                raise WireError("bad_payload", "expected pose_packet")
        except WireError:
            self.parse_errors += 1
            return False
        return self.ingest_packet(pkt, joint_positions)

    def latest_with_velocity(self) -> CharacterState:
        with self._lock:
            if len(self._samples) < 2:
                raise SchedulerExhausted("pose buffer underfull")
            state = self._samples[-1][1].copy()
            state.root_velocity = self._root_vel.copy()
            state.joint_velocities = self._vel.copy()
            return state


def stream_ingest(buffer: PoseBuffer, msg: bytes) -> PoseBuffer:
    buffer.ingest(msg)
    return buffer


def stream_next(buffer: PoseBuffer, tau: int = 1) -> list[CharacterState]:
    """Latest pose with smoothed finite-difference velocities, tau times."""
    state = buffer.latest_with_velocity()
    return [state.copy() for _ in range(tau)]


class StreamScheduler(Scheduler):
    def __init__(self, capacity: int = 8, smoothing: float = 0.3):
        self.buffer = PoseBuffer(capacity, smoothing)

    def next(self, tau: int) -> list[CharacterState]:
        return stream_next(self.buffer, tau)
