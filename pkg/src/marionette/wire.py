"""Line-delimited JSON wire protocol for interactive sessions.

One message per line.  Every message carries the schema version and a type
tag; client messages carry a seq number which acks and errors echo back.
Floats ride as decimal text via repr, which round-trips float64 exactly.
The pose packet is the same record the datagram port accepts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .geom import RigidPose, SpatialVelocity
from .motion import CharacterState, JointVelocities

WIRE_VERSION = 1


class WireError(ValueError):
    def __init__(self, code: str, detail: str = ""):
        super().__init__(f"{code}: {detail}" if detail else code)
        self.code = code


# client -> server


@dataclass
class EnqueueClip:
    seq: int
    clip_id: str


@dataclass
class SetCommand:
    seq: int
    heading: float
    speed: float
    gait: str


@dataclass
class ApplyImpulse:
    seq: int
    body: str
    impulse: list[float]


@dataclass
class SetSpeedRatio:
    seq: int
    ratio: float


@dataclass
class PosePacket:
    seq: int
    timestamp_ms: float
    root_position: list[float]
    root_quat: list[float]
    num_joints: int
    joint_quats: list[float]  # 4J flat
    joint_positions: list[float] | None = None  # 3J flat, optional


@dataclass
class Pause:
    seq: int


@dataclass
class Resume:
    seq: int


@dataclass
class SelectScheduler:
    seq: int
    kind: str  # stitch | command | stream | dataset
    clip_id: str | None = None


# server -> client


@dataclass
class StateFrame:
    tick: int
    actual: CharacterState
    target: CharacterState | None
    reward_terms: dict[str, float]
    reward_total: float
    buffer_len: int = 0
    status: str = "running"


@dataclass
class ClipLibrary:
    clips: list[dict]  # id, label_path, frames, fps


@dataclass
class Ack:
    seq: int


@dataclass
class ErrorMsg:
    seq: int
    code: str
    message: str


@dataclass
class Hello:
    version: int
    model_name: str
    num_joints: int
    joint_parents: list[int] | None = None  # per joint, -1 = attached to the root
    body_names: list[str] | None = None


_CLIENT_TYPES = {
    "enqueue_clip": EnqueueClip,
    "set_command": SetCommand,
    "apply_impulse": ApplyImpulse,
    "set_speed_ratio": SetSpeedRatio,
    "pose_packet": PosePacket,
    "pause": Pause,
    "resume": Resume,
    "select_scheduler": SelectScheduler,
}
_SERVER_TYPES = {
    "state_frame": StateFrame,
    "clip_library": ClipLibrary,
    "ack": Ack,
    "error": ErrorMsg,
    "hello": Hello,
}
_TYPE_BY_CLASS = {cls: name for name, cls in {**_CLIENT_TYPES, **_SERVER_TYPES}.items()}

ProtocolMessage = (
    EnqueueClip | SetCommand | ApplyImpulse | SetSpeedRatio | PosePacket | Pause
    | Resume | SelectScheduler | StateFrame | ClipLibrary | Ack | ErrorMsg | Hello
)


def _state_to_payload(state: CharacterState | None) -> dict | None:
    if state is None:
        return None
    state.ensure_velocities()
    return {
        "root_pos": state.root_pose.position.tolist(),
        "root_quat": state.root_pose.orientation.tolist(),
        "joint_pos": state.joint_positions.ravel().tolist(),
        "joint_quats": state.joint_orientations.ravel().tolist(),
        "root_vel": state.root_velocity.linear.tolist(),
        "root_angvel": state.root_velocity.angular.tolist(),
    }


def _state_from_payload(data: dict | None) -> CharacterState | None:
    if data is None:
        return None
    jq = np.array(data["joint_quats"], dtype=np.float64).reshape(-1, 4)
    jp = np.array(data["joint_pos"], dtype=np.float64).reshape(-1, 3)
    j = jq.shape[0]
    pose = RigidPose(np.array(data["root_pos"]))
    # bypass the constructor's renormalization: the codec must reproduce the
    # transmitted bits, not clean them up
    pose.orientation = np.array(data["root_quat"], dtype=np.float64)
    return CharacterState(
        pose,
        jp,
        jq,
        SpatialVelocity(np.array(data["root_vel"]), np.array(data["root_angvel"])),
        JointVelocities(np.zeros((j, 3)), np.zeros((j, 3))),
    )


def serialize(msg: ProtocolMessage) -> bytes:
    tag = _TYPE_BY_CLASS.get(type(msg))
    if tag is None:
        raise WireError("unknown_tag", f"cannot serialize {type(msg).__name__}")
    payload: dict = {"v": WIRE_VERSION, "type": tag}
    if isinstance(msg, StateFrame):
        payload.update(
            tick=msg.tick,
            actual=_state_to_payload(msg.actual),
            target=_state_to_payload(msg.target),
            reward_terms=msg.reward_terms,
            reward_total=msg.reward_total,
            buffer_len=msg.buffer_len,
            status=msg.status,
        )
    else:
        for k, v in vars(msg).items():
            payload[k] = v
    return (json.dumps(payload) + "\n").encode()


def deserialize(data: bytes | str) -> ProtocolMessage:
    try:
        doc = json.loads(data if isinstance(data, str) else data.decode())
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise WireError("parse_error", str(e)) from None
    if not isinstance(doc, dict):
        raise WireError("parse_error", "message must be an object")
    if doc.get("v") != WIRE_VERSION:
        raise WireError("version_mismatch", f"got {doc.get('v')}")
    tag = doc.get("type")
    cls = _CLIENT_TYPES.get(tag) or _SERVER_TYPES.get(tag)
    if cls is None:
        raise WireError("unknown_tag", repr(tag))
    body = {k: v for k, v in doc.items() if k not in ("v", "type")}
    try:
        if cls is StateFrame:
            return StateFrame(
                tick=body["tick"],
                actual=_state_from_payload(body["actual"]),
                target=_state_from_payload(body.get("target")),
                reward_terms=body["reward_terms"],
                reward_total=body["reward_total"],
                buffer_len=body.get("buffer_len", 0),
                status=body.get("status", "running"),
            )
        return cls(**body)
    except (KeyError, TypeError) as e:
        raise WireError("bad_payload", f"{tag}: {e}") from None


def pose_packet_to_state(pkt: PosePacket, joint_positions: np.ndarray | None = None) -> CharacterState:
    """Expand a pose packet into a character state (no velocities yet)."""
    j = pkt.num_joints
    jq = np.array(pkt.joint_quats, dtype=np.float64).reshape(j, 4)
    if pkt.joint_positions is not None:
        jp = np.array(pkt.joint_positions, dtype=np.float64).reshape(j, 3)
    elif joint_positions is not None:
        jp = np.asarray(joint_positions, dtype=np.float64).reshape(j, 3)
    else:
        jp = np.zeros((j, 3))
    return CharacterState(
        RigidPose(np.array(pkt.root_position), np.array(pkt.root_quat)),
        jp,
        jq,
        SpatialVelocity(),
        JointVelocities(np.zeros((j, 3)), np.zeros((j, 3))),
    )
