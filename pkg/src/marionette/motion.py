"""Motion clip data model, file formats, velocity derivation and dataset splits.

A clip stores a redundant per-frame character state: root pose, world joint
positions, parent-relative joint orientations, and (once derived) first-order
velocities for all of them.  The native file format is line-delimited text
with an explicit header so clips diff cleanly and stream over the wire.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .geom import (
    RigidPose,
    SpatialVelocity,
    angular_velocity_between,
    quat_from_axis_angle,
    quat_mul,
    quat_slerp,
)

NATIVE_MAGIC = "MOCLIP"
NATIVE_VERSION = 1

SPEED_RATIO_MIN = 0.25
SPEED_RATIO_MAX = 4.0


class ClipParseError(ValueError):
    """Raised on malformed clip / BVH input; message names the line."""


@dataclass
class JointVelocities:
    linear: np.ndarray  # (J, 3) world m/s
    angular: np.ndarray  # (J, 3) parent-relative rad/s

    def copy(self) -> "JointVelocities":
        return JointVelocities(self.linear.copy(), self.angular.copy())


@dataclass
class CharacterState:
    """Redundant full state: poses plus first-order terms for root and joints."""

    root_pose: RigidPose
    joint_positions: np.ndarray  # (J, 3) world
    joint_orientations: np.ndarray  # (J, 4) parent-relative unit quats
    root_velocity: SpatialVelocity = field(default_factory=SpatialVelocity)
    joint_velocities: JointVelocities | None = None

    @property
    def num_joints(self) -> int:
        return int(self.joint_positions.shape[0])

    def copy(self) -> "CharacterState":
        return CharacterState(
            self.root_pose.copy(),
            self.joint_positions.copy(),
            self.joint_orientations.copy(),
            self.root_velocity.copy(),
            self.joint_velocities.copy() if self.joint_velocities is not None else None,
        )

    def ensure_velocities(self) -> "CharacterState":
        if self.joint_velocities is None:
            j = self.num_joints
            self.joint_velocities = JointVelocities(np.zeros((j, 3)), np.zeros((j, 3)))
        return self

    def is_finite(self) -> bool:
        parts = [self.root_pose.position, self.root_pose.orientation,
                 self.joint_positions, self.joint_orientations,
                 self.root_velocity.linear, self.root_velocity.angular]
        if self.joint_velocities is not None:
            parts += [self.joint_velocities.linear, self.joint_velocities.angular]
        return all(np.all(np.isfinite(p)) for p in parts)


@dataclass
class MotionClip:
    frames: list[CharacterState]
    fps: float
    label_path: list[str]
    id: str
    has_velocities: bool = False

    def __post_init__(self):
        if len(self.frames) < 2:
            raise ValueError(f"clip {self.id!r} needs >= 2 frames, got {len(self.frames)}")
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        if not self.label_path or self.label_path[0] != "root":
            raise ValueError("label_path must start with 'root'")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def num_joints(self) -> int:
        return self.frames[0].num_joints

    @property
    def num_frames(self) -> int:
        return len(self.frames)

    def frame(self, i: int) -> CharacterState:
        return self.frames[i]


@dataclass
class Dataset:
    clips: list[MotionClip]
    train_ids: set[str] = field(default_factory=set)
    test_ids: set[str] = field(default_factory=set)

    def __post_init__(self):
        ids = [c.id for c in self.clips]
        if len(ids) != len(set(ids)):
            raise ValueError("duplicate clip ids")
        overlap = self.train_ids & self.test_ids
        if overlap:
            raise ValueError(f"clips in both splits: {sorted(overlap)}")

    def by_id(self, clip_id: str) -> MotionClip:
        for c in self.clips:
            if c.id == clip_id:
                return c
        raise KeyError(clip_id)

    def split_clips(self, split: str) -> list[MotionClip]:
        wanted = self.train_ids if split == "train" else self.test_ids
        return [c for c in self.clips if c.id in wanted]


# ---------------------------------------------------------------------------
# native clip format


def _fmt(values: np.ndarray) -> str:
    return " ".join(repr(float(v)) for v in np.asarray(values).ravel())


def save_clip(clip: MotionClip) -> bytes:
    """Serialize to the native line-delimited format (lossless round-trip)."""
    header = {
        "magic": NATIVE_MAGIC,
        "version": NATIVE_VERSION,
        "id": clip.id,
        "fps": clip.fps,
        "num_joints": clip.num_joints,
        "num_frames": clip.num_frames,
        "label_path": clip.label_path,
        "has_velocities": clip.has_velocities,
    }
    lines = [json.dumps(header)]
    for f in clip.frames:
        parts = [
            _fmt(f.root_pose.position),
            _fmt(f.root_pose.orientation),
            _fmt(f.joint_positions),
            _fmt(f.joint_orientations),
        ]
        if clip.has_velocities:
            v = f.joint_velocities
            parts += [
                _fmt(f.root_velocity.linear),
                _fmt(f.root_velocity.angular),
                _fmt(v.linear),
                _fmt(v.angular),
            ]
        lines.append(" ".join(parts))
    return ("\n".join(lines) + "\n").encode()


def _parse_native(data: bytes) -> MotionClip:
    lines = data.decode().splitlines()
    if not lines:
        raise ClipParseError("empty clip file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise ClipParseError(f"line 1: bad header: {e}") from None
    if header.get("magic") != NATIVE_MAGIC:
        raise ClipParseError("line 1: missing clip magic")
    if header.get("version") != NATIVE_VERSION:
        raise ClipParseError(f"line 1: unsupported version {header.get('version')}")
    j = int(header["num_joints"])
    n = int(header["num_frames"])
    has_vel = bool(header.get("has_velocities", False))
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != n:
        raise ClipParseError(f"frame-count mismatch: header says {n}, file has {len(body)}")
    per_frame = 3 + 4 + 3 * j + 4 * j + (3 + 3 + 3 * j + 3 * j if has_vel else 0)
    frames = []
    for i, ln in enumerate(body):
        try:
            vals = np.array(ln.split(), dtype=np.float64)
        except ValueError:
            raise ClipParseError(f"line {i + 2}: non-numeric frame data") from None
        if vals.size != per_frame:
            raise ClipParseError(
                f"line {i + 2}: expected {per_frame} values, got {vals.size}"
            )
        k = 0
        root_p, k = vals[k:k + 3], k + 3
        root_q, k = vals[k:k + 4], k + 4
        jp, k = vals[k:k + 3 * j].reshape(j, 3), k + 3 * j
        jq, k = vals[k:k + 4 * j].reshape(j, 4), k + 4 * j
        state = CharacterState(RigidPose(root_p, root_q), jp, jq)
        if has_vel:
            rl, k = vals[k:k + 3], k + 3
            ra, k = vals[k:k + 3], k + 3
            jl, k = vals[k:k + 3 * j].reshape(j, 3), k + 3 * j
            ja, k = vals[k:k + 3 * j].reshape(j, 3), k + 3 * j
            state.root_velocity = SpatialVelocity(rl, ra)
            state.joint_velocities = JointVelocities(jl, ja)
        frames.append(state)
    return MotionClip(
        frames, float(header["fps"]), list(header["label_path"]), str(header["id"]),
        has_velocities=has_vel,
    )


# ---------------------------------------------------------------------------
# BVH subset reader

_BVH_UP_FIX = quat_from_axis_angle(np.array([1.0, 0.0, 0.0]), math.pi / 2)  # y-up -> z-up

_ROT_AXES = {"Xrotation": np.array([1.0, 0.0, 0.0]),
             "Yrotation": np.array([0.0, 1.0, 0.0]),
             "Zrotation": np.array([0.0, 0.0, 1.0])}
_POS_INDEX = {"Xposition": 0, "Yposition": 1, "Zposition": 2}


def _parse_bvh(data: bytes, clip_id: str, label_path: list[str], up_axis: str) -> MotionClip:
    """Subset parser: HIERARCHY with OFFSET/CHANNELS (Euler rotations in any
    order plus root translation), MOTION block.  End sites are skipped."""
    text = data.decode()
    tokens: list[tuple[int, str]] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        for tok in line.split():
            tokens.append((lineno, tok))
    pos = 0

    def peek() -> str | None:
        return tokens[pos][1] if pos < len(tokens) else None

    def take(expect: str | None = None) -> str:
        nonlocal pos
        if pos >= len(tokens):
            raise ClipParseError("unexpected end of file")
        lineno, tok = tokens[pos]
        pos += 1
        if expect is not None and tok.upper() != expect.upper():
            raise ClipParseError(f"line {lineno}: expected {expect!r}, got {tok!r}")
        return tok

    def take_float() -> float:
        lineno, _ = tokens[pos]
        tok = take()
        try:
            return float(tok)
        except ValueError:
            raise ClipParseError(f"line {lineno}: expected number, got {tok!r}") from None

    joints: list[dict] = []  # name, parent, offset, channels

    def parse_joint(parent: int):
        kw = take()
        if kw.upper() == "END":
            take("Site")
            take("{")
            take("OFFSET")
            for _ in range(3):
                take_float()
            take("}")
            return
        if kw.upper() not in ("ROOT", "JOINT"):
            raise ClipParseError(f"unexpected keyword {kw!r} in hierarchy")
        name = take()
        take("{")
        take("OFFSET")
        offset = np.array([take_float(), take_float(), take_float()])
        take("CHANNELS")
        n = int(take_float())
        channels = [take() for _ in range(n)]
        for ch in channels:
            if ch not in _ROT_AXES and ch not in _POS_INDEX:
                raise ClipParseError(f"unsupported channel {ch!r}")
        idx = len(joints)
        joints.append({"name": name, "parent": parent, "offset": offset, "channels": channels})
        while peek() == "JOINT" or (peek() or "").upper() == "END":
            parse_joint(idx)
        take("}")

    take("HIERARCHY")
    parse_joint(-1)
    take("MOTION")
    take("Frames:")
    n_frames = int(take_float())
    take("Frame")
    take("Time:")
    frame_time = take_float()
    if frame_time <= 0:
        raise ClipParseError("non-positive frame time")
    per_frame = sum(len(j["channels"]) for j in joints)
    remaining = len(tokens) - pos
    if remaining != n_frames * per_frame:
        raise ClipParseError(
            f"frame-count mismatch: MOTION block has {remaining} values, "
            f"expected {n_frames} frames x {per_frame} channels"
        )

    upfix = _BVH_UP_FIX if up_axis == "y" else np.array([1.0, 0.0, 0.0, 0.0])
    frames = []
    for _ in range(n_frames):
        vals = {}
        for ji, joint in enumerate(joints):
            vals[ji] = [take_float() for _ in joint["channels"]]
        local_quats = np.zeros((len(joints), 4))
        root_trans = np.zeros(3)
        for ji, joint in enumerate(joints):
            q = np.array([1.0, 0.0, 0.0, 0.0])
            for ch, v in zip(joint["channels"], vals[ji]):
                if ch in _POS_INDEX:
                    if joint["parent"] != -1:
                        raise ClipParseError("translation channels only supported on the root")
                    root_trans[_POS_INDEX[ch]] = v
                else:
                    q = quat_mul(q, quat_from_axis_angle(_ROT_AXES[ch], math.radians(v)))
            local_quats[ji] = q
        # forward kinematics over the hierarchy (root at index 0)
        world_q = np.zeros((len(joints), 4))
        world_p = np.zeros((len(joints), 3))
        for ji, joint in enumerate(joints):
            if joint["parent"] == -1:
                world_q[ji] = quat_mul(upfix, local_quats[ji])
                world_p[ji] = _rotate(upfix, joint["offset"] + root_trans)
            else:
                p = joint["parent"]
                world_q[ji] = quat_mul(world_q[p], local_quats[ji])
                world_p[ji] = world_p[p] + _rotate(world_q[p], joint["offset"])
        root_pose = RigidPose(world_p[0], world_q[0])
        # children of the root become the clip's joints
        frames.append(
            CharacterState(root_pose, world_p[1:].copy(), local_quats[1:].copy())
        )
    if n_frames < 2:
        raise ClipParseError("BVH clip needs >= 2 frames")
    return MotionClip(frames, 1.0 / frame_time, label_path, clip_id)


def _rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    from .geom import quat_rotate

    return quat_rotate(q, v)


def load_clip(
    data: bytes,
    format: str = "native",
    clip_id: str = "clip",
    label_path: list[str] | None = None,
    up_axis: str = "y",
) -> MotionClip:
    """Parse clip bytes in the named format ('native' or 'bvh-subset')."""
    if format == "native":
        return _parse_native(data)
    if format == "bvh-subset":
        return _parse_bvh(data, clip_id, label_path or ["root", "unlabeled"], up_axis)
    raise ValueError(f"unknown clip format {format!r}")


def load_clip_file(path: str | Path, **kwargs) -> MotionClip:
    path = Path(path)
    fmt = kwargs.pop("format", "bvh-subset" if path.suffix.lower() == ".bvh" else "native")
    return load_clip(path.read_bytes(), format=fmt, **kwargs)


# ---------------------------------------------------------------------------
# velocity derivation and resampling


def derive_velocities(clip: MotionClip) -> MotionClip:
    """Fill velocities by central finite differences (one-sided at the ends).

    Angular velocities come from the quaternion pair log-map, so they are
    exact for constant-rate rotations. Idempotent: recomputing from the same
    poses yields the same values.
    """
    dt = 1.0 / clip.fps
    n = clip.num_frames
    frames = [f.copy() for f in clip.frames]
    for i in range(n):
        lo, hi = max(i - 1, 0), min(i + 1, n - 1)
        span = (hi - lo) * dt
        a, b = clip.frames[lo], clip.frames[hi]
        root_lin = (b.root_pose.position - a.root_pose.position) / span
        root_ang = angular_velocity_between(a.root_pose.orientation, b.root_pose.orientation, span)
        jl = (b.joint_positions - a.joint_positions) / span
        ja = np.stack(
            [
                angular_velocity_between(a.joint_orientations[j], b.joint_orientations[j], span)
                for j in range(clip.num_joints)
            ]
        )
        frames[i].root_velocity = SpatialVelocity(root_lin, root_ang)
        frames[i].joint_velocities = JointVelocities(jl, ja)
    return MotionClip(frames, clip.fps, list(clip.label_path), clip.id, has_velocities=True)


def resample_speed(clip: MotionClip, ratio: float) -> MotionClip:
    """Replay the clip `ratio` times faster at the same fps.

    Poses are interpolated at scaled phase (lerp positions, slerp
    orientations); velocities are re-derived afterwards so they scale with
    the ratio.
    """
    if not (SPEED_RATIO_MIN <= ratio <= SPEED_RATIO_MAX):
        raise ValueError(f"speed ratio {ratio} outside [{SPEED_RATIO_MIN}, {SPEED_RATIO_MAX}]")
    n = clip.num_frames
    new_n = max(2, int(round((n - 1) / ratio)) + 1)
    frames = []
    for i in range(new_n):
        phase = min(i * ratio, n - 1)
        lo = int(math.floor(phase))
        hi = min(lo + 1, n - 1)
        t = phase - lo
        a, b = clip.frames[lo], clip.frames[hi]
        root = RigidPose(
            (1 - t) * a.root_pose.position + t * b.root_pose.position,
            quat_slerp(a.root_pose.orientation, b.root_pose.orientation, t),
        )
        jp = (1 - t) * a.joint_positions + t * b.joint_positions
        jq = np.stack(
            [
                quat_slerp(a.joint_orientations[j], b.joint_orientations[j], t)
                for j in range(clip.num_joints)
            ]
        )
        frames.append(CharacterState(root, jp, jq))
    out = MotionClip(frames, clip.fps, list(clip.label_path), clip.id)
    return derive_velocities(out) if clip.has_velocities else out


# ---------------------------------------------------------------------------
# dataset splitting and stats


def split_dataset(clips: list[MotionClip], train_fraction: float, seed: int) -> Dataset:
    """Deterministic per-class split toward a frame-count fraction.

    Classes are processed starting with the least frequent; a class holding a
    single clip always lands in the test set, and the larger classes fill the
    remaining train quota.
    """
    if not clips:
        raise ValueError("empty clip list")
    if not (0.0 < train_fraction < 1.0):
        raise ValueError("train_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    classes: dict[tuple, list[MotionClip]] = {}
    for c in clips:
        classes.setdefault(tuple(c.label_path), []).append(c)
    order = sorted(
        classes.items(), key=lambda kv: (len(kv[1]), sum(len(c) for c in kv[1]), kv[0])
    )
    total_frames = sum(len(c) for c in clips)
    train_ids: set[str] = set()
    test_ids: set[str] = set()
    train_frames = 0
    assigned_frames = 0
    for _, members in order:
        if len(members) == 1:
            test_ids.add(members[0].id)
            assigned_frames += len(members[0])
            continue
        members = sorted(members, key=lambda c: c.id)
        perm = rng.permutation(len(members))
        remaining_total = total_frames - assigned_frames
        remaining_train = max(train_fraction * total_frames - train_frames, 0.0)
        share = remaining_train / remaining_total if remaining_total else 0.0
        class_frames = sum(len(c) for c in members)
        class_target = share * class_frames
        taken = 0
        for idx in perm:
            clip = members[idx]
            if taken + len(clip) <= class_target + 1e-9:
                train_ids.add(clip.id)
                taken += len(clip)
            else:
                test_ids.add(clip.id)
        train_frames += taken
        assigned_frames += class_frames
    return Dataset(list(clips), train_ids, test_ids)


def stats(dataset: Dataset) -> dict[str, dict[str, float]]:
    """Per-split motion/frame counts and average clip length."""
    out = {}
    for split in ("train", "test"):
        members = dataset.split_clips(split)
        nm = len(members)
        nf = sum(len(c) for c in members)
        out[split] = {
            "num_motions": nm,
            "num_frames": nf,
            "avg_length": (nf / nm) if nm else 0.0,
        }
    return out


# ---------------------------------------------------------------------------
# dataset manifest


def save_manifest(dataset: Dataset, clip_paths: dict[str, str],
                  exclude: list[str] | None = None) -> str:
    doc = {
        "version": 1,
        "exclude": sorted(exclude or []),
        "clips": [
            {
                "id": c.id,
                "path": clip_paths[c.id],
                "label_path": c.label_path,
                "split": ("train" if c.id in dataset.train_ids
                          else "test" if c.id in dataset.test_ids else "unsplit"),
            }
            for c in dataset.clips
        ],
    }
    return json.dumps(doc, indent=2) + "\n"


def load_manifest(text: str, base_dir: str | Path = ".") -> Dataset:
    doc = json.loads(text)
    if doc.get("version") != 1:
        raise ClipParseError(f"unsupported manifest version {doc.get('version')}")
    excluded = set(doc.get("exclude", []))
    clips, train_ids, test_ids = [], set(), set()
    for entry in doc["clips"]:
        if entry["id"] in excluded:
            continue
        clip = load_clip_file(Path(base_dir) / entry["path"])
        clip = replace(clip, id=entry["id"], label_path=list(entry["label_path"]))
        clips.append(clip)
        if entry["split"] == "train":
            train_ids.add(entry["id"])
        elif entry["split"] == "test":
            test_ids.add(entry["id"])
    return Dataset(clips, train_ids, test_ids)
