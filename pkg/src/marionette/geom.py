"""Quaternion / rigid-transform algebra and frame-local state encoding.

Conventions used throughout the package:
  * quaternions are float64 arrays [w, x, y, z], unit norm, and rotate
    column vectors by v' = R(q) v with R(q) mapping local -> world;
  * angular velocities are 3-vectors (axis * rad/s), never quaternion
    derivatives;
  * canonical form flips the sign so that w >= 0 (double-cover fix).

All quaternion helpers broadcast over leading axes, so (4,) and (N, 4)
inputs both work.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

QUAT_NORM_TOL = 1e-9

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    """Scale to unit norm. Near-zero input falls back to identity."""
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    out = np.where(n > 1e-12, q / np.where(n == 0.0, 1.0, n), IDENTITY_QUAT)
    return out


def quat_canonical(q: np.ndarray) -> np.ndarray:
    """Flip sign so w >= 0; ties (w == 0) flip toward positive first nonzero."""
    q = np.asarray(q, dtype=np.float64)
    w = q[..., :1]
    sign = np.where(w > 0.0, 1.0, np.where(w < 0.0, -1.0, 0.0))
    # w == 0: decide by the first nonzero of (x, y, z) for determinism
    rest = q[..., 1:]
    first = np.where(
        rest[..., :1] != 0.0,
        rest[..., :1],
        np.where(rest[..., 1:2] != 0.0, rest[..., 1:2], rest[..., 2:3]),
    )
    tie = np.where(first >= 0.0, 1.0, -1.0)
    sign = np.where(sign == 0.0, tie, sign)
    return q * sign


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a*b: composition applying b first, then a."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    out = np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )
    return quat_normalize(out)


def quat_conj(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vector(s) v by quaternion(s) q (local -> world)."""
    q = np.asarray(q, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    qv = q[..., 1:]
    w = q[..., :1]
    t = 2.0 * np.cross(qv, v)
    return v + w * t + np.cross(qv, t)


def quat_from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    half = 0.5 * angle
    return np.concatenate([[np.cos(half)], np.sin(half) * axis])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_from_matrix(m: np.ndarray) -> np.ndarray:
    """Shepperd's method; returns the canonical (w >= 0) quaternion."""
    m = np.asarray(m, dtype=np.float64)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0.0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        )
    elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = np.array(
            [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        )
    elif m[1, 1] >= m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = np.array(
            [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
        )
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = np.array(
            [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
        )
    return quat_canonical(quat_normalize(q))


def quat_exp(rotvec: np.ndarray) -> np.ndarray:
    """Rotation vector (axis * angle) -> quaternion."""
    rotvec = np.asarray(rotvec, dtype=np.float64)
    angle = np.linalg.norm(rotvec)
    if angle < 1e-12:
        # second-order series keeps unit norm to machine precision
        return quat_normalize(np.concatenate([[1.0 - angle * angle / 8.0], 0.5 * rotvec]))
    axis = rotvec / angle
    return quat_from_axis_angle(axis, angle)


def quat_log(q: np.ndarray) -> np.ndarray:
    """Quaternion -> rotation vector (inverse of quat_exp), angle in [0, pi]."""
    q = quat_canonical(quat_normalize(q))
    w = np.clip(q[0], -1.0, 1.0)
    vnorm = np.linalg.norm(q[1:])
    if vnorm < 1e-12:
        return 2.0 * q[1:]
    angle = 2.0 * np.arctan2(vnorm, w)
    return (angle / vnorm) * q[1:]


def quat_slerp(a: np.ndarray, b: np.ndarray, t: float) -> np.ndarray:
    """Shortest-path spherical interpolation; unit output.

    Antipodal inputs (180 deg apart) interpolate about a fixed
    perpendicular axis chosen deterministically from `a`.
    """
    a = quat_normalize(np.asarray(a, dtype=np.float64))
    b = quat_normalize(np.asarray(b, dtype=np.float64))
    dot = float(np.dot(a, b))
    if dot < 0.0:
        b = -b
        dot = -dot
    dot = min(dot, 1.0)
    if dot > 1.0 - 1e-12:
        return quat_normalize(a + t * (b - a))
    theta = np.arccos(dot)
    if np.pi - 2.0 * np.arctan2(np.linalg.norm(a - b), np.linalg.norm(a + b)) < 1e-9 and dot < 1e-9:
        # exactly antipodal: rotate about a fixed axis perpendicular to a
        perp = np.array([-a[1], a[0], -a[3], a[2]])
        return quat_normalize(np.cos(t * np.pi / 2.0) * a + np.sin(t * np.pi / 2.0) * perp)
    s = np.sin(theta)
    return quat_normalize((np.sin((1.0 - t) * theta) / s) * a + (np.sin(t * theta) / s) * b)


def quat_angle(a: np.ndarray, b: np.ndarray) -> float:
    """Geodesic angle between two rotations in [0, pi] (sign-insensitive)."""
    a = quat_normalize(np.asarray(a, dtype=np.float64))
    b = quat_normalize(np.asarray(b, dtype=np.float64))
    dot = abs(float(np.sum(a * b, axis=-1)))
    return 2.0 * np.arccos(min(dot, 1.0))


def quat_angle_many(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """quat_angle broadcast over leading axes."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    dot = np.abs(np.sum(a * b, axis=-1))
    return 2.0 * np.arccos(np.clip(dot, -1.0, 1.0))


def angular_velocity_between(q0: np.ndarray, q1: np.ndarray, dt: float) -> np.ndarray:
    """Body-frame angular velocity carrying q0 to q1 over dt seconds."""
    rel = quat_mul(quat_conj(q0), q1)
    return quat_log(rel) / dt


@dataclass
class Vec3:
    """Named 3-vector; most code paths use raw numpy arrays instead."""

    x: float
    y: float
    z: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])


@dataclass
class SpatialVelocity:
    linear: np.ndarray = field(default_factory=lambda: np.zeros(3))
    angular: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def copy(self) -> "SpatialVelocity":
        return SpatialVelocity(self.linear.copy(), self.angular.copy())


@dataclass
class RigidPose:
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    orientation: np.ndarray = field(default_factory=lambda: IDENTITY_QUAT.copy())

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64)
        self.orientation = quat_normalize(self.orientation)

    def copy(self) -> "RigidPose":
        return RigidPose(self.position.copy(), self.orientation.copy())

    def transform_point(self, p: np.ndarray) -> np.ndarray:
        """Map a point from this pose's local frame into the world."""
        return self.position + quat_rotate(self.orientation, p)

    def inverse_transform_point(self, p: np.ndarray) -> np.ndarray:
        """Map a world point into this pose's local frame."""
        return quat_rotate(quat_conj(self.orientation), np.asarray(p) - self.position)

    def compose(self, other: "RigidPose") -> "RigidPose":
        """self * other: apply other in self's frame."""
        return RigidPose(
            self.transform_point(other.position),
            quat_mul(self.orientation, other.orientation),
        )

    def inverse(self) -> "RigidPose":
        inv_q = quat_conj(self.orientation)
        return RigidPose(-quat_rotate(inv_q, self.position), inv_q)

    def to_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = quat_to_matrix(self.orientation)
        m[:3, 3] = self.position
        return m


@dataclass
class StatePiece:
    """Bundle of positions / orientations / velocities fed to to_local.

    Any field may be None; arrays keep their shapes through the transform.
    """

    positions: np.ndarray | None = None
    orientations: np.ndarray | None = None
    linear_velocities: np.ndarray | None = None
    angular_velocities: np.ndarray | None = None


def heading_frame(pose: RigidPose) -> RigidPose:
    """Yaw-only version of a pose (rotation about world z), for the
    heading-frame encoding ablation."""
    fwd = quat_rotate(pose.orientation, np.array([1.0, 0.0, 0.0]))
    yaw = np.arctan2(fwd[1], fwd[0])
    return RigidPose(pose.position.copy(), quat_from_axis_angle(np.array([0.0, 0.0, 1.0]), yaw))


def to_local(frame: RigidPose, piece: StatePiece) -> StatePiece:
    """Express a state piece in the given frame.

    Positions are inverse-rotated after subtracting the frame origin,
    orientations are left-multiplied by the inverse frame orientation,
    and both velocity kinds are rotated into the frame.
    """
    inv_q = quat_conj(frame.orientation)
    out = StatePiece()
    if piece.positions is not None:
        out.positions = quat_rotate(inv_q, np.asarray(piece.positions) - frame.position)
    if piece.orientations is not None:
        out.orientations = quat_mul(inv_q, np.asarray(piece.orientations))
    if piece.linear_velocities is not None:
        out.linear_velocities = quat_rotate(inv_q, np.asarray(piece.linear_velocities))
    if piece.angular_velocities is not None:
        out.angular_velocities = quat_rotate(inv_q, np.asarray(piece.angular_velocities))
    return out


def from_local(frame: RigidPose, piece: StatePiece) -> StatePiece:
    """Inverse of to_local."""
    out = StatePiece()
    if piece.positions is not None:
        out.positions = quat_rotate(frame.orientation, np.asarray(piece.positions)) + frame.position
    if piece.orientations is not None:
        out.orientations = quat_mul(frame.orientation, np.asarray(piece.orientations))
    if piece.linear_velocities is not None:
        out.linear_velocities = quat_rotate(frame.orientation, np.asarray(piece.linear_velocities))
    if piece.angular_velocities is not None:
        out.angular_velocities = quat_rotate(frame.orientation, np.asarray(piece.angular_velocities))
    return out


def relative_root_offset(current: RigidPose, target: RigidPose) -> tuple[np.ndarray, np.ndarray]:
    """Target root pose expressed in the current root frame."""
    inv_q = quat_conj(current.orientation)
    dp = quat_rotate(inv_q, target.position - current.position)
    dq = quat_mul(inv_q, target.orientation)
    return dp, dq
