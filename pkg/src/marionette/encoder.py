"""Observation encoding, tracking reward, and per-term termination.

The observation concatenates frame-local encodings of the current state and
each future target state with the relative root offsets from the current
root to each target root.  Apart from the root height (z), nothing in the
vector is world-absolute.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geom import (
    RigidPose,
    StatePiece,
    heading_frame,
    quat_angle_many,
    quat_canonical,
    relative_root_offset,
    to_local,
)
from .motion import CharacterState

TERM_NAMES = ("pr", "qr", "pj", "qj", "qdj")


@dataclass
class ObsConfig:
    # encode each target in its own root frame (default) or in the actual
    # current root frame; the two are interchangeable per measurement
    encode_in_target_frame: bool = True
    heading_only: bool = False  # yaw-only encoding frame ablation


@dataclass
class RewardWeights:
    w_pr: float = 0.2
    w_qr: float = 0.2
    w_pj: float = 0.1
    w_qj: float = 0.4
    w_qdj: float = 0.1

    def __post_init__(self):
        total = self.w_pr + self.w_qr + self.w_pj + self.w_qj + self.w_qdj
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"reward weights must sum to 1, got {total}")

    def as_array(self) -> np.ndarray:
        return np.array([self.w_pr, self.w_qr, self.w_pj, self.w_qj, self.w_qdj])


@dataclass
class RewardCoeffs:
    """Exponential curvature per term; k_pj is divided by the joint count so
    the all-joints position penalty scales comparably for any skeleton."""

    k_pr: float = 10.0
    k_qr: float = 2.0  # fixed by the root-rotation closed form
    k_pj: float = 40.0
    k_qj: float = 2.0
    k_qdj: float = 0.1


@dataclass
class RewardTerms:
    r_pr: float
    r_qr: float
    r_pj: float
    r_qj: float
    r_qdj: float

    def as_array(self) -> np.ndarray:
        return np.array([self.r_pr, self.r_qr, self.r_pj, self.r_qj, self.r_qdj])

    def named(self) -> dict[str, float]:
        return dict(zip(TERM_NAMES, self.as_array()))


@dataclass
class ToleranceConfig:
    alphas: np.ndarray = field(default_factory=lambda: np.full(5, 0.1))

    def __post_init__(self):
        self.alphas = np.asarray(self.alphas, dtype=np.float64)
        if np.any(self.alphas < 0.0) or np.any(self.alphas >= 1.0):
            raise ValueError("tolerances must lie in [0, 1)")


@dataclass
class TerminationResult:
    terminated: bool
    term: str | None = None


def observation_length(num_joints: int, tau: int) -> int:
    return (tau + 1) * (11 + 13 * num_joints) + 7 * tau


def _encode_local(state: CharacterState, frame: RigidPose, cfg: ObsConfig) -> np.ndarray:
    if cfg.heading_only:
        frame = heading_frame(frame)
    state.ensure_velocities()
    piece = StatePiece(
        positions=state.joint_positions,
        orientations=state.joint_orientations,
        linear_velocities=np.concatenate(
            [state.root_velocity.linear[None], state.joint_velocities.linear]
        ),
        angular_velocities=np.concatenate(
            [state.root_velocity.angular[None], state.joint_velocities.angular]
        ),
    )
    local = to_local(frame, piece)
    root_quat_piece = to_local(frame, StatePiece(orientations=state.root_pose.orientation[None]))
    return np.concatenate(
        [
            [state.root_pose.position[2]],  # only the height leaves world space
            root_quat_piece.orientations[0],
            local.positions.ravel(),
            local.orientations.ravel(),
            local.linear_velocities[0],
            local.angular_velocities[0],
            local.linear_velocities[1:].ravel(),
            local.angular_velocities[1:].ravel(),
        ]
    )


def observe(
    current: CharacterState,
    targets: list[CharacterState],
    cfg: ObsConfig | None = None,
) -> np.ndarray:
    """Build the executor input for one control step.

    Layout: local encoding of the current state, local encodings of the tau
    target states, then (offset, quat) of each target root relative to the
    current root.
    """
    cfg = cfg or ObsConfig()
    if not targets:
        raise ValueError("need at least one target frame")
    j = current.num_joints
    for t in targets:
        if t.num_joints != j:
            raise ValueError(f"joint count mismatch: {t.num_joints} != {j}")
    parts = [_encode_local(current, current.root_pose, cfg)]
    for t in targets:
        frame = t.root_pose if cfg.encode_in_target_frame else current.root_pose
        parts.append(_encode_local(t, frame, cfg))
    for t in targets:
        dp, dq = relative_root_offset(current.root_pose, t.root_pose)
        parts.append(dp)
        parts.append(dq)
    return np.concatenate(parts)


def reward(
    actual: CharacterState,
    target: CharacterState,
    weights: RewardWeights | None = None,
    coeffs: RewardCoeffs | None = None,
) -> tuple[float, RewardTerms]:
    """Weighted similarity between actual and target states.

    Every term is exp of a non-positive quantity, so each lies in (0, 1] and
    a perfect match scores exactly 1.  Joint positions are penalized for all
    joints, not only end effectors.  The root-rotation term uses the
    canonicalized quaternion 4-vector difference, which makes the squared
    norm well-defined under the double cover.
    """
    weights = weights or RewardWeights()
    coeffs = coeffs or RewardCoeffs()
    if actual.num_joints != target.num_joints:
        raise ValueError("joint count mismatch")
    for s in (actual, target):
        if not s.is_finite():
            raise ValueError("non-finite state")
    actual.ensure_velocities()
    target.ensure_velocities()
    j = actual.num_joints

    dp_root = target.root_pose.position - actual.root_pose.position
    r_pr = float(np.exp(-coeffs.k_pr * float(dp_root @ dp_root)))

    dq_root = quat_canonical(target.root_pose.orientation) - quat_canonical(
        actual.root_pose.orientation
    )
    r_qr = float(np.exp(-coeffs.k_qr * float(dq_root @ dq_root)))

    dpj = target.joint_positions - actual.joint_positions
    r_pj = float(np.exp(-(coeffs.k_pj / j) * float(np.sum(dpj * dpj))))

    angles = quat_angle_many(target.joint_orientations, actual.joint_orientations)
    r_qj = float(np.exp(-coeffs.k_qj * float(np.sum(angles * angles))))

    dw = target.joint_velocities.angular - actual.joint_velocities.angular
    r_qdj = float(np.exp(-coeffs.k_qdj * float(np.sum(dw * dw))))

    terms = RewardTerms(r_pr, r_qr, r_pj, r_qj, r_qdj)
    total = float(weights.as_array() @ terms.as_array())
    return total, terms


def check_termination(terms: RewardTerms, tol: ToleranceConfig | None = None) -> TerminationResult:
    """Episode ends as soon as any term falls to its floor (boundary
    inclusive); the first violating term in canonical order is reported."""
    tol = tol or ToleranceConfig()
    values = terms.as_array()
    for name, value, alpha in zip(TERM_NAMES, values, tol.alphas):
        if value <= alpha:
            return TerminationResult(True, name)
    return TerminationResult(False, None)


# ---------------------------------------------------------------------------
# batched paths over struct-of-array states (lockstep rollout workers);
# row w must agree with the single-state functions above


def _quat_rotate_rows(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    from .geom import quat_rotate

    return quat_rotate(q, v)


def _encode_local_batch(sa, frame_pos: np.ndarray, frame_quat: np.ndarray) -> np.ndarray:
    from .geom import quat_conj, quat_mul

    w, j = sa.joint_pos.shape[:2]
    inv = quat_conj(frame_quat)  # (W,4)
    inv_j = inv[:, None, :]
    out = np.concatenate(
        [
            sa.root_pos[:, 2:3],
            quat_mul(inv, sa.root_quat),
            _quat_rotate_rows(inv_j, sa.joint_pos - frame_pos[:, None, :]).reshape(w, 3 * j),
            quat_mul(inv_j, sa.joint_quat).reshape(w, 4 * j),
            _quat_rotate_rows(inv, sa.root_lin),
            _quat_rotate_rows(inv, sa.root_ang),
            _quat_rotate_rows(inv_j, sa.joint_lin).reshape(w, 3 * j),
            _quat_rotate_rows(inv_j, sa.joint_ang).reshape(w, 3 * j),
        ],
        axis=1,
    )
    return out


def _heading_quat_batch(quats: np.ndarray) -> np.ndarray:
    """Yaw-only version of each quaternion (rotation about world z)."""
    from .geom import quat_rotate

    fwd = quat_rotate(quats, np.array([1.0, 0.0, 0.0]))
    yaw = np.arctan2(fwd[:, 1], fwd[:, 0])
    out = np.zeros((quats.shape[0], 4))
    out[:, 0] = np.cos(0.5 * yaw)
    out[:, 3] = np.sin(0.5 * yaw)
    return out


def observe_batch(current, targets: list, cfg: ObsConfig | None = None) -> np.ndarray:
    """Batched observe: current and each target are StateArrays."""
    from .geom import quat_conj, quat_mul

    cfg = cfg or ObsConfig()
    frame_of = _heading_quat_batch if cfg.heading_only else (lambda q: q)
    parts = [_encode_local_batch(current, current.root_pos, frame_of(current.root_quat))]
    for t in targets:
        if cfg.encode_in_target_frame:
            parts.append(_encode_local_batch(t, t.root_pos, frame_of(t.root_quat)))
        else:
            parts.append(_encode_local_batch(t, current.root_pos, frame_of(current.root_quat)))
    inv = quat_conj(current.root_quat)
    for t in targets:
        parts.append(_quat_rotate_rows(inv, t.root_pos - current.root_pos))
        parts.append(quat_mul(inv, t.root_quat))
    return np.concatenate(parts, axis=1)


def reward_batch(
    actual,
    target,
    weights: RewardWeights | None = None,
    coeffs: RewardCoeffs | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Batched reward: (totals (W,), per-term rewards (W,5))."""
    weights = weights or RewardWeights()
    coeffs = coeffs or RewardCoeffs()
    j = actual.num_joints
    dp = target.root_pos - actual.root_pos
    r_pr = np.exp(-coeffs.k_pr * np.sum(dp * dp, axis=1))
    dq = quat_canonical(target.root_quat) - quat_canonical(actual.root_quat)
    r_qr = np.exp(-coeffs.k_qr * np.sum(dq * dq, axis=1))
    dpj = target.joint_pos - actual.joint_pos
    r_pj = np.exp(-(coeffs.k_pj / j) * np.sum(dpj * dpj, axis=(1, 2)))
    ang = quat_angle_many(target.joint_quat, actual.joint_quat)
    r_qj = np.exp(-coeffs.k_qj * np.sum(ang * ang, axis=1))
    dw = target.joint_ang - actual.joint_ang
    r_qdj = np.exp(-coeffs.k_qdj * np.sum(dw * dw, axis=(1, 2)))
    terms = np.stack([r_pr, r_qr, r_pj, r_qj, r_qdj], axis=1)
    return terms @ weights.as_array(), terms


def termination_batch(
    terms: np.ndarray, tol: ToleranceConfig | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Batched floor check: (terminated mask (W,), violating index (W,))."""
    tol = tol or ToleranceConfig()
    violated = terms <= tol.alphas
    terminated = np.any(violated, axis=1)
    first = np.argmax(violated, axis=1)
    return terminated, first
