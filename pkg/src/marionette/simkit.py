"""Reduced-coordinate torque-controlled articulated-body simulation.

Trees of rigid bodies connected by free/planar/hinge/ball joints, integrated
with semi-implicit Euler substeps.  Joint-space dynamics use 6D spatial
algebra: the bias vector comes from a recursive Newton-Euler pass and the
mass matrix from the composite-rigid-body algorithm, followed by a dense
solve (fine for trees up to a few dozen DOF).

Free and planar roots are compiled into a massless translation stage plus a
rotation stage.  Root translation coordinates are world-frame, which keeps
linear momentum bookkeeping exact for drifting systems; rotation rates are
body-frame.  Ground contact (plane z=0) is penalty springs at declared
contact points with viscous damping and a Coulomb clamp on the tangential
force.

All heavy entry points are batched over a leading "worker" axis so lockstep
rollout workers share the per-stage Python overhead.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .geom import RigidPose, SpatialVelocity, quat_from_axis_angle
from .motion import CharacterState, JointVelocities

MODEL_MAGIC = "MODEL"
MODEL_VERSION = 1

JOINT_DOF = {"free": 6, "planar": 3, "hinge": 1, "ball": 3}
ROOT_JOINTS = ("free", "planar")


class SimulationDiverged(RuntimeError):
    pass


@dataclass
class LinkSpec:
    """One body plus the joint connecting it to its parent."""

    name: str
    parent: int  # index into links, -1 = world
    joint_type: str  # free | planar | hinge | ball
    anchor: np.ndarray  # joint anchor in parent frame (world position for roots)
    axis: np.ndarray | None = None  # hinge axis, unit, in the link frame
    mass: float = 1.0
    inertia: np.ndarray = field(default_factory=lambda: np.full(3, 0.01))  # diag about COM
    com: np.ndarray = field(default_factory=lambda: np.zeros(3))
    effort: np.ndarray = field(default_factory=lambda: np.zeros(0))  # per actuated dof
    contact_points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    def __post_init__(self):
        self.anchor = np.asarray(self.anchor, dtype=np.float64)
        self.com = np.asarray(self.com, dtype=np.float64)
        self.inertia = np.asarray(self.inertia, dtype=np.float64)
        self.effort = np.asarray(self.effort, dtype=np.float64)
        self.contact_points = np.asarray(self.contact_points, dtype=np.float64).reshape(-1, 3)
        if self.axis is not None:
            self.axis = np.asarray(self.axis, dtype=np.float64)
            self.axis = self.axis / np.linalg.norm(self.axis)
        if self.joint_type not in JOINT_DOF:
            raise ValueError(f"unknown joint type {self.joint_type!r}")
        if self.joint_type == "hinge" and self.axis is None:
            raise ValueError("hinge joint needs an axis")
        n_act = 0 if self.joint_type in ROOT_JOINTS else JOINT_DOF[self.joint_type]
        if self.effort.size == 0:
            self.effort = np.zeros(n_act)
        if self.effort.size != n_act:
            raise ValueError(f"{self.name}: effort size {self.effort.size} != {n_act}")
        if np.any(self.effort < 0):
            raise ValueError("effort limits must be non-negative")


@dataclass
class CharacterModel:
    name: str
    links: list[LinkSpec]
    total_height: float = 0.0
    symmetric: bool = False

    def __post_init__(self):
        for i, link in enumerate(self.links):
            if link.parent >= i:
                raise ValueError("links must be topologically ordered (parent before child)")
        self._compiled = None

    @property
    def total_mass(self) -> float:
        return float(sum(l.mass for l in self.links))

    @property
    def num_joints(self) -> int:
        """Joints reported in CharacterState: every link after the root."""
        return len(self.links) - 1 if self.links[0].joint_type in ROOT_JOINTS else len(self.links)

    @property
    def nq(self) -> int:
        return self.compiled().nq

    @property
    def nv(self) -> int:
        return self.compiled().nv

    @property
    def num_actuated(self) -> int:
        return self.compiled().act_dof.size

    @property
    def effort_limits(self) -> np.ndarray:
        return self.compiled().effort

    def link_index(self, name: str) -> int:
        for i, l in enumerate(self.links):
            if l.name == name:
                return i
        raise KeyError(name)

    def compiled(self) -> "_Compiled":
        if self._compiled is None:
            self._compiled = _compile(self)
        return self._compiled


@dataclass
class SimState:
    q: np.ndarray
    qd: np.ndarray
    time: float = 0.0

    def copy(self) -> "SimState":
        return SimState(self.q.copy(), self.qd.copy(), self.time)


@dataclass
class SimConfig:
    dt: float = 1.0 / 60.0
    substeps: int = 4
    gravity: float = 9.8  # m/s^2, downward (-z)
    friction: float = 1.0
    # penalty parameters sized so the lightest reference bodies stay inside
    # the semi-implicit stability margin at dt/substeps = 1/240
    contact_stiffness: float = 12000.0
    contact_damping: float = 40.0
    tangential_damping: float = 40.0
    max_penetration_depth: float = 0.05  # clamp on the depth fed to the spring, m
    joint_damping: float = 0.0  # N*m*s/rad on actuated dofs, integrated implicitly
    solver_iterations: int = 4  # kept for config parity; dense solve does not iterate

    def __post_init__(self):
        if self.dt <= 0 or self.substeps <= 0:
            raise ValueError("dt and substeps must be positive")


@dataclass
class Perturbation:
    impulse: np.ndarray  # N*s, world frame; direction randomized when requested
    target_body: str | None = None  # None = choose randomly per hit
    period_steps: int = 60  # one impulse every N control steps
    mass_scale: float = 1.0

    def __post_init__(self):
        self.impulse = np.asarray(self.impulse, dtype=np.float64)
        if self.period_steps < 1:
            raise ValueError("period_steps must be >= 1")
        if not (0.5 <= self.mass_scale <= 2.0):
            raise ValueError("mass_scale must be within [0.5, 2]")


# ---------------------------------------------------------------------------
# compilation: links -> elementary dynamic stages

_STAGE_TRANS, _STAGE_SPHERE, _STAGE_HINGE = 0, 1, 2


@dataclass
class _Stage:
    kind: int
    parent: int  # stage index, -1 = world
    link: int  # owning link index (-1 for massless root-translation halves)
    x_tree: np.ndarray  # (6,6) constant parent->predecessor transform
    S: np.ndarray  # (6,k) motion subspace, constant in successor coords
    inertia: np.ndarray  # (6,6) spatial inertia about the stage origin
    q_slice: slice
    v_slice: slice
    axis: np.ndarray | None = None
    trans_axes: np.ndarray | None = None  # (3,k) for translation stages


@dataclass
class _Compiled:
    stages: list[_Stage]
    nq: int
    nv: int
    act_dof: np.ndarray  # indices of actuated dofs in v-space
    effort: np.ndarray  # (n_act,)
    link_stage: np.ndarray  # link index -> stage carrying its inertia
    contact_stage: list[int]
    contact_local: list[np.ndarray]
    masses: np.ndarray
    coms: np.ndarray  # (L,3) local


def _skew(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v)
    return np.array(
        [[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]]
    )


def _xlt(E: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Motion-vector coordinate transform for a frame at r with axes E."""
    x = np.zeros((6, 6))
    x[:3, :3] = E
    x[3:, 3:] = E
    x[3:, :3] = -E @ _skew(r)
    return x


def _spatial_inertia(mass: float, com: np.ndarray, inertia_diag: np.ndarray) -> np.ndarray:
    ic = np.diag(inertia_diag)
    c = _skew(com)
    out = np.zeros((6, 6))
    out[:3, :3] = ic + mass * (c @ c.T)
    out[:3, 3:] = mass * c
    out[3:, :3] = mass * c.T
    out[3:, 3:] = mass * np.eye(3)
    return out


def _compile(model: CharacterModel) -> _Compiled:
    stages: list[_Stage] = []
    link_stage = np.zeros(len(model.links), dtype=int)
    q_off = v_off = 0
    act: list[int] = []
    effort: list[float] = []
    link_to_last_stage: dict[int, int] = {-1: -1}

    for li, link in enumerate(model.links):
        parent_stage = link_to_last_stage[link.parent]
        x_tree = _xlt(np.eye(3), link.anchor)
        inertia = _spatial_inertia(link.mass, link.com, link.inertia)
        if link.joint_type in ("free", "planar"):
            axes = np.eye(3) if link.joint_type == "free" else np.array(
                [[1.0, 0.0], [0.0, 0.0], [0.0, 1.0]]
            )
            k = axes.shape[1]
            s_trans = np.zeros((6, k))
            s_trans[3:, :] = axes
            stages.append(
                _Stage(
                    _STAGE_TRANS, parent_stage, -1, x_tree, s_trans, np.zeros((6, 6)),
                    slice(q_off, q_off + k), slice(v_off, v_off + k), trans_axes=axes,
                )
            )
            q_off += k
            v_off += k
            parent_stage = len(stages) - 1
            if link.joint_type == "free":
                s_rot = np.zeros((6, 3))
                s_rot[:3, :] = np.eye(3)
                stages.append(
                    _Stage(
                        _STAGE_SPHERE, parent_stage, li, _xlt(np.eye(3), np.zeros(3)),
                        s_rot, inertia, slice(q_off, q_off + 4), slice(v_off, v_off + 3),
                    )
                )
                q_off += 4
                v_off += 3
            else:
                s_rot = np.zeros((6, 1))
                s_rot[:3, 0] = [0.0, 1.0, 0.0]
                stages.append(
                    _Stage(
                        _STAGE_HINGE, parent_stage, li, _xlt(np.eye(3), np.zeros(3)),
                        s_rot, inertia, slice(q_off, q_off + 1), slice(v_off, v_off + 1),
                        axis=np.array([0.0, 1.0, 0.0]),
                    )
                )
                q_off += 1
                v_off += 1
        elif link.joint_type == "hinge":
            s = np.zeros((6, 1))
            s[:3, 0] = link.axis
            stages.append(
                _Stage(
                    _STAGE_HINGE, parent_stage, li, x_tree, s, inertia,
                    slice(q_off, q_off + 1), slice(v_off, v_off + 1), axis=link.axis,
                )
            )
            act.append(v_off)
            effort.append(float(link.effort[0]))
            q_off += 1
            v_off += 1
        elif link.joint_type == "ball":
            s = np.zeros((6, 3))
            s[:3, :] = np.eye(3)
            stages.append(
                _Stage(
                    _STAGE_SPHERE, parent_stage, li, x_tree, s, inertia,
                    slice(q_off, q_off + 4), slice(v_off, v_off + 3),
                )
            )
            act.extend(range(v_off, v_off + 3))
            effort.extend(link.effort.tolist())
            q_off += 4
            v_off += 3
        link_to_last_stage[li] = len(stages) - 1
        link_stage[li] = len(stages) - 1

    contact_stage, contact_local = [], []
    for li, link in enumerate(model.links):
        if link.contact_points.shape[0]:
            contact_stage.append(int(link_stage[li]))
            contact_local.append(link.contact_points)
    return _Compiled(
        stages, q_off, v_off, np.array(act, dtype=int), np.array(effort),
        link_stage, contact_stage, contact_local,
        np.array([l.mass for l in model.links]),
        np.stack([l.com for l in model.links]),
    )


# ---------------------------------------------------------------------------
# batched spatial kinematics / dynamics


def _quat_to_matrix_batch(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    m = np.empty(q.shape[:-1] + (3, 3))
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - w * z)
    m[..., 0, 2] = 2 * (x * z + w * y)
    m[..., 1, 0] = 2 * (x * y + w * z)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - w * x)
    m[..., 2, 0] = 2 * (x * z - w * y)
    m[..., 2, 1] = 2 * (y * z + w * x)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def _quat_exp_batch(rotvec: np.ndarray) -> np.ndarray:
    angle = np.linalg.norm(rotvec, axis=-1, keepdims=True)
    small = angle < 1e-12
    safe = np.where(small, 1.0, angle)
    w = np.cos(0.5 * angle)
    xyz = np.where(small, 0.5 * rotvec, np.sin(0.5 * angle) / safe * rotvec)
    q = np.concatenate([w, xyz], axis=-1)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def _quat_mul_batch(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    q = np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


class _Kin:
    """Per-call kinematics scratch: batched transforms and velocities."""

    __slots__ = ("x_up", "E0", "p0", "v", "vJ")

    def __init__(self, n_stages):
        self.x_up = [None] * n_stages
        self.E0 = [None] * n_stages
        self.p0 = [None] * n_stages
        self.v = [None] * n_stages
        self.vJ = [None] * n_stages


def _stage_xj(stage: _Stage, q: np.ndarray, w: int) -> np.ndarray:
    xj = np.zeros((w, 6, 6))
    if stage.kind == _STAGE_TRANS:
        r = q[:, stage.q_slice] @ stage.trans_axes.T  # (W,3)
        eye = np.broadcast_to(np.eye(3), (w, 3, 3))
        xj[:, :3, :3] = eye
        xj[:, 3:, 3:] = eye
        sk = np.zeros((w, 3, 3))
        sk[:, 0, 1], sk[:, 0, 2] = -r[:, 2], r[:, 1]
        sk[:, 1, 0], sk[:, 1, 2] = r[:, 2], -r[:, 0]
        sk[:, 2, 0], sk[:, 2, 1] = -r[:, 1], r[:, 0]
        xj[:, 3:, :3] = -sk
    elif stage.kind == _STAGE_SPHERE:
        E = np.swapaxes(_quat_to_matrix_batch(q[:, stage.q_slice]), -1, -2)
        xj[:, :3, :3] = E
        xj[:, 3:, 3:] = E
    else:
        theta = q[:, stage.q_slice][:, 0]
        quat = np.empty((w, 4))
        quat[:, 0] = np.cos(0.5 * theta)
        quat[:, 1:] = np.sin(0.5 * theta)[:, None] * stage.axis
        E = np.swapaxes(_quat_to_matrix_batch(quat), -1, -2)
        xj[:, :3, :3] = E
        xj[:, 3:, 3:] = E
    return xj


def _forward_kin(cm: _Compiled, q: np.ndarray, qd: np.ndarray | None) -> _Kin:
    w = q.shape[0]
    kin = _Kin(len(cm.stages))
    for i, stage in enumerate(cm.stages):
        x_up = _stage_xj(stage, q, w) @ stage.x_tree
        kin.x_up[i] = x_up
        if stage.parent == -1:
            E0 = x_up[:, :3, :3]
            # recover origin: x_up[3:, :3] = -E0 @ skew(p0)
            sk = -np.swapaxes(E0, -1, -2) @ x_up[:, 3:, :3]
            p0 = np.stack([sk[:, 2, 1], sk[:, 0, 2], sk[:, 1, 0]], axis=-1)
        else:
            Ep, pp = kin.E0[stage.parent], kin.p0[stage.parent]
            E0 = x_up[:, :3, :3] @ Ep
            # stage origin in world: parent origin + parent_axes^T anchor
            anchor = _anchor_of(stage.x_tree)
            p0 = pp + np.einsum("wji,j->wi", Ep, anchor)
        kin.E0[i] = E0
        kin.p0[i] = p0
        if qd is not None:
            vj = np.einsum("ik,wk->wi", stage.S, qd[:, stage.v_slice])
            kin.vJ[i] = vj
            if stage.parent == -1:
                kin.v[i] = vj
            else:
                kin.v[i] = np.einsum("wij,wj->wi", x_up, kin.v[stage.parent]) + vj
    return kin


def _anchor_of(x_tree: np.ndarray) -> np.ndarray:
    sk = -x_tree[:3, :3].T @ x_tree[3:, :3]
    return np.array([sk[2, 1], sk[0, 2], sk[1, 0]])


def _crm_apply(v: np.ndarray, u: np.ndarray) -> np.ndarray:
    ang = np.cross(v[:, :3], u[:, :3])
    lin = np.cross(v[:, 3:], u[:, :3]) + np.cross(v[:, :3], u[:, 3:])
    return np.concatenate([ang, lin], axis=-1)


def _crf_apply(v: np.ndarray, f: np.ndarray) -> np.ndarray:
    n = np.cross(v[:, :3], f[:, :3]) + np.cross(v[:, 3:], f[:, 3:])
    fo = np.cross(v[:, :3], f[:, 3:])
    return np.concatenate([n, fo], axis=-1)


def _contact_forces(
    cm: _Compiled, kin: _Kin, cfg: SimConfig, w: int
) -> dict[int, np.ndarray]:
    """World-frame spatial contact forces (about the world origin) per stage."""
    out: dict[int, np.ndarray] = {}
    for stage_idx, pts in zip(cm.contact_stage, cm.contact_local):
        E0, p0, v = kin.E0[stage_idx], kin.p0[stage_idx], kin.v[stage_idx]
        world_pts = p0[:, None, :] + np.einsum("wji,pj->wpi", E0, pts)  # (W,P,3)
        pen = -world_pts[..., 2]
        active = pen > 0.0
        if not np.any(active):
            continue
        vel_local = v[:, None, 3:] + np.cross(v[:, None, :3], pts[None, :, :])
        vel_world = np.einsum("wji,wpj->wpi", E0, vel_local)
        depth = np.minimum(pen, cfg.max_penetration_depth)
        normal = cfg.contact_stiffness * depth - cfg.contact_damping * vel_world[..., 2]
        normal = np.where(active, np.maximum(normal, 0.0), 0.0)
        tangent = -cfg.tangential_damping * vel_world[..., :2]
        tnorm = np.linalg.norm(tangent, axis=-1)
        limit = cfg.friction * normal
        scale = np.where(tnorm > limit, limit / np.where(tnorm == 0.0, 1.0, tnorm), 1.0)
        force = np.zeros_like(world_pts)
        force[..., :2] = tangent * (scale * active)[..., None]
        force[..., 2] = normal
        moment = np.cross(world_pts, force)
        spatial = np.concatenate([moment.sum(axis=1), force.sum(axis=1)], axis=-1)
        out[stage_idx] = out.get(stage_idx, np.zeros((w, 6))) + spatial
    return out


def _world_force_to_stage(kin: _Kin, i: int, f_world: np.ndarray) -> np.ndarray:
    E0, p0 = kin.E0[i], kin.p0[i]
    n = f_world[:, :3] - np.cross(p0, f_world[:, 3:])
    return np.concatenate(
        [np.einsum("wij,wj->wi", E0, n), np.einsum("wij,wj->wi", E0, f_world[:, 3:])], axis=-1
    )


def _bias_forces(
    cm: _Compiled, kin: _Kin, qd: np.ndarray, gravity: float,
    f_ext_world: dict[int, np.ndarray],
) -> np.ndarray:
    """Generalized bias: RNEA with zero joint acceleration.

    Returns the torque needed to produce zero acceleration, so
    M qdd = tau_applied - bias.
    """
    w = qd.shape[0]
    a0 = np.zeros((w, 6))
    a0[:, 5] = gravity  # a_world = -a_grav trick bakes gravity into the pass
    a = [None] * len(cm.stages)
    f = [None] * len(cm.stages)
    for i, stage in enumerate(cm.stages):
        parent_a = a0 if stage.parent == -1 else a[stage.parent]
        ai = np.einsum("wij,wj->wi", kin.x_up[i], parent_a) + _crm_apply(kin.v[i], kin.vJ[i])
        a[i] = ai
        iv = np.einsum("ij,wj->wi", stage.inertia, kin.v[i])
        fi = np.einsum("ij,wj->wi", stage.inertia, ai) + _crf_apply(kin.v[i], iv)
        if i in f_ext_world:
            fi = fi - _world_force_to_stage(kin, i, f_ext_world[i])
        f[i] = fi
    bias = np.zeros((w, cm.nv))
    for i in range(len(cm.stages) - 1, -1, -1):
        stage = cm.stages[i]
        bias[:, stage.v_slice] = np.einsum("ik,wi->wk", stage.S, f[i])
        if stage.parent != -1:
            f[stage.parent] = f[stage.parent] + np.einsum("wij,wi->wj", kin.x_up[i], f[i])
    return bias


def _mass_matrix(cm: _Compiled, kin: _Kin, w: int) -> np.ndarray:
    ic = [np.broadcast_to(s.inertia, (w, 6, 6)).copy() for s in cm.stages]
    for i in range(len(cm.stages) - 1, -1, -1):
        p = cm.stages[i].parent
        if p != -1:
            xt = np.swapaxes(kin.x_up[i], -1, -2)
            ic[p] += xt @ ic[i] @ kin.x_up[i]
    m = np.zeros((w, cm.nv, cm.nv))
    for i, stage in enumerate(cm.stages):
        fh = ic[i] @ stage.S  # (W,6,ki)
        m[:, stage.v_slice, stage.v_slice] = np.einsum("ik,wil->wkl", stage.S, fh)
        j = i
        while cm.stages[j].parent != -1:
            fh = np.swapaxes(kin.x_up[j], -1, -2) @ fh
            j = cm.stages[j].parent
            sj = cm.stages[j].S
            block = np.einsum("ik,wil->wkl", sj, fh)  # (W,kj,ki)
            m[:, cm.stages[j].v_slice, stage.v_slice] = block
            m[:, stage.v_slice, cm.stages[j].v_slice] = np.swapaxes(block, -1, -2)
    return m


def _integrate(cm: _Compiled, q: np.ndarray, qd: np.ndarray, h: float) -> np.ndarray:
    out = q.copy()
    for stage in cm.stages:
        if stage.kind == _STAGE_TRANS:
            out[:, stage.q_slice] += h * qd[:, stage.v_slice]
        elif stage.kind == _STAGE_HINGE:
            out[:, stage.q_slice] += h * qd[:, stage.v_slice]
        else:
            dq = _quat_exp_batch(h * qd[:, stage.v_slice])
            out[:, stage.q_slice] = _quat_mul_batch(q[:, stage.q_slice], dq)
    return out


def _full_tau(cm: _Compiled, torques: np.ndarray) -> np.ndarray:
    w = torques.shape[0]
    clipped = np.clip(torques, -cm.effort, cm.effort)
    tau = np.zeros((w, cm.nv))
    tau[:, cm.act_dof] = clipped
    return tau


def step_batch(
    model: CharacterModel,
    q: np.ndarray,
    qd: np.ndarray,
    torques: np.ndarray,
    config: SimConfig,
    check: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Advance a batch of states one control step (config.dt).

    Torques are clamped to the per-DOF effort limits before application.
    With check=True any non-finite input or output raises
    SimulationDiverged; rollout collectors pass check=False and screen rows
    themselves (a diverged worker must not kill its batch).
    """
    cm = model.compiled()
    if torques.shape[-1] != cm.act_dof.size:
        raise ValueError(f"expected {cm.act_dof.size} torques, got {torques.shape[-1]}")
    if check and not (np.all(np.isfinite(q)) and np.all(np.isfinite(qd))):
        raise SimulationDiverged("non-finite state in")
    tau = _full_tau(cm, torques)
    h = config.dt / config.substeps
    damping = np.zeros(cm.nv)
    damping[cm.act_dof] = config.joint_damping
    with np.errstate(all="ignore"):  # NaN rows propagate silently when check=False
        for _ in range(config.substeps):
            kin = _forward_kin(cm, q, qd)
            f_ext = _contact_forces(cm, kin, config, q.shape[0])
            bias = _bias_forces(cm, kin, qd, config.gravity, f_ext)
            m = _mass_matrix(cm, kin, q.shape[0])
            if config.joint_damping > 0.0:
                # implicit joint damping: unconditionally stable for any coefficient
                m = m + np.diag(h * damping)
                rhs = tau - bias - damping * qd
            else:
                rhs = tau - bias
            bad = ~(
                np.all(np.isfinite(m), axis=(1, 2)) & np.all(np.isfinite(rhs), axis=1)
            )
            if np.any(bad):
                if check:
                    raise SimulationDiverged("non-finite dynamics")
                # keep the batched solve alive; poison the rows afterwards
                m[bad] = np.eye(cm.nv)
                rhs[bad] = 0.0
            try:
                qdd = np.linalg.solve(m, rhs[..., None])[..., 0]
            except np.linalg.LinAlgError:
                if check:
                    raise SimulationDiverged("singular mass matrix") from None
                qdd = np.zeros_like(rhs)
                bad[:] = True
            if np.any(bad):
                qdd[bad] = np.nan
            qd = qd + h * qdd
            q = _integrate(cm, q, qd, h)
    if check and not (np.all(np.isfinite(q)) and np.all(np.isfinite(qd))):
        raise SimulationDiverged("non-finite state out")
    return q, qd


def step(
    model: CharacterModel, state: SimState, torques: np.ndarray, config: SimConfig
) -> SimState:
    q, qd = step_batch(
        model, state.q[None], state.qd[None], np.asarray(torques, dtype=np.float64)[None], config
    )
    return SimState(q[0], qd[0], state.time + config.dt)


# ---------------------------------------------------------------------------
# state conversions, impulses, energy


@dataclass
class StateArrays:
    """Batched character states as a struct of arrays (leading worker axis)."""

    root_pos: np.ndarray  # (W, 3)
    root_quat: np.ndarray  # (W, 4)
    joint_pos: np.ndarray  # (W, J, 3)
    joint_quat: np.ndarray  # (W, J, 4)
    root_lin: np.ndarray  # (W, 3)
    root_ang: np.ndarray  # (W, 3)
    joint_lin: np.ndarray  # (W, J, 3)
    joint_ang: np.ndarray  # (W, J, 3)

    @property
    def num_workers(self) -> int:
        return self.root_pos.shape[0]

    @property
    def num_joints(self) -> int:
        return self.joint_pos.shape[1]

    def row(self, w: int) -> CharacterState:
        return CharacterState(
            RigidPose(self.root_pos[w].copy(), self.root_quat[w].copy()),
            self.joint_pos[w].copy(),
            self.joint_quat[w].copy(),
            SpatialVelocity(self.root_lin[w].copy(), self.root_ang[w].copy()),
            JointVelocities(self.joint_lin[w].copy(), self.joint_ang[w].copy()),
        )

    @classmethod
    def from_states(cls, states: list[CharacterState]) -> "StateArrays":
        for s in states:
            s.ensure_velocities()
        return cls(
            np.stack([s.root_pose.position for s in states]),
            np.stack([s.root_pose.orientation for s in states]),
            np.stack([s.joint_positions for s in states]),
            np.stack([s.joint_orientations for s in states]),
            np.stack([s.root_velocity.linear for s in states]),
            np.stack([s.root_velocity.angular for s in states]),
            np.stack([s.joint_velocities.linear for s in states]),
            np.stack([s.joint_velocities.angular for s in states]),
        )

    def gather(self, rows: np.ndarray) -> "StateArrays":
        return StateArrays(
            self.root_pos[rows], self.root_quat[rows],
            self.joint_pos[rows], self.joint_quat[rows],
            self.root_lin[rows], self.root_ang[rows],
            self.joint_lin[rows], self.joint_ang[rows],
        )


def fk_batch(model: CharacterModel, q: np.ndarray, qd: np.ndarray) -> StateArrays:
    """Batched forward kinematics for free/planar-root models.

    Row w of the result equals forward_kinematics(model, q[w], qd[w]).
    """
    if model.links[0].joint_type not in ROOT_JOINTS:
        raise ValueError("fk_batch expects a floating (free or planar) root")
    cm = model.compiled()
    w = q.shape[0]
    kin = _forward_kin(cm, q, qd)
    root_stage = int(cm.link_stage[0])
    rs = cm.stages[root_stage]
    if rs.kind == _STAGE_SPHERE:
        root_quat = q[:, rs.q_slice]
    else:  # planar pitch hinge about +y
        theta = q[:, rs.q_slice][:, 0]
        root_quat = np.zeros((w, 4))
        root_quat[:, 0] = np.cos(0.5 * theta)
        root_quat[:, 2] = np.sin(0.5 * theta)
    joint_links = list(range(1, len(model.links)))
    j = len(joint_links)
    jp = np.zeros((w, j, 3))
    jq = np.zeros((w, j, 4))
    jl = np.zeros((w, j, 3))
    ja = np.zeros((w, j, 3))
    for row, li in enumerate(joint_links):
        si = int(cm.link_stage[li])
        stage = cm.stages[si]
        jp[:, row] = kin.p0[si]
        if stage.kind == _STAGE_HINGE:
            theta = q[:, stage.q_slice][:, 0]
            jq[:, row, 0] = np.cos(0.5 * theta)
            jq[:, row, 1:] = np.sin(0.5 * theta)[:, None] * stage.axis
        else:
            jq[:, row] = q[:, stage.q_slice]
        v = kin.v[si]
        jl[:, row] = np.einsum("wji,wj->wi", kin.E0[si], v[:, 3:])
        ja[:, row] = np.einsum("ik,wk->wi", stage.S[:3], qd[:, stage.v_slice])
    v_root = kin.v[root_stage]
    e_root = kin.E0[root_stage]
    return StateArrays(
        kin.p0[root_stage].copy(),
        root_quat.copy(),
        jp, jq,
        np.einsum("wji,wj->wi", e_root, v_root[:, 3:]),
        np.einsum("wji,wj->wi", e_root, v_root[:, :3]),
        jl, ja,
    )


def forward_kinematics(model: CharacterModel, q: np.ndarray, qd: np.ndarray | None = None) -> CharacterState:
    """Expand reduced coordinates into the redundant character state."""
    cm = model.compiled()
    if qd is None:
        qd = np.zeros(cm.nv)
    kin = _forward_kin(cm, q[None], qd[None])
    root_stage = int(cm.link_stage[0])
    root_pose = RigidPose(kin.p0[root_stage][0], _matrix_to_quat(kin.E0[root_stage][0].T))
    if model.links[0].joint_type in ROOT_JOINTS:
        joint_links = list(range(1, len(model.links)))
    else:  # fixed-base models report every link as a joint
        joint_links = list(range(len(model.links)))
    jp = np.zeros((len(joint_links), 3))
    jq = np.zeros((len(joint_links), 4))
    jl = np.zeros((len(joint_links), 3))
    ja = np.zeros((len(joint_links), 3))
    for row, li in enumerate(joint_links):
        si = int(cm.link_stage[li])
        stage = cm.stages[si]
        jp[row] = kin.p0[si][0]
        if stage.kind == _STAGE_HINGE:
            jq[row] = quat_from_axis_angle(stage.axis, float(q[stage.q_slice][0]))
        else:
            jq[row] = q[stage.q_slice]
        v = kin.v[si][0]
        E0 = kin.E0[si][0]
        jl[row] = E0.T @ v[3:]
        ja[row] = stage.S[:3] @ qd[stage.v_slice]
    v_root = kin.v[root_stage][0]
    E0r = kin.E0[root_stage][0]
    root_vel = SpatialVelocity(E0r.T @ v_root[3:], E0r.T @ v_root[:3])
    state = CharacterState(root_pose, jp, jq, root_vel, JointVelocities(jl, ja))
    return state


def _matrix_to_quat(m: np.ndarray) -> np.ndarray:
    from .geom import quat_from_matrix

    return quat_from_matrix(m)


def state_from_character(model: CharacterModel, cs: CharacterState) -> SimState:
    """Project a redundant character state onto reduced coordinates."""
    cm = model.compiled()
    q = np.zeros(cm.nq)
    qd = np.zeros(cm.nv)
    root = model.links[0]
    stages = cm.stages
    if root.joint_type == "free":
        ts, rs = stages[0], stages[1]
        q[ts.q_slice] = cs.root_pose.position - root.anchor
        q[rs.q_slice] = cs.root_pose.orientation
        qd[ts.v_slice] = cs.root_velocity.linear
        r = _quat_to_matrix_batch(cs.root_pose.orientation[None])[0]
        qd[rs.v_slice] = r.T @ cs.root_velocity.angular
        joint_links = range(1, len(model.links))
    elif root.joint_type == "planar":
        ts, rs = stages[0], stages[1]
        q[ts.q_slice] = (cs.root_pose.position - root.anchor)[[0, 2]]
        quat = cs.root_pose.orientation
        q[rs.q_slice] = 2.0 * np.arctan2(quat[2], quat[0])
        qd[ts.v_slice] = cs.root_velocity.linear[[0, 2]]
        qd[rs.v_slice] = cs.root_velocity.angular[1]
        joint_links = range(1, len(model.links))
    else:
        joint_links = range(len(model.links))
    vel = cs.joint_velocities
    for row, li in enumerate(joint_links):
        stage = stages[int(cm.link_stage[li])]
        jq = cs.joint_orientations[row]
        if stage.kind == _STAGE_HINGE:
            t = float(np.dot(jq[1:], stage.axis))
            q[stage.q_slice] = 2.0 * np.arctan2(t, jq[0])
            if vel is not None:
                qd[stage.v_slice] = np.dot(vel.angular[row], stage.axis)
        else:
            q[stage.q_slice] = jq / np.linalg.norm(jq)
            if vel is not None:
                qd[stage.v_slice] = vel.angular[row]
    return SimState(q, qd)


def _point_jacobian(model: CharacterModel, kin: _Kin, stage_idx: int, point_world: np.ndarray) -> np.ndarray:
    """Rows map qd to the world velocity of a point on the given stage."""
    cm = model.compiled()
    jac = np.zeros((3, cm.nv))
    i = stage_idx
    while i != -1:
        stage = cm.stages[i]
        E0, p0 = kin.E0[i][0], kin.p0[i][0]
        ang = E0.T @ stage.S[:3]  # world-frame angular columns
        lin = E0.T @ stage.S[3:]  # world-frame linear columns at the stage origin
        jac[:, stage.v_slice] = lin - _skew(point_world - p0) @ ang
        i = stage.parent
    return jac


def apply_impulse(
    state: SimState, model: CharacterModel, body: str | int, impulse: np.ndarray
) -> SimState:
    """Instantaneous world-frame impulse at the body's COM: qd += M^-1 J^T j."""
    impulse = np.asarray(impulse, dtype=np.float64)
    if not np.all(np.isfinite(impulse)):
        raise ValueError("non-finite impulse")
    li = model.link_index(body) if isinstance(body, str) else int(body)
    if not (0 <= li < len(model.links)):
        raise KeyError(f"unknown body {body!r}")
    cm = model.compiled()
    kin = _forward_kin(cm, state.q[None], state.qd[None])
    si = int(cm.link_stage[li])
    com_world = kin.p0[si][0] + kin.E0[si][0].T @ model.links[li].com
    jac = _point_jacobian(model, kin, si, com_world)
    m = _mass_matrix(cm, kin, 1)[0]
    dqd = np.linalg.solve(m, jac.T @ impulse)
    return SimState(state.q.copy(), state.qd + dqd, state.time)


def total_linear_momentum(model: CharacterModel, state: SimState) -> np.ndarray:
    cm = model.compiled()
    kin = _forward_kin(cm, state.q[None], state.qd[None])
    p = np.zeros(3)
    for li, link in enumerate(model.links):
        si = int(cm.link_stage[li])
        E0, v = kin.E0[si][0], kin.v[si][0]
        w_world = E0.T @ v[:3]
        v_origin = E0.T @ v[3:]
        com_world_off = E0.T @ link.com
        p += link.mass * (v_origin + np.cross(w_world, com_world_off))
    return p


def mechanical_energy(model: CharacterModel, state: SimState, gravity: float = 9.8) -> tuple[float, float]:
    """(kinetic, potential) with the potential zero level at z=0."""
    cm = model.compiled()
    kin = _forward_kin(cm, state.q[None], state.qd[None])
    m = _mass_matrix(cm, kin, 1)[0]
    ke = 0.5 * float(state.qd @ m @ state.qd)
    pe = 0.0
    for li, link in enumerate(model.links):
        si = int(cm.link_stage[li])
        com_world = kin.p0[si][0] + kin.E0[si][0].T @ link.com
        pe += link.mass * gravity * com_world[2]
    return ke, pe


def scale_mass(model: CharacterModel, factor: float) -> CharacterModel:
    """Scale every body mass and inertia; geometry unchanged."""
    if not (0.5 <= factor <= 2.0):
        raise ValueError("mass scale factor must be within [0.5, 2]")
    links = [
        replace(l, mass=l.mass * factor, inertia=l.inertia * factor,
                anchor=l.anchor.copy(), com=l.com.copy(),
                effort=l.effort.copy(), contact_points=l.contact_points.copy())
        for l in model.links
    ]
    return CharacterModel(model.name, links, model.total_height, model.symmetric)


def lift_above_ground(model: CharacterModel, state: SimState, clearance: float = 0.0) -> SimState:
    """Raise the root so no declared contact point starts below the plane.

    Episode initializers use this after projecting noisy clip states into
    reduced coordinates; spawning inside the ground would otherwise fire the
    penalty springs on the first substep.
    """
    root = model.links[0]
    if root.joint_type not in ROOT_JOINTS:
        return state
    cm = model.compiled()
    if not cm.contact_stage:
        return state
    kin = _forward_kin(cm, state.q[None], None)
    lowest = np.inf
    for si, pts in zip(cm.contact_stage, cm.contact_local):
        world = kin.p0[si][0] + pts @ kin.E0[si][0]  # E0^T applied row-wise
        lowest = min(lowest, world[:, 2].min())
    lift = clearance - lowest
    if lift <= 0.0:
        return state
    out = state.copy()
    trans = cm.stages[0]
    z_col = int(np.argmax(trans.trans_axes[2]))
    out.q[trans.q_slice.start + z_col] += lift
    return out


def default_state(model: CharacterModel) -> SimState:
    """Zero configuration (identity quaternions, zero angles/velocities)."""
    cm = model.compiled()
    q = np.zeros(cm.nq)
    for stage in cm.stages:
        if stage.kind == _STAGE_SPHERE:
            q[stage.q_slice.start] = 1.0
    return SimState(q, np.zeros(cm.nv))


# ---------------------------------------------------------------------------
# model builders and files


def _box_inertia(mass: float, dims) -> np.ndarray:
    dx, dy, dz = dims
    return (mass / 12.0) * np.array([dy * dy + dz * dz, dx * dx + dz * dz, dx * dx + dy * dy])


def build_chain(
    n_joints: int,
    planar: bool = True,
    fixed_base: bool = False,
    link_length: float = 0.3,
    link_mass: float = 1.0,
    base_height: float | None = None,
) -> CharacterModel:
    """Serial chain with n hinge joints.

    Floating variant: a free (or planar) root link plus n hinged links, with
    ground-contact points along every segment.  With fixed_base the first
    link hinges directly off an elevated world anchor, giving the classic
    pendulum used by the energy checks (n_joints=2 -> double pendulum).
    """
    if n_joints < 1:
        raise ValueError("need at least one joint")
    dims = (link_length, 0.08, 0.08)
    inertia = _box_inertia(link_mass, dims)
    com = np.array([link_length / 2.0, 0.0, 0.0])
    contacts = np.array(
        [[0.0, 0.0, -dims[2] / 2.0], [link_length, 0.0, -dims[2] / 2.0]]
    )
    links = []
    # per-joint effort sized at twice the gravity torque of the subtree at
    # full extension: strong enough to lift everything downstream, weak
    # enough that exploration noise cannot shatter the tracking reward
    def joint_effort(joint_rank: int) -> np.ndarray:
        levers = [(i + 0.5) * link_length for i in range(n_joints - joint_rank + 1)]
        return np.array([2.0 * link_mass * 9.8 * sum(levers)])

    if fixed_base:
        anchor_z = 2.0 if base_height is None else base_height
        links.append(
            LinkSpec(
                "link0", -1, "hinge", np.array([0.0, 0.0, anchor_z]),
                axis=np.array([0.0, 1.0, 0.0]), mass=link_mass, inertia=inertia,
                com=com, effort=joint_effort(1), contact_points=np.zeros((0, 3)),
            )
        )
        n_bodies = n_joints
    else:
        root_z = dims[2] / 2.0 if base_height is None else base_height
        links.append(
            LinkSpec(
                "link0", -1, "planar" if planar else "free",
                np.array([0.0, 0.0, root_z]), mass=link_mass, inertia=inertia,
                com=com, contact_points=contacts,
            )
        )
        n_bodies = n_joints + 1
    for i in range(1, n_bodies):
        rank = i + 1 if fixed_base else i  # 1-based joint index along the chain
        links.append(
            LinkSpec(
                f"link{i}", i - 1, "hinge", np.array([link_length, 0.0, 0.0]),
                axis=np.array([0.0, 1.0, 0.0]), mass=link_mass, inertia=inertia,
                com=com, effort=joint_effort(rank),
                contact_points=contacts if not fixed_base else np.zeros((0, 3)),
            )
        )
    return CharacterModel(
        f"chain{n_joints}", links, total_height=n_bodies * link_length
    )


# segment mass fractions, approximate adult anthropometry; normalized to the
# requested total so the sum is exact
_HUMANOID_SEGMENTS = {
    "pelvis": 0.110, "torso": 0.130, "chest": 0.170, "head": 0.080,
    "clavicle": 0.020, "upper_arm": 0.028, "forearm": 0.016, "hand": 0.008,
    "thigh": 0.105, "shin": 0.0465, "foot": 0.012, "toes": 0.004,
}


def build_humanoid(total_mass: float = 70.0, total_height: float = 1.8) -> CharacterModel:
    """Reference humanoid: 20 bodies, 35 DOF, symmetric, effort in [50, 600]."""
    s = total_height / 1.8
    fractions = dict(_HUMANOID_SEGMENTS)
    denom = fractions["pelvis"] + fractions["torso"] + fractions["chest"] + fractions["head"] + 2 * (
        fractions["clavicle"] + fractions["upper_arm"] + fractions["forearm"] + fractions["hand"]
        + fractions["thigh"] + fractions["shin"] + fractions["foot"] + fractions["toes"]
    )
    mass = {k: v / denom * total_mass for k, v in fractions.items()}

    def box(name, dims):
        return _box_inertia(mass[name], dims)

    links = [
        LinkSpec("pelvis", -1, "free", np.array([0.0, 0.0, 0.98 * s]),
                 mass=mass["pelvis"], inertia=box("pelvis", (0.20 * s, 0.26 * s, 0.14 * s)),
                 com=np.zeros(3),
                 contact_points=np.array([[0.06, 0.0, -0.07], [-0.06, 0.0, -0.07]]) * s),
        LinkSpec("torso", 0, "ball", np.array([0.0, 0.0, 0.12 * s]),
                 mass=mass["torso"], inertia=box("torso", (0.20 * s, 0.24 * s, 0.16 * s)),
                 com=np.array([0.0, 0.0, 0.08 * s]), effort=np.full(3, 600.0)),
        LinkSpec("chest", 1, "hinge", np.array([0.0, 0.0, 0.18 * s]),
                 axis=np.array([0.0, 1.0, 0.0]), mass=mass["chest"],
                 inertia=box("chest", (0.22 * s, 0.28 * s, 0.18 * s)),
                 com=np.array([0.0, 0.0, 0.10 * s]), effort=np.array([250.0]),
                 contact_points=np.array([[-0.10, 0.0, 0.10]]) * s),
        LinkSpec("head", 2, "hinge", np.array([0.0, 0.0, 0.26 * s]),
                 axis=np.array([0.0, 1.0, 0.0]), mass=mass["head"],
                 inertia=box("head", (0.14 * s, 0.16 * s, 0.26 * s)),
                 com=np.array([0.0, 0.0, 0.13 * s]), effort=np.array([60.0]),
                 contact_points=np.array([[0.0, 0.0, 0.26]]) * s),
    ]

    def add_side(side: str, sign: float):
        base = len(links)
        chest_idx = 2
        links.append(
            LinkSpec(f"{side}_clavicle", chest_idx, "hinge",
                     np.array([0.0, sign * 0.08 * s, 0.18 * s]),
                     axis=np.array([1.0, 0.0, 0.0]), mass=mass["clavicle"],
                     inertia=box("clavicle", (0.04 * s, 0.12 * s, 0.04 * s)),
                     com=np.array([0.0, sign * 0.06 * s, 0.0]), effort=np.array([60.0])))
        links.append(
            LinkSpec(f"{side}_upper_arm", base, "ball",
                     np.array([0.0, sign * 0.12 * s, 0.0]),
                     mass=mass["upper_arm"],
                     inertia=box("upper_arm", (0.07 * s, 0.07 * s, 0.28 * s)),
                     com=np.array([0.0, 0.0, -0.13 * s]), effort=np.full(3, 250.0)))
        links.append(
            LinkSpec(f"{side}_forearm", base + 1, "hinge",
                     np.array([0.0, 0.0, -0.28 * s]), axis=np.array([0.0, 1.0, 0.0]),
                     mass=mass["forearm"],
                     inertia=box("forearm", (0.06 * s, 0.06 * s, 0.26 * s)),
                     com=np.array([0.0, 0.0, -0.12 * s]), effort=np.array([150.0]),
                     contact_points=np.array([[0.0, 0.0, 0.0]])))
        links.append(
            LinkSpec(f"{side}_hand", base + 2, "hinge",
                     np.array([0.0, 0.0, -0.26 * s]), axis=np.array([1.0, 0.0, 0.0]),
                     mass=mass["hand"], inertia=box("hand", (0.04 * s, 0.08 * s, 0.16 * s)),
                     com=np.array([0.0, 0.0, -0.08 * s]), effort=np.array([50.0]),
                     contact_points=np.array([[0.0, 0.0, -0.16]]) * s))
        links.append(
            LinkSpec(f"{side}_thigh", 0, "ball",
                     np.array([0.0, sign * 0.09 * s, -0.06 * s]),
                     mass=mass["thigh"], inertia=box("thigh", (0.12 * s, 0.12 * s, 0.44 * s)),
                     com=np.array([0.0, 0.0, -0.21 * s]), effort=np.full(3, 600.0)))
        links.append(
            LinkSpec(f"{side}_shin", base + 4, "hinge",
                     np.array([0.0, 0.0, -0.44 * s]), axis=np.array([0.0, 1.0, 0.0]),
                     mass=mass["shin"], inertia=box("shin", (0.10 * s, 0.10 * s, 0.40 * s)),
                     com=np.array([0.0, 0.0, -0.19 * s]), effort=np.array([300.0]),
                     contact_points=np.array([[0.05, 0.0, 0.0]]) * s))
        links.append(
            LinkSpec(f"{side}_foot", base + 5, "hinge",
                     np.array([0.0, 0.0, -0.40 * s]), axis=np.array([0.0, 1.0, 0.0]),
                     mass=mass["foot"], inertia=box("foot", (0.18 * s, 0.09 * s, 0.06 * s)),
                     com=np.array([0.05 * s, 0.0, -0.04 * s]), effort=np.array([120.0]),
                     contact_points=np.array(
                         [[-0.05, -0.045, -0.08], [-0.05, 0.045, -0.08],
                          [0.12, -0.045, -0.08], [0.12, 0.045, -0.08]]) * s))
        links.append(
            LinkSpec(f"{side}_toes", base + 6, "hinge",
                     np.array([0.12 * s, 0.0, -0.05 * s]), axis=np.array([0.0, 1.0, 0.0]),
                     mass=mass["toes"], inertia=box("toes", (0.06 * s, 0.08 * s, 0.03 * s)),
                     com=np.array([0.03 * s, 0.0, 0.0]), effort=np.array([50.0]),
                     contact_points=np.array([[0.06, -0.04, -0.03], [0.06, 0.04, -0.03]]) * s))

    add_side("l", +1.0)
    add_side("r", -1.0)
    return CharacterModel("humanoid", links, total_height=total_height, symmetric=True)


def verify_symmetry(model: CharacterModel) -> bool:
    """Left/right pairs match in mass, effort, and y-mirrored geometry."""
    by_name = {l.name: l for l in model.links}
    mirror = np.array([1.0, -1.0, 1.0])
    for l in model.links:
        if not l.name.startswith("l_"):
            continue
        r = by_name.get("r_" + l.name[2:])
        if r is None:
            return False
        if abs(l.mass - r.mass) > 1e-12 or not np.allclose(l.effort, r.effort):
            return False
        if not np.allclose(l.anchor * mirror, r.anchor, atol=1e-12):
            return False
        if not np.allclose(l.com * mirror, r.com, atol=1e-12):
            return False
    return True


def save_model(model: CharacterModel) -> str:
    doc = {
        "magic": MODEL_MAGIC,
        "version": MODEL_VERSION,
        "name": model.name,
        "total_height": model.total_height,
        "symmetric": model.symmetric,
        "links": [
            {
                "name": l.name,
                "parent": l.parent,
                "joint_type": l.joint_type,
                "anchor": l.anchor.tolist(),
                "axis": None if l.axis is None else l.axis.tolist(),
                "mass": l.mass,
                "inertia": l.inertia.tolist(),
                "com": l.com.tolist(),
                "effort": l.effort.tolist(),
                "contact_points": l.contact_points.tolist(),
            }
            for l in model.links
        ],
    }
    return json.dumps(doc, indent=2) + "\n"


def load_model(text: str) -> CharacterModel:
    doc = json.loads(text)
    if doc.get("magic") != MODEL_MAGIC or doc.get("version") != MODEL_VERSION:
        raise ValueError("not a model file (bad magic/version)")
    links = [
        LinkSpec(
            d["name"], d["parent"], d["joint_type"], np.array(d["anchor"]),
            axis=None if d["axis"] is None else np.array(d["axis"]),
            mass=d["mass"], inertia=np.array(d["inertia"]), com=np.array(d["com"]),
            effort=np.array(d["effort"]), contact_points=np.array(d["contact_points"]).reshape(-1, 3),
        )
        for d in doc["links"]
    ]
    return CharacterModel(doc["name"], links, doc["total_height"], doc["symmetric"])
