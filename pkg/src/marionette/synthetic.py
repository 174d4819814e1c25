"""Synthetic labeled mini-corpus for desk-scale training and tests.

Clips are generated kinematically on a chain model: joint angles follow
smooth periodic trajectories and poses come from forward kinematics, so
clips are internally consistent but not physically simulated; tracking them
physically is the executor's job.
"""

from __future__ import annotations

import numpy as np

from .motion import MotionClip, derive_velocities
from .simkit import CharacterModel, default_state, forward_kinematics


def clip_from_joint_trajectory(
    model: CharacterModel,
    angles: np.ndarray,  # (n_frames, n_actuated)
    fps: float,
    clip_id: str,
    label_path: list[str],
) -> MotionClip:
    """Kinematic clip: run the angle trajectory through FK at rest root."""
    cm = model.compiled()
    frames = []
    base = default_state(model)
    # actuated joint stages follow the link order after the root
    joint_stages = [cm.stages[int(cm.link_stage[li])] for li in range(1, len(model.links))]
    for row in angles:
        q = base.q.copy()
        used = 0
        for stage in joint_stages:
            width = stage.q_slice.stop - stage.q_slice.start
            if width == 1:
                q[stage.q_slice] = row[used]
                used += 1
            else:  # ball joints not used by the chain corpus
                raise ValueError("joint trajectory generator supports hinge chains only")
        frames.append(forward_kinematics(model, q))
    clip = MotionClip(frames, fps, label_path, clip_id)
    return derive_velocities(clip)


def sway_clip(
    model: CharacterModel,
    seconds: float = 4.0,
    fps: float = 60.0,
    amplitude: float = 0.2,
    frequency: float = 0.5,
    phase_lag: float = 0.6,
    clip_id: str = "sway",
    label_path: list[str] | None = None,
) -> MotionClip:
    """Sinusoidal sway: joints curl upward and relax with a phase lag down
    the chain.  Angles stay non-positive (hinge +y tips segments down, so
    negative curls up), which keeps every segment above the ground plane."""
    n = int(round(seconds * fps)) + 1
    t = np.arange(n) / fps
    na = model.num_actuated
    wave = np.stack(
        [
            -0.5 * amplitude * (1.0 - np.cos(2 * np.pi * frequency * t - k * phase_lag))
            for k in range(na)
        ],
        axis=1,
    )
    # ease in from zero so the clip starts at rest on the ground
    ramp = np.clip(t * frequency, 0.0, 1.0)[:, None]
    return clip_from_joint_trajectory(
        model, wave * ramp, fps, clip_id, label_path or ["root", "sway", "gentle"]
    )


def squat_clip(
    model: CharacterModel,
    seconds: float = 4.0,
    fps: float = 60.0,
    depth: float = 0.4,
    frequency: float = 0.4,
    clip_id: str = "squat",
    label_path: list[str] | None = None,
) -> MotionClip:
    """Squat cycle: the chain rises into an arch and flattens again.

    The (-1, +2, -1) fold pattern keeps the first and last segments level,
    so the shape never reaches below the ground the base rests on."""
    n = int(round(seconds * fps)) + 1
    t = np.arange(n) / fps
    na = model.num_actuated
    if na == 3:
        signs = np.array([-1.0, 2.0, -1.0])
    else:  # general chains: plain upward curl
        signs = np.full(na, -1.0)
    base = 0.5 * depth * (1.0 - np.cos(2 * np.pi * frequency * t))
    angles = base[:, None] * signs[None, :]
    return clip_from_joint_trajectory(
        model, angles, fps, clip_id, label_path or ["root", "squat", "shallow"]
    )


def build_mini_corpus(model: CharacterModel, seconds: float = 4.0) -> list[MotionClip]:
    """Small labeled corpus over two class families for balancer/training
    tests: two sway styles, one squat."""
    return [
        sway_clip(model, seconds, clip_id="sway_gentle",
                  label_path=["root", "sway", "gentle"]),
        sway_clip(model, seconds, amplitude=0.35, frequency=0.7, clip_id="sway_strong",
                  label_path=["root", "sway", "strong"]),
        squat_clip(model, seconds, clip_id="squat_shallow",
                   label_path=["root", "squat", "shallow"]),
    ]
