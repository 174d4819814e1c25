"""Run configuration: one YAML file capturing everything a run needs.

Sections map one-to-one onto the library config dataclasses.  Unknown keys
are rejected so typos fail loudly.  Environment variables override file
values with the prefix MARIONETTE_<SECTION>__<KEY> (values parsed as YAML,
so numbers and booleans keep their types).
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .encoder import ObsConfig, RewardCoeffs, RewardWeights, ToleranceConfig
from .policy import VarianceSchedule
from .simkit import SimConfig
from .trainer import PpoConfig, RsisConfig

ENV_PREFIX = "MARIONETTE_"


class ConfigError(ValueError):
    pass


@dataclass
class TaskConfig:
    """What to train/serve on: the character model and its clip source."""

    model: str = "chain"  # chain | humanoid | path to a model file
    chain_joints: int = 3
    planar: bool = True
    clips: str = "synthetic"  # synthetic | path to a dataset manifest
    clip_seconds: float = 4.0
    sway_amplitude: float = 0.15
    sway_frequency: float = 0.4
    squat_depth: float = 0.3
    squat_frequency: float = 0.3


@dataclass
class SchedulerConfig:
    transition_frames: int = 6
    turn_rate_deg: float = 120.0
    stream_smoothing: float = 0.3
    pose_buffer_capacity: int = 8


@dataclass
class ServeConfig:
    host: str = "127.0.0.1"
    port: int = 8765
    pose_port: int = 8766
    tick_rate: float = 60.0
    tau: int = 1


@dataclass
class RunConfig:
    task: TaskConfig = field(default_factory=TaskConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    rsis: RsisConfig = field(default_factory=RsisConfig)
    reward_weights: RewardWeights = field(default_factory=RewardWeights)
    reward_coeffs: RewardCoeffs = field(default_factory=RewardCoeffs)
    tolerances: ToleranceConfig = field(default_factory=ToleranceConfig)
    variance: VarianceSchedule = field(default_factory=VarianceSchedule)
    sim: SimConfig = field(default_factory=SimConfig)
    observation: ObsConfig = field(default_factory=ObsConfig)
    schedulers: SchedulerConfig = field(default_factory=SchedulerConfig)
    serve: ServeConfig = field(default_factory=ServeConfig)


_SECTION_TYPES = {f.name: f.default_factory for f in dataclasses.fields(RunConfig)}


def _coerce(value, target_type):
    if target_type is tuple or str(target_type).startswith("tuple"):
        return tuple(value)
    if target_type is np.ndarray:
        return np.asarray(value, dtype=np.float64)
    return value


def _build_section(cls, data: dict, section: str):
    valid = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in valid:
            raise ConfigError(f"unknown key {section}.{key!r}; valid: {sorted(valid)}")
        f = valid[key]
        target = f.type if isinstance(f.type, type) else None
        if f.default_factory is not dataclasses.MISSING:  # type: ignore[misc]
            target = type(f.default_factory())
        elif f.default is not dataclasses.MISSING:
            target = type(f.default)
        kwargs[key] = _coerce(value, target)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"section {section!r}: {e}") from None


def _env_overrides(env: dict[str, str]) -> dict[str, dict]:
    out: dict[str, dict] = {}
    for name, raw in env.items():
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX):]
        if "__" not in rest:
            raise ConfigError(f"malformed override {name!r}; use {ENV_PREFIX}SECTION__KEY")
        section, key = rest.split("__", 1)
        out.setdefault(section.lower(), {})[key.lower()] = yaml.safe_load(raw)
    return out


def load_run_config(
    source: str | Path | None = None, env: dict[str, str] | None = None
) -> RunConfig:
    """Parse a YAML run config plus environment overrides.

    `source` may be a path, raw YAML text, or None for pure defaults.
    """
    data: dict = {}
    if source is not None:
        text = Path(source).read_text() if isinstance(source, Path) else str(source)
        if isinstance(source, str) and "\n" not in source and Path(source).exists():
            text = Path(source).read_text()
        parsed = yaml.safe_load(text)
        if parsed is None:
            parsed = {}
        if not isinstance(parsed, dict):
            raise ConfigError("config root must be a mapping of sections")
        data = parsed
    for section, overrides in _env_overrides(env if env is not None else dict(os.environ)).items():
        data.setdefault(section, {})
        if not isinstance(data[section], dict):
            raise ConfigError(f"section {section!r} must be a mapping")
        data[section].update(overrides)
    known = set(_SECTION_TYPES)
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown sections {sorted(unknown)}; valid: {sorted(known)}")
    kwargs = {}
    for section, factory in _SECTION_TYPES.items():
        cls = type(factory())
        kwargs[section] = _build_section(cls, data.get(section, {}) or {}, section)
    return RunConfig(**kwargs)


def assemble_task(cfg: RunConfig):
    """Materialize (model, clips, sampling table) from the task section."""
    from .motion import load_manifest
    from .sampler import LabelTree, build_probability_table, uniform_table
    from .simkit import build_chain, build_humanoid, load_model
    from .synthetic import squat_clip, sway_clip

    t = cfg.task
    if t.model == "chain":
        model = build_chain(t.chain_joints, planar=t.planar)
    elif t.model == "humanoid":
        model = build_humanoid()
    else:
        model = load_model(Path(t.model).read_text())
    if t.clips == "synthetic":
        clips = [
            sway_clip(model, t.clip_seconds, amplitude=t.sway_amplitude,
                      frequency=t.sway_frequency, clip_id="sway",
                      label_path=["root", "sway", "gentle"]),
            squat_clip(model, t.clip_seconds, depth=t.squat_depth,
                       frequency=t.squat_frequency, clip_id="squat",
                       label_path=["root", "squat", "shallow"]),
        ]
    else:
        manifest = Path(t.clips)
        dataset = load_manifest(manifest.read_text(), base_dir=manifest.parent)
        from .motion import derive_velocities

        clips = [derive_velocities(c) if not c.has_velocities else c
                 for c in (dataset.split_clips("train") or dataset.clips)]
    if cfg.ppo.balancer_enabled:
        tree = LabelTree.from_label_paths({c.id: c.label_path for c in clips})
        table = build_probability_table(tree)
    else:
        table = uniform_table([c.id for c in clips])
    return model, clips, table


def dump_run_config(cfg: RunConfig) -> str:
    """YAML text with every effective value, for reproducibility records."""
    doc = {}
    for f in dataclasses.fields(RunConfig):
        section = getattr(cfg, f.name)
        entry = {}
        for sf in dataclasses.fields(section):
            v = getattr(section, sf.name)
            if isinstance(v, np.ndarray):
                v = v.tolist()
            elif isinstance(v, tuple):
                v = list(v)
            entry[sf.name] = v
        doc[f.name] = entry
    return yaml.safe_dump(doc, sort_keys=False)
