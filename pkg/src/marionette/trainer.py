"""PPO training loop for the tracking executor.

Rollouts run as lockstep batched workers against an immutable policy
snapshot; the update phase owns the parameters exclusively.  Episodes start
with reactive initialization (a state several frames behind the first
target, with noise), are cut by per-term reward floors, clip end, horizon,
or simulator divergence, and every cut records exactly one cause.

The surrogate maximized is mean(ratio * advantage) - beta * KL(old || new),
with the value net regressed to GAE returns and the log-std vector recentred
by the variance controller once per iteration.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .encoder import (
    ObsConfig,
    RewardCoeffs,
    RewardWeights,
    ToleranceConfig,
    check_termination,
    observation_length,
    observe,
    reward,
)
from .motion import CharacterState, MotionClip
from .policy import (
    Adam,
    GaussianPolicy,
    MlpParams,
    VarianceSchedule,
    backward,
    forward,
    forward_cached,
    mlp_from_arrays,
    mlp_to_arrays,
    pack_checkpoint,
    policy_from_arrays,
    policy_init,
    policy_to_arrays,
    recenter_logstd,
    unpack_checkpoint,
    value_init,
)
from .motion import resample_speed
from .sampler import SamplingTable, sample_clip
from .simkit import (
    CharacterModel,
    SimConfig,
    apply_impulse,
    forward_kinematics,
    lift_above_ground,
    scale_mass,
    state_from_character,
    step_batch,
)

TERMINATION_CAUSES = ("clip_end", "term_violation", "divergence", "horizon")


@dataclass
class PpoConfig:
    workers: int = 32  # reference runs use thousands; desk default
    samples_per_worker: int = 64
    iterations: int = 200
    beta: float = 0.5  # KL penalty weight
    adaptive_beta: bool = False  # scale beta to hold the update KL near kl_target
    kl_target: float = 0.01
    epochs: int = 5
    minibatches: int = 4
    gamma: float = 0.95
    lam: float = 0.95
    learning_rate: float = 3e-4
    hidden: tuple[int, ...] = (1024, 1024, 1024)
    tau: int = 1
    lookahead: int = 1  # observe the k-th future frame (1 = next)
    horizon: int = 512
    normalize_advantages: bool = True
    seed: int = 0
    checkpoint_every: int = 100
    normalize_observations: bool = False
    # observation ablations
    append_clip_onehot: bool = False
    append_clip_scalar: bool = False
    kinematic_only: bool = False
    balancer_enabled: bool = True

    def __post_init__(self):
        if min(self.workers, self.samples_per_worker, self.epochs, self.minibatches) < 1:
            raise ValueError("worker/sample/epoch/minibatch counts must be positive")
        if not (0.0 < self.gamma <= 1.0 and 0.0 < self.lam <= 1.0):
            raise ValueError("gamma and lam must lie in (0, 1]")


@dataclass
class RsisConfig:
    k_min: int = 5
    k_max: int = 10
    translation_noise: float = 0.05  # m, uniform per component
    velocity_noise: float = 0.5  # m/s and rad/s, uniform per component
    enabled: bool = True

    def __post_init__(self):
        if self.k_min < 0 or self.k_max < self.k_min:
            raise ValueError("need 0 <= k_min <= k_max")


@dataclass
class RolloutBatch:
    observations: np.ndarray  # (N, obs)
    actions: np.ndarray  # (N, act)
    logprobs: np.ndarray  # (N,) under the collection snapshot
    means_old: np.ndarray  # (N, act)
    logstd_old: np.ndarray  # (act,)
    rewards: np.ndarray  # (N,)
    term_rewards: np.ndarray  # (N, 5)
    values: np.ndarray  # (N,)
    advantages: np.ndarray  # (N,)
    returns: np.ndarray  # (N,)
    episode_causes: list[str]  # one entry per finished episode
    advantages_normalized: bool = False

    def __len__(self) -> int:
        return self.observations.shape[0]


def rsis_init(
    clip: MotionClip, rng: np.random.Generator, cfg: RsisConfig, tau: int = 1
) -> tuple[CharacterState, int]:
    """Reactive episode start: state of a frame k steps behind the first
    target, with uniform noise on the root translation and every velocity.

    Returns (initial state, index of the first target frame).
    """
    k_max = cfg.k_max if cfg.enabled else 0
    n = clip.num_frames
    if n <= k_max + tau + 1:
        raise ValueError(f"clip {clip.id} too short for RSIS (needs > {k_max + tau + 1} frames)")
    j = int(rng.integers(0, n - k_max - tau - 1))
    k = int(rng.integers(cfg.k_min, cfg.k_max + 1)) if cfg.enabled else 0
    state = clip.frames[j].copy()
    state.ensure_velocities()
    if cfg.enabled:
        t = cfg.translation_noise
        v = cfg.velocity_noise
        state.root_pose.position = state.root_pose.position + rng.uniform(-t, t, 3)
        state.root_velocity.linear = state.root_velocity.linear + rng.uniform(-v, v, 3)
        state.root_velocity.angular = state.root_velocity.angular + rng.uniform(-v, v, 3)
        jshape = state.joint_velocities.linear.shape
        state.joint_velocities.linear = state.joint_velocities.linear + rng.uniform(-v, v, jshape)
        state.joint_velocities.angular = state.joint_velocities.angular + rng.uniform(-v, v, jshape)
    first_target = j + max(k, 1)
    return state, first_target


class RunningNorm:
    """Optional observation normalizer (disabled by default)."""

    def __init__(self, dim: int):
        self.count = 1e-4
        self.mean = np.zeros(dim)
        self.var = np.ones(dim)

    def update(self, xs: np.ndarray) -> None:
        bmean = xs.mean(axis=0)
        bvar = xs.var(axis=0)
        bcount = xs.shape[0]
        delta = bmean - self.mean
        total = self.count + bcount
        self.mean += delta * bcount / total
        self.var = (
            self.var * self.count + bvar * bcount + delta**2 * self.count * bcount / total
        ) / total
        self.count = total

    def apply(self, xs: np.ndarray) -> np.ndarray:
        return (xs - self.mean) / np.sqrt(self.var + 1e-8)


class TrackingWorkers:
    """Lockstep batch of tracking episodes over one character model.

    Actions are normalized efforts: applied torque = action * effort limit,
    then clamped again inside the simulator.  All clips are concatenated
    into one frame bank so per-step target lookups are fancy-indexed gathers
    and the observation/reward math runs batched across workers.
    """

    def __init__(
        self,
        model: CharacterModel,
        clips: list[MotionClip],
        table: SamplingTable,
        ppo: PpoConfig,
        rsis: RsisConfig,
        sim: SimConfig | None = None,
        weights: RewardWeights | None = None,
        coeffs: RewardCoeffs | None = None,
        tol: ToleranceConfig | None = None,
        obs_cfg: ObsConfig | None = None,
    ):
        self.model = model
        self.clips = {c.id: c for c in clips}
        self.clip_index = {c.id: i for i, c in enumerate(clips)}
        self.table = table
        self.ppo = ppo
        self.rsis = rsis
        self.sim = sim or SimConfig()
        self.weights = weights or RewardWeights()
        self.coeffs = coeffs or RewardCoeffs()
        self.tol = tol or ToleranceConfig()
        self.obs_cfg = obs_cfg or ObsConfig()
        w = ppo.workers
        cm = model.compiled()
        self.nq, self.nv, self.na = cm.nq, cm.nv, model.num_actuated
        self.effort = model.effort_limits
        all_frames: list[CharacterState] = []
        self.bank_offset: dict[str, int] = {}
        self.clip_len: dict[str, int] = {}
        for c in clips:
            self.bank_offset[c.id] = len(all_frames)
            self.clip_len[c.id] = c.num_frames
            all_frames.extend(c.frames)
        from .simkit import StateArrays

        self.bank = StateArrays.from_states(all_frames)
        self.q = np.zeros((w, self.nq))
        self.qd = np.zeros((w, self.nv))
        self.cursor = np.zeros(w, dtype=int)  # next frame to be tracked
        self.steps = np.zeros(w, dtype=int)
        self.offsets = np.zeros(w, dtype=int)
        self.lengths = np.zeros(w, dtype=int)
        self.worker_clip = [""] * w
        self.rngs = [np.random.default_rng(ppo.seed * 100_003 + wi) for wi in range(w)]
        self.causes: list[str] = []
        for wi in range(w):
            self._reset(wi)

    @property
    def obs_dim(self) -> int:
        j = self.model.num_joints
        base = observation_length(j, self.ppo.tau)
        if self.ppo.kinematic_only:
            base -= 11 + 13 * j
        if self.ppo.append_clip_onehot:
            base += len(self.clips)
        if self.ppo.append_clip_scalar:
            base += 1
        return base

    def _reset(self, wi: int) -> None:
        rng = self.rngs[wi]
        clip_id = sample_clip(self.table, rng)
        clip = self.clips[clip_id]
        state, first_target = rsis_init(
            clip, rng, self.rsis, self.ppo.tau + self.ppo.lookahead - 1
        )
        sim_state = lift_above_ground(self.model, state_from_character(self.model, state))
        self.q[wi] = sim_state.q
        self.qd[wi] = sim_state.qd
        self.cursor[wi] = first_target
        self.steps[wi] = 0
        self.offsets[wi] = self.bank_offset[clip_id]
        self.lengths[wi] = self.clip_len[clip_id]
        self.worker_clip[wi] = clip_id

    def _ablation_obs(self, obs: np.ndarray) -> np.ndarray:
        j = self.model.num_joints
        if self.ppo.kinematic_only:
            obs = obs[:, 11 + 13 * j :]
        extras = []
        if self.ppo.append_clip_onehot:
            onehot = np.zeros((obs.shape[0], len(self.clips)))
            for wi, cid in enumerate(self.worker_clip):
                onehot[wi, self.clip_index[cid]] = 1.0
            extras.append(onehot)
        if self.ppo.append_clip_scalar:
            denom = max(len(self.clips) - 1, 1)
            col = np.array([[self.clip_index[cid] / denom] for cid in self.worker_clip])
            extras.append(col)
        return np.concatenate([obs, *extras], axis=1) if extras else obs

    def observe_all(self) -> np.ndarray:
        from .encoder import observe_batch
        from .simkit import fk_batch

        actual = fk_batch(self.model, self.q, self.qd)
        first = self.offsets + self.cursor + (self.ppo.lookahead - 1)
        targets = [self.bank.gather(first + k) for k in range(self.ppo.tau)]
        return self._ablation_obs(observe_batch(actual, targets, self.obs_cfg))

    def step_all(self, actions: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Advance every worker one control step.

        Returns (rewards, dones, per-term rewards).  Workers that finish are
        reset in place with their cause recorded; diverged rows earn zero
        reward and are flagged, never fatal.
        """
        from .encoder import TERM_NAMES, reward_batch, termination_batch
        from .simkit import fk_batch

        w = self.ppo.workers
        torques = np.clip(actions, -1.0, 1.0) * self.effort
        q, qd = step_batch(self.model, self.q, self.qd, torques, self.sim, check=False)
        finite = np.all(np.isfinite(q), axis=1) & np.all(np.isfinite(qd), axis=1)
        self.q[finite] = q[finite]
        self.qd[finite] = qd[finite]
        diverged = np.flatnonzero(~finite)
        for wi in diverged:  # reset now so the batched FK below stays finite
            self.causes.append("divergence")
            self._reset(wi)
        actual = fk_batch(self.model, self.q, self.qd)
        target = self.bank.gather(self.offsets + self.cursor)
        totals, term_arr = reward_batch(actual, target, self.weights, self.coeffs)
        terminated, first_violation = termination_batch(term_arr, self.tol)
        rewards = np.where(finite, totals, 0.0)
        terms = np.where(finite[:, None], term_arr, 1.0)
        dones = ~finite
        for wi in range(w):
            if not finite[wi]:
                continue
            self.cursor[wi] += 1
            self.steps[wi] += 1
            if terminated[wi]:
                cut = f"term_violation:{TERM_NAMES[first_violation[wi]]}"
            elif self.cursor[wi] + self.ppo.lookahead + self.ppo.tau - 2 >= self.lengths[wi]:
                cut = "clip_end"
            elif self.steps[wi] >= self.ppo.horizon:
                cut = "horizon"
            else:
                continue
            self.causes.append(cut)
            dones[wi] = True
            self._reset(wi)
        return rewards, dones, terms

    def take_causes(self) -> list[str]:
        out = self.causes
        self.causes = []
        return out


def compute_gae(
    rewards: np.ndarray,
    values: np.ndarray,
    bootstrap: float,
    gamma: float,
    lam: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage recursion over one episode segment.

    bootstrap is the value of the state after the last transition (zero for
    terminal states).
    """
    n = len(rewards)
    adv = np.zeros(n)
    last = 0.0
    for t in range(n - 1, -1, -1):
        next_v = bootstrap if t == n - 1 else values[t + 1]
        delta = rewards[t] + gamma * next_v - values[t]
        last = delta + gamma * lam * last
        adv[t] = last
    return adv, adv + values


def collect_rollouts(
    env: TrackingWorkers,
    policy: GaussianPolicy,
    value_net: MlpParams,
    cfg: PpoConfig,
    normalizer: RunningNorm | None = None,
) -> RolloutBatch:
    """workers x samples_per_worker transitions under a frozen snapshot."""
    w, t_len = cfg.workers, cfg.samples_per_worker
    obs_dim = env.obs_dim
    obs_buf = np.zeros((t_len, w, obs_dim))
    act_buf = np.zeros((t_len, w, policy.action_dim))
    mean_buf = np.zeros((t_len, w, policy.action_dim))
    logp_buf = np.zeros((t_len, w))
    rew_buf = np.zeros((t_len, w))
    term_buf = np.ones((t_len, w, 5))
    done_buf = np.zeros((t_len, w), dtype=bool)
    sigma = np.exp(policy.logstd)
    obs = env.observe_all()
    for t in range(t_len):
        net_in = normalizer.apply(obs) if normalizer is not None else obs
        means = forward(policy.mean_net, net_in)
        eps = np.stack([env.rngs[wi].standard_normal(policy.action_dim) for wi in range(w)])
        actions = means + sigma * eps
        logps = np.sum(-policy.logstd - 0.5 * np.log(2 * np.pi) - 0.5 * eps * eps, axis=-1)
        rewards, dones, terms = env.step_all(actions)
        obs_buf[t], act_buf[t], mean_buf[t] = obs, actions, means
        logp_buf[t], rew_buf[t], done_buf[t], term_buf[t] = logps, rewards, dones, terms
        obs = env.observe_all()
    final_in = normalizer.apply(obs) if normalizer is not None else obs
    flat_in = np.concatenate([obs_buf.reshape(t_len * w, obs_dim), final_in])
    if normalizer is not None:
        normalizer.update(obs_buf.reshape(t_len * w, obs_dim))
    values_all = forward(value_net, flat_in)[:, 0]
    val_buf = values_all[: t_len * w].reshape(t_len, w)
    final_vals = values_all[t_len * w :]
    adv_buf = np.zeros((t_len, w))
    ret_buf = np.zeros((t_len, w))
    for wi in range(w):
        start = 0
        for t in range(t_len):
            if done_buf[t, wi] or t == t_len - 1:
                seg = slice(start, t + 1)
                if done_buf[t, wi]:
                    bootstrap = 0.0  # terminal or rotated episode
                else:
                    bootstrap = float(final_vals[wi])
                adv, ret = compute_gae(
                    rew_buf[seg, wi], val_buf[seg, wi], bootstrap, cfg.gamma, cfg.lam
                )
                adv_buf[seg, wi] = adv
                ret_buf[seg, wi] = ret
                start = t + 1
    n = t_len * w
    batch = RolloutBatch(
        observations=obs_buf.reshape(n, obs_dim),
        actions=act_buf.reshape(n, -1),
        logprobs=logp_buf.reshape(n),
        means_old=mean_buf.reshape(n, -1),
        logstd_old=policy.logstd.copy(),
        rewards=rew_buf.reshape(n),
        term_rewards=term_buf.reshape(n, 5),
        values=val_buf.reshape(n),
        advantages=adv_buf.reshape(n),
        returns=ret_buf.reshape(n),
        episode_causes=env.take_causes(),
    )
    if cfg.normalize_advantages:
        mu, sd = batch.advantages.mean(), batch.advantages.std()
        batch.advantages = (batch.advantages - mu) / (sd + 1e-8)
        batch.advantages_normalized = True
    return batch


def gaussian_kl(
    mean_old: np.ndarray, logstd_old: np.ndarray, mean_new: np.ndarray, logstd_new: np.ndarray
) -> np.ndarray:
    """KL(old || new) for diagonal Gaussians, per row."""
    var_o = np.exp(2.0 * logstd_old)
    var_n = np.exp(2.0 * logstd_new)
    dm = mean_new - mean_old
    return np.sum(
        logstd_new - logstd_old + (var_o + dm * dm) / (2.0 * var_n) - 0.5, axis=-1
    )


def ppo_objective_and_grads(
    policy: GaussianPolicy,
    obs: np.ndarray,
    actions: np.ndarray,
    logprobs_old: np.ndarray,
    means_old: np.ndarray,
    logstd_old: np.ndarray,
    advantages: np.ndarray,
    beta: float,
) -> tuple[float, list[np.ndarray], np.ndarray, float]:
    """Surrogate loss (to minimize) and exact gradients.

    loss = -mean(ratio * A) + beta * mean(KL(old || new)); returns
    (loss, mean-net grads, logstd grad, mean KL).
    """
    b = obs.shape[0]
    means, cache = forward_cached(policy.mean_net, obs)
    sigma = np.exp(policy.logstd)
    eps = (actions - means) / sigma
    logprobs = np.sum(-policy.logstd - 0.5 * np.log(2 * np.pi) - 0.5 * eps * eps, axis=-1)
    ratio = np.exp(logprobs - logprobs_old)
    kl = gaussian_kl(means_old, logstd_old, means, policy.logstd)
    loss = float(-np.mean(ratio * advantages) + beta * np.mean(kl))

    coeff = (ratio * advantages)[:, None] / b
    # d(-ratio*A)/dmean = -ratio*A * eps/sigma ; dKL/dmean_new = (mu_n-mu_o)/var_n
    grad_mean = -coeff * eps / sigma + (beta / b) * (means - means_old) / (sigma * sigma)
    grads_net, _ = backward(policy.mean_net, cache, grad_mean)
    # d logpi/d logstd = eps^2 - 1 ; dKL/dlogstd_new = 1 - (var_o + dm^2)/var_n
    var_o = np.exp(2.0 * logstd_old)
    dm = means - means_old
    grad_logstd = (
        -np.sum(coeff * (eps * eps - 1.0), axis=0)
        + (beta / b) * np.sum(1.0 - (var_o + dm * dm) / (sigma * sigma), axis=0)
    )
    return loss, grads_net, grad_logstd, float(np.mean(kl))


def value_loss_and_grads(
    value_net: MlpParams, obs: np.ndarray, returns: np.ndarray
) -> tuple[float, list[np.ndarray]]:
    b = obs.shape[0]
    preds, cache = forward_cached(value_net, obs)
    err = preds[:, 0] - returns
    loss = float(0.5 * np.mean(err * err))
    grads, _ = backward(value_net, cache, (err / b)[:, None])
    return loss, grads


@dataclass
class UpdateMetrics:
    surrogate: float
    value_loss: float
    mean_kl: float
    beta: float = 0.5
    aborted: bool = False


def ppo_update(
    batch: RolloutBatch,
    policy: GaussianPolicy,
    value_net: MlpParams,
    cfg: PpoConfig,
    pi_opt: Adam,
    v_opt: Adam,
    iteration: int,
    sched: VarianceSchedule,
    rng: np.random.Generator,
    normalizer: RunningNorm | None = None,
    beta: float | None = None,
) -> UpdateMetrics:
    """Minibatched ascent on the KL-penalized surrogate, value regression,
    and one variance-controller recentring.  A non-finite loss aborts the
    whole update, keeping the previous parameters."""
    n = len(batch)
    beta = cfg.beta if beta is None else beta
    obs = normalizer.apply(batch.observations) if normalizer is not None else batch.observations
    saved = (policy.copy(), value_net.copy())
    last = UpdateMetrics(0.0, 0.0, 0.0, beta)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for mb in np.array_split(order, cfg.minibatches):
            loss, grads_net, grad_logstd, _ = ppo_objective_and_grads(
                policy, obs[mb], batch.actions[mb], batch.logprobs[mb],
                batch.means_old[mb], batch.logstd_old, batch.advantages[mb], beta,
            )
            vloss, vgrads = value_loss_and_grads(value_net, obs[mb], batch.returns[mb])
            if not (np.isfinite(loss) and np.isfinite(vloss)):
                restored_pi, restored_v = saved
                policy.mean_net.weights = restored_pi.mean_net.weights
                policy.mean_net.biases = restored_pi.mean_net.biases
                policy.logstd = restored_pi.logstd
                value_net.weights = restored_v.weights
                value_net.biases = restored_v.biases
                return UpdateMetrics(loss, vloss, 0.0, beta, aborted=True)
            pi_opt.step(policy.mean_net.params() + [policy.logstd], grads_net + [grad_logstd])
            v_opt.step(value_net.params(), vgrads)
            last.surrogate, last.value_loss = loss, vloss
    policy.logstd = recenter_logstd(policy.logstd, iteration, sched)
    # report the post-update divergence from the snapshot
    means = forward(policy.mean_net, obs)
    last.mean_kl = float(
        np.mean(gaussian_kl(batch.means_old, batch.logstd_old, means, policy.logstd))
    )
    return last


@dataclass
class TrainResult:
    policy: GaussianPolicy
    value_net: MlpParams
    metrics: list[dict]
    checkpoint_path: Path | None = None


def _rng_state_to_json(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def _rng_from_json(state: dict) -> np.random.Generator:
    rng = np.random.default_rng(0)
    rng.bit_generator.state = state
    return rng


def save_training_checkpoint(
    path: Path,
    policy: GaussianPolicy,
    value_net: MlpParams,
    pi_opt: Adam,
    v_opt: Adam,
    iteration: int,
    env: TrackingWorkers,
    update_rng: np.random.Generator,
    normalizer: RunningNorm | None = None,
    beta: float | None = None,
) -> None:
    """Everything a bit-identical resume needs: parameters, optimizer
    moments, RNG states, and the mid-episode worker states."""
    arrays = policy_to_arrays(policy)
    arrays.update(mlp_to_arrays(value_net, "vf"))
    for tag, opt in (("pi", pi_opt), ("vf", v_opt)):
        for i, (m, v) in enumerate(zip(opt.m, opt.v)):
            arrays[f"adam.{tag}.m{i}"] = m
            arrays[f"adam.{tag}.v{i}"] = v
    arrays["env.q"] = env.q
    arrays["env.qd"] = env.qd
    arrays["env.cursor"] = env.cursor.astype(np.float64)
    arrays["env.steps"] = env.steps.astype(np.float64)
    if normalizer is not None:
        arrays["norm.mean"] = normalizer.mean
        arrays["norm.var"] = normalizer.var
    meta = {
        "iteration": iteration,
        "adam": {
            "pi": {"t": pi_opt.t, "lr": pi_opt.lr},
            "vf": {"t": v_opt.t, "lr": v_opt.lr},
        },
        "rng": {
            "workers": [_rng_state_to_json(r) for r in env.rngs],
            "update": _rng_state_to_json(update_rng),
        },
        "env_worker_clip": list(env.worker_clip),
        "normalizer_count": normalizer.count if normalizer is not None else None,
        "beta": beta,
    }
    path.write_bytes(pack_checkpoint(arrays, meta))


def load_policy_checkpoint(path: Path | str | bytes) -> tuple[GaussianPolicy, MlpParams, dict]:
    data = path if isinstance(path, bytes) else Path(path).read_bytes()
    arrays, meta = unpack_checkpoint(data)
    return policy_from_arrays(arrays), mlp_from_arrays(arrays, "vf"), meta


def train(
    model: CharacterModel,
    clips: list[MotionClip],
    table: SamplingTable,
    cfg: PpoConfig,
    rsis: RsisConfig | None = None,
    sim: SimConfig | None = None,
    weights: RewardWeights | None = None,
    coeffs: RewardCoeffs | None = None,
    tol: ToleranceConfig | None = None,
    sched: VarianceSchedule | None = None,
    obs_cfg: ObsConfig | None = None,
    out_dir: Path | str | None = None,
    sink=None,
    init_policy: GaussianPolicy | None = None,
    init_value: MlpParams | None = None,
    resume_from: Path | str | None = None,
) -> TrainResult:
    """Full training run; returns the policy plus one metrics dict per
    iteration (also streamed to `sink` as JSON lines when provided)."""
    rsis = rsis or RsisConfig()
    sched = sched or VarianceSchedule()
    env = TrackingWorkers(model, clips, table, cfg, rsis, sim, weights, coeffs, tol, obs_cfg)
    rng_init = np.random.default_rng(cfg.seed)
    policy = (init_policy or policy_init(env.obs_dim, env.na, cfg.hidden, rng_init,
                                         logstd_init=sched.logstd_start)).copy()
    value_net = (init_value or value_init(env.obs_dim, cfg.hidden, rng_init)).copy()
    if policy.mean_net.in_dim != env.obs_dim:
        raise ValueError(
            f"policy expects obs dim {policy.mean_net.in_dim}, env produces {env.obs_dim}"
        )
    pi_opt = Adam(lr=cfg.learning_rate)
    v_opt = Adam(lr=cfg.learning_rate)
    update_rng = np.random.default_rng(cfg.seed + 7_919)
    normalizer = RunningNorm(env.obs_dim) if cfg.normalize_observations else None
    start_iter = 0
    if resume_from is not None:
        arrays, meta = unpack_checkpoint(Path(resume_from).read_bytes())
        policy = policy_from_arrays(arrays)
        value_net = mlp_from_arrays(arrays, "vf")
        pi_params = policy.mean_net.params() + [policy.logstd]
        pi_opt.m = [arrays[f"adam.pi.m{i}"].copy() for i in range(len(pi_params))]
        pi_opt.v = [arrays[f"adam.pi.v{i}"].copy() for i in range(len(pi_params))]
        pi_opt.t = meta["adam"]["pi"]["t"]
        v_opt.m = [arrays[f"adam.vf.m{i}"].copy() for i in range(len(value_net.params()))]
        v_opt.v = [arrays[f"adam.vf.v{i}"].copy() for i in range(len(value_net.params()))]
        v_opt.t = meta["adam"]["vf"]["t"]
        env.rngs = [_rng_from_json(s) for s in meta["rng"]["workers"]]
        update_rng = _rng_from_json(meta["rng"]["update"])
        start_iter = meta["iteration"]
        env.q = arrays["env.q"].copy()
        env.qd = arrays["env.qd"].copy()
        env.cursor = arrays["env.cursor"].astype(int)
        env.steps = arrays["env.steps"].astype(int)
        env.worker_clip = list(meta["env_worker_clip"])
        env.offsets = np.array([env.bank_offset[c] for c in env.worker_clip])
        env.lengths = np.array([env.clip_len[c] for c in env.worker_clip])
        if normalizer is not None and "norm.mean" in arrays:
            normalizer.mean = arrays["norm.mean"].copy()
            normalizer.var = arrays["norm.var"].copy()
            normalizer.count = meta["normalizer_count"]
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    metrics: list[dict] = []
    ckpt_path = None
    beta = cfg.beta
    if resume_from is not None and meta.get("beta") is not None:
        beta = meta["beta"]
    for it in range(start_iter, cfg.iterations):
        batch = collect_rollouts(env, policy, value_net, cfg, normalizer)
        update = ppo_update(
            batch, policy, value_net, cfg, pi_opt, v_opt, it, sched, update_rng,
            normalizer, beta=beta,
        )
        if cfg.adaptive_beta and not update.aborted:
            if update.mean_kl > 2.0 * cfg.kl_target:
                beta *= 1.5
            elif update.mean_kl < 0.5 * cfg.kl_target:
                beta /= 1.5
        causes: dict[str, int] = {}
        for c in batch.episode_causes:
            causes[c] = causes.get(c, 0) + 1
        row = {
            "iteration": it,
            "reward_mean": round(float(batch.rewards.mean()), 9),
            "reward_terms": [round(float(x), 9) for x in batch.term_rewards.mean(axis=0)],
            "episodes": len(batch.episode_causes),
            "terminations": causes,
            "kl": round(update.mean_kl, 9),
            "surrogate": round(update.surrogate, 9),
            "value_loss": round(update.value_loss, 9),
            "logstd_mean": round(float(policy.logstd.mean()), 9),
            "beta": round(update.beta, 9),
            "aborted": update.aborted,
        }
        metrics.append(row)
        if sink is not None:
            sink.write(json.dumps(row) + "\n")
            sink.flush()
        if out_dir is not None and (
            (it + 1) % cfg.checkpoint_every == 0 or it + 1 == cfg.iterations
        ):
            ckpt_path = out_dir / f"checkpoint_{it + 1:05d}.ckpt"
            save_training_checkpoint(
                ckpt_path, policy, value_net, pi_opt, v_opt, it + 1,
                env, update_rng, normalizer, beta=beta,
            )
    return TrainResult(policy, value_net, metrics, ckpt_path)


# ---------------------------------------------------------------------------
# evaluation protocols


@dataclass
class EvalProtocol:
    speed_ratio: float | None = None
    impulse_period: int | None = None
    impulse_magnitude: float = 0.0
    mass_scale: float | None = None

    def describe(self) -> str:
        if self.speed_ratio is not None:
            return f"speed-{self.speed_ratio:g}"
        if self.impulse_period is not None:
            return f"impulse-1/{self.impulse_period}steps"
        if self.mass_scale is not None:
            return f"mass-{self.mass_scale:g}"
        return "none"


@dataclass
class EvalReport:
    protocol: str
    mean_reward: float  # achieved reward / achievable steps (completion-weighted)
    mean_episode_length: float
    violation_rate: float = 0.0
    relative_pct: float | None = None


def evaluate(
    policy: GaussianPolicy,
    model: CharacterModel,
    clip: MotionClip,
    protocol: EvalProtocol | None = None,
    episodes: int = 8,
    seed: int = 0,
    cfg: PpoConfig | None = None,
    sim: SimConfig | None = None,
    weights: RewardWeights | None = None,
    coeffs: RewardCoeffs | None = None,
    tol: ToleranceConfig | None = None,
    normalizer: RunningNorm | None = None,
    rsis: RsisConfig | None = None,
) -> EvalReport:
    """Deterministic-mean episodes under a perturbation protocol.

    The score is completion-weighted: total achieved reward divided by the
    steps the episode could have run, so early terminations cost exactly the
    reward they forfeit.  With `rsis` given, episodes start offset-behind
    with noise like training episodes; otherwise they start on clip frames.
    """
    protocol = protocol or EvalProtocol()
    cfg = cfg or PpoConfig()
    sim = sim or SimConfig()
    weights = weights or RewardWeights()
    coeffs = coeffs or RewardCoeffs()
    tol = tol or ToleranceConfig()
    eval_model = model if protocol.mass_scale is None else scale_mass(model, protocol.mass_scale)
    eval_clip = clip if protocol.speed_ratio is None else resample_speed(clip, protocol.speed_ratio)
    rng = np.random.default_rng(seed)
    achieved = 0.0
    achievable = 0
    lengths: list[int] = []
    violations = 0
    bodies = [l.name for l in eval_model.links]
    for _ in range(episodes):
        n = eval_clip.num_frames
        if rsis is not None:
            start_state, cursor = rsis_init(eval_clip, rng, rsis, cfg.tau)
        else:
            j = int(rng.integers(0, max(n - cfg.tau - 60, 1)))
            start_state, cursor = eval_clip.frames[j], j + 1
        sim_state = lift_above_ground(
            eval_model, state_from_character(eval_model, start_state)
        )
        achievable += min(n - cfg.tau - cursor + 1, cfg.horizon)
        steps = 0
        while cursor + cfg.tau - 1 < n and steps < cfg.horizon:
            targets = [eval_clip.frames[cursor + k] for k in range(cfg.tau)]
            actual = forward_kinematics(eval_model, sim_state.q, sim_state.qd)
            obs = observe(actual, targets)
            if normalizer is not None:
                obs = normalizer.apply(obs)
            action = forward(policy.mean_net, obs)
            torques = np.clip(action, -1.0, 1.0) * eval_model.effort_limits
            if (
                protocol.impulse_period is not None
                and steps > 0
                and steps % protocol.impulse_period == 0
            ):
                direction = rng.normal(size=3)
                direction /= np.linalg.norm(direction)
                body = bodies[int(rng.integers(0, len(bodies)))]
                sim_state = apply_impulse(
                    sim_state, eval_model, body, protocol.impulse_magnitude * direction
                )
            try:
                q, qd = step_batch(
                    eval_model, sim_state.q[None], sim_state.qd[None], torques[None], sim
                )
            except Exception:
                violations += 1
                break
            sim_state.q, sim_state.qd = q[0], qd[0]
            actual = forward_kinematics(eval_model, sim_state.q, sim_state.qd)
            total, terms = reward(actual, eval_clip.frames[cursor], weights, coeffs)
            achieved += total
            steps += 1
            cursor += 1
            if check_termination(terms, tol).terminated:
                violations += 1
                break
        lengths.append(steps)
    return EvalReport(
        protocol.describe(),
        achieved / max(achievable, 1),
        float(np.mean(lengths)),
        violations / episodes,
    )


def evaluate_relative(
    policy: GaussianPolicy,
    model: CharacterModel,
    clip: MotionClip,
    protocols: list[EvalProtocol],
    **kwargs,
) -> list[EvalReport]:
    """Clean run plus each protocol, with relative-percentage columns."""
    clean = evaluate(policy, model, clip, EvalProtocol(), **kwargs)
    clean.relative_pct = 100.0
    out = [clean]
    for p in protocols:
        rep = evaluate(policy, model, clip, p, **kwargs)
        rep.relative_pct = 100.0 * rep.mean_reward / clean.mean_reward if clean.mean_reward else 0.0
        out.append(rep)
    return out


def finetune(
    checkpoint: Path | str,
    model: CharacterModel,
    clips: list[MotionClip],
    table: SamplingTable,
    cfg: PpoConfig,
    **train_kwargs,
) -> dict[str, TrainResult]:
    """Warm-start vs from-scratch comparison on a new clip set."""
    policy, value_net, _ = load_policy_checkpoint(checkpoint)
    probe = TrackingWorkers(model, clips, table, cfg, train_kwargs.get("rsis") or RsisConfig())
    if policy.mean_net.in_dim != probe.obs_dim:
        raise ValueError(
            f"checkpoint obs dim {policy.mean_net.in_dim} does not match task {probe.obs_dim}"
        )
    warm = train(model, clips, table, cfg, init_policy=policy, init_value=value_net,
                 **train_kwargs)
    scratch = train(model, clips, table, cfg, **train_kwargs)
    return {"warm": warm, "scratch": scratch}
