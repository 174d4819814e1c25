"""Diagonal-Gaussian torque policy and value function.

Networks are plain numpy MLPs with hand-written reverse-mode gradients (the
whole training stack is 64-bit and finite-difference checkable).  The
per-DOF log-std vector is trained alongside the mean network and recentred
by the variance controller: a common shift pins its mean to a linearly
annealed target while preserving the learnt differences between DOFs.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

CHECKPOINT_MAGIC = b"MPCKPT01"
LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class MlpParams:
    weights: list[np.ndarray]  # (fan_in, fan_out) per layer
    biases: list[np.ndarray]
    activation: str = "tanh"

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ValueError("weights/biases length mismatch")
        for i in range(len(self.weights) - 1):
            if self.weights[i].shape[1] != self.weights[i + 1].shape[0]:
                raise ValueError("layer shapes do not chain")
        if self.activation != "tanh":
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                         self.activation)


def _orthogonal(rng: np.random.Generator, fan_in: int, fan_out: int, gain: float) -> np.ndarray:
    a = rng.normal(size=(max(fan_in, fan_out), min(fan_in, fan_out)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))  # deterministic sign convention
    if fan_in < fan_out:
        q = q.T
    return gain * q[:fan_in, :fan_out]


def mlp_init(
    sizes: list[int], rng: np.random.Generator, final_scale: float = 0.01
) -> MlpParams:
    """Orthogonal-style init, small final layer for calm initial outputs."""
    weights, biases = [], []
    for i in range(len(sizes) - 1):
        last = i == len(sizes) - 2
        gain = final_scale if last else np.sqrt(2.0)
        weights.append(_orthogonal(rng, sizes[i], sizes[i + 1], gain))
        biases.append(np.zeros(sizes[i + 1]))
    return MlpParams(weights, biases)


def forward(net: MlpParams, x: np.ndarray) -> np.ndarray:
    """Deterministic mean output; accepts (in,) or (B, in)."""
    squeeze = x.ndim == 1
    h = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if h.shape[1] != net.in_dim:
        raise ValueError(f"input dim {h.shape[1]} != {net.in_dim}")
    n = len(net.weights)
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ w + b
        if i < n - 1:
            h = np.tanh(h)
    return h[0] if squeeze else h


def forward_cached(net: MlpParams, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Forward pass keeping layer inputs for the backward pass."""
    h = np.atleast_2d(np.asarray(x, dtype=np.float64))
    cache = [h]
    n = len(net.weights)
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ w + b
        if i < n - 1:
            h = np.tanh(h)
        cache.append(h)
    return h, cache


def backward(
    net: MlpParams, cache: list[np.ndarray], grad_out: np.ndarray
) -> tuple[list[np.ndarray], np.ndarray]:
    """Exact gradients of a scalar loss given d(loss)/d(output).

    Returns gradients in params() order plus the gradient w.r.t. the input.
    """
    g = np.atleast_2d(grad_out)
    grads_w = [None] * len(net.weights)
    grads_b = [None] * len(net.biases)
    for i in range(len(net.weights) - 1, -1, -1):
        h_in = cache[i]
        grads_w[i] = h_in.T @ g
        grads_b[i] = g.sum(axis=0)
        g = g @ net.weights[i].T
        if i > 0:
            g = g * (1.0 - cache[i] * cache[i])  # tanh' through the cached output
    grads = []
    for gw, gb in zip(grads_w, grads_b):
        grads.append(gw)
        grads.append(gb)
    return grads, g


@dataclass
class GaussianPolicy:
    mean_net: MlpParams
    logstd: np.ndarray

    def __post_init__(self):
        self.logstd = np.asarray(self.logstd, dtype=np.float64)
        if self.logstd.shape != (self.mean_net.out_dim,):
            raise ValueError("logstd length must equal the action dimension")
        if not np.all(np.isfinite(self.logstd)):
            raise ValueError("non-finite logstd")

    @property
    def action_dim(self) -> int:
        return self.mean_net.out_dim

    def copy(self) -> "GaussianPolicy":
        return GaussianPolicy(self.mean_net.copy(), self.logstd.copy())


def policy_init(
    obs_dim: int, action_dim: int, hidden: tuple[int, ...], rng: np.random.Generator,
    logstd_init: float = -1.0,
) -> GaussianPolicy:
    net = mlp_init([obs_dim, *hidden, action_dim], rng)
    return GaussianPolicy(net, np.full(action_dim, logstd_init))


def value_init(obs_dim: int, hidden: tuple[int, ...], rng: np.random.Generator) -> MlpParams:
    return mlp_init([obs_dim, *hidden, 1], rng, final_scale=1.0)


def sample_action(
    policy: GaussianPolicy, obs: np.ndarray, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Draw a ~ N(mean(obs), diag(exp(logstd)^2)); returns (action, logprob).

    Batched when obs is (B, in): actions (B, act), logprobs (B,).
    """
    mean = forward(policy.mean_net, obs)
    eps = rng.standard_normal(mean.shape)
    sigma = np.exp(policy.logstd)
    action = mean + sigma * eps
    logprob = np.sum(-policy.logstd - 0.5 * LOG_2PI - 0.5 * eps * eps, axis=-1)
    return action, logprob


def action_logprob(policy: GaussianPolicy, mean: np.ndarray, action: np.ndarray) -> np.ndarray:
    """Log density of actions under means produced by this policy."""
    eps = (action - mean) / np.exp(policy.logstd)
    return np.sum(-policy.logstd - 0.5 * LOG_2PI - 0.5 * eps * eps, axis=-1)


@dataclass
class VarianceSchedule:
    logstd_start: float = -1.0
    logstd_final: float = -3.0
    iterations: int = 1000
    enabled: bool = True

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("schedule needs at least one iteration")

    def target(self, iteration: int) -> float:
        frac = iteration / self.iterations
        return self.logstd_start + frac * (self.logstd_final - self.logstd_start)


def recenter_logstd(logstd: np.ndarray, iteration: int, sched: VarianceSchedule) -> np.ndarray:
    """The common-shift operation: move every log component by the same
    amount so the mean hits the annealed target; differences are untouched.
    Past the schedule end (or when disabled) the vector passes through."""
    if not sched.enabled or iteration >= sched.iterations:
        return logstd.copy()
    return logstd + (sched.target(iteration) - float(np.mean(logstd)))


def apply_variance_control(
    policy: GaussianPolicy,
    logstd_grad: np.ndarray,
    lr: float,
    iteration: int,
    sched: VarianceSchedule,
) -> GaussianPolicy:
    """One controlled update of the log-std vector: gradient step, then the
    recentring shift while the schedule is active."""
    stepped = policy.logstd - lr * np.asarray(logstd_grad, dtype=np.float64)
    return GaussianPolicy(policy.mean_net, recenter_logstd(stepped, iteration, sched))


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class Adam:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        """In-place descent step on every array in params."""
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


# ---------------------------------------------------------------------------
# checkpoint container: versioned header, named shapes, little-endian float64


def pack_checkpoint(arrays: dict[str, np.ndarray], meta: dict) -> bytes:
    header = {
        "version": 1,
        "meta": meta,
        "arrays": [{"name": k, "shape": list(v.shape)} for k, v in arrays.items()],
    }
    hjson = json.dumps(header).encode()
    blob = [CHECKPOINT_MAGIC, struct.pack("<I", len(hjson)), hjson]
    for v in arrays.values():
        blob.append(np.ascontiguousarray(v, dtype="<f8").tobytes())
    return b"".join(blob)


def unpack_checkpoint(data: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if data[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise ValueError("not a checkpoint (bad magic)")
    off = len(CHECKPOINT_MAGIC)
    (hlen,) = struct.unpack("<I", data[off : off + 4])
    off += 4
    header = json.loads(data[off : off + hlen].decode())
    if header.get("version") != 1:
        raise ValueError(f"unsupported checkpoint version {header.get('version')}")
    off += hlen
    arrays = {}
    for spec in header["arrays"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(shape)
        arrays[spec["name"]] = arr.astype(np.float64)
        off += count * 8
    return arrays, header["meta"]


def policy_to_arrays(policy: GaussianPolicy, prefix: str = "pi") -> dict[str, np.ndarray]:
    out = {}
    for i, (w, b) in enumerate(zip(policy.mean_net.weights, policy.mean_net.biases)):
        out[f"{prefix}.w{i}"] = w
        out[f"{prefix}.b{i}"] = b
    out[f"{prefix}.logstd"] = policy.logstd
    return out


def policy_from_arrays(arrays: dict[str, np.ndarray], prefix: str = "pi") -> GaussianPolicy:
    weights, biases = [], []
    i = 0
    while f"{prefix}.w{i}" in arrays:
        weights.append(arrays[f"{prefix}.w{i}"].copy())
        biases.append(arrays[f"{prefix}.b{i}"].copy())
        i += 1
    if not weights:
        raise ValueError(f"checkpoint holds no {prefix!r} network")
    return GaussianPolicy(MlpParams(weights, biases), arrays[f"{prefix}.logstd"].copy())


def mlp_to_arrays(net: MlpParams, prefix: str) -> dict[str, np.ndarray]:
    out = {}
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        out[f"{prefix}.w{i}"] = w
        out[f"{prefix}.b{i}"] = b
    return out


def mlp_from_arrays(arrays: dict[str, np.ndarray], prefix: str) -> MlpParams:
    weights, biases = [], []
    i = 0
    while f"{prefix}.w{i}" in arrays:
        weights.append(arrays[f"{prefix}.w{i}"].copy())
        biases.append(arrays[f"{prefix}.b{i}"].copy())
        i += 1
    if not weights:
        raise ValueError(f"checkpoint holds no {prefix!r} network")
    return MlpParams(weights, biases)
