"""Behavioral cloning: min-max normalization, a three-layer policy network,
mean-squared-error training, and closed-loop rollout evaluation.

The policy maps the gripper's proprioceptive state (base position, base
rotation vector, joint positions) to the reference command of the same
dimension. Training minimizes the squared error between demonstrated and
predicted actions, averaged over the action dimension, in normalized space;
gradients come from plain backpropagation and are applied with Adam.
Everything is numpy and fully deterministic under a fixed seed.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .demos import DatasetManifest, read_demonstration
from .haptics import FeedbackCondition
from .kinematics import GripperKind
from .session import EpisodeSession
from .simworld import GripperReference, WorldConfig

POLICY_FORMAT_VERSION = 1


# ---------------------------------------------------------------------------
# normalization


@dataclass(frozen=True)
class NormStats:
    """Per-dimension min/max; degenerate dimensions keep a unit range."""

    mins: np.ndarray
    maxs: np.ndarray

    def __post_init__(self):
        if np.any(self.maxs < self.mins):
            raise ValueError("max must be >= min per dimension")

    @property
    def degenerate(self) -> np.ndarray:
        return self.maxs == self.mins

    @property
    def ranges(self) -> np.ndarray:
        return np.where(self.degenerate, 1.0, self.maxs - self.mins)

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.mins) / self.ranges

    def inverse_transform(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) * self.ranges + self.mins


def fit_normalizer(data: np.ndarray) -> NormStats:
    data = np.asarray(data, dtype=float)
    if data.size == 0:
        raise ValueError("cannot fit a normalizer on an empty dataset")
    return NormStats(mins=data.min(axis=0).copy(), maxs=data.max(axis=0).copy())


# ---------------------------------------------------------------------------
# policy network


@dataclass
class PolicyNet:
    kind: GripperKind
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray
    obs_norm: NormStats
    act_norm: NormStats

    def __post_init__(self):
        d = self.kind.total_dim
        if self.w1.shape[0] != d or self.w3.shape[1] != d:
            raise ValueError(f"policy I/O must be {d}-dimensional for {self.kind.value}")
        if self.w1.shape[1] != self.w2.shape[0] or self.w2.shape[1] != self.w3.shape[0]:
            raise ValueError("layer shapes do not chain")

    @property
    def params(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2, "w3": self.w3, "b3": self.b3}

    def copy(self) -> "PolicyNet":
        return PolicyNet(
            self.kind,
            self.w1.copy(),
            self.b1.copy(),
            self.w2.copy(),
            self.b2.copy(),
            self.w3.copy(),
            self.b3.copy(),
            self.obs_norm,
            self.act_norm,
        )


def init_policy(
    kind: GripperKind,
    obs_norm: NormStats,
    act_norm: NormStats,
    hidden: tuple[int, int] = (64, 64),
    seed: int = 0,
) -> PolicyNet:
    d = kind.total_dim
    h1, h2 = hidden
    rng = np.random.default_rng(seed)

    def he(n_in, n_out):
        return rng.normal(0.0, math.sqrt(2.0 / n_in), size=(n_in, n_out))

    return PolicyNet(
        kind=kind,
        w1=he(d, h1),
        b1=np.zeros(h1),
        w2=he(h1, h2),
        b2=np.zeros(h2),
        w3=he(h2, d),
        b3=np.zeros(d),
        obs_norm=obs_norm,
        act_norm=act_norm,
    )


def _forward_normalized(policy: PolicyNet, xn: np.ndarray):
    z1 = xn @ policy.w1 + policy.b1
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ policy.w2 + policy.b2
    a2 = np.maximum(z2, 0.0)
    yn = a2 @ policy.w3 + policy.b3
    return yn, (xn, z1, a1, z2, a2)


def forward(policy: PolicyNet, state: np.ndarray) -> np.ndarray:
    """Policy action for a state (or batch of states) in physical units."""
    x = np.asarray(state, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != policy.kind.total_dim:
        raise ValueError(f"state dim {x.shape[1]} != {policy.kind.total_dim}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite state fed to policy")
    yn, _ = _forward_normalized(policy, policy.obs_norm.transform(x))
    y = policy.act_norm.inverse_transform(yn)
    return y[0] if single else y


def loss_and_grads(policy: PolicyNet, x: np.ndarray, y: np.ndarray):
    """Mean over the batch of the per-sample action-space MSE, with
    backpropagated gradients for every parameter."""
    xn = policy.obs_norm.transform(x)
    tn = policy.act_norm.transform(y)
    yn, (xin, z1, a1, z2, a2) = _forward_normalized(policy, xn)
    diff = yn - tn
    batch, dim = diff.shape
    loss = float(np.mean(diff**2))
    dy = 2.0 * diff / (batch * dim)
    grads = {}
    grads["w3"] = a2.T @ dy
    grads["b3"] = dy.sum(axis=0)
    da2 = dy @ policy.w3.T
    dz2 = da2 * (z2 > 0.0)
    grads["w2"] = a1.T @ dz2
    grads["b2"] = dz2.sum(axis=0)
    da1 = dz2 @ policy.w2.T
    dz1 = da1 * (z1 > 0.0)
    grads["w1"] = xin.T @ dz1
    grads["b1"] = dz1.sum(axis=0)
    return loss, grads


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 2000
    batch_size: int = 64
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    eval_interval: int = 25  # epochs between rollout evaluations, 0 = never
    eval_episodes: int = 3
    sensor_noise: float = 1.0  # scale on the per-dimension observation noise

    def __post_init__(self):
        if min(self.epochs, self.batch_size) <= 0 or self.learning_rate <= 0:
            raise ValueError("epochs, batch size and learning rate must be positive")

    @classmethod
    def from_json(cls, path: str | Path) -> "TrainConfig":
        return cls(**json.loads(Path(path).read_text()))


def sensor_noise_scale(kind: GripperKind) -> np.ndarray:
    """Per-dimension observation noise, raw units: what a tracker/encoder
    would add. Keeps the net from keying on micrometer-scale wobble in
    dimensions the task never meaningfully actuates (base rotation), which
    reads as a spurious phase fingerprint and collapses out of distribution."""
    joint_sigma = 0.0005 if kind is GripperKind.FRANKA else 0.01
    return np.concatenate([np.full(3, 0.002), np.full(3, 0.01), np.full(kind.dof, joint_sigma)])


@dataclass(frozen=True)
class RolloutMetrics:
    epoch: int
    fingertip_force: float  # N, episode-time average of the active-finger mean
    palm_force: float  # N, episode-time average of |rendered force|
    exec_time: float  # s, success timestamp or timeout
    success_rate: float

    def __post_init__(self):
        if self.fingertip_force < 0 or self.palm_force < 0:
            raise ValueError("rollout forces must be non-negative")


class _Adam:
    def __init__(self, params: dict[str, np.ndarray], cfg: TrainConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def update(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        c = self.cfg
        self.t += 1
        lr_t = c.learning_rate * math.sqrt(1.0 - c.beta2**self.t) / (1.0 - c.beta1**self.t)
        for key, g in grads.items():
            self.m[key] = c.beta1 * self.m[key] + (1.0 - c.beta1) * g
            self.v[key] = c.beta2 * self.v[key] + (1.0 - c.beta2) * g * g
            params[key] -= lr_t * self.m[key] / (np.sqrt(self.v[key]) + c.eps)


def train(
    policy: PolicyNet,
    observations: np.ndarray,
    actions: np.ndarray,
    config: TrainConfig,
    world_config: WorldConfig | None = None,
    eval_seed: int = 10_000,
) -> tuple[PolicyNet, list[float], list[RolloutMetrics]]:
    """Minibatch gradient descent; optionally evaluates rollouts every
    ``eval_interval`` epochs against ``world_config``."""
    x = np.asarray(observations, dtype=float)
    y = np.asarray(actions, dtype=float)
    if x.shape != y.shape or x.shape[1] != policy.kind.total_dim:
        raise ValueError("dataset shape does not match the policy")
    policy = policy.copy()
    rng = np.random.default_rng(config.seed)
    opt = _Adam(policy.params, config)
    noise = config.sensor_noise * sensor_noise_scale(policy.kind)
    losses: list[float] = []
    metrics: list[RolloutMetrics] = []
    n = x.shape[0]
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        epoch_loss = 0.0
        batches = 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            xb = x[idx]
            if config.sensor_noise > 0:
                xb = xb + rng.normal(0.0, 1.0, xb.shape) * noise
            loss, grads = loss_and_grads(policy, xb, y[idx])
            if not math.isfinite(loss):
                raise FloatingPointError(f"non-finite training loss at epoch {epoch}")
            opt.update(policy.params, grads)
            epoch_loss += loss
            batches += 1
        losses.append(epoch_loss / max(batches, 1))
        if world_config is not None and config.eval_interval > 0 and (
            epoch % config.eval_interval == 0 or epoch == config.epochs
        ):
            m = rollout_eval(policy, world_config, policy.kind, config.eval_episodes, eval_seed, epoch=epoch)
            metrics.append(m)
    return policy, losses, metrics


def rollout_eval(
    policy: PolicyNet,
    world_config: WorldConfig,
    kind: GripperKind,
    count: int,
    seed: int,
    epoch: int = 0,
) -> RolloutMetrics:
    """Closed-loop episodes: the policy's action is the next reference."""
    if policy.kind is not kind:
        raise ValueError("policy kind does not match requested rollouts")
    # Closed-loop saturation. Observations are clipped into the training
    # envelope (padded by the sensor-noise scale the net was trained under):
    # dimensions that were nearly constant in the demos otherwise normalize
    # tiny deviations into huge out-of-distribution inputs. Actions are
    # clipped to the demo envelope plus margin, as teleop workspace limits
    # would.
    pad = 2.0 * sensor_noise_scale(policy.kind)
    obs_lo = policy.obs_norm.mins - pad
    obs_hi = policy.obs_norm.maxs + pad
    margin = 0.2 * policy.act_norm.ranges
    act_lo = policy.act_norm.mins - margin
    act_hi = policy.act_norm.maxs + margin
    tips, palms, times, successes = [], [], [], []
    for i in range(count):
        data = world_config.to_dict()
        data["seed"] = seed + i
        cfg = WorldConfig.from_dict(data)
        session = EpisodeSession(cfg, kind, FeedbackCondition.NFF)
        active = session.active_human_fingers()
        max_steps = int(math.ceil(cfg.timeout / cfg.dt))
        tip_acc, palm_acc, steps = 0.0, 0.0, 0
        exec_time = cfg.timeout
        success = False
        for _ in range(max_steps):
            obs = np.clip(session.world.observation(), obs_lo, obs_hi)
            action = np.clip(forward(policy, obs), act_lo, act_hi)
            ref = GripperReference.from_vector(action, kind)
            result = session.step_with_reference(ref)
            tip_acc += float(np.mean(result.finger_forces[active]))
            palm_acc += result.palm_force
            steps += 1
            if result.done:
                if any(e.kind.value == "DuckInTray" for e in result.events):
                    success = True
                    exec_time = result.world.t
                break
        tips.append(tip_acc / max(steps, 1))
        palms.append(palm_acc / max(steps, 1))
        times.append(exec_time)
        successes.append(success)
    return RolloutMetrics(
        epoch=epoch,
        fingertip_force=float(np.mean(tips)),
        palm_force=float(np.mean(palms)),
        exec_time=float(np.mean(times)),
        success_rate=float(np.mean(successes)),
    )


def rolling_mean(series, window: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Trailing mean and std over truncated-head windows."""
    if window < 1:
        raise ValueError("window must be >= 1")
    s = np.asarray(series, dtype=float)
    if s.size == 0:
        raise ValueError("empty series")
    means = np.empty_like(s)
    stds = np.empty_like(s)
    for i in range(s.size):
        chunk = s[max(0, i - window + 1) : i + 1]
        means[i] = np.mean(chunk)
        stds[i] = np.std(chunk)
    return means, stds


# ---------------------------------------------------------------------------
# persistence and dataset loading


def save_policy(policy: PolicyNet, path: str | Path) -> Path:
    path = Path(path)
    data = {
        "version": POLICY_FORMAT_VERSION,
        "kind": policy.kind.value,
        "hidden": [policy.w1.shape[1], policy.w2.shape[1]],
        "obs_norm": {"min": policy.obs_norm.mins.tolist(), "max": policy.obs_norm.maxs.tolist()},
        "act_norm": {"min": policy.act_norm.mins.tolist(), "max": policy.act_norm.maxs.tolist()},
        "weights": {k: v.tolist() for k, v in policy.params.items()},
    }
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(data, separators=(",", ":")))
    os.replace(tmp, path)
    return path


def load_policy(path: str | Path) -> PolicyNet:
    data = json.loads(Path(path).read_text())
    if data["version"] != POLICY_FORMAT_VERSION:
        raise ValueError(f"unsupported policy file version {data['version']!r}")
    w = {k: np.array(v) for k, v in data["weights"].items()}
    return PolicyNet(
        kind=GripperKind(data["kind"]),
        w1=w["w1"],
        b1=w["b1"],
        w2=w["w2"],
        b2=w["b2"],
        w3=w["w3"],
        b3=w["b3"],
        obs_norm=NormStats(np.array(data["obs_norm"]["min"]), np.array(data["obs_norm"]["max"])),
        act_norm=NormStats(np.array(data["act_norm"]["min"]), np.array(data["act_norm"]["max"])),
    )


def load_dataset(manifest: DatasetManifest, root: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Stack (observation, action) pairs from every demonstration."""
    root = Path(root)
    xs, ys = [], []
    for entry in manifest.entries:
        demo = read_demonstration(root / entry.file)
        for s in demo.samples:
            xs.append(s.obs)
            ys.append(s.act)
    if not xs:
        raise ValueError("manifest contains no samples")
    return np.array(xs), np.array(ys)
