"""Deep RL from pairwise preferences: a single nonstationary reward model
trained online from trajectory comparisons while PPO optimizes its
(running-normalized) output."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np
import torch

from . import gridworld, ppo
from .nets import ActorCriticNet, DRLHPRewardNet, adam_step, as_tensor, make_adam
from .queries import QuerySchedule


@dataclass
class DRLHPConfig:
    lr_reward_model: float = 3e-5
    update_frequency: int = 50     # env batches between reward-model updates
    rm_batch: int = 32             # pairs per reward-model minibatch
    n_queries: int = 1000
    buffer_capacity: int = 3000
    conv_channels: tuple = (128, 64, 32)


class LabeledPair:
    """One preference-labeled trajectory pair, stored compactly."""

    __slots__ = ("obs_a", "acts_a", "obs_b", "acts_b", "label")

    def __init__(self, traj_a, traj_b, label):
        self.obs_a, self.acts_a = _pack(traj_a)
        self.obs_b, self.acts_b = _pack(traj_b)
        self.label = int(label)


def _pack(traj):
    obs = np.stack([gridworld.encode(s[0]) for s in traj.steps]).astype(np.uint8)
    acts = np.asarray([int(s[1]) for s in traj.steps], dtype=np.int64)
    return obs, acts


class PairBuffer:
    """FIFO buffer of labeled pairs with a fixed capacity."""

    def __init__(self, capacity=3000):
        self.pairs = deque(maxlen=capacity)

    def add(self, traj_a, traj_b, label):
        self.pairs.append(LabeledPair(traj_a, traj_b, label))

    def __len__(self):
        return len(self.pairs)


class RunningNorm:
    """EMA estimate of reward mean/std used to stabilize the PPO signal."""

    def __init__(self, decay=0.9):
        self.decay = decay
        self.mean = 0.0
        self.var = 1.0
        self.initialized = False

    def update(self, values):
        m, v = float(np.mean(values)), float(np.var(values))
        if not self.initialized:
            self.mean, self.var = m, v
            self.initialized = True
        else:
            self.mean = self.decay * self.mean + (1 - self.decay) * m
            self.var = self.decay * self.var + (1 - self.decay) * v

    def normalize(self, values):
        return (values - self.mean) / np.sqrt(self.var + 1e-8)


class DRLHPReward:
    """RewardSource: the model's raw output, running-normalized per batch."""

    def __init__(self, model: DRLHPRewardNet, norm: RunningNorm = None):
        self.model = model
        self.norm = norm or RunningNorm()

    def batch_rewards(self, batch):
        B, T = batch.r_p.shape
        with torch.no_grad():
            raw = self.model(as_tensor(batch.flat(batch.obs)),
                             batch.flat(batch.actions)).numpy()
        self.norm.update(raw)
        return self.norm.normalize(raw).reshape(B, T)


def pair_logits(model, pairs):
    """Predicted-return differences sum r(a) - sum r(b) for a pair list."""
    T = pairs[0].obs_a.shape[0]
    obs = np.concatenate([np.concatenate([p.obs_a, p.obs_b]) for p in pairs])
    acts = np.concatenate([np.concatenate([p.acts_a, p.acts_b]) for p in pairs])
    r = model(as_tensor(obs.astype(np.float64)), acts).reshape(len(pairs), 2, T)
    sums = r.sum(dim=2)
    return sums[:, 0] - sums[:, 1]


def update_reward_model(model, opt, buffer: PairBuffer, rm_batch, rng) -> float:
    """One pass of minibatch Bradley-Terry cross-entropy over the buffer."""
    if len(buffer) == 0:
        raise ValueError("empty pair buffer")
    order = rng.permutation(len(buffer))
    pairs = list(buffer.pairs)
    losses = []
    for lo in range(0, len(order), rm_batch):
        chunk = [pairs[i] for i in order[lo:lo + rm_batch]]
        logits = pair_logits(model, chunk)
        labels = torch.as_tensor([1.0 - p.label for p in chunk])  # 1 = "a wins"
        loss = torch.nn.functional.binary_cross_entropy_with_logits(logits, labels)
        loss.backward()
        adam_step(model, opt)
        losses.append(loss.item())
    return float(np.mean(losses))


class MSETargetOracle:
    """Prefers the trajectory whose objective counts are closer (MSE) to a
    target vector; used to compare against a reference method's mean returns."""

    kind = "mse_target"

    def __init__(self, target):
        self.target = np.asarray(target, dtype=np.float64)

    def prefer(self, traj_a, traj_b):
        return mse_target_oracle(traj_a, traj_b, self.target)


def mse_target_oracle(traj_a, traj_b, target) -> int:
    target = np.asarray(target, dtype=np.float64)
    ea = float(np.mean((gridworld.objective_vector(traj_a) - target) ** 2))
    eb = float(np.mean((gridworld.objective_vector(traj_b) - target) ** 2))
    return 0 if ea <= eb else 1


@dataclass
class DRLHPResult:
    policy: ActorCriticNet
    model: DRLHPRewardNet
    stats: list = field(default_factory=list)
    n_queries_asked: int = 0


def drlhp_train(envs, oracle, ppo_config: ppo.PPOConfig, config: DRLHPConfig,
                total_env_steps, rng, policy=None, policy_kwargs=None,
                on_batch=None) -> DRLHPResult:
    """Alternate PPO on the normalized model reward with periodic model fits.

    Queries are pairs drawn uniformly from the current rollout batch, labeled
    by the oracle, and spread evenly across the step budget.
    """
    env_cfg = envs[0].config
    if policy is None:
        policy = ActorCriticNet(env_cfg.n_channels, env_cfg.width, env_cfg.height,
                                **(policy_kwargs or {}))
    model = DRLHPRewardNet(env_cfg.n_channels, env_cfg.width, env_cfg.height,
                           conv_channels=config.conv_channels)
    opt_policy = make_adam(policy, ppo_config.lr)
    opt_model = make_adam(model, config.lr_reward_model)
    source = DRLHPReward(model)
    buffer = PairBuffer(config.buffer_capacity)
    schedule = QuerySchedule(config.n_queries, total_env_steps)

    batch_steps = len(envs) * env_cfg.horizon
    n_batches = max(1, round(total_env_steps / batch_steps))
    steps_done = 0
    n_asked = 0
    stats = []
    result = DRLHPResult(policy, model)
    for update in range(n_batches):
        batch = ppo.collect_rollouts(policy, envs, source, rng)
        ppo.compute_advantages(batch, ppo_config)
        ppo_stats = ppo.ppo_update(policy, opt_policy, batch, ppo_config)
        steps_done += batch.env_steps

        while schedule.due(steps_done, n_asked):
            i, j = rng.choice(len(batch.trajectories), size=2, replace=False)
            ta, tb = batch.trajectories[i], batch.trajectories[j]
            buffer.add(ta, tb, oracle.prefer(ta, tb))
            n_asked += 1

        rm_loss = None
        if (update + 1) % config.update_frequency == 0 and len(buffer) > 0:
            rm_loss = update_reward_model(model, opt_model, buffer, config.rm_batch, rng)

        stats.append({
            "method": "drlhp",
            "update_idx": update,
            **ppo.batch_metrics(batch),
            "entropy": ppo_stats["entropy"],
            "clip_fraction": ppo_stats["clip_fraction"],
            "n_queries": n_asked,
            "rm_loss": rm_loss,
        })
        if on_batch is not None:
            on_batch(update, batch, stats[-1])
    result.stats = stats
    result.n_queries_asked = n_asked
    return result
