"""PPO with a clipped surrogate, GAE, and pluggable per-batch reward sources.

Rollouts are collected as rectangular (episodes x horizon) arrays: episodes
always run to the fixed horizon, which keeps advantage computation simple.
Rewards are filled in after collection by a RewardSource, so the same rollout
machinery serves the primary reward, ground-truth expert rewards, AIRL
generator rewards, scalarized reward vectors and DRLHP model rewards.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from . import gridworld
from .nets import ActorCriticNet, adam_step

ADV_EPS = 1e-8


@dataclass
class PPOConfig:
    lr: float = 3e-4
    eps_clip: float = 0.1
    gamma: float = 0.999
    epochs: int = 5
    episodes_per_batch: int = 12
    entropy_coeff: float = 0.25
    gae_lambda: float = 0.95
    value_coeff: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must be in (0, 1)")
        if self.eps_clip <= 0.0:
            raise ValueError("eps_clip must be positive")


@dataclass
class RolloutBatch:
    """One batch of full episodes plus everything PPO and AIRL need."""

    obs: np.ndarray        # (B, T, C, W, H)
    actions: np.ndarray    # (B, T)
    logp_old: np.ndarray   # (B, T)
    values_old: np.ndarray # (B, T)
    r_p: np.ndarray        # (B, T) primary reward per step
    events: np.ndarray     # (B, T, K) per-step objective deltas
    final_obs: np.ndarray  # (B, C, W, H) encoding of the terminal states
    trajectories: list
    rewards: np.ndarray = None      # (B, T), filled by a RewardSource
    advantages: np.ndarray = None   # (B, T)
    returns: np.ndarray = None      # (B, T)

    @property
    def n_episodes(self):
        return self.obs.shape[0]

    @property
    def horizon(self):
        return self.obs.shape[1]

    @property
    def env_steps(self):
        return self.obs.shape[0] * self.obs.shape[1]

    def next_obs(self):
        """(B, T, C, W, H) array of successor-state encodings."""
        return np.concatenate([self.obs[:, 1:], self.final_obs[:, None]], axis=1)

    def flat(self, arr):
        return arr.reshape(-1, *arr.shape[2:])


class ZeroReward:
    def batch_rewards(self, batch):
        return np.zeros_like(batch.r_p)


class NormalizedReward:
    """Standardizes another source's rewards per batch (zero mean, unit std).

    Learned dense rewards (AIRL f, scalarized vectors) sit at arbitrary
    offsets; without this the value-regression loss dwarfs the policy
    surrogate through the shared conv base. Ordering of returns within a
    batch is unchanged.
    """

    def __init__(self, inner):
        self.inner = inner

    def batch_rewards(self, batch):
        r = np.asarray(self.inner.batch_rewards(batch), dtype=np.float64)
        return (r - r.mean()) / (r.std() + 1e-8)


class PrimaryReward:
    """The environment's own hand-engineered reward r_P."""

    def batch_rewards(self, batch):
        return batch.r_p.copy()


class EventReward:
    """Linear reward over per-step objective events, e.g. +1 per person saved.

    Used to script the ground-truth experts that generate demonstrations.
    """

    def __init__(self, kind, weights: dict):
        self.keys = gridworld.COUNT_KEYS[kind]
        unknown = set(weights) - set(self.keys)
        if unknown:
            raise ValueError(f"unknown event keys {sorted(unknown)}")
        self.coeffs = np.array([float(weights.get(k, 0.0)) for k in self.keys])

    def batch_rewards(self, batch):
        return batch.events @ self.coeffs


def make_envs(config: gridworld.GridConfig, n, seed):
    """Independent env instances with decorrelated child streams."""
    seeds = np.random.SeedSequence(seed).spawn(n)
    return [gridworld.GridWorld(config, s) for s in seeds]


def collect_rollouts(policy: ActorCriticNet, envs, source, rng,
                     config: PPOConfig = None) -> RolloutBatch:
    """Advance every env one full episode under the current policy.

    `rng` drives action sampling; each env owns its reset stream. Rewards for
    the returned batch come from `source.batch_rewards`.
    """
    B = len(envs)
    env_cfg = envs[0].config
    T = env_cfg.horizon
    states = [env.reset() for env in envs]
    starts = list(states)
    key_order = env_cfg.count_keys

    obs = np.empty((B, T, env_cfg.n_channels, env_cfg.width, env_cfg.height))
    actions = np.empty((B, T), dtype=np.int64)
    logp = np.empty((B, T))
    values = np.empty((B, T))
    r_p = np.empty((B, T))
    events = np.zeros((B, T, len(key_order)), dtype=np.int64)
    records = [[] for _ in range(B)]

    for t in range(T):
        obs_t = np.stack([gridworld.encode(s) for s in states])
        a_t, lp_t, v_t = policy.act(obs_t, rng)
        obs[:, t] = obs_t
        actions[:, t] = a_t
        logp[:, t] = lp_t
        values[:, t] = v_t
        for i, env in enumerate(envs):
            nxt, ev, rp, _ = gridworld.step(states[i], int(a_t[i]))
            records[i].append((int(a_t[i]), nxt, rp, ev))
            r_p[i, t] = rp
            events[i, t] = [ev[k] for k in key_order]
            states[i] = nxt

    final_obs = np.stack([gridworld.encode(s) for s in states])
    trajectories = [gridworld.record_episode(s0, rec) for s0, rec in zip(starts, records)]
    batch = RolloutBatch(obs, actions, logp, values, r_p, events, final_obs, trajectories)
    batch.rewards = np.asarray(source.batch_rewards(batch), dtype=np.float64)
    return batch


def compute_advantages(batch: RolloutBatch, config: PPOConfig) -> RolloutBatch:
    """GAE(gamma, lambda) per episode; returns = advantages + old values.

    Terminal states bootstrap with value 0 (episodes end exactly at the
    horizon). Advantages are then normalized to zero mean / unit variance
    across the whole batch.
    """
    gamma, lam = config.gamma, config.gae_lambda
    B, T = batch.rewards.shape
    v_next = np.concatenate([batch.values_old[:, 1:], np.zeros((B, 1))], axis=1)
    deltas = batch.rewards + gamma * v_next - batch.values_old
    adv = np.empty_like(deltas)
    acc = np.zeros(B)
    for t in range(T - 1, -1, -1):
        acc = deltas[:, t] + gamma * lam * acc
        adv[:, t] = acc
    batch.returns = adv + batch.values_old
    batch.advantages = (adv - adv.mean()) / (adv.std() + ADV_EPS)
    return batch


def ppo_update(policy: ActorCriticNet, opt, batch: RolloutBatch,
               config: PPOConfig) -> dict:
    """Several epochs of full-batch clipped-surrogate ascent.

    Loss per epoch: -(L_clip - c_v * value_mse + c_ent * entropy).
    """
    obs = torch.as_tensor(batch.flat(batch.obs))
    acts = torch.as_tensor(batch.flat(batch.actions))
    logp_old = torch.as_tensor(batch.flat(batch.logp_old))
    adv = torch.as_tensor(batch.flat(batch.advantages))
    rets = torch.as_tensor(batch.flat(batch.returns))

    stats = {"loss": 0.0, "entropy": 0.0, "clip_fraction": 0.0}
    for _ in range(config.epochs):
        logits, value = policy(obs)
        logp_all = torch.log_softmax(logits, dim=-1)
        logp_new = logp_all[torch.arange(len(acts)), acts]
        ratio = torch.exp(logp_new - logp_old)
        surr = torch.minimum(
            ratio * adv,
            torch.clamp(ratio, 1.0 - config.eps_clip, 1.0 + config.eps_clip) * adv,
        )
        entropy = -(logp_all.exp() * logp_all).sum(dim=-1).mean()
        value_loss = ((value - rets) ** 2).mean()
        loss = -(surr.mean() - config.value_coeff * value_loss
                 + config.entropy_coeff * entropy)
        if not torch.isfinite(loss):
            raise RuntimeError(
                f"non-finite PPO loss (surr={surr.mean().item()}, "
                f"v={value_loss.item()}, ent={entropy.item()})"
            )
        loss.backward()
        adam_step(policy, opt)
        stats["loss"] += loss.item() / config.epochs
        stats["entropy"] = entropy.item()
        stats["clip_fraction"] += (
            (ratio - 1.0).abs() > config.eps_clip
        ).double().mean().item() / config.epochs
    return stats


def batch_metrics(batch: RolloutBatch) -> dict:
    """Per-batch summary used for the JSONL metrics stream."""
    key_order = batch.trajectories[0].config.count_keys
    mean_counts = {
        k: float(np.mean([t.counts[k] for t in batch.trajectories])) for k in key_order
    }
    return {
        "mean_return_scalar": float(batch.rewards.sum(axis=1).mean()),
        "mean_objective_counts": mean_counts,
    }
