"""Adversarial IRL per expert, and the combined multi-component reward.

Each expert's demonstration set trains one shaped reward net f(s, s')
adversarially against a PPO generator. The learned components are then
normalized by the magnitude of the imitation policy's own discounted return
and stacked (optionally behind the env's primary reward) into a reward
vector that downstream code scalarizes with posterior weight samples.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from scipy.special import expit

from . import gridworld, ppo
from .nets import AIRLRewardNet, ActorCriticNet, adam_step, as_tensor, load_params, make_adam, save_params

NORMALIZER_FLOOR = 1e-6


@dataclass
class DemoDataset:
    """Labeled demonstrations from a single expert."""

    expert_id: str
    trajectories: list

    def __post_init__(self):
        if not self.trajectories:
            raise ValueError("demo dataset must not be empty")
        kinds = {t.config.kind for t in self.trajectories}
        if len(kinds) != 1:
            raise ValueError(f"mixed env kinds in demo dataset: {kinds}")

    @property
    def config(self):
        return self.trajectories[0].config


def _initial_objects(traj):
    state = traj.steps[0][0]
    cfg = state.config
    out = {}
    for i, name in enumerate(cfg.object_names):
        xs, ys = np.nonzero(state.object_map == i + 1)
        out[name] = [[int(x), int(y)] for x, y in zip(xs, ys)]
    return out


def save_demos(demos: DemoDataset, path):
    """Demo file: expert_id header, env config, per-demo initial object
    placement plus the standard trajectory JSON (which alone cannot rebuild
    state encodings)."""
    cfg = demos.config
    blob = {
        "expert_id": demos.expert_id,
        "config": {
            "kind": cfg.kind, "width": cfg.width, "height": cfg.height,
            "horizon": cfg.horizon, "counts": dict(cfg.counts),
        },
        "demos": [
            {
                "objects": _initial_objects(t),
                "agent": [int(t.steps[0][0].agent_pos[0]), int(t.steps[0][0].agent_pos[1])],
                "trajectory": gridworld.trajectory_to_json(t),
            }
            for t in demos.trajectories
        ],
    }
    with open(path, "w") as fh:
        json.dump(blob, fh)


def load_demos(path) -> DemoDataset:
    """Rebuild full demo trajectories by replaying actions through the
    (deterministic) dynamics from the stored initial placements."""
    with open(path) as fh:
        blob = json.load(fh)
    c = blob["config"]
    cfg = gridworld.GridConfig(c["kind"], c["width"], c["height"], c["horizon"], c["counts"])
    trajectories = []
    for entry in blob["demos"]:
        object_map = np.zeros((cfg.width, cfg.height), dtype=np.int8)
        for name, cells in entry["objects"].items():
            code = cfg.object_names.index(name) + 1
            for x, y in cells:
                object_map[x, y] = code
        start = gridworld.GridState(cfg, tuple(entry["agent"]), object_map, 0,
                                    gridworld.zero_counts(cfg.kind))
        state, records = start, []
        for s in entry["trajectory"]["steps"]:
            nxt, ev, rp, _ = gridworld.step(state, s["action"])
            records.append((s["action"], nxt, rp, ev))
            state = nxt
        traj = gridworld.record_episode(start, records)
        if {k: int(v) for k, v in traj.counts.items()} != entry["trajectory"]["counts"]:
            raise ValueError("replayed demo counts disagree with the stored counts")
        trajectories.append(traj)
    return DemoDataset(blob["expert_id"], trajectories)


def demo_transitions(demos: DemoDataset):
    """All (obs, action, next_obs) arrays across the demo trajectories."""
    obs, acts, nxt = [], [], []
    for traj in demos.trajectories:
        for s, a, s2, _, _ in traj.steps:
            obs.append(gridworld.encode(s))
            acts.append(int(a))
            nxt.append(gridworld.encode(s2))
    return np.stack(obs), np.asarray(acts, dtype=np.int64), np.stack(nxt)


def discriminator_prob(f_value, policy_log_prob):
    """D = exp(f) / (exp(f) + pi) = sigmoid(f - log pi), in log space."""
    return expit(np.asarray(f_value, dtype=np.float64)
                 - np.asarray(policy_log_prob, dtype=np.float64))


def airl_reward(f_value, policy_log_prob):
    """Generator reward log D - log(1 - D), which collapses to f - log pi."""
    return np.asarray(f_value, dtype=np.float64) - np.asarray(policy_log_prob, dtype=np.float64)


class AIRLGeneratorReward:
    """Per-step generator reward f(s, s') - log pi(a|s) for one rollout batch.

    reward_scale > 1 sharpens the generator's effective softmax temperature
    (desk-scale runs converge in far fewer adversarial rounds); 1.0 is the
    plain log D - log(1-D) reward.
    """

    def __init__(self, net: AIRLRewardNet, reward_scale=1.0):
        self.net = net
        self.reward_scale = reward_scale

    def batch_rewards(self, batch):
        B, T = batch.r_p.shape
        with torch.no_grad():
            f = self.net(as_tensor(batch.flat(batch.obs)),
                         as_tensor(batch.flat(batch.next_obs()))).numpy()
        return self.reward_scale * f.reshape(B, T) - batch.logp_old


@dataclass
class RewardComponent:
    """A trained f net plus the |J(expert)| normalizer applied at evaluation."""

    net: AIRLRewardNet
    normalizer: float = 1.0
    expert_id: str = ""

    def raw_f(self, obs, next_obs):
        with torch.no_grad():
            return self.net(as_tensor(obs), as_tensor(next_obs)).numpy()

    def values(self, obs, next_obs):
        return self.raw_f(obs, next_obs) / self.normalizer


def save_reward_component(component: RewardComponent, path):
    blob = {
        "expert_id": component.expert_id,
        "normalizer": component.normalizer,
        "checkpoint": save_params(component.net),
    }
    with open(path, "w") as fh:
        json.dump(blob, fh)


def load_reward_component(path) -> RewardComponent:
    with open(path) as fh:
        blob = json.load(fh)
    arch = blob["checkpoint"]["arch"]
    if arch.get("cls") != "AIRLRewardNet":
        raise ValueError(f"checkpoint holds {arch.get('cls')}, expected AIRLRewardNet")
    net = AIRLRewardNet(
        arch["in_channels"], arch["width"], arch["height"], arch["gamma"],
        dense=arch["dense"], hidden=tuple(arch["hidden"]),
        conv_channels=tuple(arch["conv_channels"]),
    )
    load_params(net, blob["checkpoint"])
    return RewardComponent(net, blob["normalizer"], blob["expert_id"])


class ScalarizedReward:
    """RewardSource for w . r(s, a, s') under a fixed weight snapshot."""

    def __init__(self, reward_vector, weights):
        weights = np.asarray(weights, dtype=np.float64)
        if len(weights) != reward_vector.m:
            raise ValueError("weight/component dimension mismatch")
        self.rv = reward_vector
        self.weights = weights

    def batch_rewards(self, batch):
        values = self.rv.step_values(batch)  # (B, T, m)
        return values @ self.weights


class RewardVector:
    """Ordered reward components: optional primary r_P first, then one
    normalized learned component per expert.

    `scale` multiplies every component (the c > 0 sensitivity knob for the
    preference posterior); it rescales all of r uniformly, so argmax policies
    and preference orderings are unchanged while w^T delta magnitudes grow.
    """

    def __init__(self, components, include_primary=True, scale=1.0):
        self.components = list(components)
        self.include_primary = include_primary
        self.scale = float(scale)

    @property
    def m(self):
        return len(self.components) + (1 if self.include_primary else 0)

    @property
    def names(self):
        names = ["primary"] if self.include_primary else []
        return names + [c.expert_id or f"expert_{i}" for i, c in enumerate(self.components)]

    def step_values(self, batch) -> np.ndarray:
        """(B, T, m) per-step reward vector values for a rollout batch."""
        B, T = batch.r_p.shape
        cols = []
        if self.include_primary:
            cols.append(batch.r_p)
        if self.components:
            obs = batch.flat(batch.obs)
            nxt = batch.flat(batch.next_obs())
            for comp in self.components:
                cols.append(comp.values(obs, nxt).reshape(B, T))
        return self.scale * np.stack(cols, axis=-1)

    def evaluate(self, s, a, s_next) -> np.ndarray:
        """m-vector for one transition; states as GridState or encoded arrays."""
        if isinstance(s, gridworld.GridState):
            r_p = _primary_reward_of(s, a, s_next)
            s = gridworld.encode(s)
            s_next = gridworld.encode(s_next)
        else:
            r_p = 0.0
        out = []
        if self.include_primary:
            out.append(r_p)
        for comp in self.components:
            out.append(float(comp.values(s[None], s_next[None])[0]))
        return self.scale * np.asarray(out)

    def traj_return(self, traj) -> np.ndarray:
        """Undiscounted vector return r(tau) = sum over transitions."""
        out = []
        if self.include_primary:
            out.append(traj.primary_return)
        if self.components:
            obs = np.stack([gridworld.encode(s[0]) for s in traj.steps])
            nxt = np.stack([gridworld.encode(s[2]) for s in traj.steps])
            for comp in self.components:
                out.append(float(comp.values(obs, nxt).sum()))
        return self.scale * np.asarray(out)

    def batch_returns(self, batch) -> np.ndarray:
        """(B, m) vector returns for every episode in a rollout batch."""
        return self.step_values(batch).sum(axis=1)

    def source(self, weights) -> ScalarizedReward:
        return ScalarizedReward(self, weights)


def _primary_reward_of(s, a, s_next):
    cfg = s.config
    if cfg.kind == gridworld.EMERGENCY:
        ext = (cfg.width - 1, cfg.height - 1)
        return 0.1 if s_next.agent_pos == ext else 0.0
    delta = s_next.counters["delivered"] - s.counters["delivered"]
    return 1.0 * delta


def evaluate_reward_vector(rv: RewardVector, s, a, s_next):
    return rv.evaluate(s, a, s_next)


@dataclass
class AIRLConfig:
    lr_disc: float = 5e-4
    disc_batch: int = 512
    disc_updates_per_batch: int = 1
    reward_scale: float = 1.0
    disc_weight_decay: float = 0.0
    n_updates: int = 200
    overfit_window: int = 20
    hidden: tuple = (256, 256)
    conv_channels: tuple = (128, 64, 32)
    dense: bool = None  # default: dense nets on emergency, conv on delivery


@dataclass
class AIRLResult:
    component: RewardComponent
    policy: ActorCriticNet
    stats: list = field(default_factory=list)


def train_airl(demos: DemoDataset, envs, ppo_config: ppo.PPOConfig,
               airl_config: AIRLConfig, rng, policy=None,
               policy_kwargs=None, on_batch=None) -> AIRLResult:
    """Alternate PPO on the generator reward with discriminator BCE updates.

    The discriminator sees balanced expert/generator (s, a, s') batches; its
    logit is f(s, s') - log pi(a|s) under the current generator. Returns the
    trained reward component (normalizer still 1.0) and the imitation policy.
    """
    env_cfg = envs[0].config
    dense = airl_config.dense
    if dense is None:
        dense = env_cfg.kind == gridworld.EMERGENCY
    f_net = AIRLRewardNet(env_cfg.n_channels, env_cfg.width, env_cfg.height,
                          ppo_config.gamma, dense=dense, hidden=airl_config.hidden,
                          conv_channels=airl_config.conv_channels)
    if policy is None:
        policy = ActorCriticNet(env_cfg.n_channels, env_cfg.width, env_cfg.height,
                                **(policy_kwargs or {}))
    opt_policy = make_adam(policy, ppo_config.lr)
    opt_disc = torch.optim.Adam(f_net.parameters(), lr=airl_config.lr_disc,
                                betas=(0.9, 0.999), eps=1e-8,
                                weight_decay=airl_config.disc_weight_decay)
    source = ppo.NormalizedReward(AIRLGeneratorReward(f_net, airl_config.reward_scale))

    exp_obs, exp_acts, exp_nxt = demo_transitions(demos)
    exp_obs_t, exp_nxt_t = as_tensor(exp_obs), as_tensor(exp_nxt)

    half = airl_config.disc_batch // 2
    stats = []
    perfect_streak = 0
    for update in range(airl_config.n_updates):
        batch = ppo.collect_rollouts(policy, envs, source, rng)
        ppo.compute_advantages(batch, ppo_config)
        ppo_stats = ppo.ppo_update(policy, opt_policy, batch, ppo_config)

        gen_obs = batch.flat(batch.obs)
        gen_nxt = batch.flat(batch.next_obs())
        gen_acts = batch.flat(batch.actions)
        for _ in range(airl_config.disc_updates_per_batch):
            ei = rng.integers(len(exp_acts), size=half)
            gi = rng.integers(len(gen_acts), size=half)
            logp_exp = torch.as_tensor(policy.log_probs_of(exp_obs[ei], exp_acts[ei]))
            logp_gen = torch.as_tensor(policy.log_probs_of(gen_obs[gi], gen_acts[gi]))
            z_exp = f_net(exp_obs_t[ei], exp_nxt_t[ei]) - logp_exp
            z_gen = f_net(as_tensor(gen_obs[gi]), as_tensor(gen_nxt[gi])) - logp_gen
            disc_loss = (F.binary_cross_entropy_with_logits(z_exp, torch.ones(half))
                         + F.binary_cross_entropy_with_logits(z_gen, torch.zeros(half)))
            disc_loss.backward()
            adam_step(f_net, opt_disc)

        with torch.no_grad():
            acc = 0.5 * (float((z_exp > 0).double().mean())
                         + float((z_gen < 0).double().mean()))
        perfect_streak = perfect_streak + 1 if acc >= 1.0 else 0
        if perfect_streak == airl_config.overfit_window:
            warnings.warn(
                f"discriminator at accuracy 1.0 for {perfect_streak} consecutive "
                "updates; reward net may be overfitting the generator gap",
                RuntimeWarning,
            )
        stats.append({
            "update_idx": update,
            "disc_loss": float(disc_loss.item()),
            "disc_acc": acc,
            **ppo_stats,
            **ppo.batch_metrics(batch),
        })
        if on_batch is not None:
            on_batch(update, batch, stats[-1])
    return AIRLResult(RewardComponent(f_net, 1.0, demos.expert_id), policy, stats)


def estimate_expert_return(component: RewardComponent, policy, envs, gamma,
                           n_episodes, rng) -> float:
    """Monte-Carlo J = E[sum_t gamma^t f(s_t, s_{t+1})] under the imitation
    policy; sets the component's normalizer to max(|J|, floor)."""
    env_cfg = envs[0].config
    T = env_cfg.horizon
    disc = gamma ** np.arange(T)
    totals = []
    remaining = n_episodes
    while remaining > 0:
        batch = ppo.collect_rollouts(policy, envs, ppo.ZeroReward(), rng)
        f = component.raw_f(batch.flat(batch.obs), batch.flat(batch.next_obs()))
        per_ep = (f.reshape(batch.n_episodes, T) * disc).sum(axis=1)
        take = min(remaining, len(per_ep))
        totals.extend(per_ep[:take])
        remaining -= take
    j = float(np.mean(totals))
    if abs(j) < NORMALIZER_FLOOR:
        warnings.warn(
            f"|J| = {abs(j):.2e} below floor {NORMALIZER_FLOOR}; clamping normalizer",
            RuntimeWarning,
        )
    component.normalizer = max(abs(j), NORMALIZER_FLOOR)
    return j

