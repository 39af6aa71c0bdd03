"""Function approximators: actor-critic policy, reward nets, Adam plumbing.

All nets run in float64 on CPU. Convolutions use kernel 2, stride 1, no
padding; stacks drop trailing layers when the grid is too small to support
them (each conv eats one cell per spatial dim).
"""

from __future__ import annotations

import json

import numpy as np
import torch
import torch.nn as nn

from .gridworld import N_ACTIONS

torch.set_default_dtype(torch.float64)

CHECKPOINT_FORMAT = "moral-lab-params"
CHECKPOINT_VERSION = 1


def as_tensor(x):
    if isinstance(x, torch.Tensor):
        return x.double()
    return torch.as_tensor(np.asarray(x), dtype=torch.float64)


def _batched(x):
    """Add a batch dim to a single (C, W, H) input; report whether we did."""
    t = as_tensor(x)
    if t.dim() == 3:
        return t.unsqueeze(0), True
    return t, False


def _conv_stack(in_channels, channels, width, height, activation):
    """Greedy kernel-2 conv stack; stops early when the map would vanish."""
    layers = []
    w, h, c = width, height, in_channels
    for out_c in channels:
        if min(w, h) < 2:
            break
        layers += [nn.Conv2d(c, out_c, kernel_size=2), activation()]
        w, h, c = w - 1, h - 1, out_c
    return nn.Sequential(*layers), c * w * h


def _mlp(sizes, activation):
    layers = []
    for i in range(len(sizes) - 1):
        layers.append(nn.Linear(sizes[i], sizes[i + 1]))
        if i < len(sizes) - 2:
            layers.append(activation())
    return nn.Sequential(*layers)


class ActorCriticNet(nn.Module):
    """Shared conv base with parallel conv+linear actor and critic heads."""

    def __init__(self, in_channels, width, height,
                 base_channels=(64, 256), head_channels=32):
        super().__init__()
        self.arch = {
            "cls": "ActorCriticNet",
            "in_channels": in_channels, "width": width, "height": height,
            "base_channels": list(base_channels), "head_channels": head_channels,
        }
        self.base, _ = _conv_stack(in_channels, base_channels, width, height, nn.ReLU)
        n_convs = len(self.base) // 2
        w, h = width - n_convs, height - n_convs
        base_out_c = base_channels[n_convs - 1] if n_convs else in_channels
        if min(w, h) >= 2:
            self.actor_conv = nn.Sequential(nn.Conv2d(base_out_c, head_channels, 2), nn.ReLU())
            self.critic_conv = nn.Sequential(nn.Conv2d(base_out_c, head_channels, 2), nn.ReLU())
            head_flat = head_channels * (w - 1) * (h - 1)
        else:
            self.actor_conv = nn.Identity()
            self.critic_conv = nn.Identity()
            head_flat = base_out_c * w * h
        self.actor_out = nn.Linear(head_flat, N_ACTIONS)
        self.critic_out = nn.Linear(head_flat, 1)
        self.double()

    def forward(self, obs):
        obs, single = _batched(obs)
        z = self.base(obs)
        logits = self.actor_out(torch.flatten(self.actor_conv(z), 1))
        value = self.critic_out(torch.flatten(self.critic_conv(z), 1)).squeeze(-1)
        if single:
            return logits[0], value[0]
        return logits, value

    def act(self, obs, rng):
        """Sample actions for a numpy obs batch; returns numpy arrays."""
        with torch.no_grad():
            logits, value = self.forward(obs)
        actions, log_probs = sample_categorical(logits.numpy(), rng)
        return actions, log_probs, value.numpy()

    def log_probs_of(self, obs, actions):
        """log pi(a|s) for given state-action pairs (no grad)."""
        with torch.no_grad():
            logits, _ = self.forward(obs)
            logp = torch.log_softmax(logits, dim=-1)
        idx = torch.as_tensor(np.asarray(actions), dtype=torch.long)
        return logp[torch.arange(len(idx)), idx].numpy()


def forward_actor_critic(net: ActorCriticNet, obs):
    """(logits, value) for one observation or a batch."""
    return net(obs)


class _GHNet(nn.Module):
    """Pair of g(s), h(s) sub-networks sharing an architecture family."""

    def __init__(self, in_channels, width, height, dense, hidden, conv_channels):
        super().__init__()
        self.dense = dense
        if dense:
            flat = in_channels * width * height
            self.g = _mlp([flat, *hidden, 1], lambda: nn.LeakyReLU(0.01))
            self.h = _mlp([flat, *hidden, 1], lambda: nn.LeakyReLU(0.01))
        else:
            self.g_conv, flat = _conv_stack(in_channels, conv_channels, width, height,
                                            lambda: nn.LeakyReLU(0.01))
            self.h_conv, _ = _conv_stack(in_channels, conv_channels, width, height,
                                         lambda: nn.LeakyReLU(0.01))
            self.g_out = nn.Linear(flat, 1)
            self.h_out = nn.Linear(flat, 1)

    def g_value(self, s):
        if self.dense:
            return self.g(torch.flatten(s, 1)).squeeze(-1)
        return self.g_out(torch.flatten(self.g_conv(s), 1)).squeeze(-1)

    def h_value(self, s):
        if self.dense:
            return self.h(torch.flatten(s, 1)).squeeze(-1)
        return self.h_out(torch.flatten(self.h_conv(s), 1)).squeeze(-1)


class AIRLRewardNet(nn.Module):
    """Shaped reward f(s, s') = g(s) + gamma*h(s') - h(s).

    Dense g/h for the small emergency grids, conv stacks + linear for
    delivery-sized grids.
    """

    def __init__(self, in_channels, width, height, gamma,
                 dense=True, hidden=(256, 256), conv_channels=(128, 64, 32)):
        super().__init__()
        self.gamma = gamma
        self.arch = {
            "cls": "AIRLRewardNet",
            "in_channels": in_channels, "width": width, "height": height,
            "gamma": gamma, "dense": dense, "hidden": list(hidden),
            "conv_channels": list(conv_channels),
        }
        self.net = _GHNet(in_channels, width, height, dense, hidden, conv_channels)
        self.double()

    def g(self, s):
        s, single = _batched(s)
        out = self.net.g_value(s)
        return out[0] if single else out

    def h(self, s):
        s, single = _batched(s)
        out = self.net.h_value(s)
        return out[0] if single else out

    def forward(self, s, s_next):
        return self.g(s) + self.gamma * self.h(s_next) - self.h(s)


def airl_f(net: AIRLRewardNet, s, s_next):
    """The shaped reward value f(s, s')."""
    return net(as_tensor(s), as_tensor(s_next))


class DRLHPRewardNet(nn.Module):
    """State-action reward model: one-hot action embedded to a state-shaped
    array, concatenated along channels, then convs + linear to a scalar."""

    def __init__(self, in_channels, width, height, conv_channels=(128, 64, 32)):
        super().__init__()
        self.arch = {
            "cls": "DRLHPRewardNet",
            "in_channels": in_channels, "width": width, "height": height,
            "conv_channels": list(conv_channels),
        }
        self.in_shape = (in_channels, width, height)
        self.embed = nn.Linear(N_ACTIONS, in_channels * width * height)
        self.conv, flat = _conv_stack(2 * in_channels, conv_channels, width, height,
                                      lambda: nn.LeakyReLU(0.01))
        self.out = nn.Linear(flat, 1)
        self.double()

    def forward(self, obs, actions):
        obs, single = _batched(obs)
        idx = torch.as_tensor(np.asarray(actions), dtype=torch.long).reshape(-1)
        onehot = torch.zeros((len(idx), N_ACTIONS), dtype=torch.float64)
        onehot[torch.arange(len(idx)), idx] = 1.0
        emb = self.embed(onehot).reshape(-1, *self.in_shape)
        z = torch.cat([obs, emb], dim=1)
        r = self.out(torch.flatten(self.conv(z), 1)).squeeze(-1)
        return r[0] if single else r


def predict_reward(model: DRLHPRewardNet, s, a):
    """Raw (unnormalized) model reward for one state-action pair or a batch."""
    with torch.no_grad():
        return model(s, a).numpy()


def make_adam(net: nn.Module, lr):
    return torch.optim.Adam(net.parameters(), lr=lr, betas=(0.9, 0.999), eps=1e-8)


def adam_step(net: nn.Module, opt: torch.optim.Optimizer):
    """One optimizer step; refuses to apply non-finite gradients."""
    for name, p in net.named_parameters():
        if p.grad is not None and not torch.isfinite(p.grad).all():
            opt.zero_grad()
            raise FloatingPointError(f"non-finite gradient in {name}")
    opt.step()
    opt.zero_grad()


def sample_categorical(logits, rng: np.random.Generator):
    """Draw from softmax(logits) rows; returns (indices, log_probs).

    Accepts a single logit vector or a (B, A) batch; numpy in, numpy out.
    """
    logits = np.asarray(logits, dtype=np.float64)
    single = logits.ndim == 1
    z = np.atleast_2d(logits)
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    probs = np.exp(logp)
    u = rng.random((probs.shape[0], 1))
    idx = (probs.cumsum(axis=1) < u).sum(axis=1)
    idx = np.minimum(idx, probs.shape[1] - 1)
    chosen = logp[np.arange(len(idx)), idx]
    if single:
        return int(idx[0]), float(chosen[0])
    return idx.astype(np.int64), chosen


def save_params(net: nn.Module) -> dict:
    """Versioned name -> shape+data checkpoint, JSON-serializable."""
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "arch": dict(getattr(net, "arch", {})),
        "params": {
            name: {"shape": list(p.shape), "data": p.detach().reshape(-1).tolist()}
            for name, p in net.named_parameters()
        },
    }


def load_params(net: nn.Module, blob: dict):
    """Load a checkpoint produced by save_params; architecture must match."""
    if blob.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("not a parameter checkpoint")
    if blob.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {blob.get('version')}")
    if blob.get("arch") != dict(getattr(net, "arch", {})):
        raise ValueError("checkpoint architecture does not match the target net")
    params = dict(net.named_parameters())
    if set(params) != set(blob["params"]):
        raise ValueError("checkpoint parameter names do not match")
    with torch.no_grad():
        for name, p in params.items():
            entry = blob["params"][name]
            if list(p.shape) != entry["shape"]:
                raise ValueError(f"shape mismatch for {name}")
            p.copy_(torch.as_tensor(entry["data"], dtype=torch.float64).reshape(p.shape))


def save_params_file(net, path):
    with open(path, "w") as fh:
        json.dump(save_params(net), fh)


def load_params_file(net, path):
    with open(path) as fh:
        load_params(net, json.load(fh))
