"""Clipped-surrogate PPO over flattened latent features.

Policy and value functions are separate two-layer MLPs. Advantages use
generalized advantage estimation with episode-boundary masking; the value loss
is unclipped squared error to the empirical returns.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .backbone import MLP

ACTOR_CRITIC_HIDDEN = (256, 256)


@dataclass
class PPOConfig:
    clip_eps: float = 0.2
    epochs: int = 10
    minibatch_size: int = 64
    gamma: float = 0.99
    gae_lambda: float = 0.95
    lr: float = 3e-4
    horizon: int = 256
    entropy_coef: float = 0.0
    normalize_advantages: bool = True

    def __post_init__(self):
        if not 0 < self.clip_eps < 1:
            raise ValueError(f"clip_eps must be in (0, 1), got {self.clip_eps}")
        for name in ("epochs", "minibatch_size", "horizon"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.gamma <= 1 or not 0 <= self.gae_lambda <= 1:
            raise ValueError("gamma in (0,1], lambda in [0,1] required")


class ActorCritic(nn.Module):
    def __init__(self, feature_dim: int, n_actions: int, encoder: nn.Module | None = None):
        super().__init__()
        self.policy = MLP(feature_dim, ACTOR_CRITIC_HIDDEN, n_actions)
        self.value = MLP(feature_dim, ACTOR_CRITIC_HIDDEN, 1)
        self.encoder = encoder  # set only in the end-to-end variant

    def features(self, obs):
        if self.encoder is None:
            raise RuntimeError("no encoder attached; pass latent features directly")
        return self.encoder(obs)

    def logits_values(self, feats):
        return self.policy(feats), self.value(feats).squeeze(-1)

    @torch.no_grad()
    def act(self, feats: np.ndarray, rng: np.random.Generator):
        t = torch.as_tensor(feats, dtype=torch.float32)[None]
        logits, value = self.logits_values(t)
        probs = torch.softmax(logits, dim=-1)[0].numpy().astype(np.float64)
        probs /= probs.sum()
        action = int(rng.choice(len(probs), p=probs))
        return action, float(np.log(probs[action])), float(value[0])


@dataclass
class RolloutBuffer:
    horizon: int
    feature_dim: int
    features: np.ndarray = field(init=False)
    observations: list = field(init=False, default_factory=list)
    actions: np.ndarray = field(init=False)
    log_probs: np.ndarray = field(init=False)
    rewards: np.ndarray = field(init=False)
    dones: np.ndarray = field(init=False)
    values: np.ndarray = field(init=False)
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None
    size: int = 0

    def __post_init__(self):
        self.features = np.zeros((self.horizon, self.feature_dim), dtype=np.float32)
        self.actions = np.zeros(self.horizon, dtype=np.int64)
        self.log_probs = np.zeros(self.horizon, dtype=np.float32)
        self.rewards = np.zeros(self.horizon, dtype=np.float32)
        self.dones = np.zeros(self.horizon, dtype=bool)
        self.values = np.zeros(self.horizon, dtype=np.float32)

    @property
    def full(self) -> bool:
        return self.size == self.horizon

    def add(self, feats, action, log_prob, reward, done, value, obs=None):
        if self.full:
            raise RuntimeError("rollout buffer already full")
        i = self.size
        self.features[i] = feats
        self.actions[i] = action
        self.log_probs[i] = log_prob
        self.rewards[i] = reward
        self.dones[i] = done
        self.values[i] = value
        if obs is not None:
            self.observations.append(obs)
        self.size += 1

    def clear(self):
        self.size = 0
        self.observations = []
        self.advantages = self.returns = None


def compute_advantages(rewards, values, dones, last_value, gamma: float, lam: float):
    """Masked GAE recursion; returns (advantages, returns = adv + values)."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    T = len(rewards)
    adv = np.zeros(T)
    gae = 0.0
    for t in reversed(range(T)):
        next_value = last_value if t == T - 1 else values[t + 1]
        mask = 0.0 if dones[t] else 1.0
        delta = rewards[t] + gamma * next_value * mask - values[t]
        gae = delta + gamma * lam * mask * gae
        adv[t] = gae
    return adv, adv + values


class DivergenceError(RuntimeError):
    pass


def ppo_update(nets: ActorCritic, buffer: RolloutBuffer, config: PPOConfig,
               optimizer, rng: np.random.Generator, featurize=None):
    """Clipped-PPO epochs over shuffled minibatches of a full buffer.

    `featurize(minibatch_indices)` supplies differentiable features for the
    end-to-end variant; otherwise the frozen per-step features in the buffer
    are used. Returns mean losses and the mean probability ratio.
    """
    if not buffer.full:
        raise RuntimeError("ppo_update requires a full rollout buffer")
    if buffer.advantages is None:
        raise RuntimeError("advantages not computed")
    actions = torch.as_tensor(buffer.actions)
    old_logp = torch.as_tensor(buffer.log_probs)
    advantages = torch.as_tensor(buffer.advantages, dtype=torch.float32)
    returns = torch.as_tensor(buffer.returns, dtype=torch.float32)
    feats_all = torch.as_tensor(buffer.features)

    stats = {"policy_loss": [], "value_loss": [], "ratio": [], "entropy": []}
    T = buffer.horizon
    for _ in range(config.epochs):
        order = rng.permutation(T)
        for start in range(0, T, config.minibatch_size):
            mb = order[start : start + config.minibatch_size]
            feats = featurize(mb) if featurize is not None else feats_all[mb]
            logits, values = nets.logits_values(feats)
            dist = torch.distributions.Categorical(logits=logits)
            logp = dist.log_prob(actions[mb])
            ratio = torch.exp(logp - old_logp[mb])
            adv = advantages[mb]
            if config.normalize_advantages:
                adv = (adv - adv.mean()) / (adv.std() + 1e-8)
            unclipped = ratio * adv
            clipped = torch.clamp(ratio, 1 - config.clip_eps, 1 + config.clip_eps) * adv
            policy_loss = -torch.minimum(unclipped, clipped).mean()
            value_loss = (values - returns[mb]).pow(2).mean()
            entropy = dist.entropy().mean()
            loss = policy_loss + value_loss - config.entropy_coef * entropy
            if not torch.isfinite(loss):
                raise DivergenceError("PPO loss became non-finite")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            stats["policy_loss"].append(float(policy_loss))
            stats["value_loss"].append(float(value_loss))
            stats["ratio"].append(float(ratio.mean()))
            stats["entropy"].append(float(entropy))
    return {k: float(np.mean(v)) for k, v in stats.items()}
