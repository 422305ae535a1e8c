"""Interleaved PPO + autoencoder training over gridworlds.

One cycle = collect a horizon of transitions with the current policy, run PPO
epochs (once past the delayed start step), then train the autoencoder for a
fixed number of steps on observations sampled uniformly from the growing
replay buffer. Continual mode swaps in a freshly randomized layout every
`change_period` environment steps. PPO gradients never touch the encoder and
autoencoder gradients never touch the actor-critic, except in the end-to-end
variant where the policy/value losses train a shared conv encoder directly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from . import gridworld as gw
from .autoencoders import make_autoencoder
from .backbone import ConvEncoder, conv_spec_for
from .ppo import ActorCritic, DivergenceError, PPOConfig, RolloutBuffer, compute_advantages, ppo_update
from .seeding import derive_seed, spawn_rngs
from .validation import as_float_batch

RL_VARIANTS = ("vanilla", "fta", "vqvae", "end_to_end")
AE_LR = 2e-4
AE_EPOCHS_PER_CYCLE = 8
AE_BATCH_SIZE = 64


@dataclass
class RLConfig:
    variant: str = "vanilla"
    env_id: str = "crossing"
    scale: str = "desk"
    layout_seed: int = 0
    T_max: int = 400
    total_steps: int = 60_000
    ppo: PPOConfig = field(default_factory=PPOConfig)
    ppo_start: int = 0  # P; steps before the first PPO update
    continual: bool = False
    change_period: int = 8_000  # C
    ae_params: dict = field(default_factory=dict)
    ae_epochs: int = AE_EPOCHS_PER_CYCLE
    ae_batch_size: int = AE_BATCH_SIZE
    buffer_cap: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.variant not in RL_VARIANTS:
            raise ValueError(f"unknown RL variant {self.variant!r}; expected {RL_VARIANTS}")


class ObservationBuffer:
    """Grows with training; uniform sampling; uint8 storage."""

    def __init__(self, cap=None):
        self.cap = cap
        self._items = []

    def add(self, obs_float):
        if self.cap is not None and len(self._items) >= self.cap:
            self._items.pop(0)
        self._items.append(np.rint(obs_float * 255.0).astype(np.uint8))

    def __len__(self):
        return len(self._items)

    def sample(self, rng, n):
        idx = rng.integers(len(self._items), size=n)
        return np.stack([self._items[i] for i in idx])


class OnlineAutoencoder:
    """Incremental wrapper: the RL loop trains the autoencoder in epochs
    rather than one offline fit, but reuses the same nets and losses."""

    def __init__(self, variant, env_id, scale, ae_params, seed):
        self.estimator = make_autoencoder(variant, env_id=env_id, scale=scale,
                                          seed=seed, **ae_params)
        torch.manual_seed(derive_seed(seed, f"online-ae-{variant}"))
        self.net = self.estimator._build_net()
        self.opt = torch.optim.Adam(self.net.parameters(), lr=AE_LR, betas=(0.9, 0.999))
        self.rng = np.random.default_rng(derive_seed(seed, "online-ae-batches"))
        self.variant = variant
        self._codebook_seeded = variant != "vqvae"

    def update(self, obs_batch_uint8):
        batch = torch.from_numpy(as_float_batch(obs_batch_uint8)).permute(0, 3, 1, 2)
        self.net.train()
        if self.variant == "vqvae" and not self._codebook_seeded:
            loss, parts = self.net.loss(batch, bypass_quantizer=True)
        else:
            loss, parts = self.net.loss(batch)
        self.opt.zero_grad()
        loss.backward()
        self.opt.step()
        self.net.eval()
        return parts

    def seed_codebook_if_due(self, global_step, threshold, buffer):
        """VQ codebooks are seeded from data once the warmup window passes."""
        if self._codebook_seeded or global_step < threshold or len(buffer) == 0:
            return
        sample = buffer.sample(self.rng, min(512, len(buffer)))
        with torch.no_grad():
            z = self.net.encode_prequant(
                torch.from_numpy(as_float_batch(sample)).permute(0, 3, 1, 2))
        self.net.quantizer.init_from_data(z, self.rng)
        self._codebook_seeded = True

    @torch.no_grad()
    def features(self, obs_float):
        self.net.eval()
        t = torch.from_numpy(obs_float[None]).permute(0, 3, 1, 2)
        if self.variant == "vqvae":
            z = self.net.encode_prequant(t)
            idx = self.net.quantizer.indices(z)
            oh = torch.nn.functional.one_hot(idx, self.net.quantizer.codebook_size)
            return oh.float().reshape(-1).numpy()
        return self.net.encode(t)[0].numpy()

    @property
    def feature_dim(self):
        return self.estimator.feature_dim


class EndToEndEncoder(torch.nn.Module):
    """Conv trunk + linear projection shared by policy and value heads."""

    def __init__(self, env_id, scale, latent_dim):
        super().__init__()
        spec = conv_spec_for(env_id, scale)
        pool_k = 4 if scale == "desk" else 8
        self.conv = ConvEncoder(spec, gw.obs_hw(env_id, scale), pool_k)
        self.proj = torch.nn.Linear(spec.out_channels * pool_k * pool_k, latent_dim)

    def forward(self, x):
        return self.proj(self.conv(x).flatten(1))


def rl_training_loop(cfg: RLConfig, log=None):
    """Run the interleaved train/collect loop; returns metric tables.

    Output dict: `episodes` rows (global_step, episode_index, episode_length,
    episode_reward, layout_index, reconstruction_loss) and `cycles` rows
    (cycle, global_step, reconstruction_loss, ppo stats, layout_index).
    """
    rngs = spawn_rngs(cfg.seed, ["env", "actions", "ppo", "layouts"])
    env = gw.GridworldEnv(cfg.env_id, cfg.layout_seed, cfg.T_max, cfg.scale, rngs["env"])
    n_actions = env.n_actions

    e2e = cfg.variant == "end_to_end"
    online_ae = None
    if e2e:
        latent_dim = cfg.ae_params.get("latent_dim", 32)
        torch.manual_seed(derive_seed(cfg.seed, "e2e-nets"))
        encoder = EndToEndEncoder(cfg.env_id, cfg.scale, latent_dim)
        nets = ActorCritic(latent_dim, n_actions, encoder=encoder)
        feature_dim = latent_dim
    else:
        online_ae = OnlineAutoencoder(cfg.variant, cfg.env_id, cfg.scale,
                                      cfg.ae_params, cfg.seed)
        feature_dim = online_ae.feature_dim
        torch.manual_seed(derive_seed(cfg.seed, "actor-critic"))
        nets = ActorCritic(feature_dim, n_actions)
    optimizer = torch.optim.Adam(nets.parameters(), lr=cfg.ppo.lr, betas=(0.9, 0.999))

    buffer = RolloutBuffer(cfg.ppo.horizon, feature_dim)
    replay = ObservationBuffer(cfg.buffer_cap)

    episodes = []
    cycles = []
    global_step = 0
    episode_index = 0
    layout_index = 0
    ep_len = 0
    ep_reward = 0.0
    last_recon = float("nan")
    next_change = cfg.change_period

    obs = env.reset()
    replay.add(obs)

    def featurize_obs(o):
        if e2e:
            with torch.no_grad():
                t = torch.from_numpy(o[None]).permute(0, 3, 1, 2)
                return nets.features(t)[0].numpy()
        return online_ae.features(o)

    n_cycles = cfg.total_steps // cfg.ppo.horizon
    for cycle in range(n_cycles):
        buffer.clear()
        while not buffer.full:
            feats = featurize_obs(obs)
            action, logp, value = nets.act(feats, rngs["actions"])
            nxt_obs, reward, done = env.step(action)
            buffer.add(feats, action, logp, reward, done, value,
                       obs=np.rint(obs * 255).astype(np.uint8) if e2e else None)
            replay.add(nxt_obs)
            global_step += 1
            ep_len += 1
            ep_reward += reward

            changed = cfg.continual and global_step >= next_change
            if done or changed:
                if done:
                    episodes.append({
                        "global_step": global_step, "episode_index": episode_index,
                        "episode_length": ep_len, "episode_reward": ep_reward,
                        "layout_index": layout_index, "reconstruction_loss": last_recon,
                    })
                    episode_index += 1
                if changed:
                    layout_index += 1
                    next_change += cfg.change_period
                    env.set_layout(gw.randomize_layout(
                        cfg.env_id, int(rngs["layouts"].integers(2**31 - 1))))
                obs = env.reset()
                ep_len = 0
                ep_reward = 0.0
            else:
                obs = nxt_obs

        ppo_stats = None
        if global_step >= cfg.ppo_start:
            with torch.no_grad():
                boot = 0.0 if buffer.dones[-1] else float(
                    nets.logits_values(torch.as_tensor(featurize_obs(obs))[None])[1][0])
            buffer.advantages, buffer.returns = compute_advantages(
                buffer.rewards, buffer.values, buffer.dones, boot,
                cfg.ppo.gamma, cfg.ppo.gae_lambda)
            featurize_mb = None
            if e2e:
                obs_arr = np.stack(buffer.observations)

                def featurize_mb(mb):
                    t = torch.from_numpy(as_float_batch(obs_arr, mb)).permute(0, 3, 1, 2)
                    return nets.features(t)
            ppo_stats = ppo_update(nets, buffer, cfg.ppo, optimizer, rngs["ppo"],
                                   featurize=featurize_mb)

        if online_ae is not None:
            online_ae.seed_codebook_if_due(global_step, cfg.ppo_start // 2, replay)
            recon = []
            for _ in range(cfg.ae_epochs):
                batch = replay.sample(online_ae.rng, min(cfg.ae_batch_size, len(replay)))
                parts = online_ae.update(batch)
                recon.append(parts["reconstruction_loss"])
            last_recon = float(np.mean(recon))

        cycles.append({"cycle": cycle, "global_step": global_step,
                       "reconstruction_loss": last_recon, "layout_index": layout_index,
                       **({f"ppo_{k}": v for k, v in ppo_stats.items()} if ppo_stats else {})})
        if log is not None and (cycle + 1) % log == 0:
            recent = [e["episode_length"] for e in episodes[-10:]]
            print(f"cycle {cycle + 1}/{n_cycles} step {global_step} "
                  f"ep-len~{np.mean(recent) if recent else float('nan'):.0f} "
                  f"recon {last_recon:.5f}", flush=True)

    return {"episodes": episodes, "cycles": cycles,
            "nets": nets, "online_ae": online_ae, "config": cfg}


def delayed_start_calibration(loss_series: dict, threshold: float, smooth_window: int = 25):
    """First step at which each variant's smoothed reconstruction loss crosses
    `threshold`. Raises if a variant never reaches it."""
    out = {}
    for variant, series in loss_series.items():
        arr = np.asarray(series, dtype=np.float64)
        if len(arr) >= smooth_window:
            kernel = np.ones(smooth_window) / smooth_window
            smoothed = np.convolve(arr, kernel, mode="valid")
            offset = smooth_window - 1
        else:
            smoothed = arr
            offset = 0
        below = np.flatnonzero(smoothed < threshold)
        if len(below) == 0:
            raise ValueError(
                f"variant {variant!r} never reached reconstruction loss {threshold} "
                f"(min smoothed {smoothed.min():.5f}); train longer or raise the threshold")
        out[variant] = int(below[0] + offset)
    return out


def per_layout_rewards(episodes) -> dict:
    """Total episode reward accumulated within each layout period."""
    totals = {}
    for row in episodes:
        totals[row["layout_index"]] = totals.get(row["layout_index"], 0.0) + row["episode_reward"]
    return totals
