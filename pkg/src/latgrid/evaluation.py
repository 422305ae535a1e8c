"""Distributional world-model evaluation.

A fixed behavior policy is rolled out in the real environment and inside the
learned model; both induce per-step distributions over the enumerated state
set, compared with per-step KL divergence. Model rollouts map predicted
latents back to states by decoding to pixels and taking the nearest manifest
observation; episodes that reach a terminal state are frozen there for the
remaining steps.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np
import torch

from . import gridworld as gw
from .policies import behavior_policy_for, policy_matrix
from .worldmodel import advance_latents

EVAL_STEPS = 30
KL_EPS = 1e-6


class StateManifest:
    """Enumerated states of a fixed layout plus their rendered observations."""

    def __init__(self, env_id: str, layout_seed: int = 0, scale: str = "desk"):
        self.env_id = env_id
        self.layout_seed = layout_seed
        self.scale = scale
        pairs = gw.enumerate_states(env_id, layout_seed, scale=scale)
        self.states = [s for s, _ in pairs]
        self.observations = np.stack([o for _, o in pairs])
        self.flat = self.observations.reshape(len(pairs), -1).astype(np.float32)
        self.terminal = np.array([s.terminated for s in self.states])
        self.index_of = {s.config_key(): i for i, s in enumerate(self.states)}
        self.layout = self.states[0].layout
        start = gw.initial_state(self.layout, T_max=10_000)
        self.start_index = self.index_of[start.config_key()]

    def __len__(self):
        return len(self.states)

    def policy_matrix(self, policy=None) -> np.ndarray:
        policy = policy or behavior_policy_for(self.env_id)
        return policy_matrix(self.states, policy, gw.action_count(self.env_id))

    def occupancy(self, probs: np.ndarray) -> np.ndarray:
        """Fold per-state probabilities into per-cell occupancy grids."""
        grid = np.zeros((probs.shape[0], self.layout.height, self.layout.width))
        for i, st in enumerate(self.states):
            x, y = st.agent_pos
            grid[:, y, x] += probs[:, i]
        return grid


@dataclass
class StateDistributionSeries:
    env_id: str
    layout_seed: int
    scale: str
    episodes: int
    probs: np.ndarray  # (steps, |S|), rows sum to 1

    @property
    def steps(self):
        return self.probs.shape[0]

    def validate(self):
        if not np.all(self.probs >= 0):
            raise ValueError("negative probabilities")
        if not np.allclose(self.probs.sum(axis=1), 1.0, atol=1e-9):
            raise ValueError("per-step distributions must sum to 1")
        return self


def ground_truth_series(manifest: StateManifest, episodes: int, steps: int = EVAL_STEPS,
                        rng=None, policy=None) -> StateDistributionSeries:
    """Empirical per-step state distribution of the policy in the real env.

    Entry 0 is the (point-mass) start state; episodes reaching a terminal
    state are frozen there for the remaining steps.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    policy = policy or behavior_policy_for(manifest.env_id)
    counts = np.zeros((steps, len(manifest)), dtype=np.int64)
    stochastic = gw.is_stochastic(manifest.env_id)
    for _ in range(episodes):
        state = gw.initial_state(manifest.layout, T_max=10_000)
        idx = manifest.index_of[state.config_key()]
        counts[0, idx] += 1
        for t in range(1, steps):
            if not state.terminated:
                probs = policy(state)
                action = int(rng.choice(len(probs), p=probs))
                state, _, _, _ = gw.step(state, action, rng if stochastic else None,
                                         render=False)
                idx = manifest.index_of[state.config_key()]
            counts[t, idx] += 1
    return StateDistributionSeries(manifest.env_id, manifest.layout_seed, manifest.scale,
                                   episodes, counts / episodes).validate()


def identify_batch(decoded: np.ndarray, manifest: StateManifest) -> np.ndarray:
    """Nearest manifest observation by pixel L2; ties go to the lowest index."""
    flat = decoded.reshape(decoded.shape[0], -1).astype(np.float32)
    m = manifest.flat
    d2 = (flat ** 2).sum(1, keepdims=True) - 2.0 * flat @ m.T + (m ** 2).sum(1)
    return d2.argmin(axis=1)


def identify_state(latent, codec, manifest: StateManifest) -> int:
    """Decode one predicted latent and return the nearest manifest state index."""
    decoded = codec.decode(latent[None] if np.asarray(latent).ndim in (1, 2) else latent)
    return int(identify_batch(decoded, manifest)[0])


def model_series(model, codec, manifest: StateManifest, episodes: int,
                 steps: int = EVAL_STEPS, rng=None, policy=None,
                 trace_path=None) -> StateDistributionSeries:
    """Per-step state distribution induced by rolling out a learned model.

    The behavior policy is evaluated on the identified (decoded) state of each
    episode; actions are sampled per episode, the model advances all episodes
    in a batch, and terminal-identified episodes freeze.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    pol = manifest.policy_matrix(policy)
    counts = np.zeros((steps, len(manifest)), dtype=np.int64)

    start_obs = manifest.observations[manifest.start_index][None]
    z0 = model._features_tensor(codec.encode(start_obs))
    z = z0.repeat_interleave(episodes, dim=0)
    indices = np.full(episodes, identify_batch(codec.decode_features(z0), manifest)[0])
    frozen = manifest.terminal[indices].copy()
    counts[0, indices[0]] += episodes

    trace = [] if trace_path is not None else None
    for t in range(1, steps):
        active = np.flatnonzero(~frozen)
        if len(active):
            p = pol[indices[active]]
            cumulative = p.cumsum(axis=1)
            draws = rng.random((len(active), 1))
            actions = (draws < cumulative).argmax(axis=1)
            z_active = advance_latents(model, z[active], actions, rng)
            z[torch.as_tensor(active)] = z_active
            indices[active] = identify_batch(
                codec.decode_features(z_active), manifest)
            frozen[active] = manifest.terminal[indices[active]]
        np.add.at(counts[t], indices, 1)
        if trace is not None:
            trace.append({"step": t, "decoded": indices[: min(16, episodes)].tolist()})

    if trace_path is not None:
        with open(trace_path, "w") as f:
            for row in trace:
                f.write(json.dumps(row) + "\n")
    return StateDistributionSeries(manifest.env_id, manifest.layout_seed, manifest.scale,
                                   episodes, counts / episodes).validate()


def uniform_baseline(manifest: StateManifest, steps: int = EVAL_STEPS,
                     episodes: int = 0) -> StateDistributionSeries:
    if len(manifest) == 0:
        raise ValueError("empty manifest")
    probs = np.full((steps, len(manifest)), 1.0 / len(manifest))
    return StateDistributionSeries(manifest.env_id, manifest.layout_seed, manifest.scale,
                                   episodes, probs).validate()


def kl_per_step(p: StateDistributionSeries, q: StateDistributionSeries,
                eps: float = KL_EPS) -> np.ndarray:
    """KL(p || q~) per step with additive smoothing on the q side only."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    if p.probs.shape != q.probs.shape:
        raise ValueError(f"mismatched series shapes {p.probs.shape} vs {q.probs.shape}")
    if (p.env_id, p.layout_seed) != (q.env_id, q.layout_seed):
        raise ValueError("series come from different manifests")
    q_smooth = q.probs + eps
    q_smooth /= q_smooth.sum(axis=1, keepdims=True)
    ratio = np.zeros_like(p.probs)
    mask = p.probs > 0
    ratio[mask] = np.log(p.probs[mask] / q_smooth[mask])
    return (p.probs * ratio).sum(axis=1)


def series_to_csv(series: StateDistributionSeries, path):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "state_index", "probability"])
        for t in range(series.steps):
            for s in np.flatnonzero(series.probs[t]):
                writer.writerow([t, int(s), repr(float(series.probs[t, s]))])


def kl_summary(kl: np.ndarray) -> dict:
    return {"per_step_kl": [float(v) for v in kl], "mean_kl": float(np.mean(kl))}


def occupancy_export(series: StateDistributionSeries, manifest: StateManifest,
                     path=None, display_steps=(1, 5, 10, 15, 20, 25, 30)) -> dict:
    """Per-cell occupancy grids behind the rollout-visualization figures."""
    grids = manifest.occupancy(series.probs)
    out = {"env_id": series.env_id, "steps": list(display_steps),
           "height": grids.shape[1], "width": grids.shape[2],
           "grids": [grids[s - 1].tolist() for s in display_steps]}
    if path is not None:
        with open(path, "w") as f:
            json.dump(out, f)
    return out


class ContinuousCodec:
    """Encode/decode adapter for vanilla and FTA estimators."""

    def __init__(self, estimator):
        self.estimator = estimator

    def encode(self, obs):
        return self.estimator.transform(obs)

    def decode(self, latents):
        return self.estimator.inverse_transform(np.asarray(latents, dtype=np.float32))

    def decode_features(self, z_torch):
        return self.decode(z_torch.numpy())


class DiscreteCodec:
    """Encode/decode adapter for VQ-VAE codebook indices."""

    def __init__(self, estimator):
        self.estimator = estimator

    def encode(self, obs):
        return self.estimator.transform(obs)

    def decode(self, indices):
        return self.estimator.decode_indices(np.asarray(indices))

    def decode_features(self, z_torch):
        return self.decode(z_torch.numpy())


class QuantizedCodec:
    """Encode/decode adapter for quantized (embedding-vector) latents."""

    def __init__(self, estimator):
        self.estimator = estimator

    def encode(self, obs):
        return self.estimator.quantized(self.estimator.transform(obs))

    def decode(self, quantized):
        q = torch.as_tensor(np.asarray(quantized), dtype=torch.float32)
        with torch.no_grad():
            out = self.estimator.net_.decode_quantized(q)
        return out.permute(0, 2, 3, 1).numpy()

    def decode_features(self, z_torch):
        with torch.no_grad():
            out = self.estimator.net_.decode_quantized(z_torch)
        return out.permute(0, 2, 3, 1).numpy()


def codec_for(estimator, representation: str):
    if representation in ("vanilla", "fta"):
        return ContinuousCodec(estimator)
    if representation == "multi_one_hot":
        return DiscreteCodec(estimator)
    if representation == "quantized":
        return QuantizedCodec(estimator)
    raise ValueError(f"unknown representation {representation!r}")
