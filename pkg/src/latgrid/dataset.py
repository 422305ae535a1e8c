"""Transition datasets: random-walk collection and chunked binary storage.

Records are (observation, action, next observation) tuples stored as uint8
pixel arrays (bit-exact round trip: the render palette is 8-bit). Each record
also carries its manifest state indices and episode id so that training over
frozen encoders can cache latents per unique state and hallucinated-replay
sampling never crosses episode boundaries.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import gridworld as gw

CHUNK_RECORDS = 25_000
FORMAT_VERSION = 1


def _to_uint8(obs: np.ndarray) -> np.ndarray:
    return np.rint(obs * 255.0).astype(np.uint8)


class TransitionDataset:
    def __init__(self, obs, action, next_obs, state_idx, next_state_idx, ep_id, meta):
        self.obs = obs
        self.action = action
        self.next_obs = next_obs
        self.state_idx = state_idx
        self.next_state_idx = next_state_idx
        self.ep_id = ep_id
        self.meta = meta

    def __len__(self):
        return len(self.action)

    def observations_float(self, idx=None) -> np.ndarray:
        sel = self.obs if idx is None else self.obs[idx]
        return sel.astype(np.float32) / 255.0

    def sample_sequences(self, rng, batch: int, horizon: int):
        """(states (B, K+1), actions (B, K), lengths (B,)) for hallucinated replay.

        Sequences are truncated at episode ends (shorter tails train with a
        reduced horizon); padding cells repeat the last valid entry and are
        masked out via `lengths`.
        """
        n = len(self)
        starts = rng.integers(n, size=batch)
        states = np.zeros((batch, horizon + 1), dtype=np.int64)
        actions = np.zeros((batch, horizon), dtype=np.int64)
        lengths = np.zeros(batch, dtype=np.int64)
        states[:, 0] = self.state_idx[starts]
        for b, s in enumerate(starts):
            ep = self.ep_id[s]
            k = 0
            while k < horizon and s + k < n and self.ep_id[s + k] == ep:
                actions[b, k] = self.action[s + k]
                states[b, k + 1] = self.next_state_idx[s + k]
                k += 1
            lengths[b] = k
            states[b, k + 1 :] = states[b, k]
        return states, actions, lengths

    def save(self, path):
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        n = len(self)
        chunk_files = []
        try:
            for start in range(0, n, CHUNK_RECORDS):
                end = min(start + CHUNK_RECORDS, n)
                name = f"chunk_{start // CHUNK_RECORDS:04d}.npz"
                np.savez_compressed(path / name,
                                    obs=self.obs[start:end],
                                    action=self.action[start:end],
                                    next_obs=self.next_obs[start:end],
                                    state_idx=self.state_idx[start:end],
                                    next_state_idx=self.next_state_idx[start:end],
                                    ep_id=self.ep_id[start:end])
                chunk_files.append(name)
        except OSError:
            for name in chunk_files:
                (path / name).unlink(missing_ok=True)
            raise
        manifest = dict(self.meta, count=n, chunks=chunk_files,
                        format_version=FORMAT_VERSION)
        (path / "manifest.json").write_text(json.dumps(manifest, indent=1))
        return path

    @classmethod
    def load(cls, path):
        path = Path(path)
        manifest = json.loads((path / "manifest.json").read_text())
        parts = {k: [] for k in ("obs", "action", "next_obs", "state_idx",
                                 "next_state_idx", "ep_id")}
        for name in manifest["chunks"]:
            with np.load(path / name) as z:
                for k in parts:
                    parts[k].append(z[k])
        arrays = {k: np.concatenate(v) for k, v in parts.items()}
        if len(arrays["action"]) != manifest["count"]:
            raise ValueError(f"manifest count {manifest['count']} != stored "
                             f"{len(arrays['action'])} records")
        meta = {k: v for k, v in manifest.items()
                if k not in ("chunks", "count", "format_version")}
        return cls(arrays["obs"], arrays["action"], arrays["next_obs"],
                   arrays["state_idx"], arrays["next_state_idx"], arrays["ep_id"], meta)


def state_index_map(manifest_states):
    return {st.config_key(): i for i, (st, _) in enumerate(manifest_states)}


def collect_dataset(env_id: str, count: int, layout_seed: int = 0, T_max: int = 10_000,
                    seed: int = 0, scale: str = "full") -> TransitionDataset:
    """Random-walk episodes until `count` transitions are stored."""
    if count < 1:
        raise ValueError("count must be >= 1")
    manifest_states = gw.enumerate_states(env_id, layout_seed, scale=scale)
    index_of = state_index_map(manifest_states)
    rng = np.random.default_rng([seed, 0xDA7A])
    n_actions = gw.action_count(env_id)
    hw = gw.obs_hw(env_id, scale)

    obs = np.empty((count, *hw, 3), dtype=np.uint8)
    action = np.empty(count, dtype=np.int64)
    next_obs = np.empty_like(obs)
    state_idx = np.empty(count, dtype=np.int64)
    next_state_idx = np.empty(count, dtype=np.int64)
    ep_id = np.empty(count, dtype=np.int64)

    stored = 0
    episode = 0
    while stored < count:
        state, o = gw.reset(env_id, layout_seed, T_max, scale)
        o8 = _to_uint8(o)
        done = False
        while not done and stored < count:
            a = int(rng.integers(n_actions))
            nxt, no, _, done = gw.step(state, a, rng, scale)
            no8 = _to_uint8(no)
            obs[stored] = o8
            action[stored] = a
            next_obs[stored] = no8
            state_idx[stored] = index_of[state.config_key()]
            next_state_idx[stored] = index_of[nxt.config_key()]
            ep_id[stored] = episode
            stored += 1
            state, o8 = nxt, no8
        episode += 1

    meta = {"env_id": env_id, "layout_seed": layout_seed, "scale": scale,
            "T_max": T_max, "seed": seed, "policy": "random_walk"}
    return TransitionDataset(obs, action, next_obs, state_idx, next_state_idx, ep_id, meta)
