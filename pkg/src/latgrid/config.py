"""Experiment configuration: profile defaults, schema validation, overrides.

A config is a nested dict resolved from (kind, env, variant, profile) plus
explicit overrides; unknown keys are rejected. Every run persists its fully
resolved config next to its results so it can be replayed. Environment
variables with the `LG_` prefix override single keys, e.g.
`LG_PPO__CLIP_EPS=0.1` or `LG_AE__STEPS=500` (section__key, JSON-parsed
values).
"""
from __future__ import annotations

import copy
import json
import os
from pathlib import Path

ENV_PREFIX = "LG_"
PROFILES = ("full", "desk")
KINDS = ("world_model_baseline", "capacity_sweep", "quantized_vs_onehot",
         "episodic_rl", "continual_rl", "sparsity_sweep", "stochastic_check")
VARIANTS = ("vanilla", "fta", "vqvae", "end_to_end")


class ConfigError(ValueError):
    pass


# Latent-size hyperparameters: full-scale values from the architecture
# appendix, scaled down proportionally in the desk profile.
_AE_TABLE = {
    "full": {
        "vanilla": {"empty": {"pool_k": 8, "latent_dim": 64},
                    "crossing": {"pool_k": 8, "latent_dim": 256},
                    "door_key": {"pool_k": 8, "latent_dim": 1024}},
        "fta": {"empty": {"pool_k": 8, "latent_dim": 64, "fta_tiles": 16},
                "crossing": {"pool_k": 8, "latent_dim": 64, "fta_tiles": 16},
                "door_key": {"pool_k": 8, "latent_dim": 64, "fta_tiles": 16,
                             "fta_lower": -4.0, "fta_upper": 4.0}},
        "vqvae": {"empty": {"pool_k": 6, "codebook_size": 1024},
                  "crossing": {"pool_k": 9, "codebook_size": 1024},
                  "door_key": {"pool_k": 6, "codebook_size": 1024}},
    },
    "desk": {
        "vanilla": {"empty": {"pool_k": 4, "latent_dim": 16},
                    "crossing": {"pool_k": 4, "latent_dim": 32},
                    "door_key": {"pool_k": 4, "latent_dim": 64}},
        "fta": {"empty": {"pool_k": 4, "latent_dim": 16, "fta_tiles": 8},
                "crossing": {"pool_k": 4, "latent_dim": 16, "fta_tiles": 8},
                "door_key": {"pool_k": 4, "latent_dim": 16, "fta_tiles": 8,
                             "fta_lower": -4.0, "fta_upper": 4.0}},
        "vqvae": {"empty": {"pool_k": 3, "codebook_size": 32},
                  "crossing": {"pool_k": 3, "codebook_size": 32},
                  "door_key": {"pool_k": 3, "codebook_size": 32}},
    },
}

# RL-time latent sizes (smaller than the world-model ones at full scale).
_AE_RL_TABLE = {
    "full": {"vanilla": {"pool_k": 8, "latent_dim": 256},
             "end_to_end": {"latent_dim": 256},
             "fta": {"pool_k": 8, "latent_dim": 256, "fta_tiles": 8},
             "vqvae": {"pool_k": 6, "codebook_size": 256}},
    "desk": {"vanilla": {"pool_k": 4, "latent_dim": 32},
             "end_to_end": {"latent_dim": 32},
             "fta": {"pool_k": 4, "latent_dim": 32, "fta_tiles": 8},
             "vqvae": {"pool_k": 3, "codebook_size": 32}},
}

_PROFILE_DEFAULTS = {
    "full": {
        "scale": "full",
        "dataset": {"count": 1_000_000, "T_max": 10_000},
        "eval": {"episodes": 10_000, "steps": 30, "kl_eps": 1e-6},
        "seeds": [0, 1, 2, 3, 4, 5, 6, 7, 8, 9],
        "ae": {"steps": 30_000, "batch_size": 64, "lr": 2e-4, "warmup_frac": 0.4},
        "wm": {"steps": 20_000, "batch_size": 32, "horizon": 4, "lr": 2e-4,
               "hidden_layers": 3, "outcome_bins": 32},
        "capacity_widths": [8, 16, 32, 64, 128, 256],
        "sparsity_levels": [2, 8, 32],
        "rl": {"total_steps": 1_000_000, "ppo_start": 100_000},
    },
    "desk": {
        "scale": "desk",
        "dataset": {"count": 100_000, "T_max": 10_000},
        "eval": {"episodes": 2_000, "steps": 30, "kl_eps": 1e-6},
        "seeds": [0, 1, 2, 3, 4],
        "ae": {"steps": 9_000, "batch_size": 64, "lr": 2e-4, "warmup_frac": 0.4},
        "wm": {"steps": 4_000, "batch_size": 32, "horizon": 4, "lr": 2e-4,
               "hidden_layers": 3, "outcome_bins": 32},
        "capacity_widths": [8, 16, 32, 64],
        "sparsity_levels": [2, 8, 32],
        "rl": {"total_steps": 61_440, "ppo_start": 10_240},
    },
}

_ENV_DEFAULTS = {
    "empty": {"wm_hidden": 64, "rl_T_max": 400, "change_period": None},
    "crossing": {"wm_hidden": 32, "rl_T_max": 400, "change_period": 40_000},
    "door_key": {"wm_hidden": 64, "rl_T_max": 1_000, "change_period": 100_000},
}

_DESK_CHANGE_PERIOD = {"crossing": 5_120, "door_key": 10_240}


def resolve_config(kind: str, env_id: str, variant: str = "vqvae",
                   profile: str = "desk", overrides: dict | None = None,
                   seeds=None, out_dir: str = "runs") -> dict:
    """Full defaults for an experiment, with overrides merged and validated."""
    if kind not in KINDS:
        raise ConfigError(f"unknown experiment kind {kind!r}; expected one of {KINDS}")
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}")
    if env_id not in _ENV_DEFAULTS:
        raise ConfigError(f"unknown env {env_id!r}")
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}")
    base = copy.deepcopy(_PROFILE_DEFAULTS[profile])
    env_row = _ENV_DEFAULTS[env_id]
    change = env_row["change_period"]
    if profile == "desk" and env_id in _DESK_CHANGE_PERIOD:
        change = _DESK_CHANGE_PERIOD[env_id]
    cfg = {
        "kind": kind,
        "env_id": env_id,
        "variant": variant,
        "profile": profile,
        "layout_seed": 0,
        "out_dir": out_dir,
        **base,
        "wm": {**base["wm"], "hidden_width": env_row["wm_hidden"]},
        "ae_arch": copy.deepcopy(
            _AE_TABLE[profile].get(variant, _AE_TABLE[profile]["vanilla"]).get(env_id, {})),
        "ae_rl_arch": copy.deepcopy(_AE_RL_TABLE[profile].get(variant, {})),
        "rl": {**base["rl"], "T_max": env_row["rl_T_max"], "change_period": change,
               "horizon": 256, "ppo_epochs": 10, "minibatch_size": 64,
               "clip_eps": 0.2, "gamma": 0.99, "gae_lambda": 0.95, "ppo_lr": 3e-4,
               "ae_epochs": 8, "entropy_coef": 0.0},
    }
    if seeds is not None:
        cfg["seeds"] = list(seeds)
    merged = _merge_validated(cfg, overrides or {}, path="")
    return _apply_env_overrides(merged)


def _merge_validated(base: dict, overrides: dict, path: str) -> dict:
    out = copy.deepcopy(base)
    for key, value in overrides.items():
        if key not in out:
            raise ConfigError(f"unknown config key {path + key!r}")
        if isinstance(out[key], dict) and isinstance(value, dict):
            out[key] = _merge_validated(out[key], value, path + key + ".")
        else:
            out[key] = value
    return out


def _apply_env_overrides(cfg: dict) -> dict:
    for name, raw in os.environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        keys = [k.lower() for k in name[len(ENV_PREFIX):].split("__")]
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = cfg
        for k in keys[:-1]:
            if k not in node or not isinstance(node[k], dict):
                raise ConfigError(f"env override {name}: no section {k!r}")
            node = node[k]
        if keys[-1] not in node:
            raise ConfigError(f"env override {name}: unknown key {keys[-1]!r}")
        node[keys[-1]] = value
    return cfg


def load_config_file(path) -> dict:
    """Read a JSON config file holding {kind, env_id, ...} + overrides."""
    spec = json.loads(Path(path).read_text())
    kind = spec.pop("kind", None)
    env_id = spec.pop("env_id", None)
    if kind is None or env_id is None:
        raise ConfigError("config file must set 'kind' and 'env_id'")
    variant = spec.pop("variant", "vqvae")
    profile = spec.pop("profile", "desk")
    seeds = spec.pop("seeds", None)
    out_dir = spec.pop("out_dir", "runs")
    return resolve_config(kind, env_id, variant, profile, overrides=spec,
                          seeds=seeds, out_dir=out_dir)


def save_resolved(cfg: dict, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(cfg, indent=1, sort_keys=True))
