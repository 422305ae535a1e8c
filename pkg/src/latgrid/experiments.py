"""Config-driven experiment pipelines.

Each `run_experiment` call executes one experiment kind for every seed in the
config, writes per-seed metrics (CSV), checkpoints and the resolved config,
and aggregates a machine-readable summary (mean/median + bootstrap CIs over
seeds) into `summary.json` in the run directory.
"""
from __future__ import annotations

import json
from collections import deque
from pathlib import Path

import numpy as np
import torch

from . import gridworld as gw
from .autoencoders import make_autoencoder
from .checkpoint import module_arrays, save_checkpoint
from .config import _AE_RL_TABLE, _AE_TABLE, save_resolved
from .dataset import TransitionDataset, collect_dataset
from .evaluation import (StateManifest, codec_for, ground_truth_series, kl_per_step,
                         kl_summary, model_series, occupancy_export, series_to_csv,
                         uniform_baseline)
from .metrics import moving_average, summarize, write_csv
from .ppo import PPOConfig
from .rl_loop import RLConfig, per_layout_rewards, rl_training_loop
from .seeding import derive_seed
from .worldmodel import (ContinuousWorldModel, DiscreteWorldModel, OutcomeHeads,
                         QuantizedWorldModel)

WM_BASELINE_VARIANTS = {"empty": ["vanilla", "vqvae"],
                        "crossing": ["vanilla", "fta", "vqvae"],
                        "door_key": ["vanilla", "fta", "vqvae"]}
EPISODIC_VARIANTS = ["vanilla", "fta", "vqvae"]
CONTINUAL_VARIANTS = ["vanilla", "fta", "vqvae", "end_to_end"]
CONVERGENCE_FACTOR = 1.5


def run_dir_for(cfg: dict) -> Path:
    return Path(cfg["out_dir"]) / cfg["kind"] / cfg["env_id"]


def _train_ae(cfg, variant, dataset_obs, seed, arch_override=None):
    arch = dict(_AE_TABLE[cfg["profile"]][variant][cfg["env_id"]])
    if arch_override:
        arch.update(arch_override)
    params = dict(env_id=cfg["env_id"], scale=cfg["scale"], seed=seed,
                  steps=cfg["ae"]["steps"], batch_size=cfg["ae"]["batch_size"],
                  lr=cfg["ae"]["lr"], **arch)
    if variant == "vqvae":
        params["warmup_frac"] = cfg["ae"]["warmup_frac"]
    return make_autoencoder(variant, **params).fit(dataset_obs)


def _state_features(est, manifest, representation):
    if representation in ("vanilla", "fta"):
        return est.transform(manifest.observations)
    indices = est.transform(manifest.observations)
    if representation == "multi_one_hot":
        return indices
    if representation == "quantized":
        return est.quantized(indices)
    raise ValueError(representation)


def _build_wm(cfg, representation, est, n_actions, seed, hidden=None):
    wm_cfg = cfg["wm"]
    hidden = hidden if hidden is not None else wm_cfg["hidden_width"]
    stochastic = gw.is_stochastic(cfg["env_id"])
    common = dict(n_actions=n_actions, hidden_width=hidden,
                  hidden_layers=wm_cfg["hidden_layers"], lr=wm_cfg["lr"],
                  steps=wm_cfg["steps"], batch_size=wm_cfg["batch_size"],
                  horizon=wm_cfg["horizon"], stochastic=stochastic,
                  outcome_bins=wm_cfg["outcome_bins"], seed=seed)
    if representation in ("vanilla", "fta"):
        return ContinuousWorldModel(latent_dim=est.feature_dim, **common)
    if representation == "multi_one_hot":
        return DiscreteWorldModel(n_latents=est.n_latents,
                                  codebook_size=est.codebook_size, **common)
    if representation == "quantized":
        wm = QuantizedWorldModel(n_latents=est.n_latents,
                                 embed_dim=est.net_.embed_dim, **common)
        return wm.set_embeddings(est.embeddings_)
    raise ValueError(representation)


def _eval_wm(cfg, wm, codec, manifest, gt_series, seed, out, tag):
    rng = np.random.default_rng(derive_seed(seed, f"eval-{tag}"))
    series = model_series(wm, codec, manifest, cfg["eval"]["episodes"],
                          cfg["eval"]["steps"], rng)
    kl = kl_per_step(gt_series, series, cfg["eval"]["kl_eps"])
    series_to_csv(series, out / f"series_{tag}.csv")
    occupancy_export(series, manifest, out / f"occupancy_{tag}.json")
    summary = kl_summary(kl)
    (out / f"kl_{tag}.json").write_text(json.dumps(summary))
    return summary


def _seed_dir(cfg, seed) -> Path:
    d = run_dir_for(cfg) / f"seed_{seed}"
    d.mkdir(parents=True, exist_ok=True)
    return d


def _dataset_for(cfg, seed, out) -> TransitionDataset:
    path = out / "dataset"
    if (path / "manifest.json").exists():
        return TransitionDataset.load(path)
    ds = collect_dataset(cfg["env_id"], cfg["dataset"]["count"], cfg["layout_seed"],
                         cfg["dataset"]["T_max"], seed=derive_seed(seed, "dataset"),
                         scale=cfg["scale"])
    ds.save(path)
    return ds


def _gt_for(cfg, manifest, seed, out):
    rng = np.random.default_rng(derive_seed(seed, "eval-gt"))
    gt = ground_truth_series(manifest, cfg["eval"]["episodes"], cfg["eval"]["steps"], rng)
    series_to_csv(gt, out / "series_ground_truth.csv")
    occupancy_export(gt, manifest, out / "occupancy_ground_truth.json")
    return gt


def _representation_for(variant):
    return "multi_one_hot" if variant == "vqvae" else variant


def run_world_model_baseline(cfg, log=False):
    out_root = run_dir_for(cfg)
    variants = WM_BASELINE_VARIANTS[cfg["env_id"]]
    rows = {v: [] for v in variants}
    rows["uniform"] = []
    for seed in cfg["seeds"]:
        out = _seed_dir(cfg, seed)
        ds = _dataset_for(cfg, seed, out)
        manifest = StateManifest(cfg["env_id"], cfg["layout_seed"], cfg["scale"])
        gt = _gt_for(cfg, manifest, seed, out)
        uni = uniform_baseline(manifest, cfg["eval"]["steps"])
        rows["uniform"].append(float(np.mean(kl_per_step(gt, uni, cfg["eval"]["kl_eps"]))))
        for variant in variants:
            rep = _representation_for(variant)
            est = _train_ae(cfg, variant, ds.obs, seed)
            write_csv(out / f"ae_losses_{variant}.csv", est.loss_history_)
            feats = _state_features(est, manifest, rep)
            wm = _build_wm(cfg, rep, est, gw.action_count(cfg["env_id"]), seed)
            wm.fit(ds, feats)
            save_checkpoint(out / f"wm_{variant}.npz", module_arrays(wm.net_),
                            {"variant": variant, "kind": cfg["kind"], "seed": seed})
            summary = _eval_wm(cfg, wm, codec_for(est, rep), manifest, gt, seed, out, variant)
            rows[variant].append(summary["mean_kl"])
            if log:
                print(f"[seed {seed}] {variant}: mean KL {summary['mean_kl']:.4f}", flush=True)
    summary = {"kind": cfg["kind"], "env_id": cfg["env_id"],
               "rows": [{"variant": v, "metric": "mean_kl", **summarize(vals)}
                        for v, vals in rows.items()]}
    (out_root / "summary.json").write_text(json.dumps(summary, indent=1))
    return out_root


def run_capacity_sweep(cfg, log=False):
    out_root = run_dir_for(cfg)
    widths = cfg["capacity_widths"]
    results = {("vanilla", w): [] for w in widths}
    results.update({("vqvae", w): [] for w in widths})
    for seed in cfg["seeds"]:
        out = _seed_dir(cfg, seed)
        ds = _dataset_for(cfg, seed, out)
        manifest = StateManifest(cfg["env_id"], cfg["layout_seed"], cfg["scale"])
        gt = _gt_for(cfg, manifest, seed, out)
        for variant in ("vanilla", "vqvae"):
            rep = _representation_for(variant)
            est = _train_ae(cfg, variant, ds.obs, seed)
            feats = _state_features(est, manifest, rep)
            for width in widths:
                wm = _build_wm(cfg, rep, est, gw.action_count(cfg["env_id"]), seed,
                               hidden=width)
                wm.fit(ds, feats)
                summary = _eval_wm(cfg, wm, codec_for(est, rep), manifest, gt, seed,
                                   out, f"{variant}_w{width}")
                results[(variant, width)].append(summary["mean_kl"])
                if log:
                    print(f"[seed {seed}] {variant} width {width}: "
                          f"KL {summary['mean_kl']:.4f}", flush=True)
    summary = {"kind": cfg["kind"], "env_id": cfg["env_id"],
               "rows": [{"variant": v, "width": w, "metric": "mean_kl",
                         **summarize(vals, stat=np.median)}
                        for (v, w), vals in results.items()]}
    (out_root / "summary.json").write_text(json.dumps(summary, indent=1))
    return out_root


def run_quantized_vs_onehot(cfg, log=False):
    """Same VQ-VAE, two representations of its latents, matched world models."""
    out_root = run_dir_for(cfg)
    results = {"multi_one_hot": [], "quantized": []}
    for seed in cfg["seeds"]:
        out = _seed_dir(cfg, seed)
        ds = _dataset_for(cfg, seed, out)
        manifest = StateManifest(cfg["env_id"], cfg["layout_seed"], cfg["scale"])
        gt = _gt_for(cfg, manifest, seed, out)
        est = _train_ae(cfg, "vqvae", ds.obs, seed, arch_override={"codebook_size": 64})
        for rep in ("multi_one_hot", "quantized"):
            feats = _state_features(est, manifest, rep)
            wm = _build_wm(cfg, rep, est, gw.action_count(cfg["env_id"]), seed)
            wm.fit(ds, feats)
            summary = _eval_wm(cfg, wm, codec_for(est, rep), manifest, gt, seed, out, rep)
            results[rep].append(summary["mean_kl"])
            if log:
                print(f"[seed {seed}] {rep}: KL {summary['mean_kl']:.4f}", flush=True)
    summary = {"kind": cfg["kind"], "env_id": cfg["env_id"],
               "rows": [{"representation": r, "metric": "mean_kl", **summarize(vals)}
                        for r, vals in results.items()]}
    (out_root / "summary.json").write_text(json.dumps(summary, indent=1))
    return out_root


def shortest_path_length(env_id, layout_seed=0, layout=None) -> int:
    """BFS step count (turns included) from the start pose to the goal."""
    layout = layout or gw.make_layout(env_id, layout_seed)
    start = gw.initial_state(layout, T_max=10_000)
    frontier = deque([(start, 0)])
    seen = {start.config_key()}
    while frontier:
        st, depth = frontier.popleft()
        if st.agent_pos == layout.goal_cell:
            return depth
        for a in gw.actions_for(env_id):
            ns = gw.apply_action(st, a)
            key = ns.config_key()
            if key not in seen:
                seen.add(key)
                frontier.append((ns, depth + 1))
    raise RuntimeError("layout is unsolvable")


def _rl_config(cfg, variant, seed, continual):
    rl = cfg["rl"]
    ae_params = dict(_AE_RL_TABLE[cfg["profile"]].get(variant, {}))
    if variant == "vqvae":
        ae_params.pop("warmup_frac", None)
    return RLConfig(
        variant=variant, env_id=cfg["env_id"], scale=cfg["scale"],
        layout_seed=cfg["layout_seed"], T_max=rl["T_max"],
        total_steps=rl["total_steps"],
        ppo=PPOConfig(clip_eps=rl["clip_eps"], epochs=rl["ppo_epochs"],
                      minibatch_size=rl["minibatch_size"], gamma=rl["gamma"],
                      gae_lambda=rl["gae_lambda"], lr=rl["ppo_lr"],
                      horizon=rl["horizon"], entropy_coef=rl["entropy_coef"]),
        ppo_start=rl["ppo_start"], continual=continual,
        change_period=rl["change_period"] or 10**9,
        ae_params=ae_params, ae_epochs=rl["ae_epochs"], seed=seed)


def ppo_updates_to_convergence(episodes, ppo_start, horizon, target_len, window=10):
    """PPO phases elapsed (after the delayed start) until the moving-average
    episode length first drops below `target_len`; None if never."""
    post = [(e["global_step"], e["episode_length"]) for e in episodes
            if e["global_step"] >= ppo_start]
    if len(post) < window:
        return None
    lens = moving_average([l for _, l in post], window)
    steps = [s for s, _ in post][window - 1:]
    below = np.flatnonzero(lens < target_len)
    if len(below) == 0:
        return None
    return max(0, (steps[below[0]] - ppo_start) // horizon) + 1


def run_episodic_rl(cfg, log=False):
    out_root = run_dir_for(cfg)
    variants = cfg.get("rl_variants") or EPISODIC_VARIANTS
    target = CONVERGENCE_FACTOR * shortest_path_length(cfg["env_id"], cfg["layout_seed"])
    results = {v: [] for v in variants}
    for seed in cfg["seeds"]:
        out = _seed_dir(cfg, seed)
        for variant in variants:
            run = rl_training_loop(_rl_config(cfg, variant, seed, continual=False),
                                   log=50 if log else None)
            write_csv(out / f"rl_episodes_{variant}.csv", run["episodes"])
            write_csv(out / f"rl_cycles_{variant}.csv", run["cycles"])
            updates = ppo_updates_to_convergence(
                run["episodes"], cfg["rl"]["ppo_start"], cfg["rl"]["horizon"], target)
            results[variant].append(updates if updates is not None else np.nan)
            if log:
                print(f"[seed {seed}] {variant}: updates-to-converge {updates}", flush=True)
    summary = {"kind": cfg["kind"], "env_id": cfg["env_id"], "target_len": target,
               "rows": [{"variant": v, "metric": "ppo_updates_to_convergence",
                         **summarize(np.nan_to_num(vals, nan=float(cfg["rl"]["total_steps"])))}
                        for v, vals in results.items()]}
    (out_root / "summary.json").write_text(json.dumps(summary, indent=1))
    return out_root


def run_continual_rl(cfg, log=False):
    out_root = run_dir_for(cfg)
    variants = cfg.get("rl_variants") or CONTINUAL_VARIANTS
    rewards = {v: [] for v in variants}
    for seed in cfg["seeds"]:
        out = _seed_dir(cfg, seed)
        for variant in variants:
            run = rl_training_loop(_rl_config(cfg, variant, seed, continual=True),
                                   log=50 if log else None)
            write_csv(out / f"rl_episodes_{variant}.csv", run["episodes"])
            write_csv(out / f"rl_cycles_{variant}.csv", run["cycles"])
            per_layout = per_layout_rewards(run["episodes"])
            (out / f"per_layout_{variant}.json").write_text(json.dumps(per_layout))
            mean_reward = float(np.mean(list(per_layout.values()))) if per_layout else 0.0
            rewards[variant].append(mean_reward)
            if log:
                print(f"[seed {seed}] {variant}: per-layout reward {mean_reward:.2f}",
                      flush=True)
    summary = {"kind": cfg["kind"], "env_id": cfg["env_id"],
               "rows": [{"variant": v, "metric": "per_layout_reward", **summarize(vals)}
                        for v, vals in rewards.items()]}
    (out_root / "summary.json").write_text(json.dumps(summary, indent=1))
    return out_root


def sparsity_arch(level: int, budget: int = 288):
    """(codebook_size, pool_k) with codebook_size * pool_k^2 held at `budget`."""
    n_latents = budget // level
    k = int(round(np.sqrt(n_latents)))
    if k * k * level != budget:
        raise ValueError(f"sparsity level {level} does not divide the budget into a square")
    return level, k


def count_rl_parameters(run) -> int:
    total = sum(p.numel() for p in run["nets"].parameters())
    if run["online_ae"] is not None:
        total += sum(p.numel() for p in run["online_ae"].net.parameters())
    return total


def run_sparsity_sweep(cfg, log=False):
    out_root = run_dir_for(cfg)
    levels = cfg["sparsity_levels"]
    lengths = {lv: [] for lv in levels}
    params = {}
    for seed in cfg["seeds"]:
        out = _seed_dir(cfg, seed)
        for level in levels:
            codebook, k = sparsity_arch(level)
            rl_cfg = _rl_config(cfg, "vqvae", seed, continual=True)
            rl_cfg.ae_params = {"pool_k": k, "codebook_size": codebook, "embed_dim": 64}
            run = rl_training_loop(rl_cfg, log=50 if log else None)
            write_csv(out / f"rl_episodes_sparsity{level}.csv", run["episodes"])
            params[level] = count_rl_parameters(run)
            post = [e["episode_length"] for e in run["episodes"]
                    if e["global_step"] >= cfg["rl"]["ppo_start"]]
            lengths[level].append(float(np.mean(post)) if post else float("nan"))
            if log:
                print(f"[seed {seed}] sparsity {level}: mean ep len "
                      f"{lengths[level][-1]:.1f} params {params[level]}", flush=True)
    summary = {"kind": cfg["kind"], "env_id": cfg["env_id"],
               "parameter_counts": params,
               "rows": [{"sparsity_level": lv, "metric": "mean_episode_length",
                         **summarize(vals)} for lv, vals in lengths.items()]}
    (out_root / "summary.json").write_text(json.dumps(summary, indent=1))
    return out_root


def synthetic_two_outcome_marginal(seed=0, steps=3000, episodes=4000):
    """Train outcome heads on a 50/50 two-successor chain; return the
    prediction head's bin marginal measured by sampling."""
    torch.manual_seed(derive_seed(seed, "stochastic-check"))
    rng = np.random.default_rng(derive_seed(seed, "stochastic-data"))
    dim, n_actions = 4, 2
    z0 = np.zeros(dim, dtype=np.float32)
    succ = np.stack([np.ones(dim), -np.ones(dim)]).astype(np.float32)
    heads = OutcomeHeads(dim, n_actions, bins=32)
    wm = torch.nn.Linear(dim + n_actions + 32, dim)
    opt = torch.optim.Adam(list(heads.parameters()) + list(wm.parameters()), lr=2e-4)
    act_oh = torch.nn.functional.one_hot(torch.zeros(64, dtype=torch.int64), n_actions).float()
    for _ in range(steps):
        nxt = torch.as_tensor(succ[rng.integers(2, size=64)])
        z = torch.as_tensor(np.tile(z0, (64, 1)))
        outcome, disc_logits = heads.discretize(z, act_oh, nxt)
        pred = wm(torch.cat([z, act_oh, outcome], dim=-1))
        wm_loss = (pred - nxt).pow(2).mean()
        pred_loss = torch.nn.functional.cross_entropy(
            heads.predict_logits(z, act_oh), disc_logits.argmax(-1).detach())
        opt.zero_grad()
        (wm_loss + pred_loss).backward()
        opt.step()
    with torch.no_grad():
        z = torch.as_tensor(np.tile(z0, (episodes, 1)))
        a = torch.nn.functional.one_hot(torch.zeros(episodes, dtype=torch.int64),
                                        n_actions).float()
        outcome = heads.sample_outcome(z, a, np.random.default_rng(derive_seed(seed, "mc")))
        bins = outcome.argmax(-1).numpy()
    counts = np.bincount(bins, minlength=32) / episodes
    used = np.sort(counts)[::-1][:2]
    return {"top_two_marginals": used.tolist(), "n_used_bins": int((counts > 0.01).sum())}


_KIND_RUNNERS = {
    "world_model_baseline": run_world_model_baseline,
    "capacity_sweep": run_capacity_sweep,
    "quantized_vs_onehot": run_quantized_vs_onehot,
    "episodic_rl": run_episodic_rl,
    "continual_rl": run_continual_rl,
    "sparsity_sweep": run_sparsity_sweep,
}


def run_experiment(cfg: dict, log=False) -> Path:
    out_root = run_dir_for(cfg)
    out_root.mkdir(parents=True, exist_ok=True)
    save_resolved(cfg, out_root / "resolved_config.json")
    if cfg["kind"] == "stochastic_check":
        result = synthetic_two_outcome_marginal(cfg["seeds"][0])
        (out_root / "summary.json").write_text(json.dumps(
            {"kind": cfg["kind"], **result}, indent=1))
        return out_root
    try:
        return _KIND_RUNNERS[cfg["kind"]](cfg, log=log)
    except Exception:
        (out_root / "FAILED").write_text("run failed; partial artifacts preserved")
        raise


def sweep(configs, log=False):
    """Run several configs sequentially and aggregate their summaries."""
    if not configs:
        raise ValueError("empty config list")
    table = []
    for cfg in configs:
        try:
            out = run_experiment(cfg, log=log)
            summary = json.loads((out / "summary.json").read_text())
            for row in summary.get("rows", []):
                table.append({"kind": cfg["kind"], "env_id": cfg["env_id"], **row})
        except Exception as exc:  # noqa: BLE001 - partial failures recorded
            table.append({"kind": cfg["kind"], "env_id": cfg["env_id"],
                          "error": str(exc)})
    return table


def summarize_runs(run_dirs) -> list:
    table = []
    for d in run_dirs:
        summary_path = Path(d) / "summary.json"
        if not summary_path.exists():
            table.append({"run": str(d), "error": "no summary.json"})
            continue
        summary = json.loads(summary_path.read_text())
        for row in summary.get("rows", []):
            table.append({"kind": summary.get("kind"), "env_id": summary.get("env_id"),
                          **row})
    return table
