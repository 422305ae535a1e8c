"""Command-line interface: data collection, training, evaluation, sweeps."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np


def _add_common(parser):
    parser.add_argument("--config", type=str, default=None, help="JSON config file")
    parser.add_argument("--seed", type=int, default=None, help="single seed override")
    parser.add_argument("--out", type=str, default="runs", help="output directory")
    parser.add_argument("--profile", choices=["full", "desk"], default="desk")
    parser.add_argument("--env", dest="env_id", default="crossing",
                        choices=["empty", "crossing", "door_key"])
    parser.add_argument("--variant", default="vqvae",
                        choices=["vanilla", "fta", "vqvae", "end_to_end"])


def _resolve(args, kind):
    from .config import load_config_file, resolve_config

    if args.config:
        cfg = load_config_file(args.config)
    else:
        cfg = resolve_config(kind, args.env_id, args.variant, args.profile,
                             out_dir=args.out)
    cfg["out_dir"] = args.out
    if args.seed is not None:
        cfg["seeds"] = [args.seed]
    return cfg


def cmd_collect_data(args):
    from .dataset import collect_dataset

    cfg = _resolve(args, "world_model_baseline")
    seed = cfg["seeds"][0]
    ds = collect_dataset(cfg["env_id"], cfg["dataset"]["count"], cfg["layout_seed"],
                         cfg["dataset"]["T_max"], seed=seed, scale=cfg["scale"])
    out = Path(args.out) / f"dataset_{cfg['env_id']}_{cfg['profile']}_s{seed}"
    ds.save(out)
    print(f"wrote {len(ds)} transitions to {out}")


def cmd_train_ae(args):
    from .dataset import TransitionDataset
    from .experiments import _train_ae
    from .checkpoint import module_arrays, save_checkpoint
    from .metrics import write_csv

    cfg = _resolve(args, "world_model_baseline")
    ds = TransitionDataset.load(args.dataset)
    est = _train_ae(cfg, cfg["variant"], ds.obs, cfg["seeds"][0])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / f"ae_{cfg['variant']}.npz", module_arrays(est.net_),
                    {"variant": cfg["variant"], "params": est.get_params()})
    write_csv(out / f"ae_losses_{cfg['variant']}.csv", est.loss_history_)
    print(f"final reconstruction loss {est.final_loss():.5f}")


def cmd_train_wm(args):
    cfg = _resolve(args, "world_model_baseline")
    from .experiments import run_world_model_baseline

    out = run_world_model_baseline(cfg, log=True)
    print(f"world-model baseline written to {out}")


def cmd_eval_wm(args):
    from .evaluation import StateManifest, ground_truth_series, kl_per_step, uniform_baseline

    cfg = _resolve(args, "world_model_baseline")
    manifest = StateManifest(cfg["env_id"], cfg["layout_seed"], cfg["scale"])
    rng = np.random.default_rng(cfg["seeds"][0])
    gt = ground_truth_series(manifest, cfg["eval"]["episodes"], cfg["eval"]["steps"], rng)
    uni = uniform_baseline(manifest, cfg["eval"]["steps"])
    kl = kl_per_step(gt, uni, cfg["eval"]["kl_eps"])
    print(json.dumps({"uniform_mean_kl": float(kl.mean()),
                      "states": len(manifest)}, indent=1))


def cmd_train_rl(args):
    from .config import resolve_config
    from .experiments import _rl_config
    from .metrics import write_csv
    from .rl_loop import per_layout_rewards, rl_training_loop

    kind = "continual_rl" if args.continual else "episodic_rl"
    cfg = _resolve(args, kind)
    if args.ppo_start is not None:
        cfg["rl"]["ppo_start"] = args.ppo_start
    if args.change_period is not None:
        cfg["rl"]["change_period"] = args.change_period
    run = rl_training_loop(_rl_config(cfg, cfg["variant"], cfg["seeds"][0],
                                      continual=args.continual), log=20)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / f"rl_episodes_{cfg['variant']}.csv", run["episodes"])
    write_csv(out / f"rl_cycles_{cfg['variant']}.csv", run["cycles"])
    if args.continual:
        print(json.dumps(per_layout_rewards(run["episodes"]), indent=1))


def cmd_sweep(args):
    from .config import load_config_file
    from .experiments import sweep
    from .metrics import write_csv

    configs = [load_config_file(p) for p in args.configs]
    for cfg in configs:
        cfg["out_dir"] = args.out
    table = sweep(configs, log=True)
    write_csv(Path(args.out) / "sweep_table.csv", table)
    print(f"{len(table)} aggregated rows -> {args.out}/sweep_table.csv")


def cmd_summarize(args):
    from .experiments import summarize_runs
    from .metrics import write_csv

    table = summarize_runs(args.runs)
    write_csv(Path(args.out) / "summary_table.csv", table)
    print(json.dumps(table, indent=1))


def main(argv=None):
    parser = argparse.ArgumentParser(prog="latgrid",
                                     description="gridworld representation lab")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("collect-data", help="collect a random-walk transition dataset")
    _add_common(p)
    p.set_defaults(func=cmd_collect_data)

    p = sub.add_parser("train-ae", help="train one autoencoder variant on a dataset")
    _add_common(p)
    p.add_argument("--dataset", required=True)
    p.set_defaults(func=cmd_train_ae)

    p = sub.add_parser("train-wm", help="autoencoder + world model + evaluation pipeline")
    _add_common(p)
    p.set_defaults(func=cmd_train_wm)

    p = sub.add_parser("eval-wm", help="ground-truth vs uniform baseline diagnostics")
    _add_common(p)
    p.set_defaults(func=cmd_eval_wm)

    p = sub.add_parser("train-rl", help="run the interleaved PPO/autoencoder loop")
    _add_common(p)
    p.add_argument("--continual", action="store_true")
    p.add_argument("--ppo-start", type=int, dest="ppo_start", default=None,
                   help="delayed PPO start step (P)")
    p.add_argument("--change-period", type=int, dest="change_period", default=None,
                   help="layout randomization period (C)")
    p.set_defaults(func=cmd_train_rl)

    p = sub.add_parser("sweep", help="run several experiment configs and aggregate")
    p.add_argument("configs", nargs="+")
    p.add_argument("--out", default="runs")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("summarize", help="aggregate existing run directories")
    p.add_argument("runs", nargs="+")
    p.add_argument("--out", default="runs")
    p.set_defaults(func=cmd_summarize)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
