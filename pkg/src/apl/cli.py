"""Command-line entry point: train, eval, sweep and render-debug."""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

from . import harness
from .harness import ConfigError, MissingArtifact


def _progress(row):
    msg = ", ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}"
                    for k, v in row.items())
    print(f"[train] {msg}", flush=True)


def cmd_train(args):
    cfg = harness.load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.seed
    out = args.out or f"runs/{cfg.name}"
    os.makedirs(out, exist_ok=True)
    world = harness.build_world(cfg)
    ctxs = harness.make_contexts(cfg, "train", world=world)
    t0 = time.time()
    ac, curve = harness.train_policy(cfg, seed, attention_mode=args.attention_mode,
                                     ctxs=ctxs, progress=_progress if args.verbose else None)
    ckpt = os.path.join(out, f"checkpoint_seed{seed}.bin")
    ac.save(ckpt, cfg.train.total_steps)
    harness.write_curve_csv(curve, os.path.join(out, f"curve_seed{seed}.csv"))
    print(f"trained {cfg.train.total_steps} steps in {time.time() - t0:.0f}s -> {ckpt}")
    return 0


def cmd_eval(args):
    cfg = harness.load_config(args.config)
    if args.episodes is not None:
        from dataclasses import replace
        cfg = replace(cfg, episodes_per_scene=args.episodes)
    seed = args.seed if args.seed is not None else cfg.seed
    out = args.out or f"runs/{cfg.name}"
    os.makedirs(out, exist_ok=True)
    world = harness.build_world(cfg)
    ctxs = harness.make_contexts(cfg, "eval", world=world)
    policy = harness.make_policy(args.policy, args.checkpoint)
    log_path = os.path.join(out, f"episodes_{os.path.basename(str(args.policy))}_seed{seed}.jsonl")
    tmp = log_path + ".tmp"
    with open(tmp, "w") as log_fp:
        rec = harness.episode_eval(policy, ctxs, cfg, seed, log_fp=log_fp)
    os.replace(tmp, log_path)
    harness.write_metrics_csv([rec], os.path.join(
        out, f"metrics_{os.path.basename(str(args.policy))}_seed{seed}.csv"))
    print(json.dumps({"policy": rec.policy, "seed": rec.seed,
                      "distance_mm": round(rec.mean_distance_mm, 3),
                      "e_add_mm": round(rec.mean_e_add_mm, 3),
                      "detection_rate": round(rec.detection_rate, 4)}))
    return 0


def cmd_sweep(args):
    cfg = harness.load_config(args.config)
    out = args.out or f"runs/{cfg.name}"
    values = [int(v) if args.param == "T" else float(v) for v in args.values]
    seeds = args.seeds or [cfg.seed]
    rows = harness.sweep(cfg, args.param, values, seeds, out,
                         policy_name=args.policy, checkpoint=args.checkpoint,
                         progress=_progress if args.verbose else None)
    print(f"wrote {len(rows)} rows to {os.path.join(out, f'sweep_{args.param}.csv')}")
    return 0


def cmd_render_debug(args):
    from .scene import generate_scene, make_model, save_depth_pgm, render, Intrinsics

    cfg = harness.load_config(args.config) if args.config else harness.ExperimentConfig()
    model, grid, intr = harness.build_world(cfg)
    scene = generate_scene(model, cfg.instance_min, seed=args.scene_seed)
    r = render(scene, grid, args.view, intr)
    out = args.out or "runs/debug"
    os.makedirs(out, exist_ok=True)
    stem = os.path.join(out, f"scene{args.scene_seed}_view{args.view}")
    save_depth_pgm(r.depth, stem + ".pgm")
    summary = {
        "scene_seed": args.scene_seed, "view": args.view,
        "visibility": [round(float(v), 4) for v in r.visibility],
        "bboxes": [None if b is None else [round(x, 4) for x in b] for b in r.bboxes],
        "mask_pixels": [int(m.sum()) for m in r.masks],
    }
    with open(stem + ".json", "w") as f:
        json.dump(summary, f, indent=2)
    print(f"wrote {stem}.pgm and {stem}.json")
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(prog="apl",
                                     description="Active pose estimation lab")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a policy")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--attention-mode", default="learned",
                   choices=["learned", "lowest-score"])
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a policy on the held-out scenes")
    p.add_argument("--config", required=True)
    p.add_argument("--policy", required=True,
                   help="baseline name, 'learned', or a checkpoint path")
    p.add_argument("--checkpoint")
    p.add_argument("--episodes", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="alpha, motion-weight or T parameter sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--param", required=True, choices=["alpha", "motion", "T"])
    p.add_argument("--values", required=True, nargs="+")
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--policy", default="random")
    p.add_argument("--checkpoint")
    p.add_argument("--out")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("render-debug", help="dump a depth image and mask summary")
    p.add_argument("--scene-seed", type=int, required=True)
    p.add_argument("--view", type=int, required=True)
    p.add_argument("--config")
    p.add_argument("--out")
    p.set_defaults(func=cmd_render_debug)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except MissingArtifact as e:
        print(f"missing artifact: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
