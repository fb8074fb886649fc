"""Mean episode return of scripted policies under a candidate reward config.
Compares what the trainer is asked to maximize against what scores well on
the evaluation metric."""

import os
import sys
from dataclasses import replace

sys.path.insert(0, os.path.join(os.path.dirname(__file__), os.pardir, "src"))

import numpy as np

from apl.env import ActivePoseEnv, RewardConfig, score_attention_fn
from apl.harness import ExperimentConfig, build_world, make_contexts, make_policy
from probe_attend_policy import AttendApproachPolicy
from probe_attend_vis_policy import AttendVisibilityPolicy


def episode_return(policy, ctx, cfg, seed):
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, seed, ctx.scene.seed)))
    env = ActivePoseEnv(ctx, score_attention_fn, cfg.noise, cfg.reward,
                        cfg.horizon, rng, start_view=0)
    env.reset()
    total = 0.0
    done = False
    while not done:
        res = env.step(policy.action(env, rng))
        total += res.reward.r_total
        done = res.done
    return total


def main():
    alpha, beta = float(sys.argv[1]), float(sys.argv[2])
    cfg = replace(ExperimentConfig(), reward=RewardConfig(alpha=alpha, beta=beta))
    world = build_world(cfg)
    ctxs = make_contexts(cfg, "eval", world=world)
    pols = [("random", make_policy("random")),
            ("unidirectional", make_policy("unidirectional")),
            ("max-distance", make_policy("max-distance")),
            ("entropy", make_policy("entropy")),
            ("attend-approach", AttendApproachPolicy()),
            ("attend-visibility", AttendVisibilityPolicy()),
            ]
    for name, pol in pols:
        rets = [episode_return(pol, c, cfg, s) for s in (0, 1) for c in ctxs]
        print(f"{name:18s} mean_return={np.mean(rets):+.4f}", flush=True)


if __name__ == "__main__":
    main()
