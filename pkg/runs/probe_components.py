"""Per-policy sums of the three raw reward components (config-independent for
scripted policies): lets us evaluate the return ordering under any (alpha,
beta) analytically."""

import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), os.pardir, "src"))

import numpy as np

from apl.env import ActivePoseEnv, RewardConfig, score_attention_fn
from apl.harness import ExperimentConfig, build_world, make_contexts, make_policy
from probe_attend_policy import AttendApproachPolicy
from probe_attend_vis_policy import AttendVisibilityPolicy


def episode_components(policy, ctx, cfg, seed):
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, seed, ctx.scene.seed)))
    env = ActivePoseEnv(ctx, score_attention_fn, cfg.noise, cfg.reward,
                        cfg.horizon, rng, start_view=0)
    env.reset()
    e = d = m = 0.0
    done = False
    while not done:
        res = env.step(policy.action(env, rng))
        e += res.reward.r_eadd
        d += res.reward.r_dist
        m += res.reward.r_motion
        done = res.done
    return e, d, m


def main():
    cfg = ExperimentConfig()
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
        vals = np.array([episode_components(pol, c, cfg, s)
                         for s in (0, 1) for c in ctxs])
        e, d, m = vals.mean(axis=0)
        print(f"{name:18s} E={e:+.4f} D={d:+.4f} M={m:+.4f}", flush=True)


if __name__ == "__main__":
    main()
