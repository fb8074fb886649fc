"""Entropy-regularization calibration: keep the policy explorative and
evaluate the sampled (stochastic) policy on the test scenes."""

import os
import sys
import time
from dataclasses import replace

sys.path.insert(0, os.path.join(os.path.dirname(__file__), os.pardir, "src"))

from apl.env import RewardConfig
from apl.harness import (ExperimentConfig, LearnedPolicy, build_world,
                         episode_eval, make_contexts, train_policy)


class SampledPolicy(LearnedPolicy):
    kind = "learned-sampled"

    def action(self, env, rng):
        action, _, _ = self.ac.act(env.state, rng=rng)
        return action


def main():
    steps = int(sys.argv[1])
    lr = float(sys.argv[2])
    ent = float(sys.argv[3])
    alpha = float(sys.argv[4])
    beta = float(sys.argv[5])
    out = sys.argv[6] if len(sys.argv) > 6 else None

    base = ExperimentConfig()
    cfg = replace(base,
                  reward=RewardConfig(alpha=alpha, beta=beta),
                  train=replace(base.train, total_steps=steps, lr=lr,
                                entropy_coef=ent))
    world = build_world(cfg)
    train_ctxs = make_contexts(cfg, "train", world=world)
    eval_ctxs = make_contexts(cfg, "eval", world=world)
    print(f"== lr={lr} ent={ent} alpha={alpha} beta={beta} steps={steps}",
          flush=True)
    t0 = time.time()

    def progress(row):
        if "eval_e_add_mm" in row or row["step"] % 12800 < 640:
            print(row, flush=True)

    ac, _ = train_policy(cfg, 0, ctxs=train_ctxs, eval_ctxs=train_ctxs[:10],
                         progress=progress)
    print(f"trained in {time.time()-t0:.0f}s", flush=True)
    if out:
        ac.save(out, steps)
    for name, pol in (("mean", LearnedPolicy(ac)), ("sampled", SampledPolicy(ac))):
        rec = episode_eval(pol, eval_ctxs, cfg, 0)
        print(f"{name}(test): e_add={rec.mean_e_add_mm:.3f} "
              f"det={rec.detection_rate:.4f} dist={rec.mean_distance_mm:.1f}",
              flush=True)


if __name__ == "__main__":
    main()
