"""Scripted ceiling probe: move to the grid view nearest the attended
object's estimated position each step. This is the behavior the reward's
approach term encourages; its eval metrics bound what the trained policy
can reach."""

import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), os.pardir, "src"))

import numpy as np

from apl.harness import (ExperimentConfig, build_world, episode_eval,
                         make_contexts)


class AttendApproachPolicy:
    kind = "attend-approach"

    def action(self, env, rng):
        grid = env.ctx.grid
        if env.attention is None:
            i = int(rng.integers(len(grid)))
        else:
            obj = env.estimate.selected[env.attention.m].world_pose.t
            i = int(np.argmin([np.linalg.norm(grid.position(j) - obj)
                               for j in range(len(grid))]))
        return np.array([grid.azimuths[i], grid.elevations[i]])


def main():
    cfg = ExperimentConfig()
    world = build_world(cfg)
    ctxs = make_contexts(cfg, "eval", world=world)
    for seed in (0, 1, 2):
        rec = episode_eval(AttendApproachPolicy(), ctxs, cfg, seed)
        print(f"seed {seed}: e_add={rec.mean_e_add_mm:.3f} "
              f"det={rec.detection_rate:.4f} dist={rec.mean_distance_mm:.1f}",
              flush=True)


if __name__ == "__main__":
    main()
