"""Ceiling probe 2: move to the unvisited view with the highest visibility of
the attended object (reads the hidden gt index + visibility table, so this is
an oracle upper bound on 'improve the attended object' behavior)."""

import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), os.pardir, "src"))

import numpy as np

from apl.harness import (ExperimentConfig, build_world, episode_eval,
                         make_contexts)


class AttendVisibilityPolicy:
    kind = "attend-visibility"

    def action(self, env, rng):
        grid = env.ctx.grid
        if env.attention is None:
            i = int(rng.integers(len(grid)))
        else:
            g = env.estimate.selected[env.attention.m].hypothesis.object_gt_index
            vis = env.ctx.visibility_table[:, g].copy()
            vis[env.visited] = -1.0
            i = int(np.argmax(vis))
        return np.array([grid.azimuths[i], grid.elevations[i]])


def main():
    cfg = ExperimentConfig()
    world = build_world(cfg)
    ctxs = make_contexts(cfg, "eval", world=world)
    for seed in (0, 1, 2):
        rec = episode_eval(AttendVisibilityPolicy(), ctxs, cfg, seed)
        print(f"seed {seed}: e_add={rec.mean_e_add_mm:.3f} "
              f"det={rec.detection_rate:.4f} dist={rec.mean_distance_mm:.1f}",
              flush=True)


if __name__ == "__main__":
    main()
