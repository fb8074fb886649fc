"""Baseline metrics on the shared test scenes (one line per policy/seed)."""

import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), os.pardir, "src"))

from apl.harness import ExperimentConfig, build_world, episode_eval, make_contexts, make_policy


def main():
    cfg = ExperimentConfig()
    world = build_world(cfg)
    ctxs = make_contexts(cfg, "eval", world=world)
    for name in ("random", "unidirectional", "max-distance", "entropy"):
        for seed in (0, 1, 2):
            rec = episode_eval(make_policy(name), ctxs, cfg, seed)
            print(f"{name:16s} seed {seed}: e_add={rec.mean_e_add_mm:.3f} "
                  f"det={rec.detection_rate:.4f} dist={rec.mean_distance_mm:.1f}",
                  flush=True)


if __name__ == "__main__":
    main()
