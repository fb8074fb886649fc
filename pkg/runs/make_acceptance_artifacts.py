"""Produce the heavy artifacts consumed by tests/test_acceptance.py.

Everything lands in runs/acceptance/.  The script is resumable: finished
checkpoints and CSVs are skipped, so an interrupted build picks up where it
left off.  Expect a couple of hours of compute for the six full trainings.

  score_dump.csv          simulated-hypothesis (score, e_ADD) pairs
  ckpt_learned_s{N}.bin   policy trained with the learned attention module
  ckpt_lowscore_s{N}.bin  policy trained with lowest-score attention
  metrics_main.csv        policy x seed evaluation on the shared test scenes
  episodes_main.jsonl     seed-0 episode logs (also the plotting fixtures)
  sweep_motion.csv        distance vs. motion-penalty weight (trained per point)
  sweep_T.csv             detection rate vs. episode horizon
"""

import json
import os
import sys
import time
from dataclasses import replace

sys.path.insert(0, os.path.join(os.path.dirname(__file__), os.pardir, "src"))

from apl.harness import (ExperimentConfig, LearnedPolicy, build_world,
                         episode_eval, make_contexts, make_policy,
                         score_error_samples, sweep, train_policy,
                         write_metrics_csv, write_score_dump)
from apl.ppo import ActorCritic, TrainConfig

OUT = os.path.join(os.path.dirname(__file__), "acceptance")
SEEDS = (0, 1, 2)
BASELINE_POLICIES = ("random", "unidirectional", "max-distance", "entropy")
MOTION_WEIGHTS = (0.1, 0.5, 0.9)
MOTION_SEEDS = (0, 1)
MOTION_TRAIN_STEPS = 40_000
HORIZONS = (0, 1, 5, 10, 20)

CFG = ExperimentConfig()  # 20 train / 10 eval scenes, T=5, 200k steps


def log(msg):
    print(f"[{time.strftime('%H:%M:%S')}] {msg}", flush=True)


def ckpt_path(mode, seed):
    tag = "learned" if mode == "learned" else "lowscore"
    return os.path.join(OUT, f"ckpt_{tag}_s{seed}.bin")


def train_all(world):
    train_ctxs = make_contexts(CFG, "train", world=world)
    for mode in ("learned", "lowest-score"):
        for seed in SEEDS:
            path = ckpt_path(mode, seed)
            if os.path.exists(path):
                log(f"skip {path} (exists)")
                continue
            t0 = time.time()
            log(f"training {mode} seed {seed} "
                f"({CFG.train.total_steps} steps)")
            ac, _ = train_policy(CFG, seed, attention_mode=mode,
                                 ctxs=train_ctxs,
                                 progress=lambda d: log(str(d)))
            ac.save(path, CFG.train.total_steps)
            log(f"saved {path} ({time.time() - t0:.0f}s)")


def eval_main(world):
    path = os.path.join(OUT, "metrics_main.csv")
    log_path = os.path.join(OUT, "episodes_main.jsonl")
    if os.path.exists(path) and os.path.exists(log_path):
        log(f"skip {path} (exists)")
        return
    eval_ctxs = make_contexts(CFG, "eval", world=world)
    records = []
    tmp_log = log_path + ".tmp"
    with open(tmp_log, "w") as log_fp:
        for seed in SEEDS:
            fp = log_fp if seed == SEEDS[0] else None
            for mode, name in (("learned", "learned"),
                               ("lowest-score", "lowest-score")):
                ac = ActorCritic.load(ckpt_path(mode, seed))
                records.append(episode_eval(LearnedPolicy(ac), eval_ctxs, CFG,
                                            seed, log_fp=fp, policy_name=name))
                log(f"eval {name} seed {seed}: {records[-1]}")
            for name in BASELINE_POLICIES:
                records.append(episode_eval(make_policy(name), eval_ctxs, CFG,
                                            seed, log_fp=fp, policy_name=name))
                log(f"eval {name} seed {seed}: {records[-1]}")
    os.replace(tmp_log, log_path)
    write_metrics_csv(records, path)
    log(f"wrote {path}")


def sweep_motion():
    path = os.path.join(OUT, "sweep_motion.csv")
    if os.path.exists(path):
        log(f"skip {path} (exists)")
        return
    cfg = replace(CFG, train=replace(CFG.train,
                                     total_steps=MOTION_TRAIN_STEPS))
    log(f"motion-weight sweep {MOTION_WEIGHTS} x seeds {MOTION_SEEDS} "
        f"({MOTION_TRAIN_STEPS} steps each)")
    sweep(cfg, "motion", MOTION_WEIGHTS, MOTION_SEEDS, OUT,
          progress=lambda d: log(str(d)))
    log(f"wrote {path}")


def sweep_horizon():
    path = os.path.join(OUT, "sweep_T.csv")
    if os.path.exists(path):
        log(f"skip {path} (exists)")
        return
    log(f"horizon sweep {HORIZONS} x seeds {SEEDS}")
    sweep(CFG, "T", HORIZONS, SEEDS, OUT, policy_name="entropy")
    log(f"wrote {path}")


def score_dump(world):
    path = os.path.join(OUT, "score_dump.csv")
    if os.path.exists(path):
        log(f"skip {path} (exists)")
        return
    t0 = time.time()
    scores, errors = score_error_samples(CFG, 600, seed=0, world=world)
    write_score_dump(scores, errors, path)
    log(f"wrote {path} ({len(scores)} samples, {time.time() - t0:.1f}s)")


FIXTURES = os.path.join(os.path.dirname(__file__), os.pardir, "plots",
                        "tests", "fixtures")
FIXTURE_FILES = ("score_dump.csv", "sweep_T.csv", "sweep_motion.csv",
                 "metrics_main.csv", "episodes_main.jsonl")


def copy_fixtures():
    import shutil
    os.makedirs(FIXTURES, exist_ok=True)
    for name in FIXTURE_FILES:
        shutil.copyfile(os.path.join(OUT, name), os.path.join(FIXTURES, name))
        log(f"fixture {name} -> plots/tests/fixtures/")


def main():
    os.makedirs(OUT, exist_ok=True)
    world = build_world(CFG)
    t0 = time.time()
    score_dump(world)
    sweep_horizon()
    train_all(world)
    eval_main(world)
    sweep_motion()
    copy_fixtures()
    with open(os.path.join(OUT, "manifest.json"), "w") as f:
        json.dump({"seeds": SEEDS, "train_steps": CFG.train.total_steps,
                   "motion_weights": MOTION_WEIGHTS,
                   "motion_train_steps": MOTION_TRAIN_STEPS,
                   "horizons": HORIZONS,
                   "wall_time_s": round(time.time() - t0, 1)}, f, indent=2)
    log("done")


if __name__ == "__main__":
    main()
