"""Experiment orchestration: TOML configuration, the policy-comparison
protocol, alpha/T sweeps, score-error sampling and result persistence.

File contracts (consumed by the plotting package):
  metrics CSV    one row per policy: policy, seed, distance_mm, e_add_mm,
                 detection_rate, n_scenes, n_objects
  episode log    JSON-lines; record types episode_start / step / episode_end
  sweep CSV      param, value, seed, distance_mm, e_add_mm, detection_rate
  score dump CSV score, e_add_mm (one simulated hypothesis per row)
"""

from __future__ import annotations

import io
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .env import (ActivePoseEnv, BASELINES, RewardConfig, SceneContext,
                  make_baseline, score_attention_fn)
from .estimator import NoiseModel, estimate
from .fusion import verification_score
from .geom import build_grid
from .metrics import detection_rate as match_detection_rate
from .metrics import e_add, scene_errors
from .ppo import ActorCritic, TrainConfig, train
from .scene import Intrinsics, generate_scene, make_model


class ConfigError(Exception):
    pass


class MissingArtifact(Exception):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "default"
    seed: int = 0
    model_kind: str = "cup"
    model_points: int = 300
    model_seed: int = 1
    grid_radius: float = 800.0
    grid_azimuths: int = 20
    grid_elevations: int = 5
    instance_min: int = 15
    instance_max: int = 20
    train_scenes: int = 20
    eval_scenes: int = 10
    noise: NoiseModel = field(default_factory=NoiseModel)
    reward: RewardConfig = field(default_factory=RewardConfig)
    horizon: int = 5
    epsilon_mm: float = 5.0
    train: TrainConfig = field(default_factory=TrainConfig)
    policies: tuple = ("random", "unidirectional", "max-distance", "entropy")
    episodes_per_scene: int = 1


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "rb") as f:
            raw = tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from e
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    try:
        exp = raw.get("experiment", {})
        model = raw.get("model", {})
        grid = raw.get("grid", {})
        scene = raw.get("scene", {})
        envs = raw.get("env", {})
        ev = raw.get("eval", {})
        noise = NoiseModel(**raw.get("estimator", {}))
        reward = RewardConfig(**raw.get("reward", {}))
        train_cfg = TrainConfig(**raw.get("train", {}))
        return ExperimentConfig(
            name=exp.get("name", "default"),
            seed=int(exp.get("seed", 0)),
            model_kind=model.get("kind", "cup"),
            model_points=int(model.get("n_points", 300)),
            model_seed=int(model.get("seed", 1)),
            grid_radius=float(grid.get("radius_mm", 800.0)),
            grid_azimuths=int(grid.get("azimuth_levels", 20)),
            grid_elevations=int(grid.get("elevation_levels", 5)),
            instance_min=int(scene.get("instance_min", 15)),
            instance_max=int(scene.get("instance_max", 20)),
            train_scenes=int(scene.get("train_scenes", 20)),
            eval_scenes=int(scene.get("eval_scenes", 10)),
            noise=noise,
            reward=reward,
            horizon=int(envs.get("horizon", 5)),
            epsilon_mm=float(envs.get("epsilon_mm", 5.0)),
            train=train_cfg,
            policies=tuple(ev.get("policies", ["random", "unidirectional",
                                               "max-distance", "entropy"])),
            episodes_per_scene=int(ev.get("episodes_per_scene", 1)),
        )
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path}: {e}") from e


def build_world(cfg: ExperimentConfig):
    """(model, grid, intrinsics) shared by every scene of an experiment."""
    model = make_model(cfg.model_kind, cfg.model_points, cfg.model_seed)
    grid = build_grid(cfg.grid_radius, cfg.grid_azimuths, cfg.grid_elevations)
    return model, grid, Intrinsics()


def scene_seed(cfg: ExperimentConfig, split: str, index: int) -> int:
    # train and eval seed ranges are disjoint by construction
    base = {"train": 10_000, "eval": 20_000}[split]
    return cfg.seed * 100_000 + base + index


def make_contexts(cfg: ExperimentConfig, split: str, world=None):
    model, grid, intr = world if world is not None else build_world(cfg)
    n = cfg.train_scenes if split == "train" else cfg.eval_scenes
    ctxs = []
    for i in range(n):
        seed = scene_seed(cfg, split, i)
        count_rng = np.random.default_rng(seed)
        n_obj = int(count_rng.integers(cfg.instance_min, cfg.instance_max + 1))
        scene = generate_scene(model, n_obj, seed=seed)
        ctxs.append(SceneContext(scene, grid, intr))
    return ctxs


# ---------------------------------------------------------------------------
# Evaluation


class ExhaustivePolicy:
    """Visits grid views in index order; with T=99 it sweeps the full grid."""

    kind = "exhaustive"

    def action(self, env, rng):
        grid = env.ctx.grid
        k = (env.visited[0] + env.step_index + 1) % len(grid)
        return np.array([grid.azimuths[k], grid.elevations[k]])


class LearnedPolicy:
    """Deterministic (mean-action) wrapper around a trained actor-critic."""

    kind = "learned"

    def __init__(self, ac: ActorCritic):
        self.ac = ac

    def action(self, env, rng):
        action, _, _ = self.ac.act(env.state, rng=None)
        return action


def make_policy(name, checkpoint=None):
    if isinstance(name, ActorCritic):
        return LearnedPolicy(name)
    if name == "learned":
        if checkpoint is None:
            raise MissingArtifact("policy 'learned' requires a checkpoint path")
        return LearnedPolicy(ActorCritic.load(checkpoint))
    if name == "exhaustive":
        return ExhaustivePolicy()
    if name in BASELINES:
        return make_baseline(name)
    if os.path.exists(str(name)):
        return LearnedPolicy(ActorCritic.load(name))
    raise ConfigError(f"unknown policy {name!r}")


@dataclass
class MetricsRecord:
    policy: str
    seed: int
    mean_distance_mm: float
    mean_e_add_mm: float
    detection_rate: float
    n_scenes: int
    n_objects: int
    per_scene: list  # dicts: scene_seed, distance_mm, e_add_mm, detection_rate


def _attention_fn_for(policy):
    if isinstance(policy, LearnedPolicy):
        return policy.ac.attention_fn()
    return score_attention_fn


def _estimate_summary(env):
    out = []
    for e in env.estimate.selected:
        g = e.hypothesis.object_gt_index
        out.append({"gt": int(g), "score": round(e.score, 6),
                    "e_add": round(env._e_add_of(e), 4),
                    "t": [round(x, 3) for x in e.world_pose.t],
                    "view": int(e.view_index)})
    return out


def run_episode(policy, ctx: SceneContext, cfg: ExperimentConfig, episode_seed,
                horizon=None, start_view=0, log_fp=None, policy_name=None):
    """One evaluation episode; returns (distance_mm, per-object errors,
    detection_rate)."""
    T = cfg.horizon if horizon is None else horizon
    ss = np.random.SeedSequence(episode_seed)
    env_rng, policy_rng = [np.random.default_rng(s) for s in ss.spawn(2)]
    env = ActivePoseEnv(ctx, _attention_fn_for(policy), cfg.noise, cfg.reward,
                        T, env_rng, start_view=start_view,
                        eps_mm=cfg.epsilon_mm, track_all_objects=log_fp is not None)
    env.reset()
    if log_fp is not None:
        log_fp.write(json.dumps({
            "type": "episode_start", "policy": policy_name or policy.kind,
            "scene_seed": ctx.scene.seed, "start_view": start_view, "T": T,
            "grid": {"radius_mm": ctx.grid.radius, "azimuth_levels": ctx.grid.azimuth_levels,
                     "elevation_levels": ctx.grid.elevation_levels},
            "detectable": [int(i) for i in ctx.detectable],
            "initial_estimate": _estimate_summary(env),
        }, sort_keys=True) + "\n")
    distance = 0.0
    for t in range(T):
        action = policy.action(env, policy_rng)
        result = env.step(action)
        distance += result.info["geodesic_step"]
        if log_fp is not None:
            r = result.reward
            w = result.info["weights"]
            log_fp.write(json.dumps({
                "type": "step", "t": t + 1,
                "view_index": int(result.info["view_index"]),
                "action": [float(action[0]), float(action[1])],
                "reward": {"e_add": round(r.r_eadd, 6), "dist": round(r.r_dist, 6),
                           "motion": round(r.r_motion, 6), "total": round(r.r_total, 6)},
                "weights": None if w is None else [round(float(x), 6) for x in w],
                "attended_m": result.info["attended_m"],
                "geodesic_step": round(result.info["geodesic_step"], 4),
                "selected": _estimate_summary(env),
                "per_object_e_add": {str(k): round(v, 4) for k, v in
                                     sorted(result.info["per_object_e_add"].items())},
            }, sort_keys=True) + "\n")

    gt_poses = [ctx.scene.gt_poses[i] for i in ctx.detectable]
    est_poses = [e.world_pose for e in env.estimate.selected]
    errors = scene_errors(est_poses, gt_poses, ctx.scene.model,
                          cfg.reward.undetected_penalty)
    det = match_detection_rate(est_poses, gt_poses, ctx.scene.model)
    if log_fp is not None:
        log_fp.write(json.dumps({
            "type": "episode_end", "distance_mm": round(distance, 4),
            "mean_e_add_mm": round(float(errors.mean()) if len(errors) else 0.0, 4),
            "detection_rate": round(det, 6),
        }, sort_keys=True) + "\n")
    return distance, errors, det


def eval_threads() -> int:
    """Episode-level parallelism; capped by the APL_THREADS env var."""
    raw = os.environ.get("APL_THREADS", "").strip()
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"APL_THREADS must be an integer, got {raw!r}")


def episode_eval(policy, ctxs, cfg: ExperimentConfig, seed: int,
                 horizon=None, log_fp=None, policy_name=None) -> MetricsRecord:
    """Table-1-style evaluation: paired scene seeds, fixed start view,
    object-weighted e_ADD averaging (undetected objects carry the penalty).

    Episodes are independent (seeded per episode), so they may run in
    parallel; results and logs are reduced in deterministic order by this
    single writer."""
    name = policy_name or policy.kind
    tasks = [(ctx, ep) for ctx in ctxs for ep in range(cfg.episodes_per_scene)]

    def one(task):
        ctx, ep = task
        buf = io.StringIO() if log_fp is not None else None
        dist, errors, det = run_episode(policy, ctx, cfg, (seed, ctx.scene.seed, ep),
                                        horizon=horizon, log_fp=buf,
                                        policy_name=name)
        return dist, errors, det, (buf.getvalue() if buf is not None else "")

    n_threads = eval_threads()
    if n_threads > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            results = list(pool.map(one, tasks))
    else:
        results = [one(t) for t in tasks]

    all_errors = []
    per_scene = []
    distances = []
    correct = 0
    total_objects = 0
    for (ctx, ep), (dist, errors, det, log_text) in zip(tasks, results):
        if log_fp is not None:
            log_fp.write(log_text)
        n_det = len(ctx.detectable)
        all_errors.extend(errors.tolist())
        distances.append(dist)
        correct += det * n_det
        total_objects += n_det
        per_scene.append({"scene_seed": ctx.scene.seed, "episode": ep,
                          "distance_mm": dist,
                          "e_add_mm": float(errors.mean()) if len(errors) else 0.0,
                          "detection_rate": det})
    return MetricsRecord(
        policy=name, seed=seed,
        mean_distance_mm=float(np.mean(distances)) if distances else 0.0,
        mean_e_add_mm=float(np.mean(all_errors)) if all_errors else 0.0,
        detection_rate=correct / total_objects if total_objects else 0.0,
        n_scenes=len(ctxs), n_objects=total_objects, per_scene=per_scene)


def write_metrics_csv(records, path):
    """Atomic CSV write; e_ADD averaging is object-weighted."""
    lines = ["policy,seed,distance_mm,e_add_mm,detection_rate,n_scenes,n_objects"]
    for r in records:
        lines.append(f"{r.policy},{r.seed},{r.mean_distance_mm:.6f},"
                     f"{r.mean_e_add_mm:.6f},{r.detection_rate:.6f},"
                     f"{r.n_scenes},{r.n_objects}")
    tmp = str(path) + ".tmp"
    with open(tmp, "w") as f:
        f.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# Training


def make_env_factory(ctxs, cfg: ExperimentConfig, rng):
    """Training environments: random scene, random start view per episode."""

    def factory(ac: ActorCritic):
        ctx = ctxs[int(rng.integers(len(ctxs)))]
        return ActivePoseEnv(ctx, ac.attention_fn(), cfg.noise, cfg.reward,
                             cfg.horizon, rng, start_view=None,
                             eps_mm=cfg.epsilon_mm)

    return factory


def train_policy(cfg: ExperimentConfig, seed: int, attention_mode="learned",
                 ctxs=None, world=None, eval_ctxs=None, progress=None):
    """Train one policy; returns (ActorCritic, curve rows)."""
    if ctxs is None:
        ctxs = make_contexts(cfg, "train", world=world)
    train_cfg = replace(cfg.train, seed=seed)
    env_rng = np.random.default_rng(np.random.SeedSequence((seed, 777)))
    factory = make_env_factory(ctxs, cfg, env_rng)
    state_dim = 15 + 3 * cfg.horizon

    eval_cb = None
    if eval_ctxs is not None:
        def eval_cb(ac, step):
            rec = episode_eval(LearnedPolicy(ac), eval_ctxs, cfg, seed)
            return {"eval_e_add_mm": rec.mean_e_add_mm,
                    "eval_detection_rate": rec.detection_rate,
                    "eval_distance_mm": rec.mean_distance_mm}

    return train(factory, state_dim, train_cfg, attention_mode=attention_mode,
                 eval_callback=eval_cb, progress_callback=progress)


def write_curve_csv(curve, path):
    if not curve:
        keys = ["step"]
    else:
        keys = list(curve[0].keys())
    tmp = str(path) + ".tmp"
    with open(tmp, "w") as f:
        f.write(",".join(keys) + "\n")
        for row in curve:
            f.write(",".join(f"{row.get(k, '')}" for k in keys) + "\n")
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# Score-error correlation sampling


def score_error_samples(cfg: ExperimentConfig, n_samples: int, seed: int,
                        world=None):
    """Simulated hypotheses across the noise range; returns (scores, e_adds)."""
    model, grid, intr = world if world is not None else build_world(cfg)
    rng = np.random.default_rng(np.random.SeedSequence((seed, 424242)))
    scores, errors = [], []
    scene_idx = 0
    while len(scores) < n_samples:
        scene = generate_scene(model, cfg.instance_min, seed=90_000 + seed * 1000 + scene_idx)
        ctx = SceneContext(scene, grid, intr)
        scene_idx += 1
        for view in range(0, len(grid), 7):
            rendering = ctx.rendering(view)
            # sweep the noise scale to span good-to-bad hypotheses
            scale = float(rng.uniform(0.0, 5.0))
            noise = NoiseModel(sigma_t_base=cfg.noise.sigma_t_base * scale,
                               sigma_r_base=cfg.noise.sigma_r_base * scale,
                               occlusion_gain=cfg.noise.occlusion_gain,
                               depth_axis_gain=cfg.noise.depth_axis_gain,
                               detect_v0=cfg.noise.detect_v0,
                               detect_sharpness=cfg.noise.detect_sharpness)
            for h in estimate(rendering, scene, grid, view, noise, rng):
                score = verification_score(h, rendering, model, cfg.epsilon_mm)
                gt_cam = grid.cam_from_world[view].compose(scene.gt_poses[h.object_gt_index])
                scores.append(score)
                errors.append(e_add(h.pose, gt_cam, model))
                if len(scores) >= n_samples:
                    break
            if len(scores) >= n_samples:
                break
    return np.array(scores), np.array(errors)


def write_score_dump(scores, errors, path):
    tmp = str(path) + ".tmp"
    with open(tmp, "w") as f:
        f.write("score,e_add_mm\n")
        for s, e in zip(scores, errors):
            # precision high enough that ranks survive the round-trip
            f.write(f"{s:.9f},{e:.6f}\n")
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# Sweeps


def motion_sweep_reward(reward: RewardConfig, weight: float) -> RewardConfig:
    """Reward settings whose motion-penalty weight is exactly `weight`.

    The penalty coefficient is (1-alpha)(1-beta); alpha = beta = 1 - sqrt(w)
    is the unique symmetric solution.  It keeps a real approach incentive at
    low penalty weights (alpha*beta = (1-sqrt(w))^2), so travel can respond
    to the penalty.  (Sweeping alpha with beta = 0 would scale both reward
    terms by the same factor, which advantage normalization cancels out.)
    """
    if not 0.0 < weight <= 1.0:
        raise ConfigError(f"motion weight must be in (0, 1], got {weight}")
    level = 1.0 - float(np.sqrt(weight))
    return replace(reward, alpha=level, beta=level)


def sweep(cfg: ExperimentConfig, param: str, values, seeds, out_dir,
          policy_name="random", checkpoint=None, progress=None):
    """Alpha, motion-weight or horizon sweep; writes sweep CSV, returns rows.

    alpha and motion sweeps train a policy per value; T sweeps evaluate the
    named policy at each horizon.
    """
    os.makedirs(out_dir, exist_ok=True)
    world = build_world(cfg)
    eval_ctxs = make_contexts(cfg, "eval", world=world)
    rows = []
    for value in values:
        for seed in seeds:
            if param in ("alpha", "motion"):
                if param == "alpha":
                    reward_v = replace(cfg.reward, alpha=float(value))
                else:
                    reward_v = motion_sweep_reward(cfg.reward, float(value))
                cfg_v = replace(cfg, reward=reward_v)
                train_ctxs = make_contexts(cfg_v, "train", world=world)
                ac, _ = train_policy(cfg_v, seed, ctxs=train_ctxs, progress=progress)
                rec = episode_eval(LearnedPolicy(ac), eval_ctxs, cfg_v, seed)
            elif param == "T":
                policy = make_policy(policy_name, checkpoint)
                rec = episode_eval(policy, eval_ctxs, cfg, seed, horizon=int(value))
            else:
                raise ConfigError(f"unknown sweep parameter {param!r}")
            rows.append({"param": param, "value": value, "seed": seed,
                         "distance_mm": rec.mean_distance_mm,
                         "e_add_mm": rec.mean_e_add_mm,
                         "detection_rate": rec.detection_rate})
    path = os.path.join(out_dir, f"sweep_{param}.csv")
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        f.write("param,value,seed,distance_mm,e_add_mm,detection_rate\n")
        for r in rows:
            f.write(f"{r['param']},{r['value']},{r['seed']},{r['distance_mm']:.6f},"
                    f"{r['e_add_mm']:.6f},{r['detection_rate']:.6f}\n")
    os.replace(tmp, path)
    return rows


def run_experiment(config_path, out_dir, train_first=False, checkpoint=None,
                   seed=None, progress=None):
    """Full protocol: optional training, then evaluation of the policy list.

    Writes metrics.csv and episodes.jsonl to out_dir; returns the records.
    """
    cfg = load_config(config_path)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    os.makedirs(out_dir, exist_ok=True)
    world = build_world(cfg)
    eval_ctxs = make_contexts(cfg, "eval", world=world)

    ac = None
    if train_first or "learned" in cfg.policies:
        if checkpoint is not None and os.path.exists(checkpoint) and not train_first:
            ac = ActorCritic.load(checkpoint)
        elif train_first:
            train_ctxs = make_contexts(cfg, "train", world=world)
            ac, curve = train_policy(cfg, cfg.seed, ctxs=train_ctxs, progress=progress)
            write_curve_csv(curve, os.path.join(out_dir, "curve.csv"))
            ac.save(os.path.join(out_dir, "checkpoint.bin"), cfg.train.total_steps)
        elif "learned" in cfg.policies:
            raise MissingArtifact("policy 'learned' listed but no checkpoint given")

    records = []
    log_path = os.path.join(out_dir, "episodes.jsonl")
    tmp_log = log_path + ".tmp"
    with open(tmp_log, "w") as log_fp:
        for name in cfg.policies:
            policy = LearnedPolicy(ac) if name == "learned" else make_policy(name, checkpoint)
            records.append(episode_eval(policy, eval_ctxs, cfg, cfg.seed,
                                        log_fp=log_fp, policy_name=name))
    os.replace(tmp_log, log_path)
    write_metrics_csv(records, os.path.join(out_dir, "metrics.csv"))
    return records
