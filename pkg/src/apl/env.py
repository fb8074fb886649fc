"""Episodic active-vision environment.

One episode: start at a viewpoint, repeat T times (render -> estimate ->
accumulate -> cluster -> select -> attend -> move). The policy sees a state
vector of the attended object feature, the normalized camera position and a
history of previous camera positions. Rewards combine attended-object pose
improvement, approach to the attended object and a camera-motion penalty.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import fusion
from .attention import OUTPUT_DIM, NoDetection
from .estimator import NoiseModel, estimate
from .fusion import HypothesisPool, SceneEstimate, accumulate, cluster_hypotheses, select_best
from .geom import ViewGrid, closest_viewpoint, geodesic_distance
from .metrics import UNDETECTED_PENALTY_MM, e_add
from .scene import DETECTABILITY_THRESHOLD, Intrinsics, Scene, render

MM_PER_REWARD_UNIT = 100.0  # reward distances are expressed in decimeters


class DegenerateScene(Exception):
    """Scene has no object visible enough to ever be detected."""


@dataclass(frozen=True)
class RewardConfig:
    # calibrated so that movement-rich behaviors that keep improving the
    # attended object out-earn both standing still and reward-pumping
    # oscillations between a pair of views
    alpha: float = 0.05
    beta: float = 0.99
    undetected_penalty: float = UNDETECTED_PENALTY_MM  # mm

    def __post_init__(self):
        if not (0 <= self.alpha <= 1 and 0 <= self.beta <= 1):
            raise ValueError("alpha and beta must be in [0,1]")


@dataclass
class RewardTerms:
    r_eadd: float
    r_dist: float
    r_motion: float
    r_total: float


def reward_terms(e_prev_mm, e_next_mm, obj_prev, obj_next, v_prev, v_next,
                 config: RewardConfig) -> RewardTerms:
    """Reward components in decimeters; improvement and approach positive.

    obj_prev/obj_next are the attended object's estimated world positions at
    t and t+1; v_prev/v_next the camera positions.
    """
    s = MM_PER_REWARD_UNIT
    r_eadd = (e_prev_mm - e_next_mm) / s
    r_dist = (np.linalg.norm(np.asarray(obj_prev) - np.asarray(v_prev))
              - np.linalg.norm(np.asarray(obj_next) - np.asarray(v_next))) / s
    r_motion = float(np.sum(np.abs(np.asarray(v_next) - np.asarray(v_prev)))) / s
    a, b = config.alpha, config.beta
    r_total = (1 - a) * r_eadd + a * b * r_dist - (1 - a) * (1 - b) * r_motion
    return RewardTerms(float(r_eadd), float(r_dist), float(r_motion), float(r_total))


class SceneContext:
    """Immutable per-scene data shared across episodes: cached renderings,
    visibility profile, entropy table and pairwise view distances."""

    def __init__(self, scene: Scene, grid: ViewGrid, intrinsics: Intrinsics = Intrinsics()):
        self.scene = scene
        self.grid = grid
        self.intrinsics = intrinsics
        self._renders: dict = {}
        self._vis_table = None
        self._detectable = None
        self._entropy = None
        self._geo = None

    def rendering(self, view_index: int):
        r = self._renders.get(view_index)
        if r is None:
            r = render(self.scene, self.grid, view_index, self.intrinsics)
            self._renders[view_index] = r
        return r

    def _profile(self):
        if self._vis_table is None:
            table = np.stack([self.rendering(k).visibility for k in range(len(self.grid))])
            self._vis_table = table
            self._detectable = np.flatnonzero(table.max(axis=0) >= DETECTABILITY_THRESHOLD)
        return self._vis_table, self._detectable

    @property
    def visibility_table(self):
        return self._profile()[0]

    @property
    def detectable(self):
        return self._profile()[1]

    @property
    def entropy_table(self):
        if self._entropy is None:
            self._entropy = view_entropy_table(self.scene, self.grid, self.intrinsics, ctx=self)
        return self._entropy

    def geodesic(self, i: int, j: int) -> float:
        if self._geo is None:
            pos = self.grid.positions() - self.grid.center
            u = pos / self.grid.radius
            dots = np.clip(u @ u.T, -1.0, 1.0)
            self._geo = self.grid.radius * np.arccos(dots)
        return float(self._geo[i, j])


def view_entropy_table(scene: Scene, grid: ViewGrid,
                       intrinsics: Intrinsics = Intrinsics(), ctx=None):
    """Per-view Shannon entropy of the per-object visible-mask-area shares."""
    out = np.zeros(len(grid))
    for k in range(len(grid)):
        r = ctx.rendering(k) if ctx is not None else render(scene, grid, k, intrinsics)
        areas = np.array([m.sum() for m in r.masks], dtype=np.float64)
        areas = areas[areas > 0]
        if len(areas) <= 1:
            continue
        p = areas / areas.sum()
        out[k] = float(-(p * np.log(p)).sum())
    return out


@dataclass
class StepResult:
    state: np.ndarray
    reward: RewardTerms
    done: bool
    info: dict = field(default_factory=dict)


class ActivePoseEnv:
    """Gym-style environment over one SceneContext.

    attention_fn(features) must return an object with fields o (12-vector),
    m (index into the selected list) and weights; see apl.attention.
    """

    def __init__(self, ctx: SceneContext, attention_fn, noise: NoiseModel,
                 reward_config: RewardConfig, horizon: int, rng,
                 start_view=None, eps_mm: float = fusion.DEFAULT_EPSILON_MM,
                 cluster_threshold_mm=None, track_all_objects: bool = False):
        self.ctx = ctx
        self.attention_fn = attention_fn
        self.noise = noise
        self.reward_config = reward_config
        self.T = horizon
        self.rng = rng
        self.start_view = start_view
        self.eps_mm = eps_mm
        # half the minimum center separation (0.6 * diameter): tight enough
        # that single-linkage chains rarely bridge neighboring objects as the
        # hypothesis pool grows, loose enough to group one object's hypotheses
        self.cluster_threshold_mm = (cluster_threshold_mm if cluster_threshold_mm is not None
                                     else 0.3 * ctx.scene.model.diameter)
        self.track_all_objects = track_all_objects

    @property
    def state_dim(self) -> int:
        return OUTPUT_DIM + 3 + 3 * self.T

    def _norm_pos(self, view_index: int) -> np.ndarray:
        return (self.ctx.grid.position(view_index) - self.ctx.grid.center) / self.ctx.grid.radius

    def _estimates_by_gt(self, est: SceneEstimate) -> dict:
        """Best-scoring selected entry per hidden ground-truth index."""
        out = {}
        for e in est.selected:
            g = e.hypothesis.object_gt_index
            if g not in out or e.score > out[g].score:
                out[g] = e
        return out

    def _e_add_of(self, entry) -> float:
        g = entry.hypothesis.object_gt_index
        return e_add(entry.world_pose, self.ctx.scene.gt_poses[g], self.ctx.scene.model)

    def _observe(self, view_index: int):
        """Render, estimate, accumulate and re-select at `view_index`.

        Estimator noise is drawn from a stream keyed by (episode, view), so
        re-observing a view within an episode reproduces the exact same
        hypotheses — the estimator behaves like a deterministic model, and
        standing still cannot farm fresh noise draws.
        """
        rendering = self.ctx.rendering(view_index)
        noise_rng = np.random.default_rng(
            np.random.SeedSequence((self._episode_key, view_index)))
        hyps = estimate(rendering, self.ctx.scene, self.ctx.grid, view_index,
                        self.noise, noise_rng)
        accumulate(self.pool, hyps, self.ctx.grid, view_index, rendering,
                   self.ctx.scene.model, self.eps_mm)
        clusters = cluster_hypotheses(self.pool, self.cluster_threshold_mm)
        self.estimate = select_best(self.pool, clusters, self.ctx.grid.diameter)

    def _attend(self):
        if len(self.estimate.features) == 0:
            self.attention = None
            return np.zeros(OUTPUT_DIM)
        self.attention = self.attention_fn(self.estimate.features)
        return self.attention.o

    def _state_vector(self, o: np.ndarray) -> np.ndarray:
        return np.concatenate([o, self._norm_pos(self.view_index), self.history.ravel()])

    def reset(self, start_view=None) -> np.ndarray:
        if len(self.ctx.detectable) == 0:
            raise DegenerateScene("no detectable objects in scene")
        if start_view is None:
            start_view = self.start_view
        if start_view is None:
            start_view = int(self.rng.integers(len(self.ctx.grid)))
        self._episode_key = int(self.rng.integers(np.iinfo(np.int64).max))
        self.view_index = start_view
        self.step_index = 0
        self.visited = [start_view]
        self.pool = HypothesisPool()
        self.history = np.zeros((self.T, 3)) if self.T > 0 else np.zeros((0, 3))
        if self.T > 0:
            self.history[0] = self._norm_pos(start_view)
        self._observe(start_view)
        o = self._attend()
        self.state = self._state_vector(o)
        return self.state

    def step(self, action) -> StepResult:
        """action = (azimuth, elevation) in radians."""
        if self.step_index >= self.T:
            raise RuntimeError("episode is done; call reset()")
        az, el = float(action[0]), float(action[1])
        next_view = closest_viewpoint(self.ctx.grid, az, el)
        v_prev = self.ctx.grid.position(self.view_index)
        v_next = self.ctx.grid.position(next_view)

        # snapshot the attended object before re-observing
        prev_attention = self.attention
        if prev_attention is not None:
            prev_entry = self.estimate.selected[prev_attention.m]
            gt_idx = prev_entry.hypothesis.object_gt_index
            e_prev = self._e_add_of(prev_entry)
            obj_prev = prev_entry.world_pose.t
        else:
            gt_idx = None

        self.view_index = next_view
        self.step_index += 1
        self.visited.append(next_view)
        if self.step_index < self.T:
            self.history[self.step_index] = self._norm_pos(next_view)
        self._observe(next_view)

        cfg = self.reward_config
        if gt_idx is not None:
            by_gt = self._estimates_by_gt(self.estimate)
            entry = by_gt.get(gt_idx)
            if entry is not None:
                e_next = self._e_add_of(entry)
                obj_next = entry.world_pose.t
            else:
                e_next = cfg.undetected_penalty
                obj_next = obj_prev  # estimate lost: carry the last known position
            reward = reward_terms(e_prev, e_next, obj_prev, obj_next, v_prev, v_next, cfg)
        else:
            # nothing was attended at t: only the motion penalty applies
            r_motion = float(np.sum(np.abs(v_next - v_prev))) / MM_PER_REWARD_UNIT
            reward = RewardTerms(0.0, 0.0, r_motion,
                                 -(1 - cfg.alpha) * (1 - cfg.beta) * r_motion)

        o = self._attend()
        self.state = self._state_vector(o)
        done = self.step_index >= self.T
        info = {
            "view_index": next_view,
            "attended_gt": gt_idx,
            "attended_m": None if self.attention is None else self.attention.m,
            "weights": None if self.attention is None else self.attention.weights,
            "estimate": self.estimate,
            "geodesic_step": self.ctx.geodesic(self.visited[-2], next_view),
        }
        if self.track_all_objects:
            by_gt = self._estimates_by_gt(self.estimate)
            info["per_object_e_add"] = {
                int(g): (self._e_add_of(by_gt[g]) if g in by_gt else cfg.undetected_penalty)
                for g in self.ctx.detectable}
        return StepResult(self.state, reward, done, info)


# ---------------------------------------------------------------------------
# Baseline policies


class RandomPolicy:
    """Gaussian jitter around the current view angles."""

    kind = "random"

    def __init__(self, sigma_az=0.6, sigma_el=0.3):
        self.sigma_az = sigma_az
        self.sigma_el = sigma_el

    def action(self, env: ActivePoseEnv, rng):
        az = env.ctx.grid.azimuths[env.view_index] + rng.normal(0, self.sigma_az)
        el = env.ctx.grid.elevations[env.view_index] + rng.normal(0, self.sigma_el)
        return np.array([az, el])


class UnidirectionalPolicy:
    """One full revolution at 45 degrees elevation over the episode."""

    kind = "unidirectional"

    def action(self, env: ActivePoseEnv, rng):
        start_az = env.ctx.grid.azimuths[env.visited[0]]
        az = start_az + (env.step_index + 1) * 2 * np.pi / max(env.T, 1)
        return np.array([az, np.pi / 4])


class MaxDistancePolicy:
    """Unvisited view maximizing the minimum geodesic distance to all
    previously visited views."""

    kind = "max-distance"

    def action(self, env: ActivePoseEnv, rng):
        grid = env.ctx.grid
        visited = set(env.visited)
        best, best_d = None, -1.0
        for k in range(len(grid)):
            if k in visited:
                continue
            d = min(env.ctx.geodesic(k, j) for j in env.visited)
            if d > best_d:
                best, best_d = k, d
        if best is None:
            best = env.view_index
        return np.array([grid.azimuths[best], grid.elevations[best]])


class EntropyPolicy:
    """Highest precomputed view entropy among unvisited views."""

    kind = "entropy"

    def action(self, env: ActivePoseEnv, rng):
        grid = env.ctx.grid
        table = env.ctx.entropy_table
        visited = set(env.visited)
        candidates = [k for k in range(len(grid)) if k not in visited]
        if not candidates:
            best = env.view_index
        else:
            best = max(candidates, key=lambda k: (table[k], -k))
        return np.array([grid.azimuths[best], grid.elevations[best]])


BASELINES = {
    "random": RandomPolicy,
    "unidirectional": UnidirectionalPolicy,
    "max-distance": MaxDistancePolicy,
    "entropy": EntropyPolicy,
}


def make_baseline(kind: str):
    if kind not in BASELINES:
        raise ValueError(f"unknown baseline {kind!r}; choose from {sorted(BASELINES)}")
    return BASELINES[kind]()


def baseline_action(kind: str, env: ActivePoseEnv, rng):
    return make_baseline(kind).action(env, rng)


def score_attention_fn(features):
    """Attention stand-in used for baseline rollouts and the attention
    ablation: the object with the lowest verification score wins."""
    from .attention import AttentionOutput

    scores = np.array([f.score for f in features])
    m = int(np.argmin(scores))
    weights = np.zeros(len(features))
    weights[m] = 1.0
    o = np.concatenate([np.zeros(6), features[m].vector])
    return AttentionOutput(o, m, weights, cache=None)
