"""Multi-view hypothesis fusion.

Hypotheses from every visited view are pooled in the world frame, scored
against the observed depth with a ground-truth-free verification score,
grouped by single-linkage clustering on translation, and the best-scoring
hypothesis of each cluster becomes the current scene estimate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage

from .estimator import Hypothesis
from .geom import NeighborIndex, Pose6D
from .scene import ObjectModel, Rendering

DEFAULT_EPSILON_MM = 5.0
MAX_SCORE_PIXELS = 256  # mask pixels used per verification score


@dataclass
class PoolEntry:
    hypothesis: Hypothesis
    view_index: int
    world_pose: Pose6D
    score: float


class HypothesisPool:
    """Append-only pool of hypotheses accumulated over an episode."""

    def __init__(self):
        self.entries: list[PoolEntry] = []

    def __len__(self):
        return len(self.entries)


@dataclass(frozen=True)
class ObjectFeature:
    """Per-object policy feature: normalized bbox, mask depth, score."""

    bbox: tuple  # (x0,y0,x1,y1) in [0,1]
    depth: float  # mean mask depth scaled to [0,1] by grid diameter
    score: float  # verification score in [0,1]

    @property
    def vector(self) -> np.ndarray:
        return np.array([*self.bbox, self.depth, self.score])


@dataclass
class SceneEstimate:
    selected: list  # of PoolEntry, one per cluster
    features: list  # parallel ObjectFeature list


def delta(p, q, n_p, n_q, eps_mm: float) -> float:
    """Local fit between a model point p and a scene point q."""
    if eps_mm <= 0:
        raise ValueError("eps must be positive")
    d = float(np.linalg.norm(np.asarray(p, dtype=np.float64) - np.asarray(q, dtype=np.float64)))
    if d >= eps_mm:
        return 0.0
    return 0.5 * (1.0 - d / eps_mm) + 0.5 * float(np.dot(n_p, n_q))


_model_index_cache: dict = {}


def model_neighbor_index(model: ObjectModel) -> NeighborIndex:
    idx = _model_index_cache.get(model)
    if idx is None:
        idx = NeighborIndex(model.cloud)
        _model_index_cache[model] = idx
    return idx


def _subsample(mask_px: np.ndarray, cap: int) -> np.ndarray:
    if len(mask_px) <= cap:
        return mask_px
    stride = len(mask_px) / cap
    return mask_px[(np.arange(cap) * stride).astype(np.int64)]


def verification_score(h: Hypothesis, rendering: Rendering, model: ObjectModel,
                       eps_mm: float = DEFAULT_EPSILON_MM) -> float:
    """Mean local fit between the depth points inside the hypothesis mask and
    the hypothesis-posed model; 0 when there are no inliers.

    Distances and normal angles are invariant under rigid transforms, so the
    scene points are moved into the model frame and matched against a single
    per-model KD-tree instead of re-posing the model cloud per hypothesis.
    """
    if eps_mm <= 0:
        raise ValueError("eps must be positive")
    # pixel_index is sorted, so mask pixels map to cloud rows via searchsorted
    px = _subsample(h.mask_pixels, MAX_SCORE_PIXELS)
    rows = np.searchsorted(rendering.pixel_index, px)
    ok = rows < len(rendering.pixel_index)
    rows = rows[ok]
    rows = rows[rendering.pixel_index[rows] == px[ok]]
    if len(rows) == 0:
        return 0.0
    q_cam = rendering.scene_cloud.points[rows]
    nq_cam = rendering.scene_cloud.normals[rows]
    inv = h.pose.inverse()
    q_model = inv.apply(q_cam)
    nq_model = inv.rotate(nq_cam)
    index = model_neighbor_index(model)
    dist, idx = index.query_many(q_model)
    inlier = dist < eps_mm
    if not inlier.any():
        return 0.0
    np_model = model.cloud.normals[idx[inlier]]
    vals = 0.5 * (1.0 - dist[inlier] / eps_mm) + 0.5 * np.sum(np_model * nq_model[inlier], axis=1)
    # opposed normals can push individual terms below zero; the aggregate
    # score is kept in [0,1]
    return float(np.clip(vals.mean(), 0.0, 1.0))


def accumulate(pool: HypothesisPool, new_hyps, grid, view_index: int,
               rendering: Rendering, model: ObjectModel,
               eps_mm: float = DEFAULT_EPSILON_MM) -> HypothesisPool:
    """Score new hypotheses and append them to the pool in world frame."""
    cam_to_world = grid.cam_from_world[view_index].inverse()
    for h in new_hyps:
        score = verification_score(h, rendering, model, eps_mm)
        h.verification = score
        pool.entries.append(PoolEntry(h, view_index, cam_to_world.compose(h.pose), score))
    return pool


def cluster_hypotheses(pool: HypothesisPool, threshold_mm: float):
    """Single-linkage clusters on world translation, cut at threshold_mm.

    Returns index sets ordered by smallest member; equivalent to connected
    components of the graph with edges where distance <= threshold.
    """
    if threshold_mm <= 0:
        raise ValueError("threshold must be positive")
    n = len(pool)
    if n == 0:
        return []
    if n == 1:
        return [[0]]
    pts = np.stack([e.world_pose.t for e in pool.entries])
    Z = linkage(pts, method="single")
    labels = fcluster(Z, t=threshold_mm, criterion="distance")
    clusters = {}
    for i, lab in enumerate(labels):
        clusters.setdefault(lab, []).append(i)
    return sorted(clusters.values(), key=lambda c: c[0])


def select_best(pool: HypothesisPool, clusters, grid_diameter_mm: float) -> SceneEstimate:
    """Best-scoring entry per cluster (ties to the earliest-accumulated) with
    its (bbox, depth, score) feature."""
    selected = []
    features = []
    for cluster in clusters:
        best = min(cluster, key=lambda i: (-pool.entries[i].score, i))
        e = pool.entries[best]
        selected.append(e)
        bbox = tuple(float(np.clip(b, 0.0, 1.0)) for b in e.hypothesis.bbox)
        d = float(np.clip(e.hypothesis.mean_mask_depth / grid_diameter_mm, 0.0, 1.0))
        features.append(ObjectFeature(bbox, d, float(np.clip(e.score, 0.0, 1.0))))
    return SceneEstimate(selected, features)
