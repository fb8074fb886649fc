"""Pose-error metrics: e_ADD with revolution-symmetry handling, greedy
hypothesis-to-object matching, and detection rate."""

from __future__ import annotations

import numpy as np

from .geom import Pose6D, quat_from_axis_angle, quat_to_matrix
from .scene import ObjectModel

SYMMETRY_SAMPLES = 72  # 5 degree steps about the symmetry axis
CORRECTNESS_FRACTION = 0.1  # of model diameter
UNDETECTED_PENALTY_MM = 50.0

_sym_cloud_cache: dict = {}


def _symmetry_rotated_points(model: ObjectModel) -> np.ndarray:
    """(SYMMETRY_SAMPLES, n, 3) stack of the model cloud pre-rotated about the
    symmetry axis; cached per model."""
    stack = _sym_cloud_cache.get(model)
    if stack is None:
        pts = model.cloud.points
        angles = np.arange(SYMMETRY_SAMPLES) * (2 * np.pi / SYMMETRY_SAMPLES)
        stack = np.empty((SYMMETRY_SAMPLES, len(pts), 3))
        for j, a in enumerate(angles):
            R = quat_to_matrix(quat_from_axis_angle(model.symmetry_axis, a))
            stack[j] = pts @ R.T
        _sym_cloud_cache[model] = stack
    return stack


def e_add(est: Pose6D, gt: Pose6D, model: ObjectModel) -> float:
    """Average distance of model points between the two poses (mm).

    For revolution-symmetric models the minimum over a discretized set of
    rotations about the symmetry axis (applied to the estimate) is returned.
    """
    gt_pts = gt.apply(model.cloud.points)
    if model.symmetry_axis is None:
        est_pts = est.apply(model.cloud.points)
        return float(np.linalg.norm(est_pts - gt_pts, axis=1).mean())
    stack = _symmetry_rotated_points(model)
    s, n, _ = stack.shape
    est_pts = est.apply(stack.reshape(s * n, 3)).reshape(s, n, 3)
    dists = np.linalg.norm(est_pts - gt_pts[None], axis=2).mean(axis=1)
    return float(dists.min())


def greedy_match(est_poses, gt_poses, model: ObjectModel):
    """One-to-one matching by ascending e_ADD.

    Returns (matches, errors): matches is a list of (est index, gt index),
    errors the full (n_est, n_gt) e_ADD matrix.
    """
    n_e, n_g = len(est_poses), len(gt_poses)
    errors = np.full((n_e, n_g), np.inf)
    for i, ep in enumerate(est_poses):
        for j, gp in enumerate(gt_poses):
            errors[i, j] = e_add(ep, gp, model)
    matches = []
    used_e, used_g = set(), set()
    order = np.argsort(errors, axis=None, kind="stable")
    for flat in order:
        i, j = divmod(int(flat), n_g) if n_g else (0, 0)
        if i in used_e or j in used_g:
            continue
        matches.append((i, j))
        used_e.add(i)
        used_g.add(j)
        if len(used_e) == n_e or len(used_g) == n_g:
            break
    return matches, errors


def scene_errors(est_poses, gt_poses, model: ObjectModel,
                 penalty_mm: float = UNDETECTED_PENALTY_MM):
    """Per ground-truth-object e_ADD under greedy matching; unmatched objects
    get the undetected penalty."""
    if len(gt_poses) == 0:
        return np.array([])
    if len(est_poses) == 0:
        return np.full(len(gt_poses), penalty_mm)
    matches, errors = greedy_match(est_poses, gt_poses, model)
    out = np.full(len(gt_poses), penalty_mm)
    for i, j in matches:
        out[j] = errors[i, j]
    return out


def detection_rate(est_poses, gt_poses, model: ObjectModel,
                   threshold_fraction: float = CORRECTNESS_FRACTION) -> float:
    """Fraction of ground-truth objects matched with e_ADD below the
    threshold (default 10% of the model diameter)."""
    if len(gt_poses) == 0:
        return 0.0
    if len(est_poses) == 0:
        return 0.0
    matches, errors = greedy_match(est_poses, gt_poses, model)
    thr = threshold_fraction * model.diameter
    correct = sum(1 for i, j in matches if errors[i, j] < thr)
    return correct / len(gt_poses)
