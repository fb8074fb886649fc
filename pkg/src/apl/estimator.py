"""Simulated 6D pose estimator.

Stands in for a learned estimator: ground-truth camera-frame poses are
perturbed with occlusion-dependent Gaussian noise and objects drop out of
detection stochastically as visibility falls. Noise is larger along the
camera depth axis, which is why downstream features use mask depth instead
of the hypothesis z.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .geom import Pose6D, quat_from_axis_angle, quat_mul
from .scene import Rendering, Scene


@dataclass(frozen=True)
class NoiseModel:
    sigma_t_base: float = 2.0  # mm
    sigma_r_base: float = 0.05  # rad
    occlusion_gain: float = 4.0
    depth_axis_gain: float = 3.0
    detect_v0: float = 0.25
    detect_sharpness: float = 12.0

    def __post_init__(self):
        if min(self.sigma_t_base, self.sigma_r_base, self.occlusion_gain) < 0:
            raise ValueError("noise scales must be non-negative")
        if not (0 < self.detect_v0 < 1):
            raise ValueError("detect_v0 must be in (0,1)")
        if self.depth_axis_gain < 1:
            raise ValueError("depth_axis_gain must be >= 1")


@dataclass
class Hypothesis:
    pose: Pose6D  # camera frame at emission
    object_gt_index: int  # hidden; training/eval bookkeeping only
    bbox: tuple  # normalized (x0,y0,x1,y1)
    mask_pixels: np.ndarray  # flat pixel indices of the predicted mask
    mean_mask_depth: float  # mm
    verification: Optional[float] = None  # filled by fusion


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def estimate(rendering: Rendering, scene: Scene, grid, view_index: int,
             noise: NoiseModel, rng: np.random.Generator):
    """Noisy hypotheses for the objects visible in `rendering`.

    Detection probability is sigmoid(sharpness * (v - v0)); noise scales grow
    linearly in (1 - v). Emits at most one hypothesis per object and no false
    positives.
    """
    if len(rendering.visibility) != scene.n_objects:
        raise ValueError("rendering does not match scene")
    cam = grid.cam_from_world[view_index]
    depth_flat = rendering.depth.ravel()
    hyps = []
    for i, gt in enumerate(scene.gt_poses):
        v = float(rendering.visibility[i])
        bbox = rendering.bboxes[i]
        if bbox is None or v <= 0.0:
            continue
        if rng.random() >= _sigmoid(noise.detect_sharpness * (v - noise.detect_v0)):
            continue
        occ = 1.0 + noise.occlusion_gain * (1.0 - v)
        gt_cam = cam.compose(gt)
        sigma_t = noise.sigma_t_base * occ
        dt = rng.normal(0.0, sigma_t, size=3)
        dt[2] *= noise.depth_axis_gain
        angle = abs(rng.normal(0.0, noise.sigma_r_base * occ))
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        dq = quat_from_axis_angle(axis, angle)
        pose = Pose6D(quat_mul(dq, gt_cam.q), gt_cam.t + dt)
        mask_px = np.flatnonzero(rendering.masks[i].ravel())
        hyps.append(Hypothesis(pose, i, bbox, mask_px,
                               float(depth_flat[mask_px].mean())))
    return hyps


def k_of(hyps) -> int:
    return len(hyps)
