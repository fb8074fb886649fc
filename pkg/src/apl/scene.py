"""Procedural object models, cluttered scene generation and depth rendering.

The renderer is a point-splat z-buffer: every model point of every object is
projected, each point covers a 3x3 pixel splat, and the nearest depth wins.
That is enough to produce depth maps, instance masks, bounding boxes and
visibility fractions without a rasterization pipeline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .geom import Pose6D, PointSet, random_quat

MIN_SEPARATION_FACTOR = 0.6  # of model diameter, between object centers
SPLAT_RADIUS = 1  # pixels (Chebyshev), i.e. 3x3 splats
DETECTABILITY_THRESHOLD = 0.15  # max-view visibility below this -> pruned from GT


@dataclass(frozen=True, eq=False)
class ObjectModel:
    kind: str  # "cup" or "bunny"
    cloud: PointSet  # model frame
    diameter: float  # mm, max pairwise point distance
    symmetry_axis: Optional[np.ndarray]  # unit revolution axis, model frame


@dataclass(frozen=True, eq=False)
class Scene:
    model: ObjectModel
    gt_poses: tuple  # of Pose6D, world frame
    bin_extent: np.ndarray  # mm, box centered at the world origin
    seed: int

    @property
    def n_objects(self) -> int:
        return len(self.gt_poses)


@dataclass(frozen=True)
class Intrinsics:
    width: int = 128
    height: int = 128
    focal: float = 140.0
    cx: float = 64.0
    cy: float = 64.0


@dataclass(frozen=True, eq=False)
class Rendering:
    depth: np.ndarray  # (h,w) mm, 0 = empty
    instance_ids: np.ndarray  # (h,w) int, -1 = empty
    masks: tuple  # per-object (h,w) bool arrays
    bboxes: tuple  # per-object normalized (x0,y0,x1,y1) or None if invisible
    visibility: np.ndarray  # per-object fraction in [0,1]
    scene_cloud: PointSet  # back-projected visible pixels, camera frame
    pixel_object: np.ndarray  # object id per scene_cloud row
    pixel_index: np.ndarray  # flat pixel index per scene_cloud row


def max_pairwise_distance(points: np.ndarray) -> float:
    """Brute-force model diameter; fine for the point counts used here."""
    d2max = 0.0
    for i in range(len(points)):
        d2 = np.sum((points[i + 1:] - points[i]) ** 2, axis=1)
        if len(d2):
            d2max = max(d2max, float(d2.max()))
    return float(np.sqrt(d2max))


def _cup_cloud(n_points: int, rng) -> PointSet:
    """Open cylindrical shell + bottom disk + handle arc. Radius 30, height 60."""
    r, h = 30.0, 60.0
    n_side = int(n_points * 0.6)
    n_bottom = int(n_points * 0.2)
    n_handle = n_points - n_side - n_bottom

    ang = rng.random(n_side) * 2 * np.pi
    z = rng.random(n_side) * h
    side = np.column_stack([r * np.cos(ang), r * np.sin(ang), z])
    side_n = np.column_stack([np.cos(ang), np.sin(ang), np.zeros(n_side)])

    rad = r * np.sqrt(rng.random(n_bottom))
    ang = rng.random(n_bottom) * 2 * np.pi
    bottom = np.column_stack([rad * np.cos(ang), rad * np.sin(ang), np.zeros(n_bottom)])
    bottom_n = np.tile([0.0, 0.0, -1.0], (n_bottom, 1))

    # handle: circular arc in the x-z plane, tube of radius 3 around it
    arc_r, tube_r = 14.0, 3.0
    u = rng.random(n_handle) * np.pi - np.pi / 2  # arc parameter
    v = rng.random(n_handle) * 2 * np.pi  # around the tube
    cx, cz = r, h / 2
    ax = cx + (arc_r + tube_r * np.cos(v)) * np.cos(u)
    az = cz + (arc_r + tube_r * np.cos(v)) * np.sin(u)
    ay = tube_r * np.sin(v)
    handle = np.column_stack([ax, ay, az])
    hn = np.column_stack([np.cos(v) * np.cos(u), np.sin(v), np.cos(v) * np.sin(u)])

    pts = np.vstack([side, bottom, handle])
    nrm = np.vstack([side_n, bottom_n, hn])
    pts -= np.array([0.0, 0.0, h / 2])  # center on origin
    return PointSet(pts, nrm)


def _ellipsoid_shell(n, center, radii, rng):
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    pts = np.asarray(center) + v * np.asarray(radii)
    # outward normal of an ellipsoid: gradient of the implicit surface
    nrm = v / np.asarray(radii)
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    return pts, nrm


def _bunny_cloud(n_points: int, rng) -> PointSet:
    """Asymmetric union of three ellipsoid shells: body, head, one ear."""
    n_body = int(n_points * 0.55)
    n_head = int(n_points * 0.3)
    n_ear = n_points - n_body - n_head
    body, body_n = _ellipsoid_shell(n_body, [0, 0, 0], [28, 22, 24], rng)
    head, head_n = _ellipsoid_shell(n_head, [22, 6, 20], [14, 12, 13], rng)
    ear, ear_n = _ellipsoid_shell(n_ear, [26, 10, 38], [5, 4, 14], rng)
    pts = np.vstack([body, head, ear])
    nrm = np.vstack([body_n, head_n, ear_n])
    return PointSet(pts, nrm)


def make_model(kind: str, n_points: int, seed: int) -> ObjectModel:
    if n_points < 50:
        raise ValueError("n_points must be >= 50")
    rng = np.random.default_rng(seed)
    if kind == "cup":
        cloud = _cup_cloud(n_points, rng)
        sym = np.array([0.0, 0.0, 1.0])
    elif kind == "bunny":
        cloud = _bunny_cloud(n_points, rng)
        sym = None
    else:
        raise ValueError(f"unknown model kind: {kind!r}")
    return ObjectModel(kind, cloud, max_pairwise_distance(cloud.points), sym)


def default_bin_extent(model: ObjectModel) -> np.ndarray:
    scale = model.diameter / 90.0
    return np.array([200.0, 200.0, 120.0]) * scale


def generate_scene(model: ObjectModel, n_objects: int, bin_extent=None,
                   seed: int = 0) -> Scene:
    """Rejection-sample object poses: centers uniform in the bin, orientations
    uniform on SO(3), pairwise center separation >= 0.6 * diameter."""
    if n_objects < 1:
        raise ValueError("n_objects must be >= 1")
    if bin_extent is None:
        bin_extent = default_bin_extent(model)
    bin_extent = np.asarray(bin_extent, dtype=np.float64)
    rng = np.random.default_rng(seed)
    min_sep = MIN_SEPARATION_FACTOR * model.diameter
    centers = []
    poses = []
    failures = 0
    while len(poses) < n_objects:
        c = (rng.random(3) - 0.5) * bin_extent
        if centers and np.min(np.linalg.norm(np.array(centers) - c, axis=1)) < min_sep:
            failures += 1
            if failures >= 10_000:
                raise RuntimeError(
                    f"bin capacity exceeded: cannot place {n_objects} objects "
                    f"with separation {min_sep:.1f} mm")
            continue
        failures = 0
        centers.append(c)
        poses.append(Pose6D(random_quat(rng), c))
    return Scene(model, tuple(poses), bin_extent, seed)


def scene_to_json(scene: Scene) -> dict:
    return {
        "model_kind": scene.model.kind,
        "seed": scene.seed,
        "bin_extent": scene.bin_extent.tolist(),
        "poses": [{"q": p.q.tolist(), "t": p.t.tolist()} for p in scene.gt_poses],
    }


def scene_from_json(data: dict, model: ObjectModel) -> Scene:
    poses = tuple(Pose6D(np.array(p["q"]), np.array(p["t"])) for p in data["poses"])
    return Scene(model, poses, np.array(data["bin_extent"]), int(data["seed"]))


def save_scene(scene: Scene, path):
    with open(path, "w") as f:
        json.dump(scene_to_json(scene), f, indent=2)


def load_scene(path, model: ObjectModel) -> Scene:
    with open(path) as f:
        return scene_from_json(json.load(f), model)


def _project(points_cam: np.ndarray, intr: Intrinsics):
    z = points_cam[:, 2]
    valid = z > 1.0
    u = np.full(len(z), -1.0)
    v = np.full(len(z), -1.0)
    u[valid] = intr.focal * points_cam[valid, 0] / z[valid] + intr.cx
    v[valid] = intr.focal * points_cam[valid, 1] / z[valid] + intr.cy
    return u, v, z, valid


def _splat_indices(u, v, intr: Intrinsics):
    """Pixel rows/cols covered by each point's splat; returns flat indices and
    the source row of each splatted pixel."""
    px = np.round(u).astype(np.int64)
    py = np.round(v).astype(np.int64)
    offs = range(-SPLAT_RADIUS, SPLAT_RADIUS + 1)
    flat_all, src_all = [], []
    base = np.arange(len(u))
    for dy in offs:
        for dx in offs:
            x = px + dx
            y = py + dy
            ok = (x >= 0) & (x < intr.width) & (y >= 0) & (y < intr.height)
            flat_all.append(y[ok] * intr.width + x[ok])
            src_all.append(base[ok])
    return np.concatenate(flat_all), np.concatenate(src_all)


def render(scene: Scene, grid, view_index: int, intr: Intrinsics = Intrinsics()) -> Rendering:
    cam = grid.cam_from_world[view_index]
    n_obj = scene.n_objects
    model_pts = scene.model.cloud.points
    model_nrm = scene.model.cloud.normals
    n_pts = len(model_pts)

    all_cam = np.empty((n_obj * n_pts, 3))
    all_nrm = np.empty((n_obj * n_pts, 3))
    obj_of = np.repeat(np.arange(n_obj), n_pts)
    for i, pose in enumerate(scene.gt_poses):
        world_from_model = pose
        cam_pose = cam.compose(world_from_model)
        all_cam[i * n_pts:(i + 1) * n_pts] = cam_pose.apply(model_pts)
        all_nrm[i * n_pts:(i + 1) * n_pts] = cam_pose.rotate(model_nrm)

    u, v, z, valid = _project(all_cam, intr)
    idx = np.flatnonzero(valid)
    flat, src = _splat_indices(u[idx], v[idx], intr)
    src = idx[src]

    h, w = intr.height, intr.width
    depth = np.zeros(h * w)
    winner = np.full(h * w, -1, dtype=np.int64)  # index into all_cam
    if len(flat):
        # write farthest first so the nearest point wins each pixel
        order = np.argsort(-z[src], kind="stable")
        depth[flat[order]] = z[src[order]]
        winner[flat[order]] = src[order]

    inst = np.where(winner >= 0, obj_of[np.clip(winner, 0, None)], -1)

    # per-object alone footprint (pixels covered ignoring other objects)
    masks = []
    bboxes = []
    visibility = np.zeros(n_obj)
    vis_mask_flat = winner >= 0
    for i in range(n_obj):
        own = np.flatnonzero(valid & (obj_of == i))
        if len(own):
            f_i, _ = _splat_indices(u[own], v[own], intr)
            alone = len(np.unique(f_i))
        else:
            alone = 0
        mask_flat = vis_mask_flat & (inst == i)
        n_vis = int(mask_flat.sum())
        visibility[i] = n_vis / alone if alone else 0.0
        mask = mask_flat.reshape(h, w)
        masks.append(mask)
        if n_vis:
            ys, xs = np.nonzero(mask)
            bboxes.append((xs.min() / w, ys.min() / h, (xs.max() + 1) / w, (ys.max() + 1) / h))
        else:
            bboxes.append(None)
    visibility = np.clip(visibility, 0.0, 1.0)

    # camera-frame surface point observed at each foreground pixel; using the
    # winning point itself (rather than the pixel-center ray) keeps the cloud
    # free of splat quantization error
    pix = np.flatnonzero(vis_mask_flat)
    cloud_pts = all_cam[winner[pix]]
    cloud_nrm = all_nrm[winner[pix]]
    return Rendering(depth.reshape(h, w), inst.reshape(h, w), tuple(masks),
                     tuple(bboxes), visibility,
                     PointSet(cloud_pts, cloud_nrm), inst[pix], pix)


def visibility_profile(scene: Scene, grid, intr: Intrinsics = Intrinsics(),
                       renders=None):
    """Per-view, per-object visibility table plus the detectable-object set."""
    table = np.zeros((len(grid), scene.n_objects))
    for k in range(len(grid)):
        r = renders[k] if renders is not None else render(scene, grid, k, intr)
        table[k] = r.visibility
    if scene.n_objects == 0:
        return table, np.array([], dtype=np.int64)
    detectable = np.flatnonzero(table.max(axis=0) >= DETECTABILITY_THRESHOLD)
    return table, detectable


def save_depth_pgm(depth: np.ndarray, path):
    """8-bit PGM debug dump, linearly scaled over the non-empty range."""
    d = depth.astype(np.float64)
    nz = d > 0
    if nz.any():
        lo, hi = d[nz].min(), d[nz].max()
        span = hi - lo if hi > lo else 1.0
        img = np.where(nz, 255 - ((d - lo) / span * 200).astype(np.int64), 0)
    else:
        img = np.zeros_like(d, dtype=np.int64)
    h, w = d.shape
    with open(path, "wb") as f:
        f.write(f"P5 {w} {h} 255\n".encode())
        f.write(img.astype(np.uint8).tobytes())
