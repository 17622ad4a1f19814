"""Synthetic scenes with analytic geometry.

Objects are boxes, spheres, and z-axis cylinders with opaque interiors and
constant colors. Ground-truth label and depth images come from exact
ray-primitive intersection, so every rendered quantity has an analytic
oracle. Corruptions model per-view id permutation, label noise, mask
erosion, and dropped instances.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from scipy import ndimage

from .boxes import Aabb, save_detections
from .cameras import Camera, look_at, save_cameras
from .grids import SceneBounds, VoxelGrid
from .images import write_label_pgm, write_ppm
from .matching import BACKGROUND, UNLABELED, LabelImage, PanopticInput
from .render import SceneModel

DEFAULT_SIGMA = 50.0  # opaque interiors, per world unit


@dataclass
class SceneObject:
    shape: str  # box | sphere | cylinder
    center: tuple
    size: tuple  # box: (w,l,h); sphere: (r,); cylinder: (r, height)
    color: tuple
    cls: int  # semantic class, >= 1

    def __post_init__(self):
        if self.shape not in ("box", "sphere", "cylinder"):
            raise ValueError(f"unknown shape {self.shape!r}")
        if self.cls < 1:
            raise ValueError("object class must be >= 1")

    def contains(self, pts: np.ndarray) -> np.ndarray:
        """Vectorized interior test for (..., 3) points."""
        p = np.asarray(pts, dtype=np.float64) - np.asarray(self.center)
        if self.shape == "box":
            half = np.asarray(self.size) / 2
            return np.all(np.abs(p) <= half, axis=-1)
        if self.shape == "sphere":
            return np.sum(p ** 2, axis=-1) <= self.size[0] ** 2
        r, h = self.size[0], self.size[1]
        return (p[..., 0] ** 2 + p[..., 1] ** 2 <= r ** 2) \
            & (np.abs(p[..., 2]) <= h / 2)

    def bounding_box(self) -> Aabb:
        if self.shape == "box":
            return Aabb(self.center, self.size)
        if self.shape == "sphere":
            r = self.size[0]
            return Aabb(self.center, (2 * r, 2 * r, 2 * r))
        r, h = self.size[0], self.size[1]
        return Aabb(self.center, (2 * r, 2 * r, h))

    def intersect(self, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        """First-hit distances for (N, 3) rays; inf where missed."""
        o = np.asarray(origins, dtype=np.float64) - np.asarray(self.center)
        d = np.asarray(dirs, dtype=np.float64)
        inf = np.full(o.shape[0], np.inf)
        if self.shape == "sphere":
            r = self.size[0]
            b = np.sum(o * d, axis=1)
            c = np.sum(o * o, axis=1) - r * r
            disc = b * b - c
            ok = disc >= 0
            sq = np.sqrt(np.maximum(disc, 0.0))
            t1 = -b - sq
            t2 = -b + sq
            t = np.where(t1 > 1e-9, t1, np.where(t2 > 1e-9, t2, np.inf))
            return np.where(ok, t, inf)
        if self.shape == "box":
            half = np.asarray(self.size) / 2
            with np.errstate(divide="ignore", invalid="ignore"):
                inv = 1.0 / d
                lo = (-half - o) * inv
                hi = (half - o) * inv
            par = d == 0.0
            inside = np.abs(o) <= half
            lo = np.where(par, np.where(inside, -np.inf, np.inf), lo)
            hi = np.where(par, np.where(inside, np.inf, -np.inf), hi)
            near = np.minimum(lo, hi).max(axis=1)
            far = np.maximum(lo, hi).min(axis=1)
            t = np.where(near > 1e-9, near, np.where(far > 1e-9, far, np.inf))
            return np.where(far >= near, t, inf)
        # finite z-cylinder: lateral surface + caps
        r, h = self.size[0], self.size[1]
        a = d[:, 0] ** 2 + d[:, 1] ** 2
        b = o[:, 0] * d[:, 0] + o[:, 1] * d[:, 1]
        c = o[:, 0] ** 2 + o[:, 1] ** 2 - r * r
        disc = b * b - a * c
        best = inf.copy()
        with np.errstate(divide="ignore", invalid="ignore"):
            sq = np.sqrt(np.maximum(disc, 0.0))
            for sign in (-1.0, 1.0):
                t = (-b + sign * sq) / a
                z = o[:, 2] + t * d[:, 2]
                ok = (disc >= 0) & (a > 0) & (t > 1e-9) & (np.abs(z) <= h / 2)
                best = np.where(ok & (t < best), t, best)
            for zcap in (-h / 2, h / 2):
                t = (zcap - o[:, 2]) / d[:, 2]
                ok = (d[:, 2] != 0) & (t > 1e-9)
                x = o[:, 0] + t * d[:, 0]
                y = o[:, 1] + t * d[:, 1]
                ok &= x ** 2 + y ** 2 <= r * r
                best = np.where(ok & (t < best), t, best)
        return best


@dataclass
class CorruptionSpec:
    permute_ids: bool = True
    label_noise_rate: float = 0.0
    erosion_radius: int = 0
    drop_probability: float = 0.0


@dataclass
class FixtureSpec:
    objects: list
    bounds_min: tuple = (-1.0, -1.0, -1.0)
    bounds_max: tuple = (1.0, 1.0, 1.0)
    grid_dims: tuple = (64, 64, 64)
    image_size: tuple = (128, 128)  # (width, height)
    n_train_views: int = 20
    n_test_views: int = 5
    camera_radius: float = 2.8
    camera_elevation: float = 0.6  # radians above the horizontal plane
    focal: float = 150.0
    sigma: float = DEFAULT_SIGMA
    seed: int = 0
    corruption: CorruptionSpec = field(default_factory=CorruptionSpec)

    def __post_init__(self):
        if not 1 <= len(self.objects) <= 8:
            raise ValueError("fixture needs 1 to 8 objects")


@dataclass
class Fixture:
    """In-memory fixture: scene, cameras, analytic renders, corruption."""

    spec: FixtureSpec
    scene: SceneModel
    instance_grids: list  # per object, 1-channel occupancy VoxelGrid
    boxes: list  # per object Aabb
    train_cameras: list
    test_cameras: list
    gt_rgb: list  # per train view (H, W, 3)
    gt_labels: list  # per train view LabelImage (global ids, consistent)
    gt_depth: list  # per train view (H, W)
    test_gt_labels: list
    test_gt_rgb: list
    panoptic: list  # per train view PanopticInput (possibly corrupted)
    semantic_map: dict  # global_id -> class

    @property
    def num_labels(self) -> int:
        return len(self.spec.objects) + 1


def _orbit_cameras(spec: FixtureSpec, count: int, phase: float) -> list:
    w, h = spec.image_size
    cams = []
    center = (np.asarray(spec.bounds_min) + np.asarray(spec.bounds_max)) / 2
    for idx in range(count):
        ang = phase + 2 * np.pi * idx / count
        eye = center + spec.camera_radius * np.array([
            np.cos(ang) * np.cos(spec.camera_elevation),
            np.sin(ang) * np.cos(spec.camera_elevation),
            np.sin(spec.camera_elevation)])
        cams.append(Camera(width=w, height=h, fx=spec.focal, fy=spec.focal,
                           cx=w / 2, cy=h / 2,
                           cam_to_world=look_at(eye, center)))
    return cams


def analytic_view(objects, camera: Camera):
    """Exact label, depth, and rgb images via ray-primitive intersection."""
    origins, dirs = camera.all_rays()
    h, w = camera.height, camera.width
    o = origins.reshape(-1, 3)
    d = dirs.reshape(-1, 3)
    best_t = np.full(o.shape[0], np.inf)
    labels = np.zeros(o.shape[0], dtype=np.uint16)
    rgb = np.zeros((o.shape[0], 3))
    for gid, obj in enumerate(objects, start=1):
        t = obj.intersect(o, d)
        closer = t < best_t
        best_t = np.where(closer, t, best_t)
        labels = np.where(closer, np.uint16(gid), labels)
        rgb = np.where(closer[:, None], np.asarray(obj.color), rgb)
    depth = np.where(np.isfinite(best_t), best_t, 0.0)
    return (labels.reshape(h, w), depth.reshape(h, w),
            rgb.reshape(h, w, 3))


def _corrupt_view(gt_ids: np.ndarray, objects, corruption: CorruptionSpec,
                  rng: np.random.Generator) -> PanopticInput:
    n = len(objects)
    ids = gt_ids.copy()
    # drop whole instances (missing predictions)
    for gid in range(1, n + 1):
        if corruption.drop_probability > 0 and \
                rng.random() < corruption.drop_probability:
            ids[ids == gid] = BACKGROUND
    # erode each remaining mask
    if corruption.erosion_radius > 0:
        se = np.ones((2 * corruption.erosion_radius + 1,) * 2, dtype=bool)
        eroded = np.full_like(ids, BACKGROUND)
        for gid in np.unique(ids):
            if gid == BACKGROUND:
                continue
            keep = ndimage.binary_erosion(ids == gid, structure=se)
            eroded[keep] = gid
        ids = eroded
    # salt-and-pepper label noise
    if corruption.label_noise_rate > 0:
        flip = rng.random(ids.shape) < corruption.label_noise_rate
        ids = np.where(flip, rng.integers(0, n + 1, ids.shape).astype(np.uint16),
                       ids)
    # per-view id permutation (view-local ids)
    if corruption.permute_ids:
        perm = rng.permutation(np.arange(1, n + 1))
    else:
        perm = np.arange(1, n + 1)
    local = ids.copy()
    for gid in range(1, n + 1):
        local[ids == gid] = perm[gid - 1]
    id_to_class = {int(perm[gid - 1]): objects[gid - 1].cls
                   for gid in range(1, n + 1)}
    return PanopticInput(labels=LabelImage.from_ids(local),
                         id_to_class=id_to_class)


def make_fixture(spec: FixtureSpec) -> Fixture:
    """Build the analytic scene, cameras, ground truth, and corrupted
    panoptic inputs in memory."""
    bounds = SceneBounds(np.asarray(spec.bounds_min), np.asarray(spec.bounds_max))
    density = VoxelGrid.zeros(spec.grid_dims, 1, bounds)
    color = VoxelGrid.zeros(spec.grid_dims, 3, bounds)
    centers = density.voxel_centers()
    instance_grids = []
    boxes = []
    for obj in spec.objects:
        inside = obj.contains(centers)
        density.data[inside, 0] = spec.sigma
        color.data[inside] = np.asarray(obj.color, dtype=np.float32)
        occ = VoxelGrid.zeros(spec.grid_dims, 1, bounds)
        occ.data[inside, 0] = 1.0
        instance_grids.append(occ)
        boxes.append(obj.bounding_box())
    scene = SceneModel(density=density, color=color)

    train_cams = _orbit_cameras(spec, spec.n_train_views, phase=0.0)
    test_cams = _orbit_cameras(spec, spec.n_test_views,
                               phase=np.pi / max(spec.n_train_views, 1))

    rng = np.random.default_rng(spec.seed)
    gt_rgb, gt_labels, gt_depth, panoptic = [], [], [], []
    for cam in train_cams:
        ids, depth, rgb = analytic_view(spec.objects, cam)
        gt_rgb.append(rgb)
        gt_depth.append(depth)
        gt_labels.append(LabelImage.from_ids(ids))
        panoptic.append(_corrupt_view(ids, spec.objects, spec.corruption, rng))
    test_gt_labels, test_gt_rgb = [], []
    for cam in test_cams:
        ids, _, rgb = analytic_view(spec.objects, cam)
        test_gt_labels.append(LabelImage.from_ids(ids))
        test_gt_rgb.append(rgb)

    semantic_map = {gid: obj.cls
                    for gid, obj in enumerate(spec.objects, start=1)}
    return Fixture(spec=spec, scene=scene, instance_grids=instance_grids,
                   boxes=boxes, train_cameras=train_cams,
                   test_cameras=test_cams, gt_rgb=gt_rgb, gt_labels=gt_labels,
                   gt_depth=gt_depth, test_gt_labels=test_gt_labels,
                   test_gt_rgb=test_gt_rgb, panoptic=panoptic,
                   semantic_map=semantic_map)


def save_fixture(fixture: Fixture, out_dir) -> dict:
    """Write the fixture to disk in the repo-wide file formats; returns a
    dict of the written paths."""
    out = Path(out_dir)
    (out / "views").mkdir(parents=True, exist_ok=True)
    fixture.scene.density.save(out / "density.json")
    fixture.scene.color.save(out / "color.json")
    save_cameras(fixture.train_cameras, out / "cameras_train.json")
    save_cameras(fixture.test_cameras, out / "cameras_test.json")
    detections = [
        {"id": gid, "class": obj.cls, "box": fixture.boxes[gid - 1],
         "score": 1.0, "mask_grid": fixture.instance_grids[gid - 1]}
        for gid, obj in enumerate(fixture.spec.objects, start=1)
    ]
    save_detections(detections, out / "detections.json")
    class_map = {str(gid): int(cls) for gid, cls in fixture.semantic_map.items()}
    (out / "semantic_map.json").write_text(json.dumps(class_map, indent=2,
                                                      sort_keys=True))
    for vi in range(len(fixture.train_cameras)):
        write_ppm(out / "views" / f"train_{vi:03d}_rgb.ppm", fixture.gt_rgb[vi])
        write_label_pgm(out / "views" / f"train_{vi:03d}_gt.pgm",
                        fixture.gt_labels[vi].ids, fixture.semantic_map)
        write_label_pgm(out / "views" / f"train_{vi:03d}_panoptic.pgm",
                        fixture.panoptic[vi].labels.ids,
                        fixture.panoptic[vi].id_to_class)
    for vi in range(len(fixture.test_cameras)):
        write_label_pgm(out / "views" / f"test_{vi:03d}_gt.pgm",
                        fixture.test_gt_labels[vi].ids, fixture.semantic_map)
        write_ppm(out / "views" / f"test_{vi:03d}_rgb.ppm",
                  fixture.test_gt_rgb[vi])
    spec_dict = asdict(fixture.spec)
    (out / "fixture.json").write_text(json.dumps(spec_dict, indent=2,
                                                 sort_keys=True, default=list))
    return {"root": str(out)}


def default_objects(count: int = 3):
    """A small spread-out arrangement used by the CLI and tests."""
    palette = [
        SceneObject("box", (-0.45, -0.35, -0.3), (0.55, 0.55, 0.65),
                    (0.9, 0.2, 0.15), 1),
        SceneObject("sphere", (0.45, 0.3, 0.05), (0.34,), (0.15, 0.7, 0.2), 2),
        SceneObject("cylinder", (0.0, 0.45, -0.15), (0.24, 0.7),
                    (0.2, 0.3, 0.9), 3),
        SceneObject("sphere", (-0.35, 0.5, 0.35), (0.22,), (0.9, 0.8, 0.1), 2),
        SceneObject("box", (0.5, -0.45, 0.25), (0.4, 0.4, 0.4),
                    (0.7, 0.2, 0.8), 1),
        SceneObject("cylinder", (-0.05, -0.55, 0.3), (0.18, 0.45),
                    (0.1, 0.8, 0.8), 3),
        SceneObject("sphere", (0.0, 0.0, 0.55), (0.2,), (0.95, 0.5, 0.1), 2),
        SceneObject("box", (0.55, 0.55, 0.5), (0.3, 0.3, 0.3),
                    (0.4, 0.9, 0.4), 1),
    ]
    if not 1 <= count <= len(palette):
        raise ValueError("object count must be 1..8")
    return palette[:count]
