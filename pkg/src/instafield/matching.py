"""Multi-view instance-ID resolution.

3D instance masks are projected into each view with occlusion handling
(transmittance-weighted occupancy), matched against per-view 2D panoptic
masks by IoU, and re-labeled with global instance ids. Also houses the
majority-class registry and the built-in morphological mask refiner.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import kernels
from .boxes import Aabb
from .cameras import Camera
from .grids import VoxelGrid, ray_aabb_intersect_batch
from .rng import pixel_seed, stratified_offsets

UNLABELED = 65535
BACKGROUND = 0


@dataclass
class LabelImage:
    """Per-pixel 16-bit instance ids; 0 = background, 65535 = unlabeled."""

    width: int
    height: int
    ids: np.ndarray

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=np.uint16)
        if ids.shape != (self.height, self.width):
            raise ValueError("ids shape must be (height, width)")
        self.ids = ids

    @classmethod
    def from_ids(cls, ids: np.ndarray) -> "LabelImage":
        ids = np.asarray(ids, dtype=np.uint16)
        return cls(width=ids.shape[1], height=ids.shape[0], ids=ids)

    def mask_of(self, instance_id: int) -> np.ndarray:
        return self.ids == instance_id

    def present_ids(self):
        ids = np.unique(self.ids)
        return [int(v) for v in ids if v not in (BACKGROUND, UNLABELED)]


@dataclass
class PanopticInput:
    """One view's panoptic prediction: view-local ids + per-id classes."""

    labels: LabelImage
    id_to_class: dict


@dataclass
class InstanceRegistry:
    """Global instances with occupancy grids, boxes, and majority classes."""

    instances: list = field(default_factory=list)  # dicts with global_id, ...
    semantic_map: dict = field(default_factory=dict)  # global_id -> class

    def classes(self) -> dict:
        return dict(self.semantic_map)


def project_instance_mask(density: VoxelGrid, instance_mask: VoxelGrid,
                          camera: Camera, count: int = 64,
                          occupancy_threshold: float = 0.5,
                          rng_seed: int = 0) -> np.ndarray:
    """Occlusion-aware projection of a 3D occupancy mask into a view.

    Per pixel, accumulates sum_k w_k * [mask(t_k) > 0.5] with the scene
    density's integration weights; the pixel is in the projected mask iff
    the accumulated value exceeds the occupancy threshold.
    """
    if np.any(density.bounds.min_corner != instance_mask.bounds.min_corner) \
            or np.any(density.bounds.max_corner != instance_mask.bounds.max_corner):
        raise ValueError("density and mask grids must share bounds")
    h, w = camera.height, camera.width
    origins, dirs = camera.all_rays()
    origins = np.ascontiguousarray(origins.reshape(-1, 3))
    dirs = np.ascontiguousarray(dirs.reshape(-1, 3))
    t0, t1 = ray_aabb_intersect_batch(origins, dirs, density.bounds)
    ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    seeds = pixel_seed(rng_seed, ii.reshape(-1), jj.reshape(-1))
    u = stratified_offsets(seeds, count)
    bmin = density.bounds.min_corner
    inv_vox = density.inv_voxel
    sig = np.ascontiguousarray(density.data, dtype=np.float64)
    t_vals, _, weights, _ = kernels.render_core(sig, bmin, inv_vox, origins,
                                                dirs, t0, t1, u)
    occ = kernels.indicator_sums(
        np.ascontiguousarray(instance_mask.data, dtype=np.float64),
        instance_mask.bounds.min_corner, instance_mask.inv_voxel,
        origins, dirs, t_vals, weights)
    return (occ.reshape(h, w) > occupancy_threshold)


def mask_iou_2d(a: np.ndarray, b: np.ndarray) -> float:
    """|a AND b| / |a OR b|; 0 when both masks are empty."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError("mask dimensions differ")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 0.0
    return np.count_nonzero(a & b) / union


def match_view(projected_masks: dict, panoptic: PanopticInput,
               iou_min: float = 0.05, background_classes=(0,)) -> LabelImage:
    """Relabel one view's panoptic masks with global instance ids.

    projected_masks: {global_id: HxW bool}. Each predicted 2D mask goes to
    the argmax-IoU instance (ties toward the lower global id); a best IoU
    <= iou_min makes its pixels UNLABELED. Background-class panoptic pixels
    become 0.
    """
    ids = panoptic.labels.ids
    out = np.zeros_like(ids)
    background_classes = set(background_classes)
    gids = sorted(projected_masks)
    for local_id in panoptic.labels.present_ids():
        pixels = ids == local_id
        cls = panoptic.id_to_class.get(local_id, BACKGROUND)
        if cls in background_classes:
            continue  # stays background
        best_gid, best_iou = None, 0.0
        for gid in gids:
            iou = mask_iou_2d(pixels, projected_masks[gid])
            if iou > best_iou:
                best_gid, best_iou = gid, iou
        if best_gid is not None and best_iou > iou_min:
            out[pixels] = best_gid
        else:
            out[pixels] = UNLABELED
    return LabelImage.from_ids(out)


def build_registry(detections, panoptic_views, cameras, density: VoxelGrid,
                   count: int = 64, occupancy_threshold: float = 0.5,
                   iou_min: float = 0.05, background_classes=(0,),
                   rng_seed: int = 0):
    """Match every view against the detected 3D instances.

    detections: list of {id, class, box, mask_grid} records (the
    instance-detection file contract). Returns (InstanceRegistry, list of
    per-view LabelImage with consistent global ids). The per-instance class
    is the majority vote over matched 2D masks, ties toward the lower class
    index; instances never matched keep the detection's own class.
    """
    if len(panoptic_views) != len(cameras):
        raise ValueError("need one camera per panoptic view")
    registry = InstanceRegistry()
    if not detections:
        return registry, [
            LabelImage.from_ids(np.zeros_like(p.labels.ids))
            for p in panoptic_views
        ]
    for det in detections:
        registry.instances.append({
            "global_id": int(det["id"]),
            "class": int(det["class"]),
            "mask_grid": det["mask_grid"],
            "box": det["box"],
        })
    votes = {inst["global_id"]: Counter() for inst in registry.instances}
    label_images = []
    for view_idx, (panoptic, camera) in enumerate(zip(panoptic_views, cameras)):
        projected = {
            inst["global_id"]: project_instance_mask(
                density, inst["mask_grid"], camera, count=count,
                occupancy_threshold=occupancy_threshold, rng_seed=rng_seed)
            for inst in registry.instances
        }
        labels = match_view(projected, panoptic, iou_min=iou_min,
                            background_classes=background_classes)
        label_images.append(labels)
        # vote: each matched panoptic mask contributes its class
        ids = panoptic.labels.ids
        for local_id in panoptic.labels.present_ids():
            cls = panoptic.id_to_class.get(local_id, BACKGROUND)
            if cls in set(background_classes):
                continue
            pixels = ids == local_id
            assigned = np.unique(labels.ids[pixels])
            for gid in assigned:
                if gid not in (BACKGROUND, UNLABELED):
                    votes[int(gid)][cls] += 1
    for inst in registry.instances:
        tally = votes[inst["global_id"]]
        if tally:
            top = max(tally.values())
            cls = min(c for c, n in tally.items() if n == top)
        else:
            cls = inst["class"]
        registry.semantic_map[inst["global_id"]] = cls
    return registry, label_images


def refine_masks_builtin(label_image: LabelImage, radius: int = 1) -> LabelImage:
    """Per-instance morphological close (dilate then erode, square element),
    superimposed with overlaps resolved toward the instance whose
    pre-refinement mask is larger."""
    if radius < 1:
        return LabelImage.from_ids(label_image.ids.copy())
    ids = label_image.ids
    structure = np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)
    order = sorted(label_image.present_ids(),
                   key=lambda g: int(np.count_nonzero(ids == g)))
    out = np.where(ids == UNLABELED, UNLABELED, BACKGROUND).astype(np.uint16)
    # paint small-to-large so larger original masks win contested pixels
    for gid in order:
        # edge padding keeps the closing from eroding masks that touch the
        # image border (outside pixels would otherwise count as empty)
        padded = np.pad(ids == gid, radius, mode="edge")
        closed = ndimage.binary_closing(padded, structure=structure)
        out[closed[radius:-radius, radius:-radius]] = gid
    return LabelImage.from_ids(out)
