"""3D detection geometry and losses: AABB IoU, greedy NMS, box-offset
encode/decode, 3D RoIAlign, and the class-gated classification /
regression / mask objectives. All pure functions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .grids import VoxelGrid, trilinear_sample

_BCE_EPS = 1e-7


@dataclass(frozen=True)
class Aabb:
    """Axis-aligned box given by center (x,y,z) and size (w,l,h)."""

    center: np.ndarray
    size: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.center, dtype=np.float64).reshape(3)
        s = np.asarray(self.size, dtype=np.float64).reshape(3)
        if not np.all(s > 0):
            raise ValueError("box size must be positive")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "size", s)

    @property
    def min_corner(self) -> np.ndarray:
        return self.center - self.size / 2

    @property
    def max_corner(self) -> np.ndarray:
        return self.center + self.size / 2

    @property
    def volume(self) -> float:
        return float(np.prod(self.size))


@dataclass(frozen=True)
class BoxOffsets:
    """Dimensionless regression targets (t_x, t_y, t_z, t_w, t_l, t_h)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).reshape(6)
        if not np.all(np.isfinite(v)):
            raise ValueError("offsets must be finite")
        object.__setattr__(self, "values", v)


@dataclass
class Detection:
    """One RoI's outputs: box, sigmoid class scores, per-class offsets,
    and an m^3 x L mask with values in [0, 1]."""

    roi: Aabb
    class_scores: np.ndarray  # (L,), after sigmoid
    per_class_offsets: np.ndarray  # (L, 6)
    mask: np.ndarray  # (m, m, m, L)

    def __post_init__(self):
        s = np.asarray(self.class_scores, dtype=np.float64)
        if np.any(s < 0) or np.any(s > 1):
            raise ValueError("scores must lie in [0, 1]")
        m = np.asarray(self.mask, dtype=np.float64)
        if np.any(m < 0) or np.any(m > 1):
            raise ValueError("mask values must lie in [0, 1]")
        self.class_scores = s
        self.mask = m
        self.per_class_offsets = np.asarray(self.per_class_offsets,
                                            dtype=np.float64).reshape(-1, 6)


def box_iou_3d(a: Aabb, b: Aabb) -> float:
    """Intersection volume over union volume; 0 when disjoint."""
    lo = np.maximum(a.min_corner, b.min_corner)
    hi = np.minimum(a.max_corner, b.max_corner)
    inter = float(np.prod(np.maximum(hi - lo, 0.0)))
    if inter == 0.0:
        return 0.0
    return inter / (a.volume + b.volume - inter)


def nms_3d(boxes, scores, iou_threshold: float):
    """Greedy descending-score suppression; returns kept indices in score
    order with ties broken toward the lower input index."""
    if len(boxes) != len(scores):
        raise ValueError("boxes/scores length mismatch")
    order = sorted(range(len(boxes)), key=lambda i: (-scores[i], i))
    kept = []
    for i in order:
        if all(box_iou_3d(boxes[i], boxes[j]) <= iou_threshold for j in kept):
            kept.append(i)
    return kept


def encode_box_offsets(roi: Aabb, gt: Aabb) -> BoxOffsets:
    """Normalized offsets taking the RoI onto the ground-truth box."""
    t_center = (gt.center - roi.center) / roi.size
    t_size = np.log(gt.size / roi.size)
    return BoxOffsets(np.concatenate([t_center, t_size]))


def decode_box_offsets(roi: Aabb, t: BoxOffsets) -> Aabb:
    """Inverse of encode_box_offsets."""
    v = t.values
    return Aabb(center=roi.center + v[:3] * roi.size,
                size=roi.size * np.exp(v[3:]))


def roi_align_3d(features: VoxelGrid, roi: Aabb, out_res: int) -> np.ndarray:
    """Resample the feature grid inside the RoI onto an m^3 lattice.

    One trilinear sample at each output cell center, clamped at the grid
    boundary; output shape (m, m, m, C) indexed [ix, iy, iz, c].
    """
    if out_res < 1:
        raise ValueError("out_res must be >= 1")
    b = features.bounds
    lo = np.maximum(roi.min_corner, b.min_corner)
    hi = np.minimum(roi.max_corner, b.max_corner)
    if np.any(hi <= lo):
        raise ValueError("roi lies fully outside the grid bounds")
    m = out_res
    frac = (np.arange(m) + 0.5) / m
    centers = roi.min_corner + frac[:, None] * roi.size  # (m, 3) per axis
    xx, yy, zz = np.meshgrid(centers[:, 0], centers[:, 1], centers[:, 2],
                             indexing="ij")
    pts = np.stack([xx, yy, zz], axis=-1).reshape(-1, 3)
    vals = trilinear_sample(features, pts)
    return vals.reshape(m, m, m, features.channels)


# ---- losses ----------------------------------------------------------------

def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _bce(p, t):
    p = np.clip(p, _BCE_EPS, 1.0 - _BCE_EPS)
    return -(t * np.log(p) + (1 - t) * np.log(1 - p))


def smooth_l1(x: np.ndarray, beta: float = 1.0) -> np.ndarray:
    """Elementwise smooth L1 with transition at |x| = beta."""
    ax = np.abs(x)
    return np.where(ax < beta, 0.5 * ax ** 2 / beta, ax - 0.5 * beta)


def _smooth_l1_grad(x, beta=1.0):
    return np.where(np.abs(x) < beta, x / beta, np.sign(x))


def rcnn_losses(score_logits: np.ndarray, offsets: np.ndarray,
                mask_logits: np.ndarray, target_scores: np.ndarray,
                target_offsets: np.ndarray, target_masks: np.ndarray,
                positives: np.ndarray, lambda1: float = 1.0,
                lambda2: float = 1.0, with_grads: bool = False):
    """Classification / regression / mask objectives over a batch of RoIs.

    score_logits: (N, L) raw class logits (sigmoid applied internally);
    offsets: (N, L, 6) per-class box offsets; mask_logits: (N, m, m, m, L).
    target_scores: (N, L) one-hot class targets; target_offsets: (N, 6);
    target_masks: (N, m, m, m) in {0, 1}; positives: (N,) bool mask of the
    positive RoI set. Only the ground-truth class's regression and mask
    branch contributes for each positive RoI. Returns a dict with L_cls,
    L_reg, L_M, total, and (optionally) gradients w.r.t. the raw inputs.
    """
    score_logits = np.asarray(score_logits, dtype=np.float64)
    offsets = np.asarray(offsets, dtype=np.float64)
    mask_logits = np.asarray(mask_logits, dtype=np.float64)
    target_scores = np.asarray(target_scores, dtype=np.float64)
    target_offsets = np.asarray(target_offsets, dtype=np.float64)
    target_masks = np.asarray(target_masks, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    n, num_labels = score_logits.shape
    if target_scores.shape != (n, num_labels):
        raise ValueError("score target shape mismatch")
    if offsets.shape != (n, num_labels, 6):
        raise ValueError("offset shape mismatch")
    if mask_logits.shape[0] != n or mask_logits.shape[-1] != num_labels:
        raise ValueError("mask shape mismatch")
    if target_masks.shape != mask_logits.shape[:-1]:
        raise ValueError("mask target shape mismatch")

    p = _sigmoid(score_logits)
    l_cls = float(np.mean(_bce(p, target_scores)))

    n_pos = int(np.count_nonzero(positives))
    l_reg = 0.0
    l_mask = 0.0
    g_scores = None
    g_offsets = None
    g_masks = None
    if with_grads:
        pc = np.clip(p, _BCE_EPS, 1.0 - _BCE_EPS)
        inner = np.where((p > _BCE_EPS) & (p < 1.0 - _BCE_EPS), 1.0, 0.0)
        g_scores = (pc - target_scores) * inner / (n * num_labels)
        g_offsets = np.zeros_like(offsets)
        g_masks = np.zeros_like(mask_logits)
    if n_pos > 0:
        mvox = int(np.prod(mask_logits.shape[1:-1]))
        pm = _sigmoid(mask_logits)
        for i in np.nonzero(positives)[0]:
            gate = target_scores[i]  # one-hot over classes
            for k in np.nonzero(gate)[0]:
                diff = offsets[i, k] - target_offsets[i]
                l_reg += gate[k] * float(np.sum(smooth_l1(diff)))
                l_mask += gate[k] * float(np.mean(_bce(pm[i, ..., k],
                                                       target_masks[i])))
                if with_grads:
                    g_offsets[i, k] += gate[k] * _smooth_l1_grad(diff) / n_pos
                    pmc = np.clip(pm[i, ..., k], _BCE_EPS, 1.0 - _BCE_EPS)
                    inn = np.where((pm[i, ..., k] > _BCE_EPS)
                                   & (pm[i, ..., k] < 1.0 - _BCE_EPS), 1.0, 0.0)
                    g_masks[i, ..., k] += (gate[k] * (pmc - target_masks[i])
                                           * inn / (n_pos * mvox))
        l_reg /= n_pos
        l_mask /= n_pos
    total = l_cls + lambda1 * l_reg + lambda2 * l_mask
    out = {"L_cls": l_cls, "L_reg": l_reg, "L_M": l_mask, "total": total}
    if with_grads:
        out["grad_scores"] = g_scores
        out["grad_offsets"] = g_offsets
        out["grad_masks"] = g_masks
    return out


# ---- detection filtering ----------------------------------------------------

def filter_detections(detections, score_threshold: float, nms_threshold: float,
                      scene_dims=None, scene_bounds=None):
    """Threshold scores, NMS decoded boxes, binarize the winning class's
    mask at 0.5, and (when a scene grid is specified) resample the mask
    into the scene grid with nearest-neighbor lookup inside the box.

    The winning class is the argmax over non-background channels (channel 0
    is background). Returns a list of dicts {box, class, score, mask,
    mask_grid?}.
    """
    picked = []
    for det in detections:
        scores = det.class_scores
        cls = int(np.argmax(scores[1:])) + 1 if scores.size > 1 else 0
        score = float(scores[cls])
        if score < score_threshold:
            continue
        box = decode_box_offsets(det.roi, BoxOffsets(det.per_class_offsets[cls]))
        picked.append((box, cls, score, det.mask[..., cls] >= 0.5))
    if not picked:
        return []
    kept = nms_3d([p[0] for p in picked], [p[2] for p in picked],
                  nms_threshold)
    results = []
    for idx in kept:
        box, cls, score, mask = picked[idx]
        inst = {"box": box, "class": cls, "score": score, "mask": mask}
        if scene_dims is not None and scene_bounds is not None:
            inst["mask_grid"] = mask_to_scene_grid(mask, box, scene_dims,
                                                   scene_bounds)
        results.append(inst)
    return results


def mask_to_scene_grid(mask: np.ndarray, box: Aabb, dims,
                       bounds) -> VoxelGrid:
    """Nearest-neighbor resampling of an m^3 roi-normalized binary mask
    into a full scene occupancy grid."""
    nx, ny, nz = dims
    grid = VoxelGrid.zeros(dims, 1, bounds, dtype=np.float32)
    centers = grid.voxel_centers()  # (Nz, Ny, Nx, 3)
    rel = (centers - box.min_corner) / box.size
    inside = np.all((rel >= 0) & (rel < 1), axis=-1)
    m = mask.shape[0]
    idx = np.clip((rel * m).astype(np.int64), 0, m - 1)
    vals = mask[idx[..., 0], idx[..., 1], idx[..., 2]]
    grid.data[..., 0] = np.where(inside, vals, False).astype(np.float32)
    return grid


# ---- instance-detection file -----------------------------------------------

def save_detections(instances, path, grid_dir_prefix="masks") -> None:
    """Write the instance-detection file: a JSON array of
    {id, class, box, score, mask_grid} with grid containers alongside."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    records = []
    for inst in instances:
        gid = int(inst["id"])
        rel = f"{grid_dir_prefix}/instance_{gid:03d}.json"
        inst["mask_grid_path"] = rel
        inst["mask_grid"].save(path.parent / rel)
        records.append({
            "id": gid,
            "class": int(inst["class"]),
            "box": {"center": [float(v) for v in inst["box"].center],
                    "size": [float(v) for v in inst["box"].size]},
            "score": float(inst.get("score", 1.0)),
            "mask_grid": rel,
        })
    path.write_text(json.dumps(records, indent=2))


def load_detections(path):
    """Read the instance-detection file; mask grids are loaded eagerly."""
    path = Path(path)
    records = json.loads(path.read_text())
    out = []
    for r in records:
        out.append({
            "id": int(r["id"]),
            "class": int(r["class"]),
            "box": Aabb(center=np.array(r["box"]["center"]),
                        size=np.array(r["box"]["size"])),
            "score": float(r.get("score", 1.0)),
            "mask_grid": VoxelGrid.load(path.parent / r["mask_grid"]),
        })
    return out
