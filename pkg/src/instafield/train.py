"""Losses and analytic gradients for fitting the instance-logit grid from
consistent 2D label maps, plus radiance fitting from posed RGB images.

Geometry is frozen during instance training: only the logit grid moves, and
because rendered logits are linear in the grid, backprop is an exact
transmittance-weighted trilinear scatter.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .grids import VoxelGrid, ray_aabb_intersect_batch
from .render import SceneModel, render_rays

UNLABELED = 65535


@dataclass
class TrainConfig:
    lambda_i: float = 1.0
    lambda_r: float = 0.1
    samples_per_ray: int = 128
    batch_rays: int = 1024
    patch_size: int = 8
    patches_per_step: int = 4
    steps_stage1: int = 3000  # full-scale documented default: 25000
    steps_stage2: int = 2000  # full-scale documented default: 20000
    learning_rate: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    paper_normalization: bool = True  # divide cross-entropy by L as well as R
    seed: int = 0

    def __post_init__(self):
        if self.lambda_i < 0 or self.lambda_r < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray

    @classmethod
    def zeros_like(cls, params: np.ndarray) -> "AdamState":
        return cls(m=np.zeros_like(params), v=np.zeros_like(params))


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState,
              config: TrainConfig, step_index: int) -> None:
    """In-place bias-corrected adaptive-moment update; step_index is 1-based."""
    if not np.all(np.isfinite(grads)):
        bad = int(np.count_nonzero(~np.isfinite(grads)))
        raise ValueError(f"non-finite gradients ({bad} entries) at step {step_index}")
    if params.shape != grads.shape:
        raise ValueError("params/grads shape mismatch")
    b1, b2 = config.beta1, config.beta2
    state.m *= b1
    state.m += (1 - b1) * grads
    state.v *= b2
    state.v += (1 - b2) * grads * grads
    mhat = state.m / (1 - b1 ** step_index)
    vhat = state.v / (1 - b2 ** step_index)
    params -= config.learning_rate * mhat / (np.sqrt(vhat) + config.eps)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def instance_loss(rendered_logits: np.ndarray, targets: np.ndarray,
                  paper_normalization: bool = True):
    """Multi-class cross-entropy over rendered logits.

    Normalized by 1/(R*L) by default (1/R with paper_normalization=False).
    Targets must already exclude unlabeled pixels. Returns (loss, grad)
    with grad the exact derivative w.r.t. the raw logits.
    """
    logits = np.atleast_2d(np.asarray(rendered_logits, dtype=np.float64))
    targets = np.atleast_1d(np.asarray(targets))
    r, num_labels = logits.shape
    if r == 0:
        raise ValueError("empty batch")
    if np.any(targets >= num_labels):
        raise ValueError("target label out of range")
    p = softmax(logits)
    norm = r * num_labels if paper_normalization else r
    nll = -np.log(np.maximum(p[np.arange(r), targets], 1e-300))
    loss = float(np.sum(nll) / norm)
    grad = p.copy()
    grad[np.arange(r), targets] -= 1.0
    grad /= norm
    return loss, grad


def regularization_loss(patch_logits: np.ndarray, patch_depth: np.ndarray,
                        paper_normalization: bool = True):
    """Depth-weighted smoothness of rendered logits over a pixel patch.

    patch_logits: (H, W, L); patch_depth: (H, W). Adjacent horizontal and
    vertical squared logit differences are weighted by exp(-(depth gap)^2),
    normalized jointly over all pairs in the patch. Depths are treated as
    constants (density is frozen). Returns (loss, grad w.r.t. logits).
    """
    logits = np.asarray(patch_logits, dtype=np.float64)
    depth = np.asarray(patch_depth, dtype=np.float64)
    if logits.ndim != 3 or depth.shape != logits.shape[:2]:
        raise ValueError("patch shapes inconsistent")
    h, w, num_labels = logits.shape
    if h < 2 or w < 2:
        raise ValueError("patch must be at least 2x2")
    dh = np.exp(-(depth[:, :-1] - depth[:, 1:]) ** 2)  # horizontal pairs
    dv = np.exp(-(depth[:-1, :] - depth[1:, :]) ** 2)  # vertical pairs
    total = dh.sum() + dv.sum()
    wh = dh / total
    wv = dv / total
    gh = logits[:, :-1, :] - logits[:, 1:, :]
    gv = logits[:-1, :, :] - logits[1:, :, :]
    norm = h * w * (num_labels if paper_normalization else 1)
    loss = float((np.sum(gh ** 2 * wh[..., None])
                  + np.sum(gv ** 2 * wv[..., None])) / norm)
    grad = np.zeros_like(logits)
    th = 2.0 * gh * wh[..., None] / norm
    tv = 2.0 * gv * wv[..., None] / norm
    grad[:, :-1, :] += th
    grad[:, 1:, :] -= th
    grad[:-1, :, :] += tv
    grad[1:, :, :] -= tv
    return loss, grad


def appearance_loss(rendered_color: np.ndarray, gt_color: np.ndarray):
    """Mean squared color error over a ray batch; returns (loss, dL/dC_hat)."""
    c = np.atleast_2d(np.asarray(rendered_color, dtype=np.float64))
    g = np.atleast_2d(np.asarray(gt_color, dtype=np.float64))
    if c.shape != g.shape:
        raise ValueError("shape mismatch")
    r = c.shape[0]
    diff = c - g
    loss = float(np.sum(diff ** 2) / r)
    return loss, 2.0 * diff / r


def backprop_rays(grad_wrt_logits: np.ndarray, origins: np.ndarray,
                  dirs: np.ndarray, t_vals: np.ndarray, weights: np.ndarray,
                  buffer: VoxelGrid) -> None:
    """Accumulate dL/d(grid logits) for a batch of rendered rays.

    Exact because rendered logits are linear in the grid: each sample
    deposits w_k * trilinear_weight * grad into its 8 corners.
    """
    g = np.ascontiguousarray(np.atleast_2d(grad_wrt_logits), dtype=np.float64)
    if g.shape[1] != buffer.channels:
        raise ValueError("gradient/buffer channel mismatch")
    if g.shape[0] != weights.shape[0]:
        raise ValueError("gradient/ray count mismatch")
    kernels.scatter_weighted(buffer.data, buffer.bounds.min_corner,
                             buffer.inv_voxel,
                             np.ascontiguousarray(origins, dtype=np.float64),
                             np.ascontiguousarray(dirs, dtype=np.float64),
                             t_vals, weights, g)


def backprop_ray(grad_wrt_logits: np.ndarray, rendered, samples,
                 buffer: VoxelGrid, origin=None, direction=None) -> None:
    """Single-ray convenience wrapper over backprop_rays.

    rendered/samples are the cached RenderedPixel and RaySamples from the
    forward pass of the same ray.
    """
    if samples is None:
        return  # ray missed the bounds; nothing to scatter
    t = samples.t_values
    if origin is None:
        origin = samples.positions[0] - t[0] * _dir_from(samples)
        direction = _dir_from(samples)
    backprop_rays(np.atleast_2d(grad_wrt_logits), np.atleast_2d(origin),
                  np.atleast_2d(direction), t[None, :],
                  rendered.weights[None, :], buffer)


def _dir_from(samples) -> np.ndarray:
    d = samples.positions[-1] - samples.positions[0]
    return d / np.linalg.norm(d)


# ---- instance-field training ----------------------------------------------

def _collect_labeled(views):
    """Flatten (view, i, j, label) for every labeled pixel."""
    entries = []
    for vi, (_, label_img) in enumerate(views):
        ids = label_img.ids
        ii, jj = np.nonzero(ids != UNLABELED)
        entries.append(np.stack([np.full_like(ii, vi), ii, jj,
                                 ids[ii, jj].astype(np.int64)], axis=1))
    table = np.concatenate(entries, axis=0)
    if table.shape[0] == 0:
        raise ValueError("no labeled pixels in any view")
    return table


def train_instance_field(model: SceneModel, views, config: TrainConfig,
                         steps: int | None = None, log_path=None):
    """Optimize lambda_i*L_i + lambda_r*L_r over the instance logit grid.

    views: list of (Camera, LabelImage) with consistent global ids and
    UNLABELED sentinels. Density and color grids are never modified.
    Returns (trained instance grid, per-step loss log).
    """
    steps = config.steps_stage1 if steps is None else steps
    table = _collect_labeled(views)
    num_labels = int(max(2, table[:, 3].max() + 1))
    if model.instance_logits is not None:
        num_labels = max(num_labels, model.instance_logits.channels)
    bounds = model.bounds
    dims = model.density.dims
    if model.instance_logits is not None:
        logits = model.instance_logits.astype(np.float64)
        logits = VoxelGrid(logits.dims, logits.channels, bounds, logits.data.copy())
    else:
        logits = VoxelGrid.zeros(dims, num_labels, bounds, dtype=np.float64)
    work = SceneModel(density=model.density, color=model.color,
                      instance_logits=logits)

    # per-view ray caches, plus rays aligned with the labeled-pixel table
    cams = [v[0] for v in views]
    origins_v, dirs_v = [], []
    for cam in cams:
        o, d = cam.all_rays()
        origins_v.append(o)
        dirs_v.append(d)
    labeled_o = np.concatenate(
        [origins_v[v][table[table[:, 0] == v, 1], table[table[:, 0] == v, 2]]
         for v in range(len(cams))])
    labeled_d = np.concatenate(
        [dirs_v[v][table[table[:, 0] == v, 1], table[table[:, 0] == v, 2]]
         for v in range(len(cams))])
    labeled_lab = np.concatenate(
        [table[table[:, 0] == v, 3] for v in range(len(cams))])

    # separate streams so toggling the regularizer does not reshuffle the
    # cross-entropy batches
    rng = np.random.default_rng(config.seed)
    rng_patch = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    state = AdamState.zeros_like(logits.data)
    grad = np.zeros_like(logits.data)
    log = []
    k = config.samples_per_ray
    ps = config.patch_size
    for step in range(1, steps + 1):
        t_start = time.perf_counter()
        grad[...] = 0.0
        # --- cross-entropy over a random labeled-pixel batch
        pick = rng.integers(0, table.shape[0], size=config.batch_rays)
        o = labeled_o[pick]
        d = labeled_d[pick]
        u = rng.random((pick.shape[0], k))
        res = render_rays(work, o, d, k, u)
        li, gi = instance_loss(res["instance"], labeled_lab[pick],
                               config.paper_normalization)
        if config.lambda_i > 0:
            backprop_rays(config.lambda_i * gi, o, d, res["t_vals"],
                          res["weights"], VoxelGrid(logits.dims, logits.channels,
                                                    bounds, grad))
        # --- smoothness over random patches
        lr_total = 0.0
        if config.lambda_r > 0:
            for _ in range(config.patches_per_step):
                vi = int(rng_patch.integers(0, len(cams)))
                cam = cams[vi]
                pi = int(rng_patch.integers(0, cam.height - ps + 1))
                pj = int(rng_patch.integers(0, cam.width - ps + 1))
                po = origins_v[vi][pi:pi + ps, pj:pj + ps].reshape(-1, 3)
                pd = dirs_v[vi][pi:pi + ps, pj:pj + ps].reshape(-1, 3)
                pu = rng_patch.random((ps * ps, k))
                pres = render_rays(work, po, pd, k, pu)
                lr, gr = regularization_loss(
                    pres["instance"].reshape(ps, ps, -1),
                    pres["depth"].reshape(ps, ps), config.paper_normalization)
                lr_total += lr
                backprop_rays(config.lambda_r * gr.reshape(ps * ps, -1),
                              po, pd, pres["t_vals"], pres["weights"],
                              VoxelGrid(logits.dims, logits.channels, bounds,
                                        grad))
            lr_total /= config.patches_per_step
        adam_step(logits.data, grad, state, config, step)
        total = config.lambda_i * li + config.lambda_r * lr_total
        log.append({"step": step, "L_i": li, "L_r": lr_total, "total": total,
                    "wall_ms": (time.perf_counter() - t_start) * 1e3})
    if log_path is not None:
        with open(log_path, "w") as f:
            for rec in log:
                f.write(json.dumps(rec) + "\n")
    return logits, log


# ---- radiance fitting ------------------------------------------------------

def appearance_gradients(model: SceneModel, origins, dirs, t_vals, deltas,
                         weights, dl_dc, sigma_buf: VoxelGrid,
                         color_buf: VoxelGrid) -> None:
    """Chain-rule gradients of the appearance loss into density and color
    grids, given cached forward quantities and dL/dC_hat per ray."""
    kernels.radiance_backward(
        np.ascontiguousarray(model.density.data, dtype=np.float64),
        np.ascontiguousarray(model.color.data, dtype=np.float64),
        model.bounds.min_corner, model.density.inv_voxel,
        np.ascontiguousarray(origins, dtype=np.float64),
        np.ascontiguousarray(dirs, dtype=np.float64),
        t_vals, deltas, weights,
        np.ascontiguousarray(dl_dc, dtype=np.float64),
        sigma_buf.data, color_buf.data)


@dataclass
class RadianceFitConfig:
    dims: tuple = (64, 64, 64)
    samples_per_ray: int = 96
    batch_rays: int = 4096
    steps: int = 800
    learning_rate: float = 0.05
    density_init: float = 0.5
    color_init: float = 0.5
    seed: int = 0


def fit_radiance(views, bounds, config: RadianceFitConfig):
    """Gradient-descent fit of density and color grids under the mean
    squared appearance loss. views: list of (Camera, HxWx3 rgb in [0,1])."""
    if len(views) < 2:
        raise ValueError("need at least 2 views")
    density = VoxelGrid.zeros(config.dims, 1, bounds, dtype=np.float64)
    density.data[...] = config.density_init
    color = VoxelGrid.zeros(config.dims, 3, bounds, dtype=np.float64)
    color.data[...] = config.color_init
    model = SceneModel(density=density, color=color)

    origins_v, dirs_v, gts = [], [], []
    for cam, img in views:
        o, d = cam.all_rays()
        origins_v.append(o.reshape(-1, 3))
        dirs_v.append(d.reshape(-1, 3))
        gts.append(np.asarray(img, dtype=np.float64).reshape(-1, 3))
    all_o = np.concatenate(origins_v)
    all_d = np.concatenate(dirs_v)
    all_gt = np.concatenate(gts)

    rng = np.random.default_rng(config.seed)
    tcfg = TrainConfig(learning_rate=config.learning_rate)
    st_sigma = AdamState.zeros_like(density.data)
    st_color = AdamState.zeros_like(color.data)
    gsig = VoxelGrid.zeros(config.dims, 1, bounds, dtype=np.float64)
    gcol = VoxelGrid.zeros(config.dims, 3, bounds, dtype=np.float64)
    log = []
    k = config.samples_per_ray
    for step in range(1, config.steps + 1):
        pick = rng.integers(0, all_o.shape[0], size=config.batch_rays)
        o, d, gt = all_o[pick], all_d[pick], all_gt[pick]
        u = rng.random((o.shape[0], k))
        res = render_rays(model, o, d, k, u, with_instance=False)
        loss, dl_dc = appearance_loss(res["color"], gt)
        if not np.isfinite(loss):
            raise ValueError(f"appearance loss diverged at step {step}")
        gsig.data[...] = 0.0
        gcol.data[...] = 0.0
        appearance_gradients(model, o, d, res["t_vals"], res["deltas"],
                             res["weights"], dl_dc, gsig, gcol)
        adam_step(density.data, gsig.data, st_sigma, tcfg, step)
        adam_step(color.data, gcol.data, st_color, tcfg, step)
        log.append({"step": step, "L_p": loss})
    np.clip(color.data, 0.0, 1.0, out=color.data)
    return model, log
