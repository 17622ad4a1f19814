"""Volume rendering: stratified sampling, transmittance weights, and the
per-ray accumulation of expected color, depth, and instance logits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .cameras import Camera, Ray
from .grids import VoxelGrid, ray_aabb_intersect_batch
from .rng import pixel_seed, stratified_offsets


@dataclass
class RaySamples:
    """Quadrature points along one ray."""

    t_values: np.ndarray  # (K,), strictly increasing
    positions: np.ndarray  # (K, 3)
    deltas: np.ndarray  # (K,), last = t_far - t_K

    def __post_init__(self):
        t = np.asarray(self.t_values, dtype=np.float64)
        if t.ndim != 1 or t.size < 1:
            raise ValueError("t_values must be a non-empty 1-d array")
        if np.any(np.diff(t) <= 0):
            raise ValueError("t_values must be strictly increasing")
        if np.any(np.asarray(self.deltas) <= 0):
            raise ValueError("deltas must be positive")


@dataclass
class RenderedPixel:
    """Quadrature outputs plus the cached weights needed for backprop."""

    color: np.ndarray  # (3,)
    depth: float
    instance_logits: np.ndarray | None  # (L,) or None
    weights: np.ndarray  # (K,)
    final_transmittance: float
    samples: RaySamples | None = None


@dataclass
class SceneModel:
    """Density, color, and optional instance-logit grids over shared bounds."""

    density: VoxelGrid
    color: VoxelGrid
    instance_logits: VoxelGrid | None = None

    def __post_init__(self):
        if self.density.channels != 1:
            raise ValueError("density grid must have 1 channel")
        if self.color.channels != 3:
            raise ValueError("color grid must have 3 channels")
        b = self.density.bounds
        for g in (self.color, self.instance_logits):
            if g is not None and (
                np.any(g.bounds.min_corner != b.min_corner)
                or np.any(g.bounds.max_corner != b.max_corner)
            ):
                raise ValueError("all grids must share bounds")
        if self.instance_logits is not None and self.instance_logits.channels < 2:
            raise ValueError("instance grid needs >= 2 channels (0 = background)")

    @property
    def bounds(self):
        return self.density.bounds

    @property
    def num_labels(self) -> int:
        return 0 if self.instance_logits is None else self.instance_logits.channels


def stratified_samples(ray: Ray, t_near: float, t_far: float, count: int,
                       rng_seed: int, jitter: bool = True) -> RaySamples:
    """One uniform draw per equal bin of [t_near, t_far].

    jitter=False places samples at bin midpoints. Deterministic given seed.
    """
    if count < 1:
        raise ValueError("need at least one sample")
    if not (t_far > t_near >= 0):
        raise ValueError(f"degenerate interval [{t_near}, {t_far}]")
    if jitter:
        u = stratified_offsets(rng_seed, count)[0]
    else:
        u = np.full(count, 0.5)
    binw = (t_far - t_near) / count
    t = t_near + (np.arange(count) + u) * binw
    deltas = np.empty(count)
    deltas[:-1] = np.diff(t)
    deltas[-1] = t_far - t[-1]
    positions = ray.origin + t[:, None] * ray.direction
    return RaySamples(t_values=t, positions=positions, deltas=deltas)


def integration_weights(sigma_delta: np.ndarray):
    """Transmittance-alpha weights from per-sample sigma*delta products.

    Returns (weights, final_transmittance); weights sum with the final
    transmittance to 1 in exact arithmetic.
    """
    s = np.asarray(sigma_delta, dtype=np.float64)
    if not np.all(np.isfinite(s)):
        raise ValueError("sigma*delta must be finite")
    if np.any(s < 0):
        raise ValueError("sigma*delta must be non-negative")
    trans = np.exp(-np.cumsum(s))
    t_prev = np.concatenate([[1.0], trans[:-1]])
    weights = t_prev * (1.0 - np.exp(-s))
    return weights, float(trans[-1]) if s.size else 1.0


def _as_f64(grid: VoxelGrid) -> np.ndarray:
    return np.ascontiguousarray(grid.data, dtype=np.float64)


def render_rays(model: SceneModel, origins: np.ndarray, dirs: np.ndarray,
                count: int, jitter_u: np.ndarray, with_instance: bool = True):
    """Batch quadrature along N rays.

    jitter_u is the (N, K) array of in-bin offsets in [0,1). Returns a dict
    with t_vals, deltas, weights, t_final, color, depth, and (optionally)
    instance logits, each row zeroed for rays that miss the bounds.
    """
    origins = np.ascontiguousarray(origins, dtype=np.float64)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64)
    t0, t1 = ray_aabb_intersect_batch(origins, dirs, model.bounds)
    bmin = model.bounds.min_corner
    inv_vox = model.density.inv_voxel
    sig = _as_f64(model.density)
    t_vals, deltas, weights, t_final = kernels.render_core(
        sig, bmin, inv_vox, origins, dirs, t0, t1,
        np.ascontiguousarray(jitter_u, dtype=np.float64))
    out = {
        "t_vals": t_vals, "deltas": deltas, "weights": weights,
        "t_final": t_final,
        "color": kernels.channel_sums(_as_f64(model.color), bmin, inv_vox,
                                      origins, dirs, t_vals, weights),
        "depth": np.einsum("nk,nk->n", weights, t_vals),
    }
    if with_instance and model.instance_logits is not None:
        out["instance"] = kernels.channel_sums(
            _as_f64(model.instance_logits), bmin, inv_vox, origins, dirs,
            t_vals, weights)
    return out


def render_pixel(model: SceneModel, camera: Camera, pixel, count: int,
                 rng_seed: int, jitter: bool = True) -> RenderedPixel:
    """Render one pixel; a ray that misses the bounds yields an all-zero
    pixel with final transmittance 1."""
    i, j = pixel
    origins = camera.position[None, :]
    dirs = camera.pixel_directions(np.array([i]), np.array([j]))
    if jitter:
        u = stratified_offsets(pixel_seed(rng_seed, i, j), count)
    else:
        u = np.full((1, count), 0.5)
    res = render_rays(model, origins, dirs, count, u)
    samples = None
    if res["deltas"][0].sum() > 0:
        t = res["t_vals"][0]
        samples = RaySamples(t_values=t, positions=origins[0] + t[:, None] * dirs[0],
                             deltas=res["deltas"][0])
    logits = res["instance"][0] if "instance" in res else None
    return RenderedPixel(color=res["color"][0], depth=float(res["depth"][0]),
                         instance_logits=logits, weights=res["weights"][0],
                         final_transmittance=float(res["t_final"][0]),
                         samples=samples)


def render_image(model: SceneModel, camera: Camera, count: int, rng_seed: int,
                 outputs=("color", "depth", "instance_argmax"),
                 jitter: bool = True) -> dict:
    """Per-pixel rendering of the whole view.

    Per-pixel seeds are hashed from (rng_seed, i, j) so serial and parallel
    runs are bit-identical. instance_argmax is the argmax over
    softmax(logits) with ties broken toward the lower label index.
    """
    h, w = camera.height, camera.width
    origins, dirs = camera.all_rays()
    origins = origins.reshape(-1, 3)
    dirs = dirs.reshape(-1, 3)
    if jitter:
        ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        seeds = pixel_seed(rng_seed, ii.reshape(-1), jj.reshape(-1))
        u = stratified_offsets(seeds, count)
    else:
        u = np.full((h * w, count), 0.5)
    want_instance = "instance_argmax" in outputs or "instance" in outputs
    res = render_rays(model, origins, dirs, count, u,
                      with_instance=want_instance)
    images = {}
    if "color" in outputs:
        images["color"] = res["color"].reshape(h, w, 3)
    if "depth" in outputs:
        images["depth"] = res["depth"].reshape(h, w)
    if "instance" in outputs and "instance" in res:
        images["instance"] = res["instance"].reshape(h, w, -1)
    if "instance_argmax" in outputs:
        if "instance" in res:
            # argmax of logits == argmax of softmax; np.argmax takes the
            # first (lowest-index) maximum
            labels = np.argmax(res["instance"], axis=1).astype(np.uint16)
        else:
            labels = np.zeros(h * w, dtype=np.uint16)
        images["instance_argmax"] = labels.reshape(h, w)
    images["t_final"] = res["t_final"].reshape(h, w)
    return images
