"""Axis-aligned scene bounds and dense voxel grids.

Grid layout is fixed repo-wide: voxel-major with x fastest, then y, then z,
channels interleaved per voxel. In numpy terms the data array has shape
(Nz, Ny, Nx, C), C-contiguous, indexed as data[z, y, x, c]. Values are
stored at voxel centers; sampling clamps to the boundary half-voxel.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels


@dataclass(frozen=True)
class SceneBounds:
    """Axis-aligned world-space bound of the traceable volume."""

    min_corner: np.ndarray
    max_corner: np.ndarray

    def __post_init__(self):
        mn = np.asarray(self.min_corner, dtype=np.float64).reshape(3).copy()
        mx = np.asarray(self.max_corner, dtype=np.float64).reshape(3).copy()
        if not (np.all(np.isfinite(mn)) and np.all(np.isfinite(mx))):
            raise ValueError("bounds must be finite")
        if not np.all(mx > mn):
            raise ValueError("max_corner must exceed min_corner componentwise")
        mn.flags.writeable = False
        mx.flags.writeable = False
        object.__setattr__(self, "min_corner", mn)
        object.__setattr__(self, "max_corner", mx)

    @property
    def size(self) -> np.ndarray:
        return self.max_corner - self.min_corner

    def contains(self, points: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return np.all((p >= self.min_corner) & (p <= self.max_corner), axis=-1)


@dataclass
class VoxelGrid:
    """Dense per-voxel channel vectors over a SceneBounds."""

    dims: tuple  # (Nx, Ny, Nz)
    channels: int
    bounds: SceneBounds
    data: np.ndarray = field(repr=False)  # shape (Nz, Ny, Nx, C)

    def __post_init__(self):
        nx, ny, nz = (int(d) for d in self.dims)
        if nx < 1 or ny < 1 or nz < 1:
            raise ValueError("dims must be positive")
        if self.channels < 1:
            raise ValueError("channels must be >= 1")
        self.dims = (nx, ny, nz)
        self.channels = int(self.channels)
        expected = (nz, ny, nx, self.channels)
        data = np.ascontiguousarray(self.data)
        if data.shape != expected:
            raise ValueError(f"data shape {data.shape} != {expected}")
        if data.dtype not in (np.float32, np.float64):
            data = data.astype(np.float32)
        if not np.all(np.isfinite(data)):
            raise ValueError("grid data must be finite")
        self.data = data

    @classmethod
    def zeros(cls, dims, channels, bounds, dtype=np.float32) -> "VoxelGrid":
        nx, ny, nz = (int(d) for d in dims)
        return cls(dims=(nx, ny, nz), channels=int(channels), bounds=bounds,
                   data=np.zeros((nz, ny, nx, int(channels)), dtype=dtype))

    @property
    def voxel_size(self) -> np.ndarray:
        return self.bounds.size / np.array(self.dims, dtype=np.float64)

    @property
    def inv_voxel(self) -> np.ndarray:
        return 1.0 / self.voxel_size

    def voxel_centers(self) -> np.ndarray:
        """World positions of all voxel centers, shape (Nz,Ny,Nx,3)."""
        nx, ny, nz = self.dims
        vs = self.voxel_size
        xs = self.bounds.min_corner[0] + (np.arange(nx) + 0.5) * vs[0]
        ys = self.bounds.min_corner[1] + (np.arange(ny) + 0.5) * vs[1]
        zs = self.bounds.min_corner[2] + (np.arange(nz) + 0.5) * vs[2]
        zz, yy, xx = np.meshgrid(zs, ys, xs, indexing="ij")
        return np.stack([xx, yy, zz], axis=-1)

    def astype(self, dtype) -> "VoxelGrid":
        return VoxelGrid(self.dims, self.channels, self.bounds,
                         self.data.astype(dtype))

    # ---- container format -------------------------------------------------

    def save(self, manifest_path) -> None:
        """Write the grid container: JSON manifest + raw f32le payload."""
        manifest_path = Path(manifest_path)
        data_name = manifest_path.stem + ".f32"
        manifest = {
            "dims": list(self.dims),
            "channels": self.channels,
            "bounds": {"min": self.bounds.min_corner.tolist(),
                       "max": self.bounds.max_corner.tolist()},
            "dtype": "f32le",
            "data": data_name,
        }
        manifest_path.parent.mkdir(parents=True, exist_ok=True)
        manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
        raw = np.ascontiguousarray(self.data, dtype="<f4")
        (manifest_path.parent / data_name).write_bytes(raw.tobytes())

    @classmethod
    def load(cls, manifest_path) -> "VoxelGrid":
        manifest_path = Path(manifest_path)
        manifest = json.loads(manifest_path.read_text())
        if manifest.get("dtype") != "f32le":
            raise ValueError(f"unsupported grid dtype {manifest.get('dtype')!r}")
        nx, ny, nz = (int(d) for d in manifest["dims"])
        c = int(manifest["channels"])
        bounds = SceneBounds(np.array(manifest["bounds"]["min"]),
                             np.array(manifest["bounds"]["max"]))
        raw = (manifest_path.parent / manifest["data"]).read_bytes()
        data = np.frombuffer(raw, dtype="<f4").reshape(nz, ny, nx, c).copy()
        return cls(dims=(nx, ny, nz), channels=c, bounds=bounds, data=data)


def trilinear_sample(grid: VoxelGrid, points: np.ndarray) -> np.ndarray:
    """Trilinear blend of the 8 voxels surrounding each point.

    Accepts a single 3-vector or an (N,3) array; clamps to the boundary
    half-voxel. Points are expected inside bounds (callers clamp or skip).
    """
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.ascontiguousarray(np.atleast_2d(pts))
    if pts.shape[-1] != 3:
        raise ValueError("points must be 3-vectors")
    if not np.all(np.isfinite(pts)):
        raise ValueError("points must be finite")
    out = kernels.trilinear_gather(grid.data, grid.bounds.min_corner,
                                   grid.inv_voxel, pts)
    return out[0] if single else out


def ray_aabb_intersect(origin, direction, bounds: SceneBounds):
    """Slab-method intersection; entry clamped to t >= 0.

    Returns (t_near, t_far) or None when the ray misses the box or the box
    lies entirely behind the origin.
    """
    o = np.asarray(origin, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    t0, t1 = 0.0, np.inf
    for a in range(3):
        if d[a] == 0.0:
            if o[a] < bounds.min_corner[a] or o[a] > bounds.max_corner[a]:
                return None
            continue
        inv = 1.0 / d[a]
        lo = (bounds.min_corner[a] - o[a]) * inv
        hi = (bounds.max_corner[a] - o[a]) * inv
        if lo > hi:
            lo, hi = hi, lo
        t0 = max(t0, lo)
        t1 = min(t1, hi)
    if t1 < t0:
        return None
    return t0, t1


def ray_aabb_intersect_batch(origins, directions, bounds: SceneBounds):
    """Vectorized slab intersection; misses get t_far < t_near."""
    o = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    d = np.atleast_2d(np.asarray(directions, dtype=np.float64))
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        lo = (bounds.min_corner - o) * inv
        hi = (bounds.max_corner - o) * inv
    # parallel components: inside -> (-inf, inf), outside -> empty interval
    # (applied after the min/max so the empty interval survives)
    par = d == 0.0
    inside = (o >= bounds.min_corner) & (o <= bounds.max_corner)
    near = np.minimum(lo, hi)
    far = np.maximum(lo, hi)
    near = np.where(par, np.where(inside, -np.inf, np.inf), near)
    far = np.where(par, np.where(inside, np.inf, -np.inf), far)
    t0 = np.maximum(near.max(axis=-1), 0.0)
    t1 = far.min(axis=-1)
    return t0, t1
