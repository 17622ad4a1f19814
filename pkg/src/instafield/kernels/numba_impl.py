"""Numba-compiled hot kernels.

Same contracts as numpy_impl; per-ray loops are embarrassingly parallel and
accumulate per ray only, so thread count never changes results. Scatter
kernels run serially to keep gradient accumulation deterministic.
"""

from __future__ import annotations

import numba
import numpy as np
from numba import njit, prange

BACKEND_NAME = "numba"


def set_num_threads(n: int) -> None:
    if n > 0:
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


@njit(cache=True, inline="always")
def _axis_setup(u, n):
    """Clamped base index and fraction along one axis (voxel-center units)."""
    if n == 1:
        return 0, 0.0
    if u <= 0.0:
        return 0, 0.0
    if u >= n - 1:
        return n - 2, 1.0
    i0 = int(np.floor(u))
    if i0 > n - 2:
        i0 = n - 2
    return i0, u - i0


@njit(cache=True, inline="always")
def _sample_point(grid, bmin, inv_vox, x, y, z, out):
    nz, ny, nx, nc = grid.shape
    ix, fx = _axis_setup((x - bmin[0]) * inv_vox[0] - 0.5, nx)
    iy, fy = _axis_setup((y - bmin[1]) * inv_vox[1] - 0.5, ny)
    iz, fz = _axis_setup((z - bmin[2]) * inv_vox[2] - 0.5, nz)
    jx = min(ix + 1, nx - 1)
    jy = min(iy + 1, ny - 1)
    jz = min(iz + 1, nz - 1)
    w000 = (1 - fx) * (1 - fy) * (1 - fz)
    w100 = fx * (1 - fy) * (1 - fz)
    w010 = (1 - fx) * fy * (1 - fz)
    w110 = fx * fy * (1 - fz)
    w001 = (1 - fx) * (1 - fy) * fz
    w101 = fx * (1 - fy) * fz
    w011 = (1 - fx) * fy * fz
    w111 = fx * fy * fz
    for c in range(nc):
        out[c] = (w000 * grid[iz, iy, ix, c] + w100 * grid[iz, iy, jx, c]
                  + w010 * grid[iz, jy, ix, c] + w110 * grid[iz, jy, jx, c]
                  + w001 * grid[jz, iy, ix, c] + w101 * grid[jz, iy, jx, c]
                  + w011 * grid[jz, jy, ix, c] + w111 * grid[jz, jy, jx, c])


@njit(cache=True, parallel=True)
def trilinear_gather(grid, bmin, inv_vox, pts):
    n = pts.shape[0]
    out = np.empty((n, grid.shape[3]), dtype=np.float64)
    for r in prange(n):
        _sample_point(grid, bmin, inv_vox, pts[r, 0], pts[r, 1], pts[r, 2],
                      out[r])
    return out


@njit(cache=True, parallel=True)
def render_core(sigma, bmin, inv_vox, origins, dirs, t0, t1, jitter):
    n, k = jitter.shape
    t_vals = np.zeros((n, k), dtype=np.float64)
    deltas = np.zeros((n, k), dtype=np.float64)
    weights = np.zeros((n, k), dtype=np.float64)
    t_final = np.ones(n, dtype=np.float64)
    for r in prange(n):
        if t1[r] <= t0[r]:
            continue
        binw = (t1[r] - t0[r]) / k
        for i in range(k):
            t_vals[r, i] = t0[r] + (i + jitter[r, i]) * binw
        for i in range(k - 1):
            deltas[r, i] = t_vals[r, i + 1] - t_vals[r, i]
        deltas[r, k - 1] = t1[r] - t_vals[r, k - 1]
        sig = np.empty(1, dtype=np.float64)
        trans = 1.0
        for i in range(k):
            t = t_vals[r, i]
            _sample_point(sigma, bmin, inv_vox,
                          origins[r, 0] + t * dirs[r, 0],
                          origins[r, 1] + t * dirs[r, 1],
                          origins[r, 2] + t * dirs[r, 2], sig)
            s = max(sig[0], 0.0) * deltas[r, i]
            att = np.exp(-s)
            weights[r, i] = trans * (1.0 - att)
            trans *= att
        t_final[r] = trans
    return t_vals, deltas, weights, t_final


@njit(cache=True, parallel=True)
def channel_sums(grid, bmin, inv_vox, origins, dirs, t_vals, weights):
    n, k = t_vals.shape
    nc = grid.shape[3]
    out = np.zeros((n, nc), dtype=np.float64)
    for r in prange(n):
        val = np.empty(nc, dtype=np.float64)
        for i in range(k):
            w = weights[r, i]
            if w == 0.0:
                continue
            t = t_vals[r, i]
            _sample_point(grid, bmin, inv_vox,
                          origins[r, 0] + t * dirs[r, 0],
                          origins[r, 1] + t * dirs[r, 1],
                          origins[r, 2] + t * dirs[r, 2], val)
            for c in range(nc):
                out[r, c] += w * val[c]
    return out


@njit(cache=True, parallel=True)
def indicator_sums(grid, bmin, inv_vox, origins, dirs, t_vals, weights,
                   threshold=0.5):
    n, k = t_vals.shape
    out = np.zeros(n, dtype=np.float64)
    for r in prange(n):
        val = np.empty(1, dtype=np.float64)
        for i in range(k):
            w = weights[r, i]
            if w == 0.0:
                continue
            t = t_vals[r, i]
            _sample_point(grid, bmin, inv_vox,
                          origins[r, 0] + t * dirs[r, 0],
                          origins[r, 1] + t * dirs[r, 1],
                          origins[r, 2] + t * dirs[r, 2], val)
            if val[0] > threshold:
                out[r] += w
    return out


@njit(cache=True)
def _scatter_point(buffer, bmin, inv_vox, x, y, z, coef, grad):
    nz, ny, nx, nc = buffer.shape
    ix, fx = _axis_setup((x - bmin[0]) * inv_vox[0] - 0.5, nx)
    iy, fy = _axis_setup((y - bmin[1]) * inv_vox[1] - 0.5, ny)
    iz, fz = _axis_setup((z - bmin[2]) * inv_vox[2] - 0.5, nz)
    jx = min(ix + 1, nx - 1)
    jy = min(iy + 1, ny - 1)
    jz = min(iz + 1, nz - 1)
    for c in range(nc):
        g = coef * grad[c]
        buffer[iz, iy, ix, c] += (1 - fx) * (1 - fy) * (1 - fz) * g
        buffer[iz, iy, jx, c] += fx * (1 - fy) * (1 - fz) * g
        buffer[iz, jy, ix, c] += (1 - fx) * fy * (1 - fz) * g
        buffer[iz, jy, jx, c] += fx * fy * (1 - fz) * g
        buffer[jz, iy, ix, c] += (1 - fx) * (1 - fy) * fz * g
        buffer[jz, iy, jx, c] += fx * (1 - fy) * fz * g
        buffer[jz, jy, ix, c] += (1 - fx) * fy * fz * g
        buffer[jz, jy, jx, c] += fx * fy * fz * g


@njit(cache=True)
def scatter_weighted(buffer, bmin, inv_vox, origins, dirs, t_vals, weights,
                     ray_grads):
    n, k = t_vals.shape
    for r in range(n):
        for i in range(k):
            w = weights[r, i]
            if w == 0.0:
                continue
            t = t_vals[r, i]
            _scatter_point(buffer, bmin, inv_vox,
                           origins[r, 0] + t * dirs[r, 0],
                           origins[r, 1] + t * dirs[r, 1],
                           origins[r, 2] + t * dirs[r, 2], w, ray_grads[r])


@njit(cache=True)
def radiance_backward(sigma, color, bmin, inv_vox, origins, dirs,
                      t_vals, deltas, weights, dl_dc, sigma_buf, color_buf):
    n, k = t_vals.shape
    one = np.ones(1, dtype=np.float64)
    sig = np.empty(1, dtype=np.float64)
    col = np.empty((k, 3), dtype=np.float64)
    raw = np.empty(k, dtype=np.float64)
    a = np.empty(k, dtype=np.float64)
    dl_ds = np.empty(k, dtype=np.float64)
    for r in range(n):
        total_delta = 0.0
        for i in range(k):
            total_delta += deltas[r, i]
        if total_delta <= 0.0:  # missed bounds
            continue
        trans = 1.0
        for i in range(k):
            t = t_vals[r, i]
            x = origins[r, 0] + t * dirs[r, 0]
            y = origins[r, 1] + t * dirs[r, 1]
            z = origins[r, 2] + t * dirs[r, 2]
            _sample_point(sigma, bmin, inv_vox, x, y, z, sig)
            _sample_point(color, bmin, inv_vox, x, y, z, col[i])
            raw[i] = sig[0]
            a[i] = (dl_dc[r, 0] * col[i, 0] + dl_dc[r, 1] * col[i, 1]
                    + dl_dc[r, 2] * col[i, 2])
            s = max(raw[i], 0.0) * deltas[r, i]
            dl_ds[i] = a[i] * trans * np.exp(-s)
            trans *= np.exp(-s)
        tail = 0.0
        for i in range(k - 1, -1, -1):
            dl_ds[i] -= tail
            tail += a[i] * weights[r, i]
        for i in range(k):
            t = t_vals[r, i]
            x = origins[r, 0] + t * dirs[r, 0]
            y = origins[r, 1] + t * dirs[r, 1]
            z = origins[r, 2] + t * dirs[r, 2]
            if raw[i] > 0.0:
                _scatter_point(sigma_buf, bmin, inv_vox, x, y, z,
                               dl_ds[i] * deltas[r, i], one)
            if weights[r, i] != 0.0:
                _scatter_point(color_buf, bmin, inv_vox, x, y, z,
                               weights[r, i], dl_dc[r])
