"""Pure-numpy reference implementations of the hot kernels.

Selected with INSTAFIELD_BACKEND=numpy or when numba is unavailable.
All arrays are float64 C-contiguous; grid arrays have shape (Nz, Ny, Nx, C).
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "numpy"


def set_num_threads(n: int) -> None:  # single-threaded by nature
    pass


def _tri_indices(pts, bmin, inv_vox, shape):
    """Corner indices and fractions for trilinear sampling with edge clamp."""
    nz, ny, nx = shape[:3]
    dims = np.array([nx, ny, nz], dtype=np.int64)
    u = (pts - bmin) * inv_vox - 0.5
    u = np.clip(u, 0.0, np.maximum(dims - 1, 0))
    i0 = np.minimum(np.floor(u).astype(np.int64), np.maximum(dims - 2, 0))
    f = np.where(dims > 1, u - i0, 0.0)
    i1 = np.minimum(i0 + 1, dims - 1)
    return i0, i1, f


def _corner_weights(f):
    fx, fy, fz = f[:, 0], f[:, 1], f[:, 2]
    w = np.empty((f.shape[0], 8), dtype=np.float64)
    for c in range(8):
        wx = fx if c & 1 else 1.0 - fx
        wy = fy if c & 2 else 1.0 - fy
        wz = fz if c & 4 else 1.0 - fz
        w[:, c] = wx * wy * wz
    return w


def trilinear_gather(grid, bmin, inv_vox, pts):
    """(N,3) points -> (N,C) trilinearly interpolated values."""
    i0, i1, f = _tri_indices(pts, bmin, inv_vox, grid.shape)
    w = _corner_weights(f)
    out = np.zeros((pts.shape[0], grid.shape[3]), dtype=np.float64)
    for c in range(8):
        ix = i1[:, 0] if c & 1 else i0[:, 0]
        iy = i1[:, 1] if c & 2 else i0[:, 1]
        iz = i1[:, 2] if c & 4 else i0[:, 2]
        out += w[:, c, None] * grid[iz, iy, ix, :]
    return out


def render_core(sigma, bmin, inv_vox, origins, dirs, t0, t1, jitter):
    """Stratified samples + transmittance weights for a batch of rays.

    Returns (t_vals, deltas, weights, t_final). Rays with t1 <= t0 miss:
    zero weights, t_final = 1, t_vals/deltas zeroed.
    """
    n, k = jitter.shape
    hit = t1 > t0
    binw = np.where(hit, (t1 - t0) / k, 0.0)
    t_vals = t0[:, None] + (np.arange(k) + jitter) * binw[:, None]
    deltas = np.empty_like(t_vals)
    deltas[:, :-1] = np.diff(t_vals, axis=1)
    deltas[:, -1] = t1 - t_vals[:, -1]
    pts = origins[:, None, :] + t_vals[..., None] * dirs[:, None, :]
    sig = trilinear_gather(sigma, bmin, inv_vox,
                           pts.reshape(-1, 3))[:, 0].reshape(n, k)
    s = np.maximum(sig, 0.0) * deltas
    s[~hit] = 0.0
    trans = np.exp(-np.cumsum(s, axis=1))
    t_prev = np.concatenate([np.ones((n, 1)), trans[:, :-1]], axis=1)
    weights = t_prev * (1.0 - np.exp(-s))
    t_final = trans[:, -1]
    t_vals[~hit] = 0.0
    deltas[~hit] = 0.0
    weights[~hit] = 0.0
    t_final[~hit] = 1.0
    return t_vals, deltas, weights, t_final


def channel_sums(grid, bmin, inv_vox, origins, dirs, t_vals, weights):
    """Per-ray weighted sums of interpolated channel values: (N,C)."""
    n, k = t_vals.shape
    pts = (origins[:, None, :] + t_vals[..., None] * dirs[:, None, :])
    vals = trilinear_gather(grid, bmin, inv_vox, pts.reshape(-1, 3))
    vals = vals.reshape(n, k, grid.shape[3])
    return np.einsum("nk,nkc->nc", weights, vals)


def indicator_sums(grid, bmin, inv_vox, origins, dirs, t_vals, weights,
                   threshold=0.5):
    """Weighted occupancy: sum_k w_k * [sample_k > threshold], shape (N,)."""
    n, k = t_vals.shape
    pts = (origins[:, None, :] + t_vals[..., None] * dirs[:, None, :])
    vals = trilinear_gather(grid, bmin, inv_vox, pts.reshape(-1, 3))
    vals = vals[:, 0].reshape(n, k)
    return np.sum(weights * (vals > threshold), axis=1)


def scatter_weighted(buffer, bmin, inv_vox, origins, dirs, t_vals, weights,
                     ray_grads):
    """buffer[corner, :] += w_k * trilinear_weight * ray_grads[r, :]."""
    n, k = t_vals.shape
    pts = (origins[:, None, :] + t_vals[..., None] * dirs[:, None, :])
    pts = pts.reshape(-1, 3)
    i0, i1, f = _tri_indices(pts, bmin, inv_vox, buffer.shape)
    cw = _corner_weights(f)
    coef = np.repeat(weights.reshape(-1)[:, None], 8, axis=1) * cw  # (NK, 8)
    g = np.repeat(ray_grads, k, axis=0)  # (NK, L)
    nz, ny, nx, nc = buffer.shape
    flat = buffer.reshape(-1, nc)
    for c in range(8):
        ix = i1[:, 0] if c & 1 else i0[:, 0]
        iy = i1[:, 1] if c & 2 else i0[:, 1]
        iz = i1[:, 2] if c & 4 else i0[:, 2]
        idx = (iz * ny + iy) * nx + ix
        np.add.at(flat, idx, coef[:, c, None] * g)


def radiance_backward(sigma, color, bmin, inv_vox, origins, dirs,
                      t_vals, deltas, weights, dl_dc, sigma_buf, color_buf):
    """Backprop appearance-loss pixel gradients into density and color grids.

    dl_dc is (N,3): dL/dC_hat per ray. Density path treats sigma through
    max(0, .) at sample time; samples with raw sigma <= 0 pass no gradient.
    """
    n, k = t_vals.shape
    pts = (origins[:, None, :] + t_vals[..., None] * dirs[:, None, :])
    flat_pts = pts.reshape(-1, 3)
    raw_sig = trilinear_gather(sigma, bmin, inv_vox, flat_pts)[:, 0].reshape(n, k)
    col = trilinear_gather(color, bmin, inv_vox, flat_pts).reshape(n, k, 3)
    s = np.maximum(raw_sig, 0.0) * deltas
    live = np.sum(deltas, axis=1) > 0  # miss rays carry zeroed deltas
    # a_k = dL/dw_k
    a = np.einsum("nc,nkc->nk", dl_dc, col)
    # T_k = transmittance before sample k
    t_prev = np.exp(-np.concatenate([np.zeros((n, 1)),
                                     np.cumsum(s[:, :-1], axis=1)], axis=1))
    aw = a * weights
    suffix = np.cumsum(aw[:, ::-1], axis=1)[:, ::-1]
    tail = np.concatenate([suffix[:, 1:], np.zeros((n, 1))], axis=1)
    dl_ds = a * t_prev * np.exp(-s) - tail
    dl_dsig = dl_ds * deltas * (raw_sig > 0.0) * live[:, None]
    scatter_weighted(sigma_buf, bmin, inv_vox, origins, dirs, t_vals,
                     dl_dsig, np.ones((n, 1)))
    scatter_weighted(color_buf, bmin, inv_vox, origins, dirs, t_vals,
                     weights, dl_dc)
