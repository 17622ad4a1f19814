"""Pinhole cameras and per-pixel rays.

Convention: camera looks along local -z, +y up, +x right. Pixel (i, j) is
row i, column j; ray directions pass through pixel centers unless an
in-pixel jitter offset is supplied.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray  # unit length
    pixel: tuple | None = None  # (i, j)

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=np.float64).reshape(3)
        d = np.asarray(self.direction, dtype=np.float64).reshape(3)
        norm = np.linalg.norm(d)
        if abs(norm - 1.0) > 1e-9:
            raise ValueError("ray direction must be unit length")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)

    def at(self, t: float) -> np.ndarray:
        return self.origin + t * self.direction


@dataclass(frozen=True)
class Camera:
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    cam_to_world: np.ndarray  # 4x4 rigid, row-major

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        m = np.asarray(self.cam_to_world, dtype=np.float64).reshape(4, 4).copy()
        r = m[:3, :3]
        if np.max(np.abs(r @ r.T - np.eye(3))) > 1e-6:
            raise ValueError("rotation block must be orthonormal")
        m.flags.writeable = False
        object.__setattr__(self, "cam_to_world", m)

    @property
    def rotation(self) -> np.ndarray:
        return self.cam_to_world[:3, :3]

    @property
    def position(self) -> np.ndarray:
        return self.cam_to_world[:3, 3]

    def pixel_directions(self, ii, jj, jitter=None):
        """Unit world-space directions for pixel rows ii, cols jj (arrays)."""
        ii = np.asarray(ii, dtype=np.float64)
        jj = np.asarray(jj, dtype=np.float64)
        di, dj = (0.5, 0.5) if jitter is None else (jitter[0], jitter[1])
        x = (jj + dj - self.cx) / self.fx
        y = -(ii + di - self.cy) / self.fy
        d = np.stack([x, y, -np.ones_like(x)], axis=-1)
        d = d @ self.rotation.T
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def all_rays(self):
        """Origins and directions for every pixel; shape (H, W, 3) each."""
        ii, jj = np.meshgrid(np.arange(self.height), np.arange(self.width),
                             indexing="ij")
        dirs = self.pixel_directions(ii, jj)
        origins = np.broadcast_to(self.position, dirs.shape).copy()
        return origins, dirs

    def project(self, point) -> tuple:
        """World point -> continuous pixel (i, j); inverse of generate_ray."""
        p = np.asarray(point, dtype=np.float64) - self.position
        pc = self.rotation.T @ p
        if pc[2] >= 0:
            raise ValueError("point is behind the camera")
        depth = -pc[2]
        j = self.cx + self.fx * pc[0] / depth - 0.5
        i = self.cy - self.fy * pc[1] / depth - 0.5
        return i, j


def generate_ray(camera: Camera, pixel, jitter=None) -> Ray:
    """Ray from the camera center through pixel (i, j).

    jitter, when given, is an in-pixel (di, dj) offset in [0,1); the default
    is the pixel center (0.5, 0.5).
    """
    i, j = pixel
    if not (0 <= i < camera.height and 0 <= j < camera.width):
        raise ValueError(f"pixel {pixel} outside image {camera.height}x{camera.width}")
    d = camera.pixel_directions(np.float64(i), np.float64(j), jitter=jitter)
    return Ray(origin=camera.position.copy(), direction=d, pixel=(i, j))


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """cam_to_world matrix for a camera at eye looking at target."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd = fwd / np.linalg.norm(fwd)
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(fwd, up)
    n = np.linalg.norm(right)
    if n < 1e-9:  # looking along up; pick another reference
        up = np.array([0.0, 1.0, 0.0])
        right = np.cross(fwd, up)
        n = np.linalg.norm(right)
    right /= n
    true_up = np.cross(right, fwd)
    m = np.eye(4)
    m[:3, 0] = right
    m[:3, 1] = true_up
    m[:3, 2] = -fwd  # camera looks along local -z
    m[:3, 3] = eye
    return m


# ---- camera file (JSON array of records) ----------------------------------

def save_cameras(cameras, path) -> None:
    records = [
        {"width": c.width, "height": c.height, "fx": c.fx, "fy": c.fy,
         "cx": c.cx, "cy": c.cy,
         "cam_to_world": [float(v) for v in c.cam_to_world.reshape(16)]}
        for c in cameras
    ]
    Path(path).write_text(json.dumps(records, indent=2))


def load_cameras(path) -> list:
    records = json.loads(Path(path).read_text())
    return [
        Camera(width=int(r["width"]), height=int(r["height"]),
               fx=float(r["fx"]), fy=float(r["fy"]),
               cx=float(r["cx"]), cy=float(r["cy"]),
               cam_to_world=np.array(r["cam_to_world"], dtype=np.float64))
        for r in records
    ]
