"""Voxel radiance + instance field pipeline."""

from .grids import SceneBounds, VoxelGrid, trilinear_sample, ray_aabb_intersect
from .cameras import Camera, Ray, generate_ray
from .render import (RaySamples, RenderedPixel, SceneModel, stratified_samples,
                     integration_weights, render_pixel, render_image)

__version__ = "0.1.0"

__all__ = [
    "SceneBounds", "VoxelGrid", "trilinear_sample", "ray_aabb_intersect",
    "Camera", "Ray", "generate_ray",
    "RaySamples", "RenderedPixel", "SceneModel", "stratified_samples",
    "integration_weights", "render_pixel", "render_image",
]
