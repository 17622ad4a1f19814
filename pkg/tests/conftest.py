"""Shared builders for the test suite."""

import numpy as np
import pytest

from instafield.grids import SceneBounds, VoxelGrid
from instafield.render import SceneModel

UNIT_BOUNDS = SceneBounds(np.array([-1.0, -1.0, -1.0]), np.array([1.0, 1.0, 1.0]))


def random_grid(rng, dims, channels, bounds=UNIT_BOUNDS, scale=1.0):
    nx, ny, nz = dims
    data = rng.random((nz, ny, nx, channels)) * scale
    return VoxelGrid(dims=dims, channels=channels, bounds=bounds,
                     data=data.astype(np.float64))


def random_scene(rng, dims=(8, 8, 8), sigma_scale=6.0, num_labels=0,
                 bounds=UNIT_BOUNDS):
    density = random_grid(rng, dims, 1, bounds, scale=sigma_scale)
    color = random_grid(rng, dims, 3, bounds)
    logits = None
    if num_labels:
        logits = random_grid(rng, dims, num_labels, bounds, scale=2.0)
        logits.data -= 1.0
    return SceneModel(density=density, color=color, instance_logits=logits)


def random_rays(rng, n, radius=2.5):
    """Rays from a shell around the unit bounds, aimed near the origin."""
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    origins = -d * radius + rng.normal(scale=0.2, size=(n, 3))
    target = rng.normal(scale=0.4, size=(n, 3))
    dirs = target - origins
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return origins, dirs


@pytest.fixture(scope="session")
def tiny_fixture():
    """A small clean analytic scene reused by several modules."""
    from instafield.fixtures import FixtureSpec, default_objects, make_fixture
    spec = FixtureSpec(objects=default_objects(3), grid_dims=(32, 32, 32),
                       image_size=(48, 48), n_train_views=6, n_test_views=2,
                       seed=0)
    return make_fixture(spec)
