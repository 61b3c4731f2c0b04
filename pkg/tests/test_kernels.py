from __future__ import annotations

import os
import subprocess
import sys

import numpy as np
import pytest

from vlgrasp import _kernels_py, kernels
from vlgrasp.scene import SceneConfig, generate_scene, pixel_rays, scene_primitives
from helpers import SMALL

try:
    from vlgrasp import _ckernels
except ImportError:  # extension not built
    _ckernels = None

needs_ext = pytest.mark.skipif(_ckernels is None, reason="compiled kernels not built")


@needs_ext
@pytest.mark.parametrize("seed", range(8))
def test_raycast_backends_identical(seed):
    s = generate_scene(SceneConfig(intrinsics=SMALL), seed)
    kinds, rot, origin, dims, _, _ = scene_primitives(s)
    rays = pixel_rays(SMALL)
    a = _ckernels.raycast(rays, kinds, rot, origin, dims)
    b = _kernels_py.raycast(rays, kinds, rot, origin, dims)
    for x, y in zip(a, b):
        assert np.array_equal(x, y)


def _counts_case(rng, margin):
    pts = rng.normal(scale=0.05, size=(3000, 3)) + np.array([0.0, 0.0, 0.6])
    flags = (rng.uniform(size=3000) < 0.4).astype(np.uint8)
    m = 40
    q = rng.normal(size=(m, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    w, x, y, z = q.T
    rot = np.stack([np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)], -1),
                    np.stack([2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)], -1),
                    np.stack([2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)], -1)], 1)
    trans = pts[rng.integers(0, 3000, m)] + rng.normal(scale=0.01, size=(m, 3))
    widths = rng.uniform(0.02, 0.1, m)
    dims = (0.04, 0.01, 0.02, 0.02, 0.06) + ((margin,) if margin else ())
    return pts, flags, rot, trans, widths, dims


@needs_ext
@pytest.mark.parametrize("margin", [0.0, 0.005])
@pytest.mark.parametrize("seed", range(5))
def test_gripper_counts_backends_identical(seed, margin):
    args = _counts_case(np.random.default_rng(seed), margin)
    a = _ckernels.gripper_counts(*args)
    b = _kernels_py.gripper_counts(*args)
    for x, y in zip(a, b):
        assert np.array_equal(x, y)


@pytest.mark.parametrize("seed", range(3))
def test_neighbor_lists_do_not_change_counts(seed):
    pts, flags, rot, trans, widths, dims = _counts_case(np.random.default_rng(seed), 0.0)
    nbrs = [np.flatnonzero(np.linalg.norm(pts - t, axis=1) < 0.2) for t in trans]
    full = kernels.gripper_counts(pts, flags, rot, trans, widths, dims)
    part = kernels.gripper_counts(pts, flags, rot, trans, widths, dims, nbrs)
    for x, y in zip(full, part):
        assert np.array_equal(x, y)


def test_gripper_regions_by_hand():
    # identity frame: approach +x, closing +y, minor +z; L=0.04 T=0.01 H=0.02 P=0.02
    pts = np.array([[0.02, 0.0, 0.0],     # closing region
                    [0.02, 0.03, 0.0],    # right finger (w/2=0.025 < 0.03 <= 0.035)
                    [-0.01, 0.0, 0.0],    # palm
                    [0.02, 0.0, 0.02],    # above the slab
                    [0.05, 0.0, 0.0]])    # beyond the fingertips
    flags = np.array([1, 1, 0, 1, 1], dtype=np.uint8)
    ct, ca, co, cmin, cmax = kernels.gripper_counts(pts, flags, np.eye(3)[None], np.zeros((1, 3)),
                                                    np.array([0.05]), (0.04, 0.01, 0.02, 0.02, 0.06))
    assert (ct[0], ca[0], co[0]) == (1, 1, 2)
    assert (cmin[0], cmax[0]) == (0.0, 0.03)


def test_pure_python_selected_by_env():
    env = {**os.environ, "VLGRASP_PURE_PYTHON": "1"}
    out = subprocess.run([sys.executable, "-c", "from vlgrasp import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
