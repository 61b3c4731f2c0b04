from __future__ import annotations

import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import SMALL
from vlgrasp.geometry import BBox2D, PointCloud, dilate_bbox
from vlgrasp.grounding import GroundingResult, ground_oracle
from vlgrasp.pcfilter import (DEFAULT_CAP, FilterEmptyError, FilterStrategy, cloud_stats, dump_cloud,
                              filter_cloud, load_cloud_dump, subsample)
from vlgrasp.scene import SceneConfig, generate_scene, render

BIG = 10**9


@pytest.fixture(scope="module")
def clutter():
    s = generate_scene(SceneConfig(count_range=(8, 10), intrinsics=SMALL), 21)
    f = render(s)
    ids, n = np.unique(f.instances[f.instances > 0], return_counts=True)
    tid = int(ids[np.argmax(n)])
    return s, f, ground_oracle(s, f, tid)


def _pixels(c):
    return {tuple(p) for p in c.pixels.tolist()}


def test_zero_dilation_is_plain_crop(clutter):
    s, f, g = clutter
    c = filter_cloud(f.depth, s.camera.intrinsics, g, FilterStrategy("bbox_dilated", 0.0), cap=BIG)
    rs, cs = g.bbox.pixel_slices(SMALL.width, SMALL.height)
    v, u = np.nonzero(f.depth[rs, cs] > 0)
    assert _pixels(c) == {(int(a) + cs.start, int(b) + rs.start) for a, b in zip(u, v)}


def test_mask_only_all_flagged(clutter):
    s, f, g = clutter
    c = filter_cloud(f.depth, s.camera.intrinsics, g, "mask_only", cap=BIG)
    assert c.target_flags().all()
    st_ = cloud_stats(c)
    assert st_["n_target"] == st_["n_points"] == int(g.mask.sum())


def test_dilated_box_has_context(clutter):
    s, f, g = clutter
    c = filter_cloud(f.depth, s.camera.intrinsics, g, FilterStrategy("bbox_dilated", 0.2), cap=BIG)
    flags = c.target_flags()
    assert flags.any() and (~flags).any()


def test_none_extent_spans_scene_depths(clutter):
    s, f, g = clutter
    c = filter_cloud(f.depth, s.camera.intrinsics, g, "none", cap=BIG)
    ext = cloud_stats(c)["extent"]
    valid = f.depth[f.depth > 0]
    assert ext["min"][2] == valid.min() / 1000.0 and ext["max"][2] == valid.max() / 1000.0


def test_monotone_point_sets(clutter):
    s, f, g = clutter
    intr = s.camera.intrinsics
    m = _pixels(filter_cloud(f.depth, intr, g, "mask_only", cap=BIG))
    n = _pixels(filter_cloud(f.depth, intr, g, "none", cap=BIG))
    for fac in (0.0, 0.2, 0.5, 1.0):
        b = _pixels(filter_cloud(f.depth, intr, g, FilterStrategy("bbox_dilated", fac), cap=BIG))
        assert m <= b <= n


def test_cap_and_determinism(clutter):
    s, f, g = clutter
    a = filter_cloud(f.depth, s.camera.intrinsics, g, "none", cap=500, seed=3)
    b = filter_cloud(f.depth, s.camera.intrinsics, g, "none", cap=500, seed=3)
    assert len(a) == 500 and a.equals(b)
    assert a.n_target >= min(500 // 4, int(g.mask.sum()))


@given(st.integers(1, 400), st.integers(0, 60), st.integers(0, 1000))
@settings(max_examples=100)
def test_subsample_quota(cap, n_target, seed):
    n = 300
    pts = np.column_stack([np.arange(n) * 1e-3, np.zeros(n), np.ones(n)])
    flags = np.zeros(n, dtype=bool)
    flags[:n_target] = True
    out = subsample(PointCloud(pts, target=flags), cap, seed)
    assert len(out) == min(cap, n)
    assert out.n_target >= min(cap // 4, n_target)
    if n_target:
        assert out.n_target > 0


def test_empty_cloud_names_strategy():
    depth = np.zeros((SMALL.height, SMALL.width), dtype=np.uint16)
    mask = np.zeros_like(depth, dtype=bool)
    mask[5:10, 5:10] = True
    g = GroundingResult(BBox2D(5, 5, 5, 5), mask)
    with pytest.raises(FilterEmptyError, match="mask_only"):
        filter_cloud(depth, SMALL, g, "mask_only")


def test_strategy_parsing():
    assert FilterStrategy.parse("bbox").kind == "bbox_dilated"
    assert FilterStrategy.parse("mask").kind == "mask_only"
    with pytest.raises(ValueError):
        FilterStrategy.parse("voxel")
    with pytest.raises(ValueError):
        FilterStrategy("bbox_dilated", -0.1)
    with pytest.raises(ValueError):
        subsample(PointCloud(np.array([[0.0, 0.0, 1.0]])), 0, 0)
    assert DEFAULT_CAP == 20_000


def test_dump_round_trip(clutter):
    s, f, g = clutter
    c = filter_cloud(f.depth, s.camera.intrinsics, g, "bbox_dilated", cap=300)
    buf = io.StringIO()
    dump_cloud(c, buf)
    back = load_cloud_dump(buf.getvalue())
    assert np.abs(back.points - c.points).max() < 1e-6
    assert np.array_equal(back.target_flags(), c.target_flags())
    assert dilate_bbox(g.bbox, 0.0, SMALL.width, SMALL.height) == g.bbox.clip(SMALL.width, SMALL.height)
