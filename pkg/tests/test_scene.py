from __future__ import annotations

import math

import numpy as np
import pytest

from helpers import SMALL, TABLE_TOP, lone_sphere_scene, overhead_camera, placed, scene_of
from vlgrasp.geometry import DEFAULT_INTRINSICS
from vlgrasp.scene import (Box, Cylinder, Scene, SceneConfig, SceneGenerationError, Sphere, VisibilityError,
                           generate_scene, gt_annotations, load_frame, render, save_frame)


def test_sphere_center_depth():
    s = lone_sphere_scene(radius=0.05, dist=1.0)
    f = render(s)
    assert f.depth[240, 320] == 950
    assert f.instances[240, 320] == 1


def test_empty_table_depth():
    s = Scene("table", TABLE_TOP, (), overhead_camera(np.array([0.0, 0.0, TABLE_TOP]), 1.2))
    f = render(s)
    assert f.depth[240, 320] == 1200
    assert f.instances.max() == 0


def test_instances_and_depth_consistent():
    s = generate_scene(SceneConfig(intrinsics=SMALL), 11)
    f = render(s)
    ids = {o.id for o in s.objects}
    assert set(f.visible_ids()) <= ids
    assert np.all(f.depth[f.instances > 0] > 0)


def test_generate_deterministic():
    cfg = SceneConfig()
    assert generate_scene(cfg, 7).to_json() == generate_scene(cfg, 7).to_json()
    assert render(generate_scene(cfg, 7)).equals(render(generate_scene(cfg, 7)))


def test_forced_duplicates():
    s = generate_scene(SceneConfig(forced={"apple": 2}, intrinsics=SMALL), 3)
    assert sum(o.category == "apple" for o in s.objects) >= 2


def test_counts_and_non_overlap_over_many_seeds():
    cfg = SceneConfig(intrinsics=SMALL)
    for seed in range(1000):
        s = generate_scene(cfg, seed)
        assert 3 <= len(s.objects) <= 10
        objs = s.objects
        for i in range(len(objs)):
            for j in range(i + 1, len(objs)):
                a, b = objs[i], objs[j]
                d = math.hypot(*(a.pose.t[:2] - b.pose.t[:2]))
                assert d >= a.shape.footprint + b.shape.footprint
            assert math.isclose(objs[i].pose.t[2] - objs[i].shape.half_height, s.support_height, abs_tol=1e-12)


def test_placement_failure_names_seed():
    cfg = SceneConfig(count_range=(10, 10), forced={"banana": 10}, workspace_scale=0.2, max_rejections=50)
    with pytest.raises(SceneGenerationError, match="seed 5"):
        generate_scene(cfg, 5)


@pytest.mark.parametrize("seed", range(100))
def test_single_object_render_oracle(seed):
    rng = np.random.default_rng(seed)
    kind = seed % 3
    if kind == 0:
        shape = Sphere(float(rng.uniform(0.02, 0.06)))
        top = 2 * shape.radius
    elif kind == 1:
        shape = Box(*(float(v) for v in rng.uniform(0.03, 0.1, size=3)))
        top = shape.dz
    else:
        shape = Cylinder(float(rng.uniform(0.02, 0.05)), float(rng.uniform(0.04, 0.15)))
        top = shape.height
    dist = float(rng.uniform(0.5, 1.2))
    obj = placed(1, "block", shape)
    cam_target = np.array([0.0, 0.0, TABLE_TOP + top])
    s = Scene("table", TABLE_TOP, (obj,), overhead_camera(cam_target, dist, SMALL))
    f = render(s)
    # optical axis passes through the object's top point at distance ``dist``
    assert abs(int(f.depth[60, 80]) - dist * 1000.0) <= 1.0
    assert f.instances[60, 80] == 1


def test_gt_annotations_tight_and_minimal():
    s = generate_scene(SceneConfig(intrinsics=SMALL), 4)
    f = render(s)
    for oid in f.visible_ids():
        box, mask = gt_annotations(f, oid)
        v, u = np.nonzero(mask)
        assert (box.x, box.y, box.x2 - 1, box.y2 - 1) == (u.min(), v.min(), u.max(), v.max())


def test_square_mask_box():
    from vlgrasp.scene import RenderedFrame

    inst = np.zeros((40, 40), dtype=np.uint16)
    inst[10:20, 10:20] = 3
    f = RenderedFrame(np.zeros((40, 40, 3), dtype=np.uint8), inst.copy(), inst)
    box, mask = gt_annotations(f, 3)
    assert box.as_list() == [10, 10, 10, 10]
    assert mask.sum() == 100


def test_occluded_object_visibility_error():
    big = placed(1, "block", Box(0.2, 0.2, 0.2))
    hidden = placed(2, "apple", Sphere(0.03))
    f = render(scene_of([big, hidden], intr=SMALL))
    with pytest.raises(VisibilityError):
        gt_annotations(f, 2)


def test_frame_io_round_trip(tmp_path):
    f = render(generate_scene(SceneConfig(intrinsics=SMALL), 2))
    save_frame(f, tmp_path)
    assert load_frame(tmp_path).equals(f)


def test_scene_json_round_trip():
    s = generate_scene(SceneConfig(), 9)
    assert Scene.from_dict(s.to_dict()).to_json() == s.to_json()


def test_shelf_has_overhead_board():
    cfg = SceneConfig(layout_weights={"shelf": 1.0}, intrinsics=SMALL)
    s = generate_scene(cfg, 0)
    assert s.overhead_height is not None and len(s.boards) == 2
    assert math.isclose(s.overhead_height - s.support_height, 0.35)


def test_supersample_keeps_shapes():
    s = generate_scene(SceneConfig(intrinsics=SMALL), 1)
    f = render(s, supersample=2)
    assert f.shape == (SMALL.height, SMALL.width)
    with pytest.raises(ValueError):
        render(s, supersample=0)
    assert DEFAULT_INTRINSICS.width == 640 and DEFAULT_INTRINSICS.height == 480
