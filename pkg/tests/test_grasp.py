from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import SMALL, lone_sphere_scene, placed, scene_of
from vlgrasp.geometry import PointCloud, Pose, euler_zyx_to_matrix
from vlgrasp.grasp import (DEFAULT_GRIPPER, GraspCandidate, GraspConfig, GripperModel, NoCandidatesError,
                           SamplerParams, best_index, decode, evaluate_success, grasp_rotation, mask_filter,
                           sample_candidates, score_candidate, score_candidates, select_best)
from vlgrasp.scene import Sphere

G = DEFAULT_GRIPPER


def sphere_cloud(r=0.03, center=(0.0, 0.0, 0.5), n=2000, seed=0):
    v = np.random.default_rng(seed).normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    v = v[v[:, 2] < 0]   # camera-facing half
    pts = np.asarray(center) + r * v
    return PointCloud(pts, target=np.ones(len(pts), dtype=bool))


def cand(point=(0.0, 0.0, 0.5), approach=(0.0, 0.0, 1.0), angle=0.0, depth=0.02, width=0.08, score=0.0, idx=-1):
    return GraspCandidate(np.array(point, dtype=float), np.array(approach, dtype=float), angle, depth, width,
                          score, idx)


def test_sphere_approach_is_anti_normal():
    c = sphere_cloud()
    cands = sample_candidates(c, G, SamplerParams(n_seeds=1), seed=4)
    p = cands[0].point
    outward = (p - np.array([0.0, 0.0, 0.5])) / 0.03
    for k in cands:
        assert np.array_equal(k.point, p)
        assert np.linalg.norm(k.approach + outward) < 0.05


def test_candidate_count():
    cands = sample_candidates(sphere_cloud(), G, SamplerParams(n_seeds=10, n_angles=12), seed=0)
    assert len(cands) == 480
    assert all(0 < k.width <= G.max_width for k in cands)


def test_no_target_points():
    c = sphere_cloud()
    with pytest.raises(NoCandidatesError):
        sample_candidates(c.with_target(np.zeros(len(c), dtype=bool)), G)


def test_sampling_deterministic():
    a = sample_candidates(sphere_cloud(), G, SamplerParams(n_seeds=5), seed=9)
    b = sample_candidates(sphere_cloud(), G, SamplerParams(n_seeds=5), seed=9)
    assert all(np.array_equal(x.point, y.point) and x.angle == y.angle and x.width == y.width
               for x, y in zip(a, b))


def _local_cloud(c, local_pts, flags):
    g = decode(c, G)
    pts = g.pose.apply(np.asarray(local_pts))
    return PointCloud(pts, target=np.asarray(flags, dtype=bool))


def _closing_points(n, rng, w):
    return np.column_stack([rng.uniform(0.01, 0.03, n), rng.uniform(-w / 2 + 0.01, w / 2 - 0.01, n),
                            rng.uniform(-0.005, 0.005, n)])


def _finger_points(n, w):
    return np.column_stack([np.full(n, 0.02), np.full(n, w / 2 + G.finger_thickness / 2), np.zeros(n)])


def test_score_formula_examples():
    rng = np.random.default_rng(1)
    c = cand()
    close = _closing_points(50, rng, c.width)
    assert score_candidate(c, _local_cloud(c, close, np.ones(50)), G) == 50
    pts = np.vstack([close, _finger_points(6, c.width)])
    assert score_candidate(c, _local_cloud(c, pts, np.ones(56)), G) == 0
    far = np.array([[0.5, 0.5, 0.5]])
    assert score_candidate(c, _local_cloud(c, far, [True]), G) == 0


def test_score_counts_stored():
    rng = np.random.default_rng(2)
    c = cand()
    pts = np.vstack([_closing_points(30, rng, c.width), _finger_points(2, c.width)])
    flags = np.r_[np.ones(20), np.zeros(10), np.ones(2)]
    (s,) = score_candidates([c], _local_cloud(c, pts, flags), G)
    assert (s.n_close, s.n_close_target, s.n_collide, s.score) == (30, 20, 2, 0.0)


def test_mask_filter_rules():
    pts = np.array([[0.0, 0.0, 0.5], [0.01, 0.0, 0.5]])
    cloud = PointCloud(pts, target=np.array([True, False]))
    on = cand(point=pts[0], idx=0)
    off = cand(point=pts[1], idx=1)
    assert mask_filter([on, off], cloud) == [on]
    with pytest.raises(NoCandidatesError):
        mask_filter([off], cloud)
    every = PointCloud(pts, target=np.array([True, True]))
    assert mask_filter([on, off], every) == [on, off]


def test_mask_filter_strict():
    pts = np.array([[0.0, 0.0, 0.5]])
    cloud = PointCloud(pts, target=np.array([True]))
    clean = GraspCandidate(pts[0], np.array([0.0, 0.0, 1.0]), 0.0, 0.02, 0.05, 1.0, 0, 5, 5, 0)
    mixed = GraspCandidate(pts[0], np.array([0.0, 0.0, 1.0]), 0.0, 0.02, 0.05, 1.0, 0, 5, 4, 0)
    assert mask_filter([clean, mixed], cloud, strict=True) == [clean]
    assert len(mask_filter([clean, mixed], cloud)) == 2


def test_select_best_tie_rule():
    cs = [cand(score=s, depth=d) for s, d in zip([3, 9, 9, 1], [0.01, 0.03, 0.02, 0.01])]
    assert best_index(cs) == 2
    assert best_index(cs[:1]) == 0
    with pytest.raises(NoCandidatesError):
        select_best([])


@given(st.lists(st.integers(0, 5), min_size=1, max_size=12), st.floats(0.01, 100.0))
def test_select_best_scale_invariant(scores, k):
    depths = [0.01 * (1 + i % 4) for i in range(len(scores))]
    a = [cand(score=s, depth=d) for s, d in zip(scores, depths)]
    b = [cand(score=s * k, depth=d) for s, d in zip(scores, depths)]
    assert best_index(a) == best_index(b)


def test_decode_examples():
    R0 = decode(cand(angle=0.0)).pose.R
    R1 = decode(cand(angle=math.pi / 2)).pose.R
    np.testing.assert_allclose(R0[:, 0], [0.0, 0.0, 1.0])
    assert abs(np.linalg.det(R0) - 1.0) < 1e-9
    assert abs(R0[:, 1] @ R1[:, 1]) < 1e-12
    g = decode(cand(depth=0.01))
    np.testing.assert_allclose(g.pose.t, [0.0, 0.0, 0.5 - (G.finger_length - 0.01)])


def test_decode_orthonormal_many():
    rng = np.random.default_rng(0)
    for _ in range(2000):
        a = rng.normal(size=3)
        a /= np.linalg.norm(a)
        R = decode(cand(approach=a, angle=float(rng.uniform(0, math.pi)))).pose.R
        assert np.linalg.norm(R.T @ R - np.eye(3)) < 1e-9
        assert abs(np.linalg.det(R) - 1.0) < 1e-9


def test_grasp_config_json_and_euler():
    g = decode(cand(approach=(0.0, 0.6, 0.8), angle=1.0))
    d = g.to_dict()
    assert set(d) == {"x", "y", "z", "rx", "ry", "rz", "width", "score"}
    assert np.abs(euler_zyx_to_matrix(d["rx"], d["ry"], d["rz"]) - g.pose.R).max() < 1e-6


def test_gripper_invariants():
    with pytest.raises(ValueError):
        GripperModel(max_width=0.0)
    with pytest.raises(ValueError):
        cand(width=0.0)
    with pytest.raises(ValueError):
        cand(approach=(0.0, 0.0, 2.0))
    with pytest.raises(ValueError):
        cand(angle=math.pi)


# -- geometric evaluator ------------------------------------------------------------------

def _top_grasp(scene, width, center_cam):
    a = np.array([0.0, 0.0, 1.0])
    R = grasp_rotation(a, 0.0)
    return GraspConfig(Pose(R, center_cam - 0.031 * a), width)


def _center_cam(scene, oid):
    return scene.camera.pose.inverse().apply(scene.object(oid).pose.t)


def test_sphere_grasp_success_and_width_failure():
    s = lone_sphere_scene(radius=0.03, dist=0.5, intr=SMALL)
    c = _center_cam(s, 1)
    ok = evaluate_success(_top_grasp(s, 0.08, c), s, 1)
    assert ok.success and ok.reason is None and ok.n_target >= 20
    narrow = evaluate_success(_top_grasp(s, 0.04, c), s, 1)
    assert not narrow.success and narrow.reason == "width"


def test_grasp_on_neighbor_is_too_few_target():
    s = scene_of([placed(1, "apple", Sphere(0.03), (-0.1, 0.0)), placed(2, "apple", Sphere(0.03), (0.1, 0.0))],
                 intr=SMALL)
    g = _top_grasp(s, 0.08, _center_cam(s, 2))
    assert evaluate_success(g, s, 2).success
    assert evaluate_success(g, s, 1).reason == "too-few-target"


def test_board_collision_detected():
    s = lone_sphere_scene(radius=0.03, dist=0.5, intr=SMALL)
    c = _center_cam(s, 1)
    a = np.array([0.0, 0.0, 1.0])
    deep = GraspConfig(Pose(grasp_rotation(a, 0.0), c - 0.005 * a), 0.08)
    assert evaluate_success(deep, s, 1).reason == "collision"


def test_removing_clutter_never_breaks_success():
    from vlgrasp.eval.ablation import SuiteConfig, suite_item
    from vlgrasp.pcfilter import filter_cloud
    from vlgrasp.grounding import ground_oracle

    suite = SuiteConfig(8, seed=11, resolution_scale=0.5, min_target_pixels=100)
    for i in range(suite.n_scenes):
        it = suite_item(i, suite)
        g = ground_oracle(it.scene, it.frame, it.target_id)
        cloud = filter_cloud(it.frame.depth, it.scene.camera.intrinsics, g, "none", seed=i)
        best = select_best(mask_filter(score_candidates(sample_candidates(cloud, seed=i), cloud), cloud))
        before = evaluate_success(best, it.scene, it.target_id)
        for o in it.scene.objects:
            if o.id == it.target_id:
                continue
            after = evaluate_success(best, it.scene.without(o.id), it.target_id)
            assert after.n_collide <= before.n_collide
            if before.success:
                assert after.success
