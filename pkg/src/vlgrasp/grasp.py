"""Stage two: parallel-jaw grasp candidates on the target, scoring and selection.

Gripper frame (columns of the rotation): ``a`` approach, ``c`` closing,
``m = a x c`` minor axis. The origin sits where the fingers meet the palm;
the candidate's surface point ``p`` is at ``L - d`` along ``a``, so the
fingertips reach ``d`` past it. In gripper coordinates ``(qa, qc, qm)``:

* closing region: ``0 <= qa <= L``, ``|qc| <= w/2``, ``|qm| <= H/2``
* fingers: ``0 <= qa <= L``, ``w/2 < |qc| <= w/2 + T``, ``|qm| <= H/2``
* palm: ``-P <= qa < 0``, ``|qc| <= w/2 + T``, ``|qm| <= H/2``

The sampler is a geometric heuristic standing in for a learned grasp
network; its score counts target points between the fingers and penalizes
points inside the gripper solids.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from . import kernels
from .geometry import PointCloud, Pose, estimate_normal, matrix_to_euler_zyx
from .scene import Scene, sample_surface

COLLISION_PENALTY = 10.0
MIN_TARGET_SAMPLES = 20
WIDTH_MARGIN = 0.01
SCORE_CLEARANCE = 0.005   # solids padding when scoring against the observed cloud
FAILURE_REASONS = ("too-few-target", "width", "collision")


class NoCandidatesError(RuntimeError):
    pass


@dataclass(frozen=True)
class GripperModel:
    max_width: float = 0.10
    finger_length: float = 0.04
    finger_thickness: float = 0.01
    palm_depth: float = 0.02
    finger_height: float = 0.02

    def __post_init__(self):
        for name in ("max_width", "finger_length", "finger_thickness", "palm_depth", "finger_height"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")

    @property
    def reach(self) -> float:
        return self.max_width / 2 + self.finger_thickness

    @property
    def kernel_dims(self) -> tuple[float, float, float, float, float]:
        return (self.finger_length, self.finger_thickness, self.finger_height, self.palm_depth, self.reach)

    @property
    def bounding_radius(self) -> float:
        """Radius around a candidate's surface point covering the gripper for any depth >= 0."""
        return math.sqrt((self.finger_length + self.palm_depth) ** 2 + self.reach ** 2
                         + (self.finger_height / 2) ** 2)


DEFAULT_GRIPPER = GripperModel()


@dataclass(frozen=True)
class SamplerParams:
    n_seeds: int = 20
    n_angles: int = 12
    depths: tuple[float, ...] = (0.01, 0.02, 0.03, 0.04)
    normal_k: int = 32

    def __post_init__(self):
        if self.n_seeds < 1 or self.n_angles < 1 or not self.depths:
            raise ValueError("sampler needs at least one seed, angle and depth")
        object.__setattr__(self, "depths", tuple(float(d) for d in self.depths))


@dataclass(frozen=True, eq=False)
class GraspCandidate:
    point: np.ndarray
    approach: np.ndarray
    angle: float
    depth: float
    width: float
    score: float = 0.0
    point_index: int = -1
    n_close: int = 0          # cloud points in the closing region
    n_close_target: int = 0   # of which target-flagged
    n_collide: int = 0

    def __post_init__(self):
        a = np.asarray(self.approach, dtype=np.float64)
        if abs(np.linalg.norm(a) - 1.0) > 1e-9:
            raise ValueError("approach must be a unit vector")
        if not (0.0 <= self.angle < math.pi):
            raise ValueError("angle must be in [0, pi)")
        if not self.width > 0:
            raise ValueError("width must be > 0")
        if self.score < 0:
            raise ValueError("score must be >= 0")
        object.__setattr__(self, "point", np.asarray(self.point, dtype=np.float64))
        object.__setattr__(self, "approach", a)


@dataclass(frozen=True, eq=False)
class GraspConfig:
    pose: Pose   # camera frame; rotation columns (approach, closing, minor)
    width: float
    score: float = 0.0

    @property
    def euler(self) -> tuple[float, float, float]:
        return matrix_to_euler_zyx(self.pose.R)

    @property
    def approach(self) -> np.ndarray:
        return self.pose.R[:, 0]

    @property
    def closing(self) -> np.ndarray:
        return self.pose.R[:, 1]

    def to_dict(self) -> dict:
        rx, ry, rz = self.euler
        x, y, z = (float(v) for v in self.pose.t)
        return {"x": x, "y": y, "z": z, "rx": float(rx), "ry": float(ry), "rz": float(rz),
                "width": float(self.width), "score": float(self.score)}


# -- decoding --------------------------------------------------------------------------

def _cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.stack([a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1],
                     a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2],
                     a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]], axis=-1)


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.sqrt(np.sum(v * v, axis=-1, keepdims=True))


def grasp_rotations(approaches: np.ndarray, angles: np.ndarray,
                    up: np.ndarray = np.array([0.0, 0.0, 1.0])) -> np.ndarray:
    """(N, 3, 3) rotations with columns (approach, closing, minor).

    The closing axis is ``normalize(a x up)`` (or ``a x x`` when ``a`` is
    parallel to ``up``) rotated by ``angle`` about ``a``.
    """
    a = _unit(np.asarray(approaches, dtype=np.float64).reshape(-1, 3))
    th = np.asarray(angles, dtype=np.float64).reshape(-1)
    ref = _cross(a, np.broadcast_to(up, a.shape))
    bad = np.sqrt(np.sum(ref * ref, axis=1)) < 1e-6
    if bad.any():
        ref[bad] = _cross(a[bad], np.broadcast_to(np.array([1.0, 0.0, 0.0]), a[bad].shape))
    ref = _unit(ref)
    c = np.cos(th)[:, None] * ref + np.sin(th)[:, None] * _cross(a, ref)
    c = _unit(c - np.sum(c * a, axis=1, keepdims=True) * a)
    m = _cross(a, c)
    return np.stack([a, c, m], axis=2)


def grasp_rotation(approach: np.ndarray, angle: float,
                   up: np.ndarray = np.array([0.0, 0.0, 1.0])) -> np.ndarray:
    return grasp_rotations(np.asarray(approach)[None], np.array([angle]), up)[0]


def _origins(cands: Sequence["GraspCandidate"], R: np.ndarray, gripper: "GripperModel") -> np.ndarray:
    p = np.array([c.point for c in cands])
    off = np.array([gripper.finger_length - c.depth for c in cands])
    return p - off[:, None] * R[:, :, 0]


def decode(c: GraspCandidate, gripper: GripperModel = DEFAULT_GRIPPER,
           up: np.ndarray = np.array([0.0, 0.0, 1.0])) -> GraspConfig:
    R = grasp_rotation(c.approach, c.angle, up)
    t = c.point - (gripper.finger_length - c.depth) * R[:, 0]
    return GraspConfig(Pose(R, t), c.width, c.score)


# -- sampling and scoring -------------------------------------------------------------------

def _seed_indices(cloud: PointCloud, n_seeds: int, rng: np.random.Generator) -> np.ndarray:
    tidx = np.flatnonzero(cloud.target_flags())
    if tidx.size == 0:
        raise NoCandidatesError("cloud has no target points")
    k = min(n_seeds, tidx.size)
    return tidx[rng.choice(tidx.size, size=k, replace=False)]


def _candidate_frames(cloud: PointCloud, gripper: GripperModel, params: SamplerParams, seed: int):
    """Per candidate: seed point index, approach, angle, depth, rotation, origin."""
    rng = np.random.default_rng(seed)
    seeds = _seed_indices(cloud, params.n_seeds, rng)
    flags = cloud.target_flags()
    tpts = cloud.points[flags]
    tpos = np.cumsum(flags) - 1   # cloud index -> index among target points
    ttree = cKDTree(tpts)
    angles = np.array([math.pi * i / params.n_angles for i in range(params.n_angles)])
    depths = np.array(params.depths)
    na, nd = len(angles), len(depths)
    # normals from target points only, so context surfaces do not bend them
    appr = np.array([-estimate_normal(tpts, int(tpos[si]), k=params.normal_k, tree=ttree).normal
                     for si in seeds])
    S = len(seeds)
    R = grasp_rotations(np.repeat(appr, na, axis=0), np.tile(angles, S))
    R = np.repeat(R, nd, axis=0)
    sidx = np.repeat(seeds, na * nd)
    th = np.repeat(np.tile(angles, S), nd)
    d = np.tile(depths, S * na)
    a = np.repeat(appr, na * nd, axis=0)
    origin = cloud.points[sidx] - (gripper.finger_length - d)[:, None] * R[:, :, 0]
    return sidx, a, th, d, R, origin


def _neighbor_lists(cloud: PointCloud, seeds: Sequence[int], per_seed: int, radius: float,
                    tree: Optional[cKDTree] = None) -> list[np.ndarray]:
    tree = tree or cKDTree(cloud.points)
    out = []
    cache: dict[int, np.ndarray] = {}
    for pos in range(0, len(seeds), per_seed):
        si = seeds[pos]
        if si not in cache:
            cache[si] = np.asarray(tree.query_ball_point(cloud.points[si], radius, return_sorted=True),
                                   dtype=np.int64)
        out.extend([cache[si]] * per_seed)
    return out


def sample_candidates(cloud: PointCloud, gripper: GripperModel = DEFAULT_GRIPPER,
                      params: SamplerParams = SamplerParams(), seed: int = 0,
                      tree: Optional[cKDTree] = None) -> list[GraspCandidate]:
    """``n_seeds x n_angles x len(depths)`` unscored candidates on target points.

    Width is twice the largest closing-axis offset of target points in the
    finger slab, plus a margin, clamped to the maximum opening.
    """
    sidx, a, th, d, rot, trans = _candidate_frames(cloud, gripper, params, seed)
    per_seed = params.n_angles * len(params.depths)
    nbrs = _neighbor_lists(cloud, sidx, per_seed, gripper.bounding_radius, tree)
    widths = np.full(len(sidx), gripper.max_width)
    _, _, _, cmin, cmax = kernels.gripper_counts(cloud.points, cloud.target_flags().astype(np.uint8),
                                                 rot, trans, widths, gripper.kernel_dims, nbrs)
    half = np.maximum(np.abs(cmin), np.abs(cmax))
    half = np.where(np.isfinite(half), half, 0.0)
    w = np.minimum(2.0 * half + WIDTH_MARGIN, gripper.max_width)
    return [GraspCandidate(cloud.points[si].copy(), ak, float(tk), float(dk), float(wk), 0.0, int(si))
            for si, ak, tk, dk, wk in zip(sidx, a, th, d, w)]


def score_candidates(cands: Sequence[GraspCandidate], cloud: PointCloud,
                     gripper: GripperModel = DEFAULT_GRIPPER, tree: Optional[cKDTree] = None,
                     clearance: float = SCORE_CLEARANCE) -> list[GraspCandidate]:
    """Candidates with ``score = max(0, n_close_target - 10 * n_collide)`` on ``cloud``.

    Collisions are counted in the finger and palm solids padded by
    ``clearance``, which absorbs depth quantization and normal error.
    """
    if not cands:
        return []
    R = grasp_rotations(np.array([c.approach for c in cands]), np.array([c.angle for c in cands]))
    trans = _origins(cands, R, gripper)
    tree = tree or cKDTree(cloud.points)
    radius = gripper.bounding_radius + 2.0 * clearance
    nbrs, cache = [], {}
    for c in cands:
        key = c.point.tobytes()
        if key not in cache:
            cache[key] = np.asarray(tree.query_ball_point(c.point, radius, return_sorted=True),
                                    dtype=np.int64)
        nbrs.append(cache[key])
    ct, ca, co, _, _ = kernels.gripper_counts(cloud.points, cloud.target_flags().astype(np.uint8),
                                              R, trans,
                                              np.array([c.width for c in cands]),
                                              gripper.kernel_dims + (clearance,), nbrs)
    return [replace(c, score=float(max(0.0, t - COLLISION_PENALTY * k)), n_close=int(a),
                    n_close_target=int(t), n_collide=int(k))
            for c, t, a, k in zip(cands, ct, ca, co)]


def score_candidate(c: GraspCandidate, cloud: PointCloud, gripper: GripperModel = DEFAULT_GRIPPER,
                    clearance: float = SCORE_CLEARANCE) -> float:
    return score_candidates([c], cloud, gripper, clearance=clearance)[0].score


def mask_filter(cands: Sequence[GraspCandidate], cloud: PointCloud, strict: bool = False) -> list[GraspCandidate]:
    """Keep candidates whose grasp point is a target-flagged cloud point.

    ``strict`` additionally requires every cloud point in the closing region
    to be target-flagged (uses the counts stored by scoring).
    """
    flags = cloud.target_flags()
    out = []
    for c in cands:
        i = c.point_index
        if not (0 <= i < len(cloud)) or not np.array_equal(cloud.points[i], c.point):
            hit = np.flatnonzero(np.all(cloud.points == c.point, axis=1))
            i = int(hit[0]) if hit.size else -1
        if i < 0 or not flags[i]:
            continue
        if strict and c.n_close != c.n_close_target:
            continue
        out.append(c)
    if not out:
        raise NoCandidatesError("no candidate survives the mask filter")
    return out


def best_index(cands: Sequence[GraspCandidate]) -> int:
    if not cands:
        raise NoCandidatesError("no candidates to select from")
    return min(range(len(cands)), key=lambda i: (-cands[i].score, cands[i].depth, i))


def select_best(cands: Sequence[GraspCandidate], gripper: GripperModel = DEFAULT_GRIPPER) -> GraspConfig:
    """Decode the highest-scoring candidate; ties go to smaller depth, then input order."""
    return decode(cands[best_index(cands)], gripper)


# -- geometric success check ----------------------------------------------------------------

@dataclass(frozen=True)
class GraspOutcome:
    success: bool
    reason: Optional[str]
    n_target: int
    n_collide: int
    extent: float

    def to_dict(self) -> dict:
        return {"success": self.success, "reason": self.reason, "n_target": self.n_target,
                "n_collide": self.n_collide, "extent": self.extent}


def scene_surface_points(scene: Scene, near: Optional[np.ndarray] = None, radius: float = np.inf,
                         spacing: float = 0.002) -> tuple[np.ndarray, np.ndarray]:
    """Surface samples of all objects and boards in the camera frame, with object ids (0 = board).

    ``near``/``radius`` (camera frame) skip objects whose bounding sphere is
    farther away and window the board faces.
    """
    cam = scene.camera.pose
    chunks, ids = [], []
    near_w = None if near is None else cam.apply(np.asarray(near, dtype=np.float64))
    for o in scene.objects:
        if near_w is not None:
            bound = math.hypot(o.shape.footprint, o.shape.half_height)
            if np.linalg.norm(o.pose.t - near_w) > radius + bound:
                continue
        pts = o.pose.apply(sample_surface(o.shape, spacing))
        chunks.append(pts)
        ids.append(np.full(len(pts), o.id, dtype=np.int64))
    for b in scene.boards:
        window = None if near_w is None else (near_w - np.asarray(b.center), radius)
        pts = b.pose.apply(sample_surface(b.shape, spacing, window))
        chunks.append(pts)
        ids.append(np.zeros(len(pts), dtype=np.int64))
    if not chunks:
        return np.zeros((0, 3)), np.zeros(0, dtype=np.int64)
    world = np.vstack(chunks)
    return cam.inverse().apply(world), np.concatenate(ids)


def evaluate_success(g: GraspConfig, scene: Scene, target_id: int,
                     gripper: GripperModel = DEFAULT_GRIPPER, spacing: float = 0.002) -> GraspOutcome:
    """Geometric success: enough target surface between the fingers, fitting
    width, and no scene surface inside the fingers or palm."""
    center = g.pose.apply(np.array([(gripper.finger_length - gripper.palm_depth) / 2, 0.0, 0.0]))
    radius = math.sqrt(((gripper.finger_length + gripper.palm_depth) / 2) ** 2 + gripper.reach ** 2
                       + (gripper.finger_height / 2) ** 2) + spacing
    pts, ids = scene_surface_points(scene, center, radius, spacing)
    flags = (ids == target_id).astype(np.uint8)
    ct, _, co, cmin, cmax = kernels.gripper_counts(pts, flags, g.pose.R[None], g.pose.t[None],
                                                   np.array([g.width]), gripper.kernel_dims)
    n_t, n_c = int(ct[0]), int(co[0])
    extent = float(cmax[0] - cmin[0]) if np.isfinite(cmin[0]) else 0.0
    if n_t < MIN_TARGET_SAMPLES:
        reason = "too-few-target"
    elif extent > g.width:
        reason = "width"
    elif n_c > 0:
        reason = "collision"
    else:
        reason = None
    return GraspOutcome(reason is None, reason, n_t, n_c, extent)
