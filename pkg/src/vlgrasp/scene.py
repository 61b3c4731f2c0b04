"""Synthetic cluttered scenes of primitive objects and their analytic rendering.

World frame: +z up, support surfaces horizontal. Objects rest upright on the
support; the camera looks at the workspace from a layout-dependent band of
elevations. Rendering casts one ray per pixel center (or ``supersample**2``
sub-rays) against spheres, boxes and cylinders, giving exact depth and
instance ground truth.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from functools import cached_property, lru_cache
from importlib import resources
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from . import kernels
from .geometry import (
    DEFAULT_INTRINSICS,
    BBox2D,
    CameraIntrinsics,
    Pose,
    bbox_from_mask,
    look_at,
    rot_z,
)

LAYOUTS = ("table", "shelf", "sofa", "wash_table", "drawer", "chair")
MAX_DEPTH_MM = 65535


class SceneGenerationError(RuntimeError):
    pass


class VisibilityError(ValueError):
    """Requested object has no visible pixel in the frame."""


# -- shapes -----------------------------------------------------------------

@dataclass(frozen=True)
class Sphere:
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("sphere radius must be positive")

    @property
    def footprint(self) -> float:
        return self.radius

    @property
    def half_height(self) -> float:
        return self.radius


@dataclass(frozen=True)
class Box:
    dx: float
    dy: float
    dz: float

    def __post_init__(self):
        if not (self.dx > 0 and self.dy > 0 and self.dz > 0):
            raise ValueError("box dimensions must be positive")

    @property
    def footprint(self) -> float:
        return 0.5 * math.hypot(self.dx, self.dy)

    @property
    def half_height(self) -> float:
        return 0.5 * self.dz


@dataclass(frozen=True)
class Cylinder:
    radius: float
    height: float

    def __post_init__(self):
        if not (self.radius > 0 and self.height > 0):
            raise ValueError("cylinder dimensions must be positive")

    @property
    def footprint(self) -> float:
        return self.radius

    @property
    def half_height(self) -> float:
        return 0.5 * self.height


Shape = Union[Sphere, Box, Cylinder]


def shape_to_dict(s: Shape) -> dict:
    if isinstance(s, Sphere):
        return {"type": "sphere", "radius": s.radius}
    if isinstance(s, Box):
        return {"type": "box", "dx": s.dx, "dy": s.dy, "dz": s.dz}
    return {"type": "cylinder", "radius": s.radius, "height": s.height}


def shape_from_dict(d: Mapping) -> Shape:
    kind = d["type"]
    if kind == "sphere":
        return Sphere(float(d["radius"]))
    if kind == "box":
        return Box(float(d["dx"]), float(d["dy"]), float(d["dz"]))
    if kind == "cylinder":
        return Cylinder(float(d["radius"]), float(d["height"]))
    raise ValueError(f"unknown shape type {kind!r}")


def _kernel_shape(s: Shape) -> tuple[int, tuple[float, float, float]]:
    if isinstance(s, Sphere):
        return kernels.SPHERE, (s.radius, 0.0, 0.0)
    if isinstance(s, Box):
        return kernels.BOX, (s.dx / 2, s.dy / 2, s.dz / 2)
    return kernels.CYLINDER, (s.radius, s.height / 2, 0.0)


# -- scene ------------------------------------------------------------------

@dataclass(frozen=True)
class SceneObject:
    id: int
    category: str
    color: str
    size: str
    shape: Shape
    pose: Pose

    @property
    def attributes(self) -> dict[str, str]:
        return {"color": self.color, "size": self.size}

    def to_dict(self) -> dict:
        return {"id": self.id, "category": self.category,
                "attributes": self.attributes, "shape": shape_to_dict(self.shape),
                "pose": self.pose.to_dict()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "SceneObject":
        a = d["attributes"]
        return cls(int(d["id"]), d["category"], a["color"], a["size"],
                   shape_from_dict(d["shape"]), Pose.from_dict(d["pose"]))


@dataclass(frozen=True)
class Camera:
    pose: Pose  # camera-to-world
    intrinsics: CameraIntrinsics = DEFAULT_INTRINSICS

    def to_dict(self) -> dict:
        return {"pose": self.pose.to_dict(), "intrinsics": self.intrinsics.to_dict()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Camera":
        return cls(Pose.from_dict(d["pose"]), CameraIntrinsics.from_dict(d["intrinsics"]))


@dataclass(frozen=True)
class Board:
    """Axis-aligned slab of a layout (support top or shelf ceiling); id 0 when rendered."""

    center: tuple[float, float, float]
    half: tuple[float, float, float]

    @property
    def pose(self) -> Pose:
        return Pose(np.eye(3), np.array(self.center))

    @property
    def shape(self) -> Box:
        return Box(2 * self.half[0], 2 * self.half[1], 2 * self.half[2])


BOARD_THICKNESS = 0.03
RESTART_AFTER = 100
OVERHEAD_CLEARANCE = 0.35


@dataclass(frozen=True)
class Scene:
    layout: str
    support_height: float
    objects: tuple[SceneObject, ...]
    camera: Camera
    seed: int = 0
    support_size: tuple[float, float] = (1.0, 0.7)
    overhead_height: Optional[float] = None

    def __post_init__(self):
        if self.layout not in LAYOUTS:
            raise ValueError(f"unknown layout {self.layout!r}")
        ids = [o.id for o in self.objects]
        if len(set(ids)) != len(ids) or any(i <= 0 for i in ids):
            raise ValueError("object ids must be unique positive integers")
        object.__setattr__(self, "objects", tuple(self.objects))

    def object(self, oid: int) -> SceneObject:
        for o in self.objects:
            if o.id == oid:
                return o
        raise KeyError(oid)

    def without(self, oid: int) -> "Scene":
        return replace(self, objects=tuple(o for o in self.objects if o.id != oid))

    def with_camera(self, camera: Camera) -> "Scene":
        return replace(self, camera=camera)

    @property
    def boards(self) -> tuple[Board, ...]:
        sx, sy = self.support_size
        t = BOARD_THICKNESS
        out = [Board((0.0, 0.0, self.support_height - t / 2), (sx / 2, sy / 2, t / 2))]
        if self.overhead_height is not None:
            out.append(Board((0.0, 0.0, self.overhead_height + t / 2), (sx / 2, sy / 2, t / 2)))
        return tuple(out)

    def to_dict(self, include_camera: bool = True) -> dict:
        d = {"layout": self.layout, "support_height": self.support_height,
             "support_size": list(self.support_size), "overhead_height": self.overhead_height,
             "seed": self.seed, "objects": [o.to_dict() for o in self.objects]}
        if include_camera:
            d["camera"] = self.camera.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: Mapping, camera: Optional[Camera] = None) -> "Scene":
        cam = camera if camera is not None else Camera.from_dict(d["camera"])
        oh = d.get("overhead_height")
        return cls(d["layout"], float(d["support_height"]),
                   tuple(SceneObject.from_dict(o) for o in d["objects"]), cam,
                   int(d.get("seed", 0)), tuple(d.get("support_size", (1.0, 0.7))),
                   None if oh is None else float(oh))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


# -- catalog and generation config -----------------------------------------

@lru_cache(maxsize=None)
def _load_asset(name: str) -> str:
    return resources.files("vlgrasp").joinpath("assets").joinpath(name).read_text(encoding="utf-8")


def load_catalog(path: Optional[str | Path] = None) -> dict:
    text = Path(path).read_text(encoding="utf-8") if path else _load_asset("catalog.json")
    cat = json.loads(text)
    for name, spec in cat["categories"].items():
        unknown = set(spec["colors"]) - set(cat["colors"])
        if unknown:
            raise ValueError(f"category {name} uses undefined colors {sorted(unknown)}")
    return cat


@dataclass(frozen=True)
class LayoutSpec:
    support_height: float
    support_size: tuple[float, float]
    workspace: tuple[float, float]        # placement rectangle (x, y) extents
    elevation_deg: tuple[float, float]
    distance: tuple[float, float]
    azimuth_deg: tuple[float, float] = (-30.0, 30.0)
    overhead: bool = False


# Elevation bands: frontal for shelves, close to top-down for tables/drawers.
LAYOUT_SPECS: dict[str, LayoutSpec] = {
    "table": LayoutSpec(0.75, (1.0, 0.7), (0.6, 0.45), (50.0, 75.0), (0.6, 0.8)),
    "wash_table": LayoutSpec(0.85, (0.8, 0.6), (0.6, 0.45), (45.0, 70.0), (0.6, 0.75)),
    "drawer": LayoutSpec(0.5, (0.75, 0.55), (0.6, 0.45), (60.0, 80.0), (0.6, 0.75)),
    "chair": LayoutSpec(0.45, (0.7, 0.55), (0.6, 0.45), (40.0, 65.0), (0.6, 0.75)),
    "sofa": LayoutSpec(0.42, (1.2, 0.6), (0.64, 0.46), (30.0, 55.0), (0.6, 0.8)),
    "shelf": LayoutSpec(1.0, (0.95, 0.5), (0.76, 0.4), (5.0, 18.0), (0.6, 0.7), overhead=True),
}


@dataclass(frozen=True)
class SceneConfig:
    layout_weights: Mapping[str, float] = field(
        default_factory=lambda: {"table": 3.0, "shelf": 1.0, "sofa": 1.0,
                                 "wash_table": 1.0, "drawer": 1.0, "chair": 1.0})
    count_range: tuple[int, int] = (3, 10)
    duplicate_prob: float = 0.5
    forced: Mapping[str, int] = field(default_factory=dict)
    categories: Optional[Sequence[str]] = None
    min_gap: float = 0.01
    max_rejections: int = 1000
    intrinsics: CameraIntrinsics = DEFAULT_INTRINSICS
    catalog_path: Optional[str] = None
    workspace_scale: float = 1.0

    @cached_property
    def catalog(self) -> dict:
        return load_catalog(self.catalog_path)


def _sample_shape(spec: Mapping, rng: np.random.Generator) -> tuple[Shape, str]:
    kind = spec["shape"]
    if kind == "sphere":
        lo, hi = spec["radius"]
        r = rng.uniform(lo, hi)
        u = (r - lo) / (hi - lo) if hi > lo else 0.5
        return Sphere(r), ("small" if u < 0.5 else "large")
    if kind == "cylinder":
        (rl, rh), (hl, hh) = spec["radius"], spec["height"]
        ur, uh = rng.uniform(), rng.uniform()
        u = 0.5 * (ur + uh)
        return Cylinder(rl + ur * (rh - rl), hl + uh * (hh - hl)), ("small" if u < 0.5 else "large")
    if kind == "box":
        ranges = spec["size"]
        if spec.get("cube"):
            us = [rng.uniform()] * 3
        else:
            us = [rng.uniform() for _ in range(3)]
        dims = [lo + uu * (hi - lo) for (lo, hi), uu in zip(ranges, us)]
        u = float(np.mean(us))
        return Box(*dims), ("small" if u < 0.5 else "large")
    raise ValueError(f"unknown catalog shape {kind!r}")


def sample_camera(layout: str, rng: np.random.Generator, support_height: float,
                  intrinsics: CameraIntrinsics = DEFAULT_INTRINSICS) -> Camera:
    spec = LAYOUT_SPECS[layout]
    el = math.radians(rng.uniform(*spec.elevation_deg))
    az = math.radians(rng.uniform(*spec.azimuth_deg))
    dist = rng.uniform(*spec.distance)
    target = np.array([rng.uniform(-0.03, 0.03), rng.uniform(-0.03, 0.03), support_height + 0.03])
    eye = target + dist * np.array([math.cos(el) * math.sin(az), -math.cos(el) * math.cos(az), math.sin(el)])
    return Camera(look_at(eye, target), intrinsics)


def generate_scene(config: SceneConfig, seed: int) -> Scene:
    """Deterministic random scene for ``(config, seed)``."""
    rng = np.random.default_rng(seed)
    catalog = config.catalog
    cats = sorted(config.categories) if config.categories else sorted(catalog["categories"])
    if not cats:
        raise SceneGenerationError("empty catalog")
    layouts = sorted(k for k, w in config.layout_weights.items() if w > 0)
    weights = np.array([config.layout_weights[k] for k in layouts], dtype=np.float64)
    layout = layouts[int(rng.choice(len(layouts), p=weights / weights.sum()))]
    spec = LAYOUT_SPECS[layout]

    lo, hi = config.count_range
    n = int(rng.integers(lo, hi + 1))
    chosen: list[str] = []
    for cat, k in sorted(config.forced.items()):
        chosen.extend([cat] * int(k))
    if rng.uniform() < config.duplicate_prob and len(chosen) < n:
        chosen.extend([cats[int(rng.integers(len(cats)))]] * int(rng.integers(2, 4)))
    n = max(n, len(chosen))
    n = min(n, max(hi, len(chosen)))
    chosen = chosen[:n]
    while len(chosen) < n:
        chosen.append(cats[int(rng.integers(len(cats)))])

    wx, wy = (s * config.workspace_scale for s in spec.workspace)
    sampled = []
    for cat in chosen:
        cspec = catalog["categories"][cat]
        shape, size_tag = _sample_shape(cspec, rng)
        color = cspec["colors"][int(rng.integers(len(cspec["colors"])))]
        sampled.append((cat, color, size_tag, shape))
    # largest footprints first; ids keep the sampling order
    order = sorted(range(len(sampled)), key=lambda i: (-sampled[i][3].footprint, i))
    # Rejection sampling on footprint circles. A jammed object (too many
    # consecutive rejections) restarts the whole placement; every object keeps
    # its own cumulative rejection budget across restarts.
    budget = {i: 0 for i in order}
    while True:
        placed: list[tuple[float, float, float]] = []
        poses: dict[int, Pose] = {}
        jammed = False
        for i in order:
            shape = sampled[i][3]
            r = shape.footprint
            streak = 0
            while True:
                # centers within the workspace, footprints within the support
                hx = min(wx / 2, spec.support_size[0] / 2 - r)
                hy = min(wy / 2, spec.support_size[1] / 2 - r)
                x = rng.uniform(-hx, hx) if hx > 0 else 0.0
                y = rng.uniform(-hy, hy) if hy > 0 else 0.0
                if all(math.hypot(x - px, y - py) >= r + pr + config.min_gap for px, py, pr in placed):
                    break
                streak += 1
                budget[i] += 1
                if budget[i] >= config.max_rejections:
                    raise SceneGenerationError(
                        f"seed {seed}: could not place object {i + 1} of {len(chosen)} "
                        f"({sampled[i][0]}) after {budget[i]} rejections")
                if streak >= RESTART_AFTER:
                    jammed = True
                    break
            if jammed:
                break
            yaw = rng.uniform(-math.pi, math.pi)
            placed.append((x, y, r))
            poses[i] = Pose(rot_z(yaw), np.array([x, y, spec.support_height + shape.half_height]))
        if not jammed:
            break
    objects = [SceneObject(i + 1, cat, color, size_tag, shape, poses[i])
               for i, (cat, color, size_tag, shape) in enumerate(sampled)]

    camera = sample_camera(layout, rng, spec.support_height, config.intrinsics)
    return Scene(layout, spec.support_height, tuple(objects), camera, seed, spec.support_size,
                 spec.support_height + OVERHEAD_CLEARANCE if spec.overhead else None)


# -- rendering --------------------------------------------------------------

BOARD_RGB = np.array([150, 128, 105], dtype=np.float64)
LIGHT_DIR = np.array([-0.35, -0.7, -1.0]) / np.linalg.norm([-0.35, -0.7, -1.0])


@dataclass(frozen=True, eq=False)
class RenderedFrame:
    color: np.ndarray      # (H, W, 3) uint8
    depth: np.ndarray      # (H, W) uint16 millimeters
    instances: np.ndarray  # (H, W) uint16, 0 = background

    def __post_init__(self):
        if not (self.color.shape[:2] == self.depth.shape == self.instances.shape):
            raise ValueError("frame images must share dimensions")

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape

    def mask(self, oid: int) -> np.ndarray:
        return self.instances == oid

    def visible_ids(self) -> list[int]:
        ids = np.unique(self.instances)
        return [int(i) for i in ids if i != 0]

    def equals(self, other: "RenderedFrame") -> bool:
        return (np.array_equal(self.color, other.color) and np.array_equal(self.depth, other.depth)
                and np.array_equal(self.instances, other.instances))


def scene_primitives(scene: Scene) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray, list]:
    """Kernel arrays ``(kinds, rot, origin, dims, ids)`` plus the base colors per primitive."""
    cam = scene.camera.pose
    colors = load_catalog()["colors"]
    kinds, rots, origins, dims, ids, rgb = [], [], [], [], [], []

    def add(shape, pose_w, oid, base):
        k, d = _kernel_shape(shape)
        R_co = cam.R.T @ pose_w.R
        t_co = cam.R.T @ (pose_w.t - cam.t)
        rots.append(R_co.T)
        origins.append(-(R_co.T @ t_co))
        kinds.append(k)
        dims.append(d)
        ids.append(oid)
        rgb.append(base)

    for o in scene.objects:
        add(o.shape, o.pose, o.id, np.array(colors.get(o.color, [128, 128, 128]), dtype=np.float64))
    for b in scene.boards:
        add(b.shape, b.pose, 0, BOARD_RGB)
    return (np.array(kinds, dtype=np.int64), np.array(rots).reshape(-1, 3, 3),
            np.array(origins).reshape(-1, 3), np.array(dims, dtype=np.float64).reshape(-1, 3),
            np.array(ids, dtype=np.int64), rgb)


def pixel_rays(intr: CameraIntrinsics, du: float = 0.0, dv: float = 0.0) -> np.ndarray:
    u = np.arange(intr.width, dtype=np.float64) + du
    v = np.arange(intr.height, dtype=np.float64) + dv
    uu, vv = np.meshgrid(u, v)
    return np.column_stack([((uu - intr.cx) / intr.fx).ravel(), ((vv - intr.cy) / intr.fy).ravel(),
                            np.ones(uu.size)])


def render(scene: Scene, supersample: int = 1) -> RenderedFrame:
    """Ray-cast ``scene`` into aligned color, depth (mm) and instance images."""
    if supersample < 1:
        raise ValueError("supersample must be >= 1")
    intr = scene.camera.intrinsics
    kinds, rot, origin, dims, ids, rgb = scene_primitives(scene)
    h, w = intr.height, intr.width
    s = supersample
    offs = [((i + 0.5) / s - 0.5) for i in range(s)] if s > 1 else [0.0]
    ts, idx, shade = [], [], []
    for dv in offs:
        for du in offs:
            t, pi, nrm = kernels.raycast(pixel_rays(intr, du, dv), kinds, rot, origin, dims)
            ts.append(t)
            idx.append(pi)
            shade.append(0.35 + 0.65 * np.clip(nrm @ LIGHT_DIR, 0.0, 1.0))
    T = np.stack(ts, axis=1)
    I = np.stack(idx, axis=1)
    S = np.stack(shade, axis=1)
    base = np.array(rgb).reshape(-1, 3) if rgb else np.zeros((0, 3))
    n = T.shape[0]
    if s == 1:
        prim = I[:, 0]
        t_sel = T[:, 0]
    else:
        counts = np.stack([(I == I[:, j:j + 1]).sum(axis=1) for j in range(I.shape[1])], axis=1)
        col = np.argmax(counts, axis=1)
        prim = I[np.arange(n), col]
        same = I == prim[:, None]
        t_sel = np.where(prim >= 0, (T * same).sum(axis=1) / np.maximum(same.sum(axis=1), 1), 0.0)
    depth = np.where(prim >= 0, np.clip(np.rint(t_sel * 1000.0), 0, MAX_DEPTH_MM), 0).astype(np.uint16)
    inst = np.where(prim >= 0, ids[np.maximum(prim, 0)] if len(ids) else 0, 0).astype(np.uint16)
    color = np.zeros((n, 3))
    for j in range(I.shape[1]):
        hit = I[:, j] >= 0
        color[hit] += base[I[hit, j]] * S[hit, j][:, None]
    color /= I.shape[1]
    color = np.clip(np.rint(color), 0, 255).astype(np.uint8)
    return RenderedFrame(color.reshape(h, w, 3), depth.reshape(h, w), inst.reshape(h, w))


def gt_annotations(frame: RenderedFrame, object_id: int) -> tuple[BBox2D, np.ndarray]:
    mask = frame.instances == object_id
    box = bbox_from_mask(mask)
    if box is None:
        raise VisibilityError(f"object {object_id} is not visible")
    return box, mask


@dataclass(frozen=True, eq=False)
class ObjectSummary:
    """Ground-truth view of one visible object in a frame."""

    id: int
    category: str
    attributes: Mapping[str, str]
    bbox: BBox2D
    mask: np.ndarray
    depth: float     # mean camera-frame z over visible pixels, meters
    pixels: int


def object_summaries(scene: Scene, frame: RenderedFrame) -> list[ObjectSummary]:
    out = []
    for o in scene.objects:
        mask = frame.instances == o.id
        npx = int(mask.sum())
        if npx == 0:
            continue
        box = bbox_from_mask(mask)
        depth = float(frame.depth[mask].mean()) / 1000.0
        out.append(ObjectSummary(o.id, o.category, dict(o.attributes), box, mask, depth, npx))
    return out


# -- surface sampling (evaluation oracle) ----------------------------------

def _grid(lo: float, hi: float, spacing: float, wlo: float = -np.inf, whi: float = np.inf) -> np.ndarray:
    n = max(1, int(math.ceil((hi - lo) / spacing)))
    xs = lo + (hi - lo) * np.arange(n + 1) / n
    return xs[(xs >= wlo) & (xs <= whi)]


def sample_surface(shape: Shape, spacing: float = 0.002,
                   window: Optional[tuple[np.ndarray, float]] = None) -> np.ndarray:
    """Surface points of ``shape`` in its local frame at about ``spacing`` meters.

    ``window = (center, radius)`` (local frame) restricts box faces to the
    cube around ``center``; used for large support slabs.
    """
    if isinstance(shape, Sphere):
        r = shape.radius
        n = max(8, int(math.ceil(4 * math.pi * r * r / (spacing * spacing))))
        i = np.arange(n) + 0.5
        phi = np.arccos(1 - 2 * i / n)
        theta = math.pi * (1 + 5 ** 0.5) * i
        return r * np.column_stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)])
    if isinstance(shape, Cylinder):
        r, hh = shape.radius, shape.height / 2
        na = max(8, int(math.ceil(2 * math.pi * r / spacing)))
        ang = 2 * math.pi * np.arange(na) / na
        zs = _grid(-hh, hh, spacing)
        A, Z = np.meshgrid(ang, zs)
        side = np.column_stack([r * np.cos(A).ravel(), r * np.sin(A).ravel(), Z.ravel()])
        g = _grid(-r, r, spacing)
        X, Y = np.meshgrid(g, g)
        inside = X ** 2 + Y ** 2 <= r * r
        disc = np.column_stack([X[inside], Y[inside]])
        caps = [np.column_stack([disc, np.full(len(disc), z)]) for z in (-hh, hh)]
        return np.vstack([side] + caps)
    half = np.array([shape.dx, shape.dy, shape.dz]) / 2
    if window is None:
        wlo, whi = -half, half
    else:
        c, rad = window
        wlo, whi = np.asarray(c) - rad, np.asarray(c) + rad
    faces = []
    for ax in range(3):
        o1, o2 = [a for a in range(3) if a != ax]
        g1 = _grid(-half[o1], half[o1], spacing, wlo[o1], whi[o1])
        g2 = _grid(-half[o2], half[o2], spacing, wlo[o2], whi[o2])
        if g1.size == 0 or g2.size == 0:
            continue
        G1, G2 = np.meshgrid(g1, g2)
        for sgn in (-1.0, 1.0):
            v = sgn * half[ax]
            if not (wlo[ax] <= v <= whi[ax]):
                continue
            pts = np.zeros((G1.size, 3))
            pts[:, ax] = v
            pts[:, o1] = G1.ravel()
            pts[:, o2] = G2.ravel()
            faces.append(pts)
    return np.vstack(faces) if faces else np.zeros((0, 3))


# -- frame IO ----------------------------------------------------------------

def save_frame(frame: RenderedFrame, directory: str | Path) -> None:
    from PIL import Image

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.ascontiguousarray(frame.color, dtype=np.uint8)).save(d / "rgb.png")
    Image.fromarray(frame.depth.astype(np.uint16)).save(d / "depth.png")
    Image.fromarray(frame.instances.astype(np.uint16)).save(d / "instances.png")


def read_png16(path: str | Path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        im.load()
        arr = np.array(im)
    if arr.ndim != 2:
        raise ValueError(f"{path}: expected a single-channel image")
    return arr.astype(np.uint16)


def load_frame(directory: str | Path) -> RenderedFrame:
    from PIL import Image

    d = Path(directory)
    with Image.open(d / "rgb.png") as im:
        im.load()
        color = np.array(im.convert("RGB"))
    return RenderedFrame(color, read_png16(d / "depth.png"), read_png16(d / "instances.png"))
