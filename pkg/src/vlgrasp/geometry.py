"""Camera model, rigid transforms, depth/point-cloud conversion and 2D boxes.

Conventions
-----------
Camera frame: +x right, +y down, +z forward (optical axis). Pixel ``(u, v)``
has its center at integer coordinates, ``u`` along columns and ``v`` along
rows. Depth images are ``uint16`` millimeters with 0 meaning "no return".
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

ORTHO_TOL = 1e-9


class GeometryError(ValueError):
    """Raised for invalid geometric inputs."""


class EmptyCloudError(GeometryError):
    """Back-projection produced no points (all depths invalid in the region)."""


class NotProjectableError(GeometryError):
    """Point lies on or behind the image plane."""


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int = 640
    height: int = 480

    def __post_init__(self) -> None:
        if not (self.fx > 0 and self.fy > 0):
            raise GeometryError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise GeometryError("principal point outside the image")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def scaled(self, factor: float) -> "CameraIntrinsics":
        """Intrinsics for an image resized by ``factor`` (pixel centers kept on integers)."""
        w = max(1, int(round(self.width * factor)))
        h = max(1, int(round(self.height * factor)))
        return CameraIntrinsics(self.fx * factor, self.fy * factor,
                                min(self.cx * factor, w - 1), min(self.cy * factor, h - 1), w, h)

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


DEFAULT_INTRINSICS = CameraIntrinsics(600.0, 600.0, 320.0, 240.0, 640, 480)


@dataclass(frozen=True)
class BBox2D:
    """Axis-aligned pixel box, top-left ``(x, y)`` and extent ``(w, h)``."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self) -> None:
        if not (self.w > 0 and self.h > 0):
            raise GeometryError(f"degenerate box {self.as_list()}")

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    def as_list(self) -> list[float]:
        return [self.x, self.y, self.w, self.h]

    def intersect(self, other: "BBox2D") -> Optional["BBox2D"]:
        x1, y1 = max(self.x, other.x), max(self.y, other.y)
        x2, y2 = min(self.x2, other.x2), min(self.y2, other.y2)
        if x2 <= x1 or y2 <= y1:
            return None
        return BBox2D(x1, y1, x2 - x1, y2 - y1)

    def clip(self, width: int, height: int) -> Optional["BBox2D"]:
        return self.intersect(BBox2D(0, 0, width, height))

    def pixel_slices(self, width: int, height: int) -> tuple[slice, slice]:
        """Row/column slices of pixel centers covered by the box, clipped to the image.

        A pixel ``u`` is covered when ``x <= u < x + w``.
        """
        u0 = max(0, math.ceil(self.x))
        v0 = max(0, math.ceil(self.y))
        u1 = min(width, math.ceil(self.x2))
        v1 = min(height, math.ceil(self.y2))
        return slice(v0, max(v0, v1)), slice(u0, max(u0, u1))

    def contains(self, other: "BBox2D", tol: float = 1e-9) -> bool:
        return (other.x >= self.x - tol and other.y >= self.y - tol
                and other.x2 <= self.x2 + tol and other.y2 <= self.y2 + tol)


def dilate_bbox(b: BBox2D, f: float, width: int, height: int) -> BBox2D:
    """Grow ``b`` by ``f`` of its size on every side, clamped to the image.

    >>> dilate_bbox(BBox2D(100, 100, 50, 40), 0.2, 640, 480)
    BBox2D(x=90.0, y=92.0, w=70.0, h=56.0)
    """
    if f < 0:
        raise GeometryError("dilation factor must be non-negative")
    grown = BBox2D(b.x - f * b.w, b.y - f * b.h, b.w * (1 + 2 * f), b.h * (1 + 2 * f))
    clipped = grown.clip(width, height)
    if clipped is None:
        raise GeometryError(f"box {b.as_list()} does not intersect the image")
    return clipped


def bbox_from_mask(mask: np.ndarray) -> Optional[BBox2D]:
    """Tight integer box around the true pixels of ``mask`` (None when empty)."""
    rows = np.flatnonzero(mask.any(axis=1))
    if rows.size == 0:
        return None
    cols = np.flatnonzero(mask.any(axis=0))
    return BBox2D(int(cols[0]), int(rows[0]), int(cols[-1] - cols[0] + 1), int(rows[-1] - rows[0] + 1))


def _check_rotation(R: np.ndarray) -> None:
    if R.shape != (3, 3):
        raise GeometryError("rotation must be 3x3")
    if np.linalg.norm(R.T @ R - np.eye(3)) > ORTHO_TOL or abs(np.linalg.det(R) - 1.0) > ORTHO_TOL:
        raise GeometryError("rotation is not orthonormal with det +1")


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform ``x -> R @ x + t`` (maps child-frame points into the parent frame)."""

    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        R = np.array(self.R, dtype=np.float64)
        t = np.array(self.t, dtype=np.float64).reshape(3)
        _check_rotation(R)
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Pose) and np.array_equal(self.R, other.R) and np.array_equal(self.t, other.t)

    def __hash__(self) -> int:
        return hash((self.R.tobytes(), self.t.tobytes()))

    def apply(self, pts: np.ndarray) -> np.ndarray:
        return np.asarray(pts, dtype=np.float64) @ self.R.T + self.t

    def compose(self, other: "Pose") -> "Pose":
        """``self * other``: apply ``other`` first."""
        return Pose(self.R @ other.R, self.R @ other.t + self.t)

    def inverse(self) -> "Pose":
        return Pose(self.R.T, -self.R.T @ self.t)

    def to_dict(self) -> dict:
        return {"R": self.R.tolist(), "t": self.t.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Pose":
        return cls(np.array(d["R"], dtype=np.float64), np.array(d["t"], dtype=np.float64))


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Nearest rotation (polar decomposition via SVD)."""
    U, _, Vt = np.linalg.svd(R)
    Q = U @ Vt
    if np.linalg.det(Q) < 0:
        U[:, -1] *= -1
        Q = U @ Vt
    return Q


def rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_x(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def euler_zyx_to_matrix(rx: float, ry: float, rz: float) -> np.ndarray:
    """``R = Rz(rz) @ Ry(ry) @ Rx(rx)``."""
    return rot_z(rz) @ rot_y(ry) @ rot_x(rx)


def matrix_to_euler_zyx(R: np.ndarray) -> tuple[float, float, float]:
    """Inverse of :func:`euler_zyx_to_matrix`; returns ``(rx, ry, rz)``.

    ``ry`` lies in ``[-pi/2, pi/2]``; at gimbal lock ``rx`` is set to 0.
    """
    s = -float(R[2, 0])
    ry = math.asin(max(-1.0, min(1.0, s)))
    if abs(s) < 1.0 - 1e-12:
        rx = math.atan2(R[2, 1], R[2, 2])
        rz = math.atan2(R[1, 0], R[0, 0])
    else:
        rx = 0.0
        rz = math.atan2(-R[0, 1], R[1, 1])
    return rx, ry, rz


def look_at(eye: np.ndarray, target: np.ndarray, up: np.ndarray = np.array([0.0, 0.0, 1.0])) -> Pose:
    """Camera-to-world pose of a camera at ``eye`` looking at ``target`` (y axis down)."""
    eye = np.asarray(eye, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - eye
    z /= np.linalg.norm(z)
    x = np.cross(z, up)
    if np.linalg.norm(x) < 1e-9:
        x = np.cross(z, np.array([0.0, 1.0, 0.0]))
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return Pose(orthonormalize(np.column_stack([x, y, z])), eye)


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Camera-frame points in meters with optional source pixels and target flags."""

    points: np.ndarray
    pixels: Optional[np.ndarray] = None   # (N, 2) integer (u, v)
    target: Optional[np.ndarray] = None   # (N,) bool

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if pts.size and not np.all(pts[:, 2] > 0):
            raise GeometryError("point cloud contains non-positive depths")
        object.__setattr__(self, "points", pts)
        if self.pixels is not None:
            pix = np.asarray(self.pixels, dtype=np.int64).reshape(-1, 2)
            if len(pix) != len(pts):
                raise GeometryError("pixel list length mismatch")
            object.__setattr__(self, "pixels", pix)
        if self.target is not None:
            tgt = np.asarray(self.target, dtype=bool).reshape(-1)
            if len(tgt) != len(pts):
                raise GeometryError("target flag length mismatch")
            object.__setattr__(self, "target", tgt)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def n_target(self) -> int:
        return 0 if self.target is None else int(self.target.sum())

    def target_flags(self) -> np.ndarray:
        return np.zeros(len(self), dtype=bool) if self.target is None else self.target

    def subset(self, idx: np.ndarray) -> "PointCloud":
        return PointCloud(self.points[idx],
                          None if self.pixels is None else self.pixels[idx],
                          None if self.target is None else self.target[idx])

    def with_target(self, flags: np.ndarray) -> "PointCloud":
        return PointCloud(self.points, self.pixels, flags)

    def equals(self, other: "PointCloud") -> bool:
        def same(a, b):
            return (a is None and b is None) or (a is not None and b is not None and np.array_equal(a, b))
        return same(self.points, other.points) and same(self.pixels, other.pixels) and same(self.target, other.target)


def region_mask(shape: tuple[int, int], region: Optional[BBox2D] = None,
                mask: Optional[np.ndarray] = None) -> np.ndarray:
    h, w = shape
    sel = np.ones(shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool).copy()
    if sel.shape != (h, w):
        raise GeometryError(f"mask shape {sel.shape} != image shape {(h, w)}")
    if region is not None:
        rs, cs = region.pixel_slices(w, h)
        box = np.zeros(shape, dtype=bool)
        box[rs, cs] = True
        sel &= box
    return sel


def backproject(depth: np.ndarray, intr: CameraIntrinsics, region: Optional[BBox2D] = None,
                mask: Optional[np.ndarray] = None) -> PointCloud:
    """One camera-frame point per nonzero depth pixel inside ``region`` and ``mask``.

    Raises :class:`EmptyCloudError` if nothing survives.
    """
    depth = np.asarray(depth)
    if depth.shape != intr.shape:
        raise GeometryError(f"depth shape {depth.shape} != intrinsics {intr.shape}")
    if region is not None and region.clip(intr.width, intr.height) is None:
        raise GeometryError("region does not intersect the image")
    sel = region_mask(depth.shape, region, mask) & (depth > 0)
    v, u = np.nonzero(sel)
    if u.size == 0:
        raise EmptyCloudError("no valid depth pixels in region")
    z = depth[v, u].astype(np.float64) / 1000.0
    x = (u - intr.cx) * z / intr.fx
    y = (v - intr.cy) * z / intr.fy
    return PointCloud(np.column_stack([x, y, z]), np.column_stack([u, v]))


def project(points: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    """Real-valued pixel coordinates ``(u, v)`` of camera-frame points."""
    p = np.asarray(points, dtype=np.float64)
    flat = p.reshape(-1, 3)
    if np.any(flat[:, 2] <= 0):
        raise NotProjectableError("point with z <= 0 cannot be projected")
    u = intr.fx * flat[:, 0] / flat[:, 2] + intr.cx
    v = intr.fy * flat[:, 1] / flat[:, 2] + intr.cy
    out = np.column_stack([u, v])
    return out[0] if p.ndim == 1 else out


@dataclass(frozen=True)
class NormalEstimate:
    normal: np.ndarray
    degenerate: bool = False


def estimate_normal(cloud: PointCloud | np.ndarray, index: int, k: int = 16,
                    tree=None) -> NormalEstimate:
    """Camera-facing surface normal at ``cloud[index]`` from its ``k`` nearest neighbors.

    Uses the smallest-eigenvalue eigenvector of the neighborhood covariance.
    A rank-deficient neighborhood (collinear or coincident points) falls back
    to the unit direction from the point to the camera origin, flagged
    ``degenerate``. ``tree`` may be a prebuilt :class:`scipy.spatial.cKDTree`
    over the same points.
    """
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    p = pts[index]
    kk = min(k + 1, len(pts))
    if tree is not None:
        _, nn = tree.query(p, k=kk)
        nbrs = pts[np.atleast_1d(nn)]
    else:
        d2 = np.einsum("ij,ij->i", pts - p, pts - p)
        nbrs = pts[np.argsort(d2, kind="stable")[:kk]]
    to_cam = -p / np.linalg.norm(p)
    if len(nbrs) < 3:
        return NormalEstimate(to_cam, True)
    centered = nbrs - nbrs.mean(axis=0)
    cov = centered.T @ centered / len(nbrs)
    w, V = np.linalg.eigh(cov)
    scale = max(w[2], 1e-300)
    if w[1] <= 1e-12 * scale or w[2] <= 1e-18:
        return NormalEstimate(to_cam, True)
    n = V[:, 0]
    n = n / np.linalg.norm(n)
    if float(n @ -p) < 0:
        n = -n
    return NormalEstimate(n, False)
