"""Scene depth to object-level point cloud, under three cropping strategies.

``none`` keeps the whole frame, ``mask_only`` keeps only the predicted mask
and ``bbox_dilated`` keeps the predicted box grown by a per-side factor, so
the cloud carries the target plus a ring of its surroundings. Every point's
target flag records whether its source pixel lies in the predicted mask.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TextIO

import numpy as np

from .geometry import CameraIntrinsics, EmptyCloudError, PointCloud, backproject, dilate_bbox
from .grounding import GroundingResult

DEFAULT_CAP = 20_000
DEFAULT_DILATION = 0.5  # per-side; rings the box with about one gripper half-span on desk objects
STRATEGIES = ("none", "mask_only", "bbox_dilated")
_ALIASES = {"none": "none", "mask": "mask_only", "mask_only": "mask_only",
            "bbox": "bbox_dilated", "bbox_dilated": "bbox_dilated"}


class FilterEmptyError(EmptyCloudError):
    def __init__(self, strategy: "FilterStrategy"):
        super().__init__(f"empty cloud under strategy {strategy.label}")
        self.strategy = strategy


@dataclass(frozen=True)
class FilterStrategy:
    kind: str
    factor: float = DEFAULT_DILATION

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.kind!r}; expected one of {STRATEGIES}")
        if self.factor < 0:
            raise ValueError("dilation factor must be >= 0")

    @classmethod
    def parse(cls, name: str, factor: float = DEFAULT_DILATION) -> "FilterStrategy":
        try:
            return cls(_ALIASES[name], factor)
        except KeyError:
            raise ValueError(f"unknown strategy {name!r}") from None

    @property
    def label(self) -> str:
        return self.kind


def subsample(cloud: PointCloud, cap: int, seed: int) -> PointCloud:
    """At most ``cap`` points, keeping ``min(max(cap // 4, 1), n_target)`` target points first."""
    if cap < 1:
        raise ValueError("cap must be >= 1")
    n = len(cloud)
    if n <= cap:
        return cloud
    rng = np.random.default_rng(seed)
    flags = cloud.target_flags()
    tidx = np.flatnonzero(flags)
    q = min(max(cap // 4, 1), len(tidx))
    keep = rng.choice(tidx, size=q, replace=False) if q else np.zeros(0, dtype=np.int64)
    rest = np.setdiff1d(np.arange(n), keep, assume_unique=True)
    fill = rng.choice(rest, size=cap - q, replace=False)
    return cloud.subset(np.sort(np.concatenate([keep, fill])))


def filter_cloud(depth: np.ndarray, intr: CameraIntrinsics, grounding: GroundingResult,
                 strategy: FilterStrategy | str, cap: int = DEFAULT_CAP, seed: int = 0) -> PointCloud:
    if isinstance(strategy, str):
        strategy = FilterStrategy.parse(strategy)
    if cap < 1:
        raise ValueError("cap must be >= 1")
    mask = np.asarray(grounding.mask, dtype=bool)
    try:
        if strategy.kind == "none":
            cloud = backproject(depth, intr)
        elif strategy.kind == "mask_only":
            cloud = backproject(depth, intr, mask=mask)
        else:
            box = dilate_bbox(grounding.bbox, strategy.factor, intr.width, intr.height)
            cloud = backproject(depth, intr, region=box)
    except EmptyCloudError as exc:
        raise FilterEmptyError(strategy) from exc
    u, v = cloud.pixels[:, 0], cloud.pixels[:, 1]
    cloud = cloud.with_target(mask[v, u])
    return subsample(cloud, cap, seed)


def cloud_stats(cloud: PointCloud) -> dict:
    if len(cloud) == 0:
        raise EmptyCloudError("no points")
    lo = cloud.points.min(axis=0)
    hi = cloud.points.max(axis=0)
    return {"n_points": len(cloud), "n_target": cloud.n_target,
            "extent": {"min": [float(v) for v in lo], "max": [float(v) for v in hi]}}


def dump_cloud(cloud: PointCloud, out: TextIO) -> None:
    """ASCII ``x y z flag`` lines."""
    flags = cloud.target_flags()
    for p, f in zip(cloud.points, flags):
        out.write(f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f} {int(f)}\n")


def load_cloud_dump(text: str) -> PointCloud:
    rows = np.array([line.split() for line in text.splitlines() if line.strip()], dtype=np.float64)
    if rows.size == 0:
        return PointCloud(np.zeros((0, 3)), target=np.zeros(0, dtype=bool))
    return PointCloud(rows[:, :3], target=rows[:, 3] != 0)
