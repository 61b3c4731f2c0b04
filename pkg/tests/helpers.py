"""Hand-built scenes with known geometry."""

from __future__ import annotations

import numpy as np

from vlgrasp.geometry import DEFAULT_INTRINSICS, CameraIntrinsics, Pose, look_at
from vlgrasp.scene import Camera, Scene, SceneObject, Sphere

SMALL = DEFAULT_INTRINSICS.scaled(0.25)   # 160 x 120
TABLE_TOP = 0.75


def overhead_camera(target, dist: float, intr: CameraIntrinsics = DEFAULT_INTRINSICS) -> Camera:
    target = np.asarray(target, dtype=np.float64)
    return Camera(look_at(target + np.array([0.0, 0.0, dist]), target), intr)


def placed(oid, category, shape, xy=(0.0, 0.0), color="red", size="medium", yaw_R=None) -> SceneObject:
    z = TABLE_TOP + shape.half_height
    return SceneObject(oid, category, color, size, shape, Pose(np.eye(3) if yaw_R is None else yaw_R,
                                                                 np.array([xy[0], xy[1], z])))


def lone_sphere_scene(radius: float = 0.03, dist: float = 1.0,
                      intr: CameraIntrinsics = DEFAULT_INTRINSICS) -> Scene:
    """A sphere on the table, camera ``dist`` above its center looking down."""
    obj = placed(1, "apple", Sphere(radius))
    return Scene("table", TABLE_TOP, (obj,), overhead_camera(obj.pose.t, dist, intr))


def scene_of(objects, dist: float = 0.9, intr: CameraIntrinsics = DEFAULT_INTRINSICS,
             layout: str = "table") -> Scene:
    return Scene(layout, TABLE_TOP, tuple(objects),
                 overhead_camera(np.array([0.0, 0.0, TABLE_TOP]), dist, intr))
