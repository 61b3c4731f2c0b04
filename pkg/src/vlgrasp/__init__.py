"""Language-directed 6-DoF grasping on synthetic RGB-D scenes.

Stage I grounds a directive to a box and mask, Stage II crops the depth
image around the target, samples gripper candidates on the resulting cloud,
filters them through the mask and picks the most confident one.
"""

from .kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]
