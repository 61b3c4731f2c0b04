"""Compare the compiled and numpy kernel backends on real workloads.

Inputs are captured from one full-resolution render and one grasp scoring
pass, then replayed against each backend::

    python benchmarks/bench_kernels.py --repeats 5
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from vlgrasp import _kernels_py, kernels
from vlgrasp.grasp import DEFAULT_GRIPPER, SamplerParams, sample_candidates, score_candidates
from vlgrasp.grounding import ground_oracle
from vlgrasp.pcfilter import filter_cloud
from vlgrasp.scene import SceneConfig, generate_scene, render

try:
    from vlgrasp import _ckernels
except ImportError:
    _ckernels = None


def capture(seed: int) -> dict[str, list[tuple]]:
    """Arguments of every kernel call made while rendering and scoring one scene."""
    calls: dict[str, list[tuple]] = {"raycast": [], "gripper_counts": []}
    originals = {name: getattr(kernels, name) for name in calls}

    def recorder(name):
        def wrapped(*args):
            calls[name].append(args)
            return originals[name](*args)
        return wrapped

    for name in calls:
        setattr(kernels, name, recorder(name))
    try:
        scene = generate_scene(SceneConfig(), seed)
        frame = render(scene)
        target = int(np.bincount(frame.instances.ravel())[1:].argmax()) + 1
        g = ground_oracle(scene, frame, target)
        cloud = filter_cloud(frame.depth, scene.camera.intrinsics, g, "bbox_dilated", seed=seed)
        score_candidates(sample_candidates(cloud, DEFAULT_GRIPPER, SamplerParams(), seed), cloud, DEFAULT_GRIPPER)
    finally:
        for name, fn in originals.items():
            setattr(kernels, name, fn)
    return calls


def time_backend(module, name: str, calls: list[tuple], repeats: int) -> float:
    fn = getattr(module, name)
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        for args in calls:
            fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def same_outputs(name: str, calls: list[tuple]) -> bool:
    for args in calls:
        for a, b in zip(getattr(_kernels_py, name)(*args), getattr(_ckernels, name)(*args)):
            if not np.allclose(a, b, atol=1e-9, equal_nan=True):
                return False
    return True


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args(argv)
    calls = capture(args.seed)
    print(f"active backend: {kernels.BACKEND}")
    print(f"{'kernel':<16}{'calls':>6}{'python s':>11}{'cython s':>11}{'speedup':>9}  agree")
    for name, cs in calls.items():
        py = time_backend(_kernels_py, name, cs, args.repeats)
        if _ckernels is None:
            print(f"{name:<16}{len(cs):>6}{py:>11.4f}{'n/a':>11}{'n/a':>9}  n/a")
            continue
        cy = time_backend(_ckernels, name, cs, args.repeats)
        print(f"{name:<16}{len(cs):>6}{py:>11.4f}{cy:>11.4f}{py / cy:>8.1f}x  {same_outputs(name, cs)}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
