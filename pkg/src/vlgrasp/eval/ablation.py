"""Filter-strategy ablation on a seeded cluttered suite with oracle grounding."""

from __future__ import annotations

import csv
import io
import json
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..geometry import DEFAULT_INTRINSICS
from ..grasp import DEFAULT_GRIPPER, GripperModel, SamplerParams
from ..pcfilter import DEFAULT_CAP, DEFAULT_DILATION, STRATEGIES, FilterStrategy
from ..reg import Directive, Query, RegError, SceneView, generate_expression
from ..scene import RenderedFrame, Scene, SceneConfig, SceneGenerationError, generate_scene, render
from .pipeline import RunRecord, run_pipeline

MIN_TARGET_PIXELS = 400
MAX_ATTEMPTS = 20


@dataclass(frozen=True)
class SuiteConfig:
    n_scenes: int = 100
    seed: int = 0
    count_range: tuple[int, int] = (6, 10)
    min_target_pixels: int = MIN_TARGET_PIXELS
    resolution_scale: float = 1.0

    def __post_init__(self):
        if self.n_scenes < 1:
            raise ValueError("suite needs at least one scene")

    def scene_config(self) -> SceneConfig:
        intr = DEFAULT_INTRINSICS if self.resolution_scale == 1.0 else DEFAULT_INTRINSICS.scaled(self.resolution_scale)
        return SceneConfig(count_range=self.count_range, intrinsics=intr)


@dataclass(frozen=True, eq=False)
class SuiteItem:
    scene_id: str
    scene: Scene
    frame: RenderedFrame
    target_id: int
    directive: Directive


def _seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def suite_item(index: int, cfg: SuiteConfig) -> SuiteItem:
    """Scene ``index`` of the suite with a clearly visible target."""
    sc_cfg = cfg.scene_config()
    for attempt in range(MAX_ATTEMPTS):
        s = _seed(cfg.seed, index, attempt)
        try:
            scene = generate_scene(sc_cfg, s)
        except SceneGenerationError:
            continue
        frame = render(scene)
        ids, counts = np.unique(frame.instances, return_counts=True)
        ok = [int(i) for i, n in zip(ids, counts) if i != 0 and n >= cfg.min_target_pixels]
        if not ok:
            continue
        tid = ok[int(np.random.default_rng(s).integers(len(ok)))]
        try:
            d = generate_expression(SceneView.from_frame(scene, frame), tid, seed=s)
        except RegError:
            d = Directive("", Query(scene.object(tid).category))
        return SuiteItem(f"s{index:04d}", scene, frame, tid, d)
    raise SceneGenerationError(f"suite scene {index}: no usable scene after {MAX_ATTEMPTS} attempts")


@dataclass(frozen=True)
class _Job:
    index: int
    suite: SuiteConfig
    strategies: tuple[str, ...]
    dilation: float
    cap: int
    gripper: GripperModel
    params: SamplerParams


def _run_job(job: _Job) -> list[RunRecord]:
    item = suite_item(job.index, job.suite)
    seed = _seed(job.suite.seed, job.index, 7)
    return [run_pipeline(item.scene, item.frame, item.directive, item.target_id, "oracle",
                         FilterStrategy.parse(s, job.dilation), seed, job.gripper, job.params, job.cap,
                         item.scene_id, "f000", f"{item.scene_id}/f000/00")
            for s in job.strategies]


@dataclass(frozen=True)
class StrategyRow:
    strategy: str
    n: int
    successes: int
    failures: dict

    @property
    def rate(self) -> float:
        return self.successes / self.n

    def to_dict(self) -> dict:
        return {"strategy": self.strategy, "n": self.n, "successes": self.successes,
                "rate": self.rate, "failures": dict(sorted(self.failures.items()))}


@dataclass(frozen=True)
class AblationReport:
    suite: SuiteConfig
    dilation: float
    rows: tuple[StrategyRow, ...]
    records: tuple[RunRecord, ...] = field(repr=False)

    def row(self, strategy: str) -> StrategyRow:
        for r in self.rows:
            if r.strategy == strategy:
                return r
        raise KeyError(strategy)

    def summary(self) -> dict:
        return {"n_scenes": self.suite.n_scenes, "seed": self.suite.seed,
                "count_range": list(self.suite.count_range), "dilation": self.dilation,
                "strategies": [r.to_dict() for r in self.rows]}

    def to_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True, indent=1) + "\n"

    def records_jsonl(self, include_time: bool = False) -> str:
        return "".join(r.to_json(include_time) + "\n" for r in self.records)

    def reasons(self) -> list[str]:
        return sorted({k for r in self.rows for k in r.failures})

    def to_text(self) -> str:
        reasons = self.reasons()
        head = ["strategy", "success", "rate"] + reasons
        body = [[r.strategy, f"{r.successes}/{r.n}", f"{r.rate:.2f}"]
                + [str(r.failures.get(k, 0)) for k in reasons] for r in self.rows]
        widths = [max(len(row[i]) for row in [head] + body) for i in range(len(head))]
        lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in [head] + body]
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        reasons = self.reasons()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["strategy", "n", "successes", "rate"] + reasons)
        for r in self.rows:
            w.writerow([r.strategy, r.n, r.successes, f"{r.rate:.4f}"] + [r.failures.get(k, 0) for k in reasons])
        return buf.getvalue()


def run_ablation(suite: SuiteConfig, strategies: Sequence[str] = STRATEGIES, dilation: float = DEFAULT_DILATION,
                 cap: int = DEFAULT_CAP, gripper: GripperModel = DEFAULT_GRIPPER,
                 params: SamplerParams = SamplerParams(), jobs: int = 1) -> AblationReport:
    """Per-strategy success counts and failure reasons; output independent of ``jobs``."""
    strategies = tuple(FilterStrategy.parse(s).kind for s in strategies)
    work = [_Job(i, suite, strategies, dilation, cap, gripper, params) for i in range(suite.n_scenes)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_run_job, work, chunksize=max(1, len(work) // (4 * jobs))))
    else:
        chunks = [_run_job(j) for j in work]
    records = sorted((r for c in chunks for r in c), key=lambda r: (r.scene_id, strategies.index(r.strategy)))
    rows = []
    for s in strategies:
        mine = [r for r in records if r.strategy == s]
        fails = Counter(r.failure_reason for r in mine if not r.success)
        rows.append(StrategyRow(s, len(mine), sum(r.success for r in mine), dict(fails)))
    return AblationReport(suite, dilation, tuple(rows), tuple(records))
