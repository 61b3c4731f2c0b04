"""Directive to graded grasp: ground, filter, sample, mask-filter, select, evaluate.

``run_pipeline`` never raises; each stage failure becomes a failed record
carrying the stage and a reason.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..geometry import EmptyCloudError
from ..grasp import (DEFAULT_GRIPPER, GripperModel, NoCandidatesError, SamplerParams, evaluate_success,
                     mask_filter, sample_candidates, score_candidates, select_best)
from ..grounding import ExternalGrounder, GroundingFailure, GroundingResult, ground_lexical, ground_oracle
from ..pcfilter import DEFAULT_CAP, FilterStrategy, filter_cloud
from ..reg import Directive, Lexicon, SceneView
from ..scene import RenderedFrame, Scene

GROUNDERS = ("oracle", "lexical", "external")
STAGES = ("ground", "filter", "sample", "mask", "evaluate")


@dataclass(frozen=True)
class RunRecord:
    scene_id: str
    frame_id: str
    record_id: str
    text: str
    strategy: str
    grounder: str
    grounding: Optional[dict]
    grasp: Optional[dict]
    success: bool
    failure_reason: Optional[str]
    failure_stage: Optional[str] = None
    detail: str = ""
    wall_time: float = field(default=0.0, compare=False)

    def __post_init__(self):
        if self.success and self.grasp is None:
            raise ValueError("a successful run needs a grasp")
        if self.success == (self.failure_reason is not None):
            raise ValueError("exactly one of success or failure_reason must be set")

    def to_dict(self, include_time: bool = False) -> dict:
        d = {"scene_id": self.scene_id, "frame_id": self.frame_id, "record_id": self.record_id,
             "text": self.text, "strategy": self.strategy, "grounder": self.grounder,
             "grounding": self.grounding, "grasp": self.grasp, "success": self.success,
             "failure_reason": self.failure_reason, "failure_stage": self.failure_stage,
             "detail": self.detail}
        if include_time:
            d["wall_time"] = self.wall_time
        return d

    def to_json(self, include_time: bool = False) -> str:
        return json.dumps(self.to_dict(include_time), sort_keys=True)


def grounder_kind(grounder) -> str:
    if isinstance(grounder, ExternalGrounder):
        return "external"
    if grounder in ("oracle", "lexical"):
        return grounder
    if isinstance(grounder, str) and grounder.startswith("external:"):
        return "external"
    raise ValueError(f"unknown grounder {grounder!r}; expected oracle, lexical or external:ADDR")


def external_endpoint(spec: str) -> str:
    """``external:tcp://h:p``, ``external:stdio:cmd`` or shorthand ``external:h:p``."""
    addr = spec[len("external:"):]
    if addr.startswith(("tcp://", "stdio:")):
        return addr
    return f"tcp://{addr}"


def _ground(grounder, scene: Scene, frame: RenderedFrame, directive: Directive, target_id: int,
            lexicon: Optional[Lexicon], timeout: float) -> GroundingResult:
    kind = grounder_kind(grounder)
    if kind == "oracle":
        return ground_oracle(scene, frame, target_id)
    if kind == "lexical":
        return ground_lexical(SceneView.from_frame(scene, frame), frame, directive, lexicon)
    if isinstance(grounder, ExternalGrounder):
        return grounder.ground(frame, directive)
    with ExternalGrounder(external_endpoint(grounder), timeout) as g:
        return g.ground(frame, directive)


def run_pipeline(scene: Scene, frame: RenderedFrame, directive: Directive, target_id: int,
                 grounder="oracle", strategy: FilterStrategy | str = "bbox_dilated", seed: int = 0,
                 gripper: GripperModel = DEFAULT_GRIPPER, params: SamplerParams = SamplerParams(),
                 cap: int = DEFAULT_CAP, scene_id: str = "", frame_id: str = "", record_id: str = "",
                 lexicon: Optional[Lexicon] = None, timeout: float = 5.0) -> RunRecord:
    t0 = time.perf_counter()
    stage = "ground"
    grounding = grasp = None
    try:
        name = grounder_kind(grounder)
    except ValueError:
        name = str(grounder)
    try:
        strat = FilterStrategy.parse(strategy) if isinstance(strategy, str) else strategy
        label = strat.label
    except ValueError as exc:
        strat, label = None, str(strategy)
        failure: Optional[tuple[str, str]] = ("error", str(exc))
    else:
        failure = None

    def record(reason: Optional[str], detail: str = "") -> RunRecord:
        return RunRecord(scene_id, frame_id, record_id, directive.text, label, name, grounding, grasp,
                         reason is None, reason, None if reason is None else stage, detail,
                         time.perf_counter() - t0)

    if failure is not None:
        return record(*failure)
    try:
        g = _ground(grounder, scene, frame, directive, target_id, lexicon, timeout)
        g.validate(frame.shape)
        grounding = {"bbox": g.bbox.as_list(), "confidence": float(g.confidence),
                     "mask_pixels": int(np.count_nonzero(g.mask))}
        stage = "filter"
        cloud = filter_cloud(frame.depth, scene.camera.intrinsics, g, strat, cap, seed)
        stage = "sample"
        cands = score_candidates(sample_candidates(cloud, gripper, params, seed), cloud, gripper)
        stage = "mask"
        best = select_best(mask_filter(cands, cloud), gripper)
        stage = "evaluate"
        outcome = evaluate_success(best, scene, target_id, gripper)
        grasp = {**best.to_dict(), "n_target": outcome.n_target, "n_collide": outcome.n_collide,
                 "extent": outcome.extent}
        return record(outcome.reason)
    except GroundingFailure as exc:
        return record(exc.reason, exc.detail)
    except EmptyCloudError as exc:
        return record("empty-cloud", str(exc))
    except NoCandidatesError as exc:
        return record("no-candidates", str(exc))
    except Exception as exc:  # totality: anything else is a failed record, not a crash
        return record("error", f"{type(exc).__name__}: {exc}")
