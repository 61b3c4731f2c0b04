"""Train / testA / testB splits.

testB takes whole scenes, so its scenes never reach training: every scene
of a held-out layout plus a seed-chosen fraction of the rest. The remaining
scenes are split per scene by frame, so testA shares the training scenes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from ..config import ConfigError, SplitRatios

MIN_SCENES = 3


@dataclass(frozen=True)
class SplitSpec:
    train_scenes: tuple[str, ...]
    train_frames: tuple[tuple[str, str], ...]
    testA_scenes: tuple[str, ...]
    testA_frames: tuple[tuple[str, str], ...]
    testB_scenes: tuple[str, ...]
    testB_frames: tuple[tuple[str, str], ...]
    ratios: SplitRatios
    seed: int

    def to_dict(self) -> dict:
        def frames(fs):
            return [f"{s}/{f}" for s, f in fs]
        return {"seed": self.seed, "ratios": self.ratios.to_dict(),
                "train": {"scenes": list(self.train_scenes), "frames": frames(self.train_frames)},
                "testA": {"scenes": list(self.testA_scenes), "frames": frames(self.testA_frames)},
                "testB": {"scenes": list(self.testB_scenes), "frames": frames(self.testB_frames)}}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_dict(cls, d: Mapping) -> "SplitSpec":
        def frames(fs):
            return tuple(tuple(x.split("/", 1)) for x in fs)
        r = d["ratios"]
        ratios = SplitRatios(r["train"], r["testA"], r["testB_scene_fraction"], tuple(r["holdout_layouts"]))
        return cls(tuple(d["train"]["scenes"]), frames(d["train"]["frames"]),
                   tuple(d["testA"]["scenes"]), frames(d["testA"]["frames"]),
                   tuple(d["testB"]["scenes"]), frames(d["testB"]["frames"]), ratios, int(d["seed"]))

    def frames_of(self, split: str) -> tuple[tuple[str, str], ...]:
        try:
            return {"train": self.train_frames, "testA": self.testA_frames, "testB": self.testB_frames}[split]
        except KeyError:
            raise ValueError(f"unknown split {split!r}") from None


def _entries(manifest) -> list:
    scenes = getattr(manifest, "scenes", manifest)
    return sorted(scenes, key=lambda e: e.scene_id)


def make_splits(manifest, ratios: SplitRatios = SplitRatios(), seed: int = 0) -> SplitSpec:
    """Deterministic split of a manifest (or a sequence of scene entries).

    Entries need ``scene_id``, ``layout`` and ``frames``.
    """
    entries = _entries(manifest)
    if len(entries) < MIN_SCENES:
        raise ConfigError(f"need at least {MIN_SCENES} scenes to split, got {len(entries)}")
    rng = np.random.default_rng(seed)
    held = [e for e in entries if e.layout in ratios.holdout_layouts]
    pool = [e for e in entries if e.layout not in ratios.holdout_layouts]
    if not pool:
        raise ConfigError("every scene uses a held-out layout; nothing left to train on")
    n_extra = int(round(ratios.testB_scene_fraction * len(pool)))
    if not held and ratios.testB_scene_fraction > 0:
        n_extra = max(n_extra, 1)
    n_extra = min(n_extra, len(pool) - 1)
    pick = set(rng.choice(len(pool), size=n_extra, replace=False).tolist()) if n_extra else set()
    testB = sorted(held + [e for i, e in enumerate(pool) if i in pick], key=lambda e: e.scene_id)
    rest = [e for i, e in enumerate(pool) if i not in pick]

    train_f, testA_f, testA_s = [], [], []
    for e in rest:
        frames = sorted(e.frames)
        k = len(frames)
        n_a = min(int(round(ratios.testA * k)), k - 1)
        chosen = set(rng.choice(k, size=n_a, replace=False).tolist()) if n_a > 0 else set()
        for i, f in enumerate(frames):
            (testA_f if i in chosen else train_f).append((e.scene_id, f))
        if chosen:
            testA_s.append(e.scene_id)
    testB_f = [(e.scene_id, f) for e in testB for f in sorted(e.frames)]
    return SplitSpec(tuple(e.scene_id for e in rest), tuple(train_f), tuple(testA_s), tuple(testA_f),
                     tuple(e.scene_id for e in testB), tuple(testB_f), ratios, seed)


def verify_splits(spec: SplitSpec, manifest=None) -> list[str]:
    """Violated split invariants, empty when all hold."""
    out = []
    train_s, a_s, b_s = set(spec.train_scenes), set(spec.testA_scenes), set(spec.testB_scenes)
    if b_s & (train_s | a_s):
        out.append(f"testB shares scenes with train/testA: {sorted(b_s & (train_s | a_s))}")
    if set(spec.train_frames) & set(spec.testA_frames):
        out.append("train and testA share frames")
    if not a_s <= train_s:
        out.append(f"testA scenes missing from train: {sorted(a_s - train_s)}")
    for name, frames, scenes in (("train", spec.train_frames, train_s), ("testA", spec.testA_frames, a_s),
                                 ("testB", spec.testB_frames, b_s)):
        stray = {s for s, _ in frames} - scenes
        if stray:
            out.append(f"{name} frames from scenes outside {name}: {sorted(stray)}")
    if manifest is not None:
        entries = {e.scene_id: e for e in _entries(manifest)}
        r = spec.ratios.testA
        per_a = _count(spec.testA_frames)
        for sid in spec.train_scenes:
            if sid not in entries:
                out.append(f"unknown scene {sid}")
                continue
            k = len(entries[sid].frames)
            if abs(per_a.get(sid, 0) - r * k) > 1.0 + 1e-9:
                out.append(f"scene {sid}: {per_a.get(sid, 0)} of {k} frames in testA, ratio {r}")
        covered = set(spec.train_frames) | set(spec.testA_frames) | set(spec.testB_frames)
        every = {(e.scene_id, f) for e in entries.values() for f in e.frames}
        if covered != every:
            out.append(f"{len(every - covered)} frames unassigned, {len(covered - every)} unknown")
    return out


def _count(frames: Iterable[tuple[str, str]]) -> dict[str, int]:
    out: dict[str, int] = {}
    for s, _ in frames:
        out[s] = out.get(s, 0) + 1
    return out
