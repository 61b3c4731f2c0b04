"""Run configuration from an INI-style file.

Every key is optional and overrides a default; unknown sections or keys are
errors. The file path comes from ``--config`` or ``$VLGRASP_CONFIG``::

    [filter]
    # per-side box growth for bbox_dilated
    dilation = 0.5
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from .geometry import DEFAULT_INTRINSICS
from .grasp import DEFAULT_GRIPPER, GripperModel, SamplerParams
from .pcfilter import DEFAULT_CAP, DEFAULT_DILATION, FilterStrategy
from .scene import LAYOUTS, SceneConfig

ENV_VAR = "VLGRASP_CONFIG"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SplitRatios:
    train: float = 0.8
    testA: float = 0.2
    testB_scene_fraction: float = 0.1
    holdout_layouts: tuple[str, ...] = ("drawer",)

    def __post_init__(self):
        for name in ("train", "testA", "testB_scene_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"split ratio {name}={v} outside [0, 1]")
        if abs(self.train + self.testA - 1.0) > 1e-9:
            raise ConfigError(f"train + testA must be 1, got {self.train + self.testA}")
        if self.train == 0.0:
            raise ConfigError("train ratio must be > 0")
        if self.testB_scene_fraction >= 1.0:
            raise ConfigError("testB_scene_fraction must be < 1")
        bad = set(self.holdout_layouts) - set(LAYOUTS)
        if bad:
            raise ConfigError(f"unknown holdout layouts {sorted(bad)}")

    def to_dict(self) -> dict:
        return {"train": self.train, "testA": self.testA,
                "testB_scene_fraction": self.testB_scene_fraction,
                "holdout_layouts": list(self.holdout_layouts)}


@dataclass(frozen=True)
class Config:
    lexicon_path: Optional[str] = None
    catalog_path: Optional[str] = None
    out_dir: str = "out"
    count_range: tuple[int, int] = (3, 10)
    duplicate_prob: float = 0.5
    resolution_scale: float = 1.0
    strategy: str = "bbox_dilated"
    dilation: float = DEFAULT_DILATION
    cap: int = DEFAULT_CAP
    gripper: GripperModel = DEFAULT_GRIPPER
    sampler: SamplerParams = field(default_factory=SamplerParams)
    seed: int = 0
    grounder_timeout: float = 5.0
    send_depth: bool = False
    splits: SplitRatios = field(default_factory=SplitRatios)

    def scene_config(self, **overrides) -> SceneConfig:
        base = SceneConfig(count_range=self.count_range, duplicate_prob=self.duplicate_prob,
                           intrinsics=DEFAULT_INTRINSICS.scaled(self.resolution_scale)
                           if self.resolution_scale != 1.0 else DEFAULT_INTRINSICS,
                           catalog_path=self.catalog_path)
        return replace(base, **overrides)

    def filter_strategy(self, name: Optional[str] = None) -> FilterStrategy:
        return FilterStrategy.parse(name or self.strategy, self.dilation)


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# section -> key -> (parser, target); target is a Config field or "<group>.<field>"
_SCHEMA = {
    "paths": {"lexicon": (str, "lexicon_path"), "catalog": (str, "catalog_path"), "out": (str, "out_dir")},
    "scene": {"count_min": (int, "count_min"), "count_max": (int, "count_max"),
              "duplicate_prob": (float, "duplicate_prob"), "resolution_scale": (float, "resolution_scale")},
    "filter": {"strategy": (str, "strategy"), "dilation": (float, "dilation"), "cap": (int, "cap")},
    "gripper": {k: (float, f"gripper.{k}") for k in
                ("max_width", "finger_length", "finger_thickness", "palm_depth", "finger_height")},
    "sampler": {"n_seeds": (int, "sampler.n_seeds"), "n_angles": (int, "sampler.n_angles"),
                "depths": (_floats, "sampler.depths"), "normal_k": (int, "sampler.normal_k")},
    "seeds": {"seed": (int, "seed")},
    "grounder": {"timeout": (float, "grounder_timeout"), "send_depth": (_bool, "send_depth")},
    "split": {"train": (float, "splits.train"), "testA": (float, "splits.testA"),
              "testB_scene_fraction": (float, "splits.testB_scene_fraction"),
              "holdout_layouts": (lambda s: tuple(s.replace(",", " ").split()), "splits.holdout_layouts")},
}


def parse_config(text: str, base_dir: str | Path = ".") -> Config:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    cp.optionxform = str  # keep key case (testA)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unreadable config: {exc}") from exc
    top: dict = {}
    groups: dict[str, dict] = {"gripper": {}, "sampler": {}, "splits": {}}
    for section in cp.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in cp.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            parse, target = _SCHEMA[section][key]
            try:
                value = parse(raw)
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key}: {exc}") from exc
            if "." in target:
                g, name = target.split(".")
                groups[g][name] = value
            else:
                top[target] = value
    cfg = Config()
    lo, hi = top.pop("count_min", cfg.count_range[0]), top.pop("count_max", cfg.count_range[1])
    if not 1 <= lo <= hi:
        raise ConfigError(f"bad object count range {lo}..{hi}")
    top["count_range"] = (lo, hi)
    for key in ("lexicon_path", "catalog_path"):
        if top.get(key):
            p = Path(base_dir) / top[key]
            if not p.is_file():
                raise ConfigError(f"{key.split('_')[0]} file not found: {p}")
            top[key] = str(p.resolve())
    try:
        cfg = replace(cfg, **top, gripper=replace(cfg.gripper, **groups["gripper"]),
                      sampler=replace(cfg.sampler, **groups["sampler"]),
                      splits=replace(cfg.splits, **groups["splits"]))
        FilterStrategy.parse(cfg.strategy, cfg.dilation)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.cap < 1 or cfg.resolution_scale <= 0 or cfg.grounder_timeout <= 0:
        raise ConfigError("cap, resolution_scale and timeout must be positive")
    return cfg


def load_config(path: Optional[str | Path] = None) -> Config:
    """Config from ``path``, else ``$VLGRASP_CONFIG``, else defaults."""
    path = path or os.environ.get(ENV_VAR)
    if not path:
        return Config()
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc.strerror or exc}") from exc
    return parse_config(text, p.parent)
