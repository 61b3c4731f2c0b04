"""On-disk synthetic referring-grasp dataset.

Layout::

    root/manifest.json
    root/annotations.jsonl
    root/scenes/<sid>/scene.json
    root/scenes/<sid>/frames/<fid>/{rgb,depth,instances}.png
    root/scenes/<sid>/frames/<fid>/camera.json

Masks are implicit: the instance-id image plus the record's target id.
"""

from __future__ import annotations

import fcntl
import hashlib
import json
import shutil
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Optional

import numpy as np

from .geometry import BBox2D, bbox_from_mask
from .reg import (Directive, Lexicon, Query, RegError, SceneView, UnparseableError, default_lexicon,
                  generate_expression, parse_directive, realize, verify_unique)
from .scene import (Camera, RenderedFrame, Scene, SceneConfig, SceneGenerationError, generate_scene,
                    load_frame, render, sample_camera, save_frame)

FORMAT_VERSION = "vlgrasp-dataset/1"
MANIFEST = "manifest.json"
ANNOTATIONS = "annotations.jsonl"
LOCKFILE = ".lock"
MAX_SCENE_ATTEMPTS = 20
MAX_CAMERA_ATTEMPTS = 20


class DatasetError(RuntimeError):
    pass


class DatasetIOError(DatasetError):
    def __init__(self, path: str | Path, detail: str):
        super().__init__(f"{path}: {detail}")
        self.path = str(path)


def scene_id(index: int) -> str:
    return f"s{index:04d}"


def frame_id(index: int) -> str:
    return f"f{index:03d}"


def record_id(sid: str, fid: str, k: int) -> str:
    return f"{sid}/{fid}/{k:02d}"


def frame_dir(sid: str, fid: str) -> str:
    return f"scenes/{sid}/frames/{fid}"


# -- records and manifest ----------------------------------------------------------

@dataclass(frozen=True)
class AnnotationRecord:
    record_id: str
    scene_id: str
    frame_id: str
    text: str
    query: Query
    target_id: int
    bbox: BBox2D

    @property
    def frame_dir(self) -> str:
        return frame_dir(self.scene_id, self.frame_id)

    @property
    def directive(self) -> Directive:
        return Directive(self.text, self.query)

    def to_dict(self) -> dict:
        d = self.frame_dir
        return {"record_id": self.record_id, "scene_id": self.scene_id, "frame_id": self.frame_id,
                "text": self.text, "query": self.query.to_dict(), "target_id": self.target_id,
                "bbox": self.bbox.as_list(),
                "mask": {"instances": f"{d}/instances.png", "id": self.target_id},
                "rgb": f"{d}/rgb.png", "depth": f"{d}/depth.png"}

    @classmethod
    def from_dict(cls, d: Mapping) -> "AnnotationRecord":
        return cls(str(d["record_id"]), str(d["scene_id"]), str(d["frame_id"]), str(d["text"]),
                   Query.from_dict(d["query"]), int(d["target_id"]), BBox2D(*d["bbox"]))


@dataclass(frozen=True)
class SceneEntry:
    scene_id: str
    layout: str
    frames: tuple[str, ...]
    n_expressions: int

    def to_dict(self) -> dict:
        return {"scene_id": self.scene_id, "layout": self.layout, "frames": list(self.frames),
                "n_frames": len(self.frames), "n_expressions": self.n_expressions}

    @classmethod
    def from_dict(cls, d: Mapping) -> "SceneEntry":
        return cls(d["scene_id"], d["layout"], tuple(d["frames"]), int(d["n_expressions"]))


@dataclass(frozen=True)
class DatasetManifest:
    version: str
    lexicon_sha256: str
    scenes: tuple[SceneEntry, ...]
    n_frames: int
    n_expressions: int
    annotations_sha256: str = ""
    generator: Mapping = field(default_factory=dict)

    @property
    def n_scenes(self) -> int:
        return len(self.scenes)

    def problems(self) -> list[str]:
        out = []
        if self.n_frames != sum(len(s.frames) for s in self.scenes):
            out.append("manifest n_frames differs from the per-scene sum")
        if self.n_expressions != sum(s.n_expressions for s in self.scenes):
            out.append("manifest n_expressions differs from the per-scene sum")
        if len({s.scene_id for s in self.scenes}) != len(self.scenes):
            out.append("duplicate scene ids in manifest")
        return out

    def to_dict(self) -> dict:
        return {"version": self.version, "lexicon_sha256": self.lexicon_sha256,
                "n_scenes": self.n_scenes, "n_frames": self.n_frames,
                "n_expressions": self.n_expressions, "annotations_sha256": self.annotations_sha256,
                "generator": dict(self.generator), "scenes": [s.to_dict() for s in self.scenes]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_dict(cls, d: Mapping) -> "DatasetManifest":
        return cls(d["version"], d["lexicon_sha256"], tuple(SceneEntry.from_dict(s) for s in d["scenes"]),
                   int(d["n_frames"]), int(d["n_expressions"]), d.get("annotations_sha256", ""),
                   d.get("generator", {}))


@dataclass(eq=False)
class SceneBundle:
    """One generated scene with its frames and annotation records."""

    scene_id: str
    scene: Scene
    frames: list[tuple[str, Camera, RenderedFrame]]
    records: list[AnnotationRecord]


# -- generation ---------------------------------------------------------------------

@dataclass(frozen=True)
class GenSpec:
    n_scenes: int
    frames_per_scene: int
    expr_per_frame: int
    seed: int = 0
    scene_config: SceneConfig = field(default_factory=SceneConfig)

    def __post_init__(self):
        if min(self.n_scenes, self.frames_per_scene, self.expr_per_frame) < 1:
            raise ValueError("scene, frame and expression counts must be >= 1")

    def to_dict(self) -> dict:
        return {"n_scenes": self.n_scenes, "frames_per_scene": self.frames_per_scene,
                "expr_per_frame": self.expr_per_frame, "seed": self.seed}


def _sub_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def _frame_records(sid: str, fid: str, scene: Scene, frame: RenderedFrame, k: int,
                   lexicon: Lexicon, seed: int) -> Optional[list[AnnotationRecord]]:
    """``k`` records for one frame, or None when no visible object can be singled out."""
    view = SceneView.from_frame(scene, frame)
    rng = np.random.default_rng(seed)
    directives: dict[int, Directive] = {}
    for o in view.objects:
        try:
            directives[o.id] = generate_expression(view, o.id, lexicon, seed=_sub_seed(seed, o.id))
        except RegError:
            continue  # two indistinguishable twins: neither can be referred to
    if not directives:
        return None
    ids = sorted(directives)
    order = list(rng.permutation(ids))
    while len(order) < k:
        order.extend(rng.permutation(ids))
    out = []
    for j, tid in enumerate(order[:k]):
        tid = int(tid)
        d = directives[tid] if j < len(ids) else generate_expression(
            view, tid, lexicon, seed=_sub_seed(seed, tid, j))
        out.append(AnnotationRecord(record_id(sid, fid, j), sid, fid, d.text, d.query, tid,
                                    view.get(tid).bbox))
    return out


def generate_bundle(index: int, spec: GenSpec, lexicon: Optional[Lexicon] = None) -> SceneBundle:
    lexicon = lexicon or default_lexicon()
    sid = scene_id(index)
    for attempt in range(MAX_SCENE_ATTEMPTS):
        sseed = _sub_seed(spec.seed, index, attempt)
        try:
            scene = generate_scene(spec.scene_config, sseed)
        except SceneGenerationError:
            continue
        rng = np.random.default_rng(_sub_seed(sseed, 1))
        frames, records = [], []
        for f in range(spec.frames_per_scene):
            fid = frame_id(f)
            for c in range(MAX_CAMERA_ATTEMPTS):
                cam = scene.camera if (f == 0 and c == 0) else sample_camera(
                    scene.layout, rng, scene.support_height, spec.scene_config.intrinsics)
                fr = render(scene.with_camera(cam))
                recs = _frame_records(sid, fid, scene.with_camera(cam), fr, spec.expr_per_frame,
                                      lexicon, _sub_seed(sseed, f, c))
                if recs is not None:
                    break
            else:
                break
            frames.append((fid, cam, fr))
            records.extend(recs)
        if len(frames) == spec.frames_per_scene:
            return SceneBundle(sid, scene, frames, records)
    raise SceneGenerationError(f"scene {sid}: no usable scene after {MAX_SCENE_ATTEMPTS} attempts")


def generate_bundles(spec: GenSpec, lexicon: Optional[Lexicon] = None) -> Iterator[SceneBundle]:
    for i in range(spec.n_scenes):
        yield generate_bundle(i, spec, lexicon)


# -- writing --------------------------------------------------------------------------

@contextmanager
def _dir_lock(root: Path):
    try:
        root.mkdir(parents=True, exist_ok=True)
        fh = open(root / LOCKFILE, "w")
    except OSError as exc:
        raise DatasetIOError(root, exc.strerror or str(exc)) from exc
    try:
        fcntl.flock(fh, fcntl.LOCK_EX)
        yield
    finally:
        fcntl.flock(fh, fcntl.LOCK_UN)
        fh.close()


def _write_text(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise DatasetIOError(path, exc.strerror or str(exc)) from exc


def write_dataset(bundles: Iterable[SceneBundle], root: str | Path, lexicon: Optional[Lexicon] = None,
                  generator: Optional[Mapping] = None) -> DatasetManifest:
    """Write (or overwrite) a dataset under ``root``; holds the directory lock throughout."""
    root = Path(root)
    lexicon = lexicon or default_lexicon()
    if root.exists() and any(p.name != LOCKFILE for p in root.iterdir()) and not (root / MANIFEST).exists():
        raise DatasetError(f"{root}: refusing to overwrite a non-dataset directory")
    with _dir_lock(root):
        shutil.rmtree(root / "scenes", ignore_errors=True)
        entries, lines = [], []
        for b in bundles:
            sdir = root / "scenes" / b.scene_id
            _write_text(sdir / "scene.json", json.dumps(b.scene.to_dict(include_camera=False),
                                                        sort_keys=True, indent=1) + "\n")
            for fid, cam, fr in b.frames:
                fdir = root / frame_dir(b.scene_id, fid)
                try:
                    save_frame(fr, fdir)
                except OSError as exc:
                    raise DatasetIOError(fdir, exc.strerror or str(exc)) from exc
                _write_text(fdir / "camera.json", json.dumps(cam.to_dict(), sort_keys=True) + "\n")
            lines.extend(json.dumps(r.to_dict(), sort_keys=True) for r in b.records)
            entries.append(SceneEntry(b.scene_id, b.scene.layout, tuple(f[0] for f in b.frames),
                                      len(b.records)))
        body = "".join(line + "\n" for line in lines)
        _write_text(root / ANNOTATIONS, body)
        manifest = DatasetManifest(FORMAT_VERSION, lexicon.source_sha256, tuple(entries),
                                   sum(len(e.frames) for e in entries), len(lines),
                                   hashlib.sha256(body.encode("utf-8")).hexdigest(), dict(generator or {}))
        _write_text(root / MANIFEST, manifest.to_json())
    return manifest


def manifest_sha256(root: str | Path) -> str:
    return hashlib.sha256((Path(root) / MANIFEST).read_bytes()).hexdigest()


# -- loading and validation ------------------------------------------------------------

@dataclass(frozen=True)
class ValidationWarning:
    record_id: str
    message: str

    def __str__(self) -> str:
        return f"{self.record_id}: {self.message}"


@dataclass(eq=False)
class Dataset:
    root: Path
    manifest: DatasetManifest
    scenes: dict[str, Scene]
    cameras: dict[tuple[str, str], Camera]
    records: list[AnnotationRecord]
    warnings: list[ValidationWarning]
    _frames: dict = field(default_factory=dict, repr=False)

    def frame(self, sid: str, fid: str) -> RenderedFrame:
        key = (sid, fid)
        if key not in self._frames:
            self._frames[key] = _load_frame_checked(self.root, sid, fid)
        return self._frames[key]

    def scene_at(self, sid: str, fid: str) -> Scene:
        return self.scenes[sid].with_camera(self.cameras[(sid, fid)])

    def view(self, sid: str, fid: str) -> SceneView:
        return SceneView.from_frame(self.scene_at(sid, fid), self.frame(sid, fid))

    def record(self, rid: str) -> AnnotationRecord:
        for r in self.records:
            if r.record_id == rid:
                return r
        raise KeyError(rid)


def _load_frame_checked(root: Path, sid: str, fid: str) -> RenderedFrame:
    d = root / frame_dir(sid, fid)
    try:
        return load_frame(d)
    except (OSError, ValueError, SyntaxError) as exc:
        raise DatasetIOError(d, f"frame {sid}/{fid} unreadable: {exc}") from exc


def _read_json(path: Path):
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise DatasetIOError(path, exc.strerror or str(exc)) from exc
    except json.JSONDecodeError as exc:
        raise DatasetIOError(path, f"invalid JSON: {exc}") from exc


def _record_problems(raw: Mapping, rec: AnnotationRecord, ds: Dataset, lexicon: Lexicon) -> list[str]:
    canon = rec.to_dict()
    out = [f"field {k!r} is {raw.get(k)!r}, expected {canon[k]!r}"
           for k in ("mask", "rgb", "depth") if raw.get(k) != canon[k]]
    parts = rec.record_id.split("/")
    if len(parts) != 3 or parts[:2] != [rec.scene_id, rec.frame_id] or not parts[2].isdigit():
        out.append("record_id does not match scene_id/frame_id/index")
    if rec.scene_id not in ds.scenes:
        return out + [f"unknown scene {rec.scene_id!r}"]
    if (rec.scene_id, rec.frame_id) not in ds.cameras:
        return out + [f"unknown frame {rec.frame_id!r}"]
    frame = ds.frame(rec.scene_id, rec.frame_id)
    box = bbox_from_mask(frame.instances == rec.target_id)
    if box is None:
        return out + [f"target {rec.target_id} absent from the instance image"]
    if box != rec.bbox:
        out.append(f"bbox {rec.bbox.as_list()} disagrees with instance image {box.as_list()}")
    try:
        parsed = parse_directive(rec.text, lexicon)
    except UnparseableError:
        parsed = None
    if parsed != rec.query:
        out.append("text does not parse to the stored query")
    view = ds.view(rec.scene_id, rec.frame_id)
    if not verify_unique(view, rec.query, rec.target_id):
        out.append("query does not single out the target")
    return out


def load_dataset(root: str | Path, lexicon: Optional[Lexicon] = None, validate: bool = True) -> Dataset:
    """Read a dataset; per-record violations land in ``warnings`` and the record is dropped."""
    root = Path(root)
    lexicon = lexicon or default_lexicon()
    if not (root / MANIFEST).is_file():
        raise DatasetError(f"{root}: no {MANIFEST}")
    manifest = DatasetManifest.from_dict(_read_json(root / MANIFEST))
    warnings = [ValidationWarning("manifest", p) for p in manifest.problems()]
    if manifest.lexicon_sha256 and lexicon.source_sha256 and manifest.lexicon_sha256 != lexicon.source_sha256:
        warnings.append(ValidationWarning("manifest", "lexicon hash differs from the loaded lexicon"))
    scenes, cameras = {}, {}
    for e in manifest.scenes:
        sdir = root / "scenes" / e.scene_id
        sd = _read_json(sdir / "scene.json")
        for fid in e.frames:
            cameras[(e.scene_id, fid)] = Camera.from_dict(_read_json(root / frame_dir(e.scene_id, fid)
                                                                     / "camera.json"))
        first = cameras[(e.scene_id, e.frames[0])] if e.frames else None
        if first is None:
            raise DatasetError(f"{sdir}: scene has no frames")
        scenes[e.scene_id] = Scene.from_dict(sd, camera=first)
    ds = Dataset(root, manifest, scenes, cameras, [], warnings)
    try:
        lines = (root / ANNOTATIONS).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DatasetIOError(root / ANNOTATIONS, exc.strerror or str(exc)) from exc
    seen: dict[str, int] = {}
    parsed: list[tuple[dict, AnnotationRecord]] = []
    for n, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
            rec = AnnotationRecord.from_dict(raw)
        except (ValueError, KeyError, TypeError) as exc:
            warnings.append(ValidationWarning(f"line {n}", f"malformed record: {exc}"))
            continue
        seen[rec.record_id] = seen.get(rec.record_id, 0) + 1
        parsed.append((raw, rec))
    if len(parsed) != manifest.n_expressions:
        warnings.append(ValidationWarning("manifest", f"{len(parsed)} records, manifest says "
                                                      f"{manifest.n_expressions}"))
    for raw, rec in parsed:
        problems = _record_problems(raw, rec, ds, lexicon) if validate else []
        if seen[rec.record_id] > 1:
            problems.append("duplicate record_id")
        if problems:
            warnings.extend(ValidationWarning(rec.record_id, p) for p in problems)
        else:
            ds.records.append(rec)
    return ds


# -- fault injection ---------------------------------------------------------------------

MUTABLE_FIELDS = ("record_id", "scene_id", "frame_id", "text", "query.category", "query.attributes",
                  "query.location", "target_id", "bbox", "mask", "rgb", "depth")


def mutate_record(raw: Mapping, rng: np.random.Generator, lexicon: Optional[Lexicon] = None,
                  field_name: Optional[str] = None) -> tuple[str, dict]:
    """Copy of ``raw`` with one field changed to a different value."""
    lexicon = lexicon or default_lexicon()
    d = json.loads(json.dumps(raw))
    name = field_name or MUTABLE_FIELDS[int(rng.integers(len(MUTABLE_FIELDS)))]
    q = d["query"]
    if name == "record_id":
        d["record_id"] = f"x{int(rng.integers(1 << 30))}"
    elif name == "scene_id":
        d["scene_id"] = f"{d['scene_id']}x"
    elif name == "frame_id":
        d["frame_id"] = f"{d['frame_id']}x"
    elif name == "text":
        others = sorted(c for c in lexicon.objects if c != q["category"])
        alt = Query(others[int(rng.integers(len(others)))], tuple(q["attributes"].items()), q["location"])
        d["text"] = realize(alt, lexicon, rng)
    elif name == "query.category":
        others = sorted(c for c in lexicon.objects if c != q["category"])
        q["category"] = others[int(rng.integers(len(others)))]
    elif name == "query.attributes":
        kinds = sorted(lexicon.attributes)
        kind = kinds[int(rng.integers(len(kinds)))]
        vals = sorted(v for v in lexicon.attributes[kind] if v != q["attributes"].get(kind))
        q["attributes"] = {**q["attributes"], kind: vals[int(rng.integers(len(vals)))]}
    elif name == "query.location":
        locs = sorted(v for v in lexicon.locations if v != q["location"])
        q["location"] = locs[int(rng.integers(len(locs)))]
    elif name == "target_id":
        d["target_id"] = int(d["target_id"]) + 1 + int(rng.integers(3))
    elif name == "bbox":
        i = int(rng.integers(4))
        d["bbox"][i] += 1 + int(rng.integers(3))
    elif name == "mask":
        d["mask"] = {**d["mask"], "id": int(d["mask"]["id"]) + 1}
    elif name in ("rgb", "depth"):
        d[name] = d[name].replace(".png", ".jpg")
    else:
        raise ValueError(f"unknown field {name!r}")
    return name, d
