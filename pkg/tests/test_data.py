from __future__ import annotations

import json
import shutil
import threading
import time

import numpy as np
import pytest

from helpers import SMALL
from vlgrasp.data import (ANNOTATIONS, MANIFEST, AnnotationRecord, DatasetError, DatasetIOError, GenSpec,
                          _dir_lock, generate_bundles, load_dataset, manifest_sha256, mutate_record,
                          write_dataset)
from vlgrasp.scene import SceneConfig, read_png16

SPEC = GenSpec(5, 4, 3, seed=1, scene_config=SceneConfig(intrinsics=SMALL))


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds")
    bundles = list(generate_bundles(SPEC))
    manifest = write_dataset(bundles, root)
    return root, bundles, manifest


def test_counts(dataset):
    root, bundles, m = dataset
    assert (m.n_scenes, m.n_frames, m.n_expressions) == (5, 20, 60)
    assert m.problems() == []
    assert len((root / ANNOTATIONS).read_text().splitlines()) == 60


def test_round_trip_records(dataset):
    root, bundles, _ = dataset
    ds = load_dataset(root)
    assert ds.warnings == []
    assert ds.records == [r for b in bundles for r in b.records]
    for b in bundles:
        assert ds.scenes[b.scene_id].to_dict(include_camera=False) == b.scene.to_dict(include_camera=False)
        for fid, cam, fr in b.frames:
            assert ds.cameras[(b.scene_id, fid)] == cam
            assert ds.frame(b.scene_id, fid).equals(fr)


def test_depth_lossless(dataset):
    root, bundles, _ = dataset
    fid, _, fr = bundles[0].frames[1]
    back = read_png16(root / "scenes" / bundles[0].scene_id / "frames" / fid / "depth.png")
    assert back.dtype == np.uint16 and np.array_equal(back, fr.depth)


def test_regeneration_identical(dataset, tmp_path):
    root, _, _ = dataset
    write_dataset(generate_bundles(SPEC), tmp_path / "again")
    assert manifest_sha256(root) == manifest_sha256(tmp_path / "again")
    write_dataset(generate_bundles(SPEC), tmp_path / "again")   # overwrite in place
    assert manifest_sha256(root) == manifest_sha256(tmp_path / "again")


def test_overwrite_drops_stale_scenes(tmp_path):
    write_dataset(generate_bundles(GenSpec(3, 1, 1, scene_config=SceneConfig(intrinsics=SMALL))), tmp_path)
    write_dataset(generate_bundles(GenSpec(2, 1, 1, scene_config=SceneConfig(intrinsics=SMALL))), tmp_path)
    assert sorted(p.name for p in (tmp_path / "scenes").iterdir()) == ["s0000", "s0001"]
    assert load_dataset(tmp_path).warnings == []


def test_refuses_foreign_directory(tmp_path):
    (tmp_path / "notes.txt").write_text("keep me")
    with pytest.raises(DatasetError):
        write_dataset([], tmp_path)


def _copy(dataset, tmp_path):
    root = tmp_path / "copy"
    shutil.copytree(dataset[0], root)
    return root


def test_bbox_edit_flagged(dataset, tmp_path):
    root = _copy(dataset, tmp_path)
    lines = (root / ANNOTATIONS).read_text().splitlines()
    rec = json.loads(lines[7])
    rec["bbox"][2] += 1
    lines[7] = json.dumps(rec)
    (root / ANNOTATIONS).write_text("\n".join(lines) + "\n")
    ds = load_dataset(root)
    assert [w.record_id for w in ds.warnings] == [rec["record_id"]]
    assert len(ds.records) == 59


def test_truncated_depth_names_frame(dataset, tmp_path):
    root = _copy(dataset, tmp_path)
    p = root / "scenes/s0002/frames/f001/depth.png"
    p.write_bytes(p.read_bytes()[:40])
    with pytest.raises(DatasetIOError, match="s0002/f001"):
        load_dataset(root)


def test_missing_manifest(tmp_path):
    with pytest.raises(DatasetError):
        load_dataset(tmp_path)


def test_manifest_count_mismatch_warned(dataset, tmp_path):
    root = _copy(dataset, tmp_path)
    m = json.loads((root / MANIFEST).read_text())
    m["n_frames"] += 1
    (root / MANIFEST).write_text(json.dumps(m))
    assert any(w.record_id == "manifest" for w in load_dataset(root).warnings)


def test_fuzz_every_mutation_detected(dataset, tmp_path):
    root = _copy(dataset, tmp_path)
    pristine = (root / ANNOTATIONS).read_text().splitlines()
    rng = np.random.default_rng(2024)
    detected = 0
    for _ in range(100):
        k = int(rng.integers(len(pristine)))
        name, bad = mutate_record(json.loads(pristine[k]), rng)
        lines = list(pristine)
        lines[k] = json.dumps(bad, sort_keys=True)
        (root / ANNOTATIONS).write_text("\n".join(lines) + "\n")
        ds = load_dataset(root)
        detected += any(w.record_id == bad["record_id"] for w in ds.warnings) and len(ds.records) == 59
    assert detected == 100


def test_record_dict_round_trip(dataset):
    r = dataset[1][0].records[0]
    assert AnnotationRecord.from_dict(r.to_dict()) == r
    assert set(r.to_dict()) >= {"scene_id", "frame_id", "text", "query", "target_id", "bbox"}


def test_writer_takes_directory_lock(tmp_path):
    done = threading.Event()

    def writer():
        write_dataset(generate_bundles(GenSpec(1, 1, 1, scene_config=SceneConfig(intrinsics=SMALL))), tmp_path)
        done.set()

    with _dir_lock(tmp_path):
        t = threading.Thread(target=writer)
        t.start()
        time.sleep(0.3)
        assert not done.is_set()
    t.join(10)
    assert done.is_set()
