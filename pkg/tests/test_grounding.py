from __future__ import annotations

import io
import socket
import sys
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import SMALL, placed, scene_of
from vlgrasp.geometry import BBox2D
from vlgrasp.grounding import (AdapterError, ExternalGrounder, GroundingFailure, GroundingResult,
                               ground_external, ground_lexical, ground_oracle, message_to_result,
                               read_frame, result_to_message, rle_decode, rle_encode, write_frame)
from vlgrasp.reg import SceneView, generate_expression
from vlgrasp.scene import Box, SceneConfig, Sphere, generate_scene, gt_annotations, render
from vlgrasp.stub_server import StubResponder, start_tcp_stub


@pytest.fixture(scope="module")
def two_apples():
    s = scene_of([placed(1, "apple", Sphere(0.035), (-0.1, 0.0)), placed(2, "apple", Sphere(0.035), (0.1, 0.0)),
                  placed(3, "cup", Sphere(0.03), (0.0, 0.12), "white")], intr=SMALL)
    f = render(s)
    return s, f, SceneView.from_frame(s, f)


def test_oracle_equals_ground_truth():
    s = generate_scene(SceneConfig(intrinsics=SMALL), 5)
    f = render(s)
    for oid in f.visible_ids():
        g = ground_oracle(s, f, oid)
        box, mask = gt_annotations(f, oid)
        assert g.bbox == box and np.array_equal(g.mask, mask) and g.confidence == 1.0


def test_oracle_occluded():
    s = scene_of([placed(1, "block", Box(0.2, 0.2, 0.2)), placed(2, "apple", Sphere(0.03))], intr=SMALL)
    with pytest.raises(GroundingFailure) as e:
        ground_oracle(s, render(s), 2)
    assert e.value.reason == "occluded"


def test_lexical_finds_generated_target(two_apples):
    s, f, v = two_apples
    for tid in (1, 2, 3):
        for seed in range(10):
            d = generate_expression(v, tid, seed=seed)
            g = ground_lexical(v, f, d)
            assert np.array_equal(g.mask, f.instances == tid)


def test_lexical_failures(two_apples):
    _, f, v = two_apples
    for text, reason in (("grab the apple", "ambiguous"), ("grab the banana", "no-match"),
                         ("flibber the zorp", "unparseable")):
        with pytest.raises(GroundingFailure) as e:
            ground_lexical(v, f, text)
        assert e.value.reason == reason


@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 2**32 - 1))
@settings(max_examples=100)
def test_rle_round_trip(h, w, seed):
    m = np.random.default_rng(seed).uniform(size=(h, w)) < 0.5
    assert np.array_equal(rle_decode(rle_encode(m)), m)


def test_rle_rejects_bad_counts():
    with pytest.raises(ValueError):
        rle_decode({"size": [2, 2], "counts": [1, 1]})


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=50)
def test_message_round_trip_identity(seed):
    rng = np.random.default_rng(seed)
    mask = rng.uniform(size=(20, 30)) < 0.3
    mask[5, 5] = True
    r = GroundingResult(BBox2D(int(rng.integers(0, 10)), int(rng.integers(0, 10)), 5, 5), mask,
                        float(rng.uniform()))
    buf = io.BytesIO()
    write_frame(buf, result_to_message(r, "id-1"))
    buf.seek(0)
    back = message_to_result(read_frame(buf), (20, 30), "id-1")
    assert back.equals(r)


def test_frame_reader_rejects_garbage():
    buf = io.BytesIO(b"\x00\x00\x00\x05nope!")
    with pytest.raises(AdapterError):
        read_frame(buf)
    assert read_frame(io.BytesIO(b"")) is None


@pytest.fixture()
def frame():
    return render(generate_scene(SceneConfig(intrinsics=SMALL), 1))


def _stub(mode="fixed"):
    server, port = start_tcp_stub(StubResponder((10, 20, 30, 40), mode))
    return server, f"tcp://127.0.0.1:{port}"


def test_tcp_stub_pass_through(frame):
    server, ep = _stub()
    try:
        with ExternalGrounder(ep, timeout=5.0) as g:
            r1 = g.ground(frame, "grab the cup")
            r2 = g.ground(frame, "grab the cup")
        assert r1.bbox == BBox2D(10, 20, 30, 40) and r2.equals(r1)
        assert r1.mask.sum() == 30 * 40
        req = server.responder.requests[0]
        assert set(req) == {"image_png_b64", "text", "request_id"} and req["text"] == "grab the cup"
    finally:
        server.shutdown()


def test_stdio_stub_pass_through(frame):
    r = ground_external(frame, "grab the cup",
                        f"stdio:{sys.executable} -m vlgrasp.stub_server --stdio --bbox 10,20,30,40", timeout=10.0)
    assert r.bbox == BBox2D(10, 20, 30, 40)


def test_send_depth_flag(frame):
    server, ep = _stub()
    try:
        with ExternalGrounder(ep, timeout=5.0, send_depth=True) as g:
            g.ground(frame, "x")
        assert "depth_png_b64" in server.responder.requests[0]
    finally:
        server.shutdown()


@pytest.mark.parametrize("mode,reason", [("empty-mask", "invariant"), ("malformed", "malformed"),
                                         ("wrong-id", "malformed")])
def test_stub_misbehaviour(frame, mode, reason):
    server, ep = _stub(mode)
    try:
        with pytest.raises(AdapterError) as e:
            ground_external(frame, "x", ep, timeout=5.0)
        assert e.value.reason == reason
    finally:
        server.shutdown()


def test_silent_stub_times_out(frame):
    server, ep = _stub("silent")
    try:
        t = time.monotonic()
        with pytest.raises(AdapterError) as e:
            ground_external(frame, "x", ep, timeout=0.5)
        assert e.value.reason == "timeout" and time.monotonic() - t < 3.0
    finally:
        server.shutdown()


def test_no_endpoint_times_out(frame):
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    t = time.monotonic()
    with pytest.raises(AdapterError) as e:
        ground_external(frame, "x", f"tcp://127.0.0.1:{port}", timeout=0.5)
    assert e.value.reason == "timeout" and time.monotonic() - t < 3.0


def test_bad_endpoint_scheme():
    with pytest.raises(ValueError):
        ExternalGrounder("http://example")
