"""Stage one of the pipeline: locate the referred object as a box and a mask.

Three grounders share one contract, ``ground(...) -> GroundingResult`` or a
raised :class:`GroundingFailure`:

* :func:`ground_oracle` returns ground-truth annotations of the known target.
* :func:`ground_lexical` parses the directive and filters ground-truth
  object summaries with it.
* :class:`ExternalGrounder` talks to a separate model process over
  length-prefixed JSON frames (TCP or a child's stdio).
"""

from __future__ import annotations

import base64
import io
import json
import select
import shlex
import socket
import struct
import subprocess
import threading
import time
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from .geometry import BBox2D
from .reg import Directive, Lexicon, SceneView, UnparseableError, default_lexicon, matching, parse_directive
from .scene import RenderedFrame, Scene, VisibilityError, gt_annotations

MAX_FRAME_BYTES = 64 * 1024 * 1024


class GroundingFailure(RuntimeError):
    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason
        self.detail = detail


class AdapterError(GroundingFailure):
    """External grounder failed: ``reason`` is timeout, malformed, invariant or transport."""


@dataclass(frozen=True, eq=False)
class GroundingResult:
    bbox: BBox2D
    mask: np.ndarray
    confidence: float = 1.0

    def validate(self, shape: Optional[tuple[int, int]] = None) -> None:
        if self.mask.dtype != bool or self.mask.ndim != 2:
            raise ValueError("mask must be a 2D boolean array")
        if not self.mask.any():
            raise ValueError("mask is empty")
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")
        h, w = self.mask.shape if shape is None else shape
        if shape is not None and self.mask.shape != tuple(shape):
            raise ValueError(f"mask shape {self.mask.shape} does not match frame {shape}")
        b = self.bbox
        if b.x < 0 or b.y < 0 or b.x2 > w or b.y2 > h:
            raise ValueError(f"bbox {b.as_list()} outside the {w}x{h} image")

    def equals(self, other: "GroundingResult") -> bool:
        return (self.bbox == other.bbox and self.confidence == other.confidence
                and np.array_equal(self.mask, other.mask))


# -- deterministic grounders --------------------------------------------------------

def ground_oracle(scene: Scene, frame: RenderedFrame, target_id: int) -> GroundingResult:
    try:
        box, mask = gt_annotations(frame, target_id)
    except VisibilityError as exc:
        raise GroundingFailure("occluded", str(exc)) from exc
    return GroundingResult(box, mask, 1.0)


def ground_lexical(view: SceneView, frame: RenderedFrame, directive: Directive | str,
                   lexicon: Optional[Lexicon] = None) -> GroundingResult:
    """Parse the directive text and keep the single object satisfying it."""
    text = directive.text if isinstance(directive, Directive) else directive
    try:
        query = parse_directive(text, lexicon or default_lexicon())
    except UnparseableError as exc:
        raise GroundingFailure("unparseable", str(exc)) from exc
    hits = matching(view, query)
    if not hits:
        raise GroundingFailure("no-match", text)
    if len(hits) > 1:
        raise GroundingFailure("ambiguous", f"{len(hits)} objects match {text!r}")
    hit = hits[0]
    if hit.mask.shape != frame.shape:
        raise GroundingFailure("invariant", "summary mask does not match the frame")
    return GroundingResult(hit.bbox, hit.mask, 1.0)


# -- wire format ----------------------------------------------------------------------

def rle_encode(mask: np.ndarray) -> dict:
    """Row-major run lengths, starting with a (possibly empty) run of zeros."""
    flat = np.asarray(mask, dtype=bool).ravel()
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    counts = np.diff(bounds).tolist()
    if flat.size and flat[0]:
        counts = [0] + counts
    return {"size": [int(mask.shape[0]), int(mask.shape[1])], "counts": [int(c) for c in counts]}


def rle_decode(rle: Mapping) -> np.ndarray:
    h, w = (int(v) for v in rle["size"])
    counts = np.asarray(rle["counts"], dtype=np.int64)
    if h < 0 or w < 0 or (counts < 0).any() or int(counts.sum()) != h * w:
        raise ValueError("run lengths do not cover the mask")
    values = np.arange(len(counts)) % 2 == 1
    return np.repeat(values, counts).reshape(h, w)


def _png_b64(arr: np.ndarray) -> str:
    from PIL import Image

    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def decode_png_b64(data: str) -> np.ndarray:
    from PIL import Image

    with Image.open(io.BytesIO(base64.b64decode(data))) as im:
        im.load()
        return np.array(im)


def build_request(frame: RenderedFrame, text: str, request_id: str, send_depth: bool = False) -> dict:
    msg = {"image_png_b64": _png_b64(frame.color), "text": text, "request_id": request_id}
    if send_depth:
        msg["depth_png_b64"] = _png_b64(frame.depth.astype(np.uint16))
    return msg


def result_to_message(result: GroundingResult, request_id: str) -> dict:
    return {"request_id": request_id, "bbox": result.bbox.as_list(),
            "mask_rle": rle_encode(result.mask), "confidence": float(result.confidence)}


def message_to_result(msg: Mapping, shape: Optional[tuple[int, int]] = None,
                      request_id: Optional[str] = None) -> GroundingResult:
    """Decode and validate a reply; raises AdapterError with a diagnostic."""
    if not isinstance(msg, Mapping):
        raise AdapterError("malformed", f"reply is {type(msg).__name__}, not an object")
    missing = {"request_id", "bbox", "mask_rle", "confidence"} - set(msg)
    if missing:
        raise AdapterError("malformed", f"reply lacks {sorted(missing)}")
    if request_id is not None and msg["request_id"] != request_id:
        raise AdapterError("malformed", f"reply id {msg['request_id']!r} != request id {request_id!r}")
    try:
        x, y, w, h = (int(v) for v in msg["bbox"])
        box = BBox2D(x, y, w, h)
        mask = rle_decode(msg["mask_rle"])
        conf = float(msg["confidence"])
    except (TypeError, ValueError, KeyError) as exc:
        raise AdapterError("malformed", str(exc)) from exc
    result = GroundingResult(box, mask, conf)
    try:
        result.validate(shape)
    except ValueError as exc:
        raise AdapterError("invariant", str(exc)) from exc
    return result


def write_frame(stream, obj: Mapping) -> None:
    payload = json.dumps(obj, sort_keys=True).encode("utf-8")
    stream.write(struct.pack(">I", len(payload)) + payload)
    stream.flush()


def read_frame(stream) -> Optional[dict]:
    """Next JSON frame from a binary stream; None at a clean end of stream."""
    head = _read_exact(stream, 4)
    if head is None:
        return None
    (n,) = struct.unpack(">I", head)
    if n > MAX_FRAME_BYTES:
        raise AdapterError("malformed", f"frame of {n} bytes exceeds the limit")
    body = _read_exact(stream, n)
    if body is None:
        raise AdapterError("malformed", "stream ended inside a frame")
    try:
        return json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise AdapterError("malformed", f"invalid JSON payload: {exc}") from exc


def _read_exact(stream, n: int) -> Optional[bytes]:
    chunks, got = [], 0
    while got < n:
        b = stream.read(n - got)
        if not b:
            if got == 0:
                return None
            raise AdapterError("malformed", "stream ended inside a frame")
        chunks.append(b)
        got += len(b)
    return b"".join(chunks)


# -- external adapter -------------------------------------------------------------------

def _socket_read_exact(sock: socket.socket, n: int, deadline: float) -> bytes:
    chunks, got = [], 0
    while got < n:
        left = deadline - time.monotonic()
        if left <= 0:
            raise AdapterError("timeout", "no complete reply before the deadline")
        sock.settimeout(left)
        try:
            b = sock.recv(n - got)
        except socket.timeout as exc:
            raise AdapterError("timeout", "no complete reply before the deadline") from exc
        if not b:
            raise AdapterError("transport", "connection closed by the grounder")
        chunks.append(b)
        got += len(b)
    return b"".join(chunks)


def _pipe_read_exact(fd: int, n: int, deadline: float) -> bytes:
    import os

    chunks, got = [], 0
    while got < n:
        left = deadline - time.monotonic()
        if left <= 0:
            raise AdapterError("timeout", "no complete reply before the deadline")
        ready, _, _ = select.select([fd], [], [], left)
        if not ready:
            raise AdapterError("timeout", "no complete reply before the deadline")
        b = os.read(fd, n - got)
        if not b:
            raise AdapterError("transport", "grounder process closed its stdout")
        chunks.append(b)
        got += len(b)
    return b"".join(chunks)


class ExternalGrounder:
    """Client for ``tcp://host:port`` or ``stdio:<command>`` endpoints.

    One connection per instance; requests on it are serialized by a lock.
    """

    def __init__(self, endpoint: str, timeout: float = 5.0, send_depth: bool = False):
        if not (endpoint.startswith("tcp://") or endpoint.startswith("stdio:")):
            raise ValueError(f"endpoint must be tcp://host:port or stdio:<cmd>, got {endpoint!r}")
        self.endpoint = endpoint
        self.timeout = float(timeout)
        self.send_depth = send_depth
        self._lock = threading.Lock()
        self._sock: Optional[socket.socket] = None
        self._proc: Optional[subprocess.Popen] = None
        self._counter = 0

    def _connect(self, deadline: float) -> None:
        if self.endpoint.startswith("stdio:"):
            if self._proc is None or self._proc.poll() is not None:
                try:
                    self._proc = subprocess.Popen(shlex.split(self.endpoint[len("stdio:"):]),
                                                  stdin=subprocess.PIPE, stdout=subprocess.PIPE)
                except OSError as exc:
                    raise AdapterError("transport", f"cannot start grounder: {exc}") from exc
            return
        if self._sock is not None:
            return
        host, _, port = self.endpoint[len("tcp://"):].rpartition(":")
        last = None
        while True:
            left = deadline - time.monotonic()
            if left <= 0:
                raise AdapterError("timeout", f"could not reach {self.endpoint}: {last}")
            try:
                self._sock = socket.create_connection((host, int(port)), timeout=left)
                return
            except (ConnectionRefusedError, socket.timeout, OSError) as exc:
                last = exc
                time.sleep(min(0.05, max(0.0, deadline - time.monotonic())))

    def close(self) -> None:
        if self._sock is not None:
            self._sock.close()
            self._sock = None
        if self._proc is not None:
            if self._proc.stdin:
                self._proc.stdin.close()
            try:
                self._proc.wait(timeout=1.0)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()
            if self._proc.stdout:
                self._proc.stdout.close()
            self._proc = None

    def __enter__(self) -> "ExternalGrounder":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _exchange(self, request: Mapping, deadline: float) -> dict:
        payload = json.dumps(request, sort_keys=True).encode("utf-8")
        framed = struct.pack(">I", len(payload)) + payload
        if self._sock is not None:
            self._sock.settimeout(max(1e-3, deadline - time.monotonic()))
            try:
                self._sock.sendall(framed)
            except OSError as exc:
                raise AdapterError("transport", str(exc)) from exc
            head = _socket_read_exact(self._sock, 4, deadline)
            (n,) = struct.unpack(">I", head)
            if n > MAX_FRAME_BYTES:
                raise AdapterError("malformed", f"frame of {n} bytes exceeds the limit")
            body = _socket_read_exact(self._sock, n, deadline)
        else:
            assert self._proc is not None and self._proc.stdin and self._proc.stdout
            try:
                self._proc.stdin.write(framed)
                self._proc.stdin.flush()
            except OSError as exc:
                raise AdapterError("transport", str(exc)) from exc
            fd = self._proc.stdout.fileno()
            (n,) = struct.unpack(">I", _pipe_read_exact(fd, 4, deadline))
            if n > MAX_FRAME_BYTES:
                raise AdapterError("malformed", f"frame of {n} bytes exceeds the limit")
            body = _pipe_read_exact(fd, n, deadline)
        try:
            return json.loads(body.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise AdapterError("malformed", f"invalid JSON reply: {exc}") from exc

    def ground(self, frame: RenderedFrame, directive: Directive | str) -> GroundingResult:
        text = directive.text if isinstance(directive, Directive) else directive
        with self._lock:
            deadline = time.monotonic() + self.timeout
            self._counter += 1
            rid = f"req-{self._counter}"
            self._connect(deadline)
            try:
                reply = self._exchange(build_request(frame, text, rid, self.send_depth), deadline)
            except AdapterError as exc:
                if exc.reason in ("timeout", "transport"):
                    self.close()  # the stream may hold a partial frame
                raise
        return message_to_result(reply, frame.shape, rid)


def ground_external(frame: RenderedFrame, directive: Directive | str, endpoint: str,
                    timeout: float = 5.0, send_depth: bool = False) -> GroundingResult:
    with ExternalGrounder(endpoint, timeout, send_depth) as g:
        return g.ground(frame, directive)
