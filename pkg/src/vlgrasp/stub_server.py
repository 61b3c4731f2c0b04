"""Stand-in external grounder for adapter tests.

Replies with a fixed box and a mask filling it, or misbehaves on purpose::

    python -m vlgrasp.stub_server --stdio --bbox 10,20,30,40
    python -m vlgrasp.stub_server --port 8765 --mode empty-mask
"""

from __future__ import annotations

import argparse
import socketserver
import sys
import threading
import time
from typing import Optional

import numpy as np

from .geometry import BBox2D
from .grounding import AdapterError, GroundingResult, decode_png_b64, read_frame, result_to_message, write_frame

MODES = ("fixed", "empty-mask", "malformed", "wrong-id", "silent")


class StubResponder:
    def __init__(self, bbox: tuple[int, int, int, int] = (10, 10, 20, 20), mode: str = "fixed",
                 confidence: float = 0.9):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        self.bbox = BBox2D(*bbox)
        self.mode = mode
        self.confidence = confidence
        self.requests: list[dict] = []

    def reply(self, request: dict) -> Optional[dict]:
        self.requests.append(request)
        if self.mode == "silent":
            return None
        if self.mode == "malformed":
            return {"request_id": request.get("request_id"), "bbox": "not a box"}
        h, w = decode_png_b64(request["image_png_b64"]).shape[:2]
        mask = np.zeros((h, w), dtype=bool)
        if self.mode != "empty-mask":
            mask[self.bbox.pixel_slices(w, h)] = True
        msg = result_to_message(GroundingResult(self.bbox, mask, self.confidence), request["request_id"])
        if self.mode == "wrong-id":
            msg["request_id"] = "other"
        return msg


def serve_stream(responder: StubResponder, rfile, wfile) -> None:
    while True:
        try:
            req = read_frame(rfile)
        except AdapterError:
            return
        if req is None:
            return
        rep = responder.reply(req)
        if rep is None:
            time.sleep(3600)
            return
        write_frame(wfile, rep)


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        serve_stream(self.server.responder, self.rfile, self.wfile)  # type: ignore[attr-defined]


class _Server(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


def start_tcp_stub(responder: StubResponder, host: str = "127.0.0.1", port: int = 0) -> tuple[_Server, int]:
    """Serve in a daemon thread; returns the server and its bound port."""
    server = _Server((host, port), _Handler)
    server.responder = responder  # type: ignore[attr-defined]
    threading.Thread(target=server.serve_forever, daemon=True).start()
    return server, server.server_address[1]


def main(argv: Optional[list[str]] = None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    where = ap.add_mutually_exclusive_group(required=True)
    where.add_argument("--stdio", action="store_true", help="serve frames on stdin/stdout")
    where.add_argument("--port", type=int, help="serve on 127.0.0.1:PORT")
    ap.add_argument("--bbox", default="10,10,20,20", help="x,y,w,h of the fixed reply")
    ap.add_argument("--mode", choices=MODES, default="fixed")
    ap.add_argument("--confidence", type=float, default=0.9)
    args = ap.parse_args(argv)
    bbox = tuple(int(v) for v in args.bbox.split(","))
    responder = StubResponder(bbox, args.mode, args.confidence)  # type: ignore[arg-type]
    if args.stdio:
        serve_stream(responder, sys.stdin.buffer, sys.stdout.buffer)
        return 0
    server, port = start_tcp_stub(responder, port=args.port)
    print(f"listening on 127.0.0.1:{port}", flush=True)
    try:
        threading.Event().wait()
    except KeyboardInterrupt:
        server.shutdown()
    return 0


if __name__ == "__main__":
    sys.exit(main())
