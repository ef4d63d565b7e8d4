"""JSON-over-HTTP retrieval service over an immutable gallery index.

Endpoints:

* ``GET /health`` -> ``{"status": "ok", "index_size": N, "config_hash": ...}``
* ``POST /retrieve`` with a JSON body holding the query tokens as either an
  inline base64 TensorFile (``tensor_b64``) or a filesystem path (``path``),
  optional token weights (``weights_b64`` / ``weights_path``, uniform when
  omitted) and ``k``. Responds with the ranked id/score list, identical to
  the in-process ``retrieve`` on the same index.

The handler is stateless and the index immutable, so the threading server
answers concurrent requests without locking.
"""

from __future__ import annotations

import base64
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from .engine import EngineError, GalleryIndex
from .tensorfile import TensorFormatError, read_tensor, tensor_from_bytes


class BadRequest(ValueError):
    pass


def _load_tensor_field(payload: dict, b64_key: str, path_key: str) -> np.ndarray | None:
    if b64_key in payload:
        try:
            return tensor_from_bytes(base64.b64decode(payload[b64_key]))
        except (ValueError, TensorFormatError) as exc:
            raise BadRequest(f"{b64_key}: {exc}") from exc
    if path_key in payload:
        try:
            return read_tensor(payload[path_key])
        except (OSError, TensorFormatError) as exc:
            raise BadRequest(f"{path_key}: {exc}") from exc
    return None


def answer_query(index: GalleryIndex, payload: dict) -> dict:
    """Shared request logic for the HTTP handler and direct tests."""
    tokens = _load_tensor_field(payload, "tensor_b64", "path")
    if tokens is None:
        raise BadRequest("request needs 'tensor_b64' or 'path' with the query tokens")
    weights = _load_tensor_field(payload, "weights_b64", "weights_path")
    k = payload.get("k", 10)
    if not isinstance(k, int):
        raise BadRequest("'k' must be an integer")
    try:
        result = index.retrieve(tokens, k=k, query_weights=weights,
                                query_id=str(payload.get("query_id", "query")))
    except EngineError as exc:
        raise BadRequest(str(exc)) from exc
    return {"query_id": result.query_id,
            "results": [{"id": cid, "score": score} for cid, score in result.ranked]}


class _Handler(BaseHTTPRequestHandler):
    server: "RetrievalServer"

    def log_message(self, fmt, *args):  # quiet by default
        if self.server.verbose:
            super().log_message(fmt, *args)

    def _send(self, code: int, body: dict) -> None:
        blob = json.dumps(body).encode()
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(blob)))
        self.end_headers()
        self.wfile.write(blob)

    def do_GET(self):
        if self.path == "/health":
            index = self.server.index
            self._send(200, {"status": "ok", "index_size": len(index),
                             "config_hash": index.config_hash})
        else:
            self._send(404, {"error": f"unknown path {self.path}"})

    def do_POST(self):
        if self.path != "/retrieve":
            self._send(404, {"error": f"unknown path {self.path}"})
            return
        try:
            length = int(self.headers.get("Content-Length", "0"))
            payload = json.loads(self.rfile.read(length) or b"{}")
            if not isinstance(payload, dict):
                raise BadRequest("request body must be a JSON object")
            self._send(200, answer_query(self.server.index, payload))
        except BadRequest as exc:
            self._send(400, {"error": str(exc)})
        except json.JSONDecodeError as exc:
            self._send(400, {"error": f"invalid JSON body: {exc}"})


class RetrievalServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, index: GalleryIndex, host: str = "127.0.0.1",
                 port: int = 0, verbose: bool = False):
        self.index = index
        self.verbose = verbose
        super().__init__((host, port), _Handler)

    @property
    def port(self) -> int:
        return self.server_address[1]

    def serve_in_background(self) -> threading.Thread:
        thread = threading.Thread(target=self.serve_forever, daemon=True)
        thread.start()
        return thread
