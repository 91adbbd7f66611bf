"""HTTP/JSON API over the annotation session store.

Endpoints (all bodies UTF-8 JSON):
  GET  /api/sessions                  -> [{session_id, status, total, labeled}]
  POST /api/sessions                  -> create from a selection + dataset paths
  GET  /api/sessions/{id}             -> full session state incl. items and context
  POST /api/sessions/{id}/labels      -> [{sample_id, label}], label is 0..C-1 or "BOTTOM"
  GET  /api/sessions/{id}/export      -> annotated subsets (?partial=1 to allow incomplete)

A static directory can be mounted at / for the annotator frontend.
"""
from __future__ import annotations

import json
import mimetypes
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

from .annotate import LabelRejection, SessionStore
from .data import Dataset, read_dataset
from .errors import ValidationError
from .gradscore import ScoreTable
from .selection import SelectionResult

import numpy as np


def _dataset_json(ds: Dataset) -> dict:
    return {
        "features": [[float(v) for v in row] for row in ds.features],
        "class_labels": ds.class_labels.tolist(),
        "num_classes": ds.num_classes,
    }


class _Handler(BaseHTTPRequestHandler):
    server_version = "wildlearn-annotate/1"
    store: SessionStore = None  # set by make_server
    static_dir: Path | None = None

    # quieter than the default stderr-per-request logging
    def log_message(self, fmt, *args):
        pass

    def _send_json(self, obj, status=200):
        body = json.dumps(obj).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(body)

    def _error(self, message, status):
        self._send_json({"error": message}, status=status)

    def _read_body(self):
        length = int(self.headers.get("Content-Length", "0"))
        raw = self.rfile.read(length) if length else b""
        try:
            return json.loads(raw.decode("utf-8")) if raw else None
        except (json.JSONDecodeError, UnicodeDecodeError):
            return ValueError("request body is not valid JSON")

    def do_OPTIONS(self):
        self.send_response(204)
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")
        self.end_headers()

    def do_GET(self):
        url = urlparse(self.path)
        parts = [p for p in url.path.split("/") if p]
        try:
            if parts[:2] == ["api", "sessions"]:
                if len(parts) == 2:
                    sessions = self.store.list_sessions()
                    return self._send_json([s.to_json_dict(include_items=False)
                                            for s in sessions])
                sid = parts[2]
                if len(parts) == 3:
                    return self._send_json(self.store.get(sid).to_json_dict())
                if len(parts) == 4 and parts[3] == "export":
                    q = parse_qs(url.query)
                    partial = q.get("partial", ["0"])[0] in ("1", "true")
                    cov, sem, idsel = self.store.export(sid, partial=partial)
                    return self._send_json({
                        "session_id": sid,
                        "class_pool": _dataset_json(cov),
                        "semantic_pool": _dataset_json(sem),
                        "id_pool": _dataset_json(idsel),
                    })
            if parts[:1] == ["health"]:
                return self._send_json({"ok": True})
            return self._serve_static(url.path)
        except KeyError:
            return self._error("unknown session", 404)
        except ValidationError as e:
            return self._error(str(e), 409)

    def do_POST(self):
        url = urlparse(self.path)
        parts = [p for p in url.path.split("/") if p]
        body = self._read_body()
        if isinstance(body, ValueError):
            return self._error(str(body), 400)
        try:
            if parts == ["api", "sessions"]:
                return self._create_session(body)
            if len(parts) == 4 and parts[:2] == ["api", "sessions"] and parts[3] == "labels":
                if not isinstance(body, list):
                    return self._error("expected a JSON list of {sample_id, label}", 400)
                session = self.store.submit_labels(parts[2], body)
                return self._send_json(session.to_json_dict(include_items=False))
            return self._error("no such endpoint", 404)
        except KeyError:
            return self._error("unknown session", 404)
        except LabelRejection as e:
            return self._send_json({"error": str(e), "items": e.errors}, status=400)
        except ValidationError as e:
            return self._error(str(e), 400)

    def _create_session(self, body):
        if not isinstance(body, dict) or "selection" not in body or "wild_path" not in body:
            return self._error("body must carry 'selection' and 'wild_path'", 400)
        try:
            selection = SelectionResult.from_json_dict(body["selection"])
        except (KeyError, TypeError, ValueError) as e:
            return self._error(f"bad selection: {e}", 400)
        wild = read_dataset(body["wild_path"])
        id_train = read_dataset(body["id_train_path"]) if body.get("id_train_path") else None
        scores = None
        if body.get("scores") is not None:
            raw = body["scores"]
            scores = ScoreTable(np.asarray(raw["scores"], dtype=np.float64),
                                raw.get("method", "gradient"),
                                np.asarray(raw["sample_ids"], dtype=np.int64))
        session = self.store.create_session(wild, selection, scores=scores,
                                            id_train=id_train,
                                            session_id=body.get("session_id"))
        return self._send_json(session.to_json_dict(), status=201)

    def _serve_static(self, path):
        if self.static_dir is None:
            return self._error("not found", 404)
        rel = path.lstrip("/") or "index.html"
        target = (self.static_dir / rel).resolve()
        if not str(target).startswith(str(self.static_dir.resolve())) or not target.is_file():
            return self._error("not found", 404)
        body = target.read_bytes()
        ctype = mimetypes.guess_type(str(target))[0] or "application/octet-stream"
        self.send_response(200)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)


def make_server(bind_addr: str, store: SessionStore,
                static_dir=None) -> ThreadingHTTPServer:
    """Bind the annotation service; raises OSError when the port is taken.

    Returns the server; call serve_forever() (possibly on a thread) to run it.
    """
    host, _, port = bind_addr.rpartition(":")
    handler = type("BoundHandler", (_Handler,), {
        "store": store,
        "static_dir": None if static_dir is None else Path(static_dir),
    })
    return ThreadingHTTPServer((host or "127.0.0.1", int(port)), handler)


def serve_annotation(bind_addr: str, store: SessionStore, static_dir=None,
                     background: bool = False):
    """Run the service. With background=True, returns (server, thread)."""
    server = make_server(bind_addr, store, static_dir)
    if not background:
        server.serve_forever()
        return server
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server, thread
