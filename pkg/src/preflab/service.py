"""Local HTTP/JSON labeling service.

Serves trajectory pairs for human annotation and persists submitted
preference triples. One session per service instance; the pending queue
comes from a pairs file (trajectory records plus pair-queue records) and
completed labels are appended to a preference log, flushed and fsynced
before the request is acknowledged. Restarting the service replays the
log to reconstruct session state.

Endpoints:
    GET  /api/pair/next  -> {pair_id, traj0, traj1, labeled, total} | {done: true, ...}
    POST /api/label      <- {pair_id, label in {0, 0.5, 1}}
    GET  /api/progress   -> {labeled, total}
    GET  /...            -> static UI bundle
"""

from __future__ import annotations

import json
import os
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from .data import LABELS, load_dataset, trajectory_record
from .errors import ContractError, IntegrityError, ParseError


def write_pairs_file(pairs, path, env_name="") -> None:
    """Persist a labeling queue: segment trajectories plus pair records."""
    seen = {}
    records = []
    for i, (seg0, seg1) in enumerate(pairs):
        for seg in (seg0, seg1):
            if seg.id not in seen:
                seen[seg.id] = seg
        records.append({"kind": "pair", "pair_id": f"pair-{i:04d}", "id0": seg0.id, "id1": seg1.id})
    with open(path, "w", encoding="utf-8") as fh:
        first = next(iter(seen.values())) if seen else None
        header = {
            "kind": "header",
            "version": 1,
            "d_s": int(first.states.shape[1]) if first is not None else 0,
            "d_a": int(first.actions.shape[1]) if first is not None else 0,
            "env": env_name or (first.env_name if first is not None else ""),
        }
        fh.write(json.dumps(header) + "\n")
        for seg in seen.values():
            fh.write(json.dumps(trajectory_record(seg)) + "\n")
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def _load_pair_queue(path):
    """Pair records in file order; trajectories via the dataset loader."""
    dataset = load_dataset(path)
    queue = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if rec.get("kind") != "pair":
                continue
            for key in ("pair_id", "id0", "id1"):
                if key not in rec:
                    raise ParseError(f"line {lineno}: pair record missing {key}", line=lineno)
            for ref in (rec["id0"], rec["id1"]):
                if ref not in dataset.trajectories:
                    raise IntegrityError(f"line {lineno}: pair references unknown trajectory {ref!r}")
            queue.append((rec["pair_id"], rec["id0"], rec["id1"]))
    return dataset, queue


class LabelSession:
    """Pending pair queue plus an append-only completed log.

    All mutations run under one lock; a label is durable (flush + fsync)
    before the caller sees the acknowledgment.
    """

    def __init__(self, pairs_path, output_path):
        self.pairs_path = Path(pairs_path)
        self.output_path = Path(output_path)
        self.dataset, self.queue = _load_pair_queue(self.pairs_path)
        if not self.queue:
            raise ContractError(f"pairs file {pairs_path} contains no pair records")
        ids = [pid for pid, _, _ in self.queue]
        if len(set(ids)) != len(ids):
            raise IntegrityError("duplicate pair ids in pairs file")
        self.completed = {}
        self._lock = threading.Lock()
        self._replay_log()
        self._log = open(self.output_path, "a", encoding="utf-8")

    def _replay_log(self):
        if not self.output_path.exists():
            return
        known = {pid for pid, _, _ in self.queue}
        with open(self.output_path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                if rec.get("kind") == "preference" and rec.get("pair_id") in known:
                    self.completed[rec["pair_id"]] = rec["label"]

    @property
    def total(self) -> int:
        return len(self.queue)

    @property
    def labeled(self) -> int:
        return len(self.completed)

    def next_pair(self):
        """First pending pair in queue order; idempotent until labeled."""
        with self._lock:
            for pid, id0, id1 in self.queue:
                if pid not in self.completed:
                    return pid, self.dataset.trajectories[id0], self.dataset.trajectories[id1]
            return None

    def submit(self, pair_id, label) -> None:
        if label not in LABELS:
            raise ContractError(f"label {label!r} not in {sorted(LABELS)}")
        with self._lock:
            entry = next((p for p in self.queue if p[0] == pair_id), None)
            if entry is None:
                raise KeyError(pair_id)
            if pair_id in self.completed:
                raise IntegrityError(f"pair {pair_id} already labeled")
            record = {
                "kind": "preference",
                "id0": entry[1],
                "id1": entry[2],
                "label": label,
                "source": "human",
                "pair_id": pair_id,
            }
            self._log.write(json.dumps(record) + "\n")
            self._log.flush()
            os.fsync(self._log.fileno())
            self.completed[pair_id] = label

    def close(self):
        self._log.close()


def _traj_payload(traj):
    return {
        "id": traj.id,
        "states": traj.states.tolist(),
        "actions": traj.actions.tolist(),
        "render": None if traj.render is None else traj.render.tolist(),
        "env": traj.env_name,
    }


class _Handler(BaseHTTPRequestHandler):
    server_version = "preflab-label-service/1"

    def _send(self, status, payload):
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(body)

    def do_OPTIONS(self):
        # CORS preflight: allows driving the API from a dev server origin.
        self.send_response(204)
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")
        self.end_headers()

    def log_message(self, fmt, *args):  # quiet by default
        if self.server.verbose:
            super().log_message(fmt, *args)

    def do_GET(self):
        session = self.server.session
        if self.path == "/api/pair/next":
            if session is None:
                return self._send(409, {"error": "no labeling session"})
            item = session.next_pair()
            if item is None:
                return self._send(200, {"done": True, "labeled": session.labeled, "total": session.total})
            pid, t0, t1 = item
            return self._send(
                200,
                {
                    "pair_id": pid,
                    "traj0": _traj_payload(t0),
                    "traj1": _traj_payload(t1),
                    "labeled": session.labeled,
                    "total": session.total,
                },
            )
        if self.path == "/api/progress":
            if session is None:
                return self._send(409, {"error": "no labeling session"})
            return self._send(200, {"labeled": session.labeled, "total": session.total})
        return self._serve_static()

    def do_POST(self):
        session = self.server.session
        if self.path != "/api/label":
            return self._send(404, {"error": f"unknown endpoint {self.path}"})
        if session is None:
            return self._send(409, {"error": "no labeling session"})
        try:
            length = int(self.headers.get("Content-Length", 0))
            payload = json.loads(self.rfile.read(length).decode("utf-8"))
        except (ValueError, json.JSONDecodeError):
            return self._send(400, {"error": "invalid JSON body"})
        if "pair_id" not in payload or "label" not in payload:
            return self._send(400, {"error": "body must contain pair_id and label"})
        try:
            session.submit(payload["pair_id"], payload["label"])
        except ContractError as exc:
            return self._send(400, {"error": str(exc)})
        except KeyError:
            return self._send(409, {"error": f"unknown pair_id {payload['pair_id']!r}"})
        except IntegrityError as exc:
            return self._send(409, {"error": str(exc)})
        return self._send(200, {"ok": True, "labeled": session.labeled, "total": session.total})

    def _serve_static(self):
        ui_dir = self.server.ui_dir
        if ui_dir is None:
            return self._send(404, {"error": "no UI bundle configured"})
        rel = self.path.split("?", 1)[0].lstrip("/") or "index.html"
        target = (ui_dir / rel).resolve()
        if not str(target).startswith(str(ui_dir.resolve())) or not target.is_file():
            return self._send(404, {"error": f"not found: {self.path}"})
        ctype = {
            ".html": "text/html",
            ".js": "text/javascript",
            ".css": "text/css",
            ".map": "application/json",
        }.get(target.suffix, "application/octet-stream")
        body = target.read_bytes()
        self.send_response(200)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)


class LabelService:
    """Threaded HTTP server wrapper; usable inline in tests via start/stop."""

    def __init__(self, session, port=0, ui_dir=None, verbose=False):
        self.httpd = ThreadingHTTPServer(("127.0.0.1", port), _Handler)
        self.httpd.session = session
        self.httpd.ui_dir = Path(ui_dir) if ui_dir else None
        self.httpd.verbose = verbose
        self._thread = None

    @property
    def port(self) -> int:
        return self.httpd.server_address[1]

    def start(self):
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def serve_forever(self):
        self.httpd.serve_forever()

    def stop(self):
        self.httpd.shutdown()
        self.httpd.server_close()
        if self._thread:
            self._thread.join(timeout=5)
