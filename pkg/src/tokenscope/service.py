"""HTTP facade over a loaded model and exemplar database for the review UI.

Read endpoints are pure functions of (model, database, session offset,
request); the model and database are immutable for the session lifetime.
The bias offset is server-side session state: changing it affects subsequent
predictions only. Annotations append to a line-delimited JSON file and are
never rewritten.

Endpoints (JSON bodies, every response carries the model hash):
  POST /predict {"text": ..., "top": k?}
  GET  /docs
  GET  /docs/{id}
  GET  /docs/{id}/labels/{code}/tokens
  GET  /docs/{id}/labels/{code}/audit[?force=1]
  GET  /session            PUT /session/offset {"value": v}
  GET  /labels
  POST /annotations        GET /annotations[?doc=id]
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

import numpy as np

from .corpus import Document, LabelSpace, Vocabulary, normalize_tokens
from .exemplar import ExemplarDatabase, audit_label
from .model import ModelParams, forward, infer, params_hash, token_mask
from .netops import sigmoid
from .reports import audit_result_to_dict

VERDICT_RE = re.compile(r"^(accept|reject|relabel-to:.+)$")


class ServiceError(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status
        self.message = message


class SessionState:
    """Everything one review session needs; reads are lock-free over the
    immutable model/db, writes (offset, annotations, ad-hoc docs) serialize."""

    def __init__(
        self,
        params: ModelParams,
        vocab: Vocabulary,
        label_space: LabelSpace,
        db: ExemplarDatabase | None = None,
        docs: list[Document] | None = None,
        annotations_path: str | Path | None = None,
        tau: float = 0.0,
    ):
        self.params = params
        self.vocab = vocab
        self.label_space = label_space
        self.db = db
        self.tau = tau
        self.model_sha256 = params_hash(params)
        self.offset = 0.0
        self.offset_overrides: dict[str, float] = {}  # per-label code
        self.lock = threading.Lock()
        self.docs: dict[str, Document] = {d.doc_id: d for d in (docs or [])}
        self._traces: dict[str, object] = {}
        self.annotations_path = Path(annotations_path) if annotations_path else None
        self.annotations: list[dict] = []
        if self.annotations_path and self.annotations_path.exists():
            for line in self.annotations_path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    self.annotations.append(json.loads(line))

    # -- documents ---------------------------------------------------------

    def register_text(self, text: str) -> Document:
        tokens = normalize_tokens(text.split())
        if not tokens:
            raise ServiceError(400, "empty text")
        # content-derived id: identical text maps to one document, so repeated
        # requests yield identical response bodies
        digest = hashlib.sha1(" ".join(tokens).encode("utf-8")).hexdigest()[:12]
        doc_id = f"adhoc-{digest}"
        with self.lock:
            if doc_id not in self.docs:
                self.docs[doc_id] = Document(
                    doc_id, tuple(tokens), frozenset(), token_ids=self.vocab.encode(tokens)
                )
            return self.docs[doc_id]

    def get_doc(self, doc_id: str) -> Document:
        doc = self.docs.get(doc_id)
        if doc is None:
            raise ServiceError(404, f"unknown document: {doc_id}")
        if doc.token_ids is None:
            doc = Document(
                doc.doc_id, doc.tokens, doc.gold, token_ids=self.vocab.encode(doc.tokens)
            )
            with self.lock:
                self.docs[doc_id] = doc
        return doc

    def trace_for(self, doc: Document):
        cached = self._traces.get(doc.doc_id)
        if cached is None:
            cached = forward(doc.token_ids, self.params, mode="eval", keep_maps=True)
            with self.lock:
                self._traces[doc.doc_id] = cached
        return cached

    def label_id(self, code: str) -> int:
        try:
            return self.label_space.label_id(code)
        except KeyError:
            raise ServiceError(404, f"unknown label code: {code}") from None

    # -- payload builders ----------------------------------------------------

    def effective_offset(self) -> float | np.ndarray:
        """Global scalar, or the broadcast vector when per-label overrides
        are set."""
        if not self.offset_overrides:
            return self.offset
        vec = np.full(self.label_space.num_labels, self.offset)
        for code, value in self.offset_overrides.items():
            vec[self.label_space.label_id(code)] = value
        return vec

    def predict_payload(self, doc: Document, top: int | None = None) -> dict:
        trace = self.trace_for(doc)
        offset = self.effective_offset()
        res = infer(trace, self.params, offset=offset)
        offsets = np.broadcast_to(np.asarray(offset), (self.label_space.num_labels,))
        order = np.argsort(-res.logits, kind="stable")
        rows = []
        for rank, c in enumerate(order[: top or len(order)], start=1):
            code = self.label_space.codes[c]
            rows.append(
                {
                    "rank": rank,
                    "label": code,
                    "description": self.label_space.description(code),
                    "logit": float(res.logits[c]),
                    "sigmoid": float(sigmoid(res.logits[c] + offsets[c])),
                    "predicted": bool(res.predicted[c]),
                    "token_index": int(res.token_indices[c]),
                }
            )
        return {
            "model_sha256": self.model_sha256,
            "doc_id": doc.doc_id,
            "offset": self.offset,
            "offset_overrides": dict(self.offset_overrides),
            "mode": res.mode,
            "labels": rows,
        }

    def tokens_payload(self, doc: Document, code: str) -> dict:
        label = self.label_id(code)
        trace = self.trace_for(doc)
        mode = "combined" if self.params.has_global_head else "minmax"
        mask, scores = token_mask(trace, self.params, label, mode=mode)
        n_real = len(doc.tokens)
        return {
            "model_sha256": self.model_sha256,
            "doc_id": doc.doc_id,
            "label": code,
            "mode": mode,
            "tokens": [
                {
                    "token": doc.tokens[i],
                    "score": float(scores[i]),
                    "highlighted": bool(mask[i]),
                }
                for i in range(n_real)
            ],
        }

    def audit_payload(self, doc: Document, code: str, force: bool) -> dict:
        if self.db is None:
            raise ServiceError(409, "no exemplar database loaded")
        label = self.label_id(code)
        trace = self.trace_for(doc)
        offsets = np.broadcast_to(
            np.asarray(self.effective_offset()), (self.label_space.num_labels,)
        )
        result = audit_label(
            trace,
            self.params,
            self.db,
            label,
            offset=float(offsets[label]),
            tau=self.tau,
        )
        if not result.query_predicted and not force:
            raise ServiceError(
                409, f"label {code} not predicted for {doc.doc_id}; pass force=1"
            )
        payload = audit_result_to_dict(
            result, doc, self.label_space, snippet_window=self.db.snippet_window
        )
        payload["model_sha256"] = self.model_sha256
        payload["query_negative"] = not result.query_predicted
        return payload

    # -- session / annotations ----------------------------------------------

    def set_offset(self, value, label: str | None = None) -> float:
        try:
            v = float(value)
        except (TypeError, ValueError):
            raise ServiceError(400, "offset must be a number") from None
        if not np.isfinite(v):
            raise ServiceError(400, "offset must be finite")
        if label is not None and label not in self.label_space.codes:
            raise ServiceError(404, f"unknown label code: {label}")
        with self.lock:
            if label is None:
                self.offset = v
            else:
                self.offset_overrides[label] = v
        return v

    def add_annotation(self, body: dict) -> dict:
        for field in ("doc_id", "label", "verdict"):
            if field not in body:
                raise ServiceError(400, f"annotation missing field: {field}")
        if not VERDICT_RE.match(str(body["verdict"])):
            raise ServiceError(
                400, "verdict must be accept, reject, or relabel-to:<code>"
            )
        if str(body["verdict"]).startswith("relabel-to:"):
            code = str(body["verdict"]).split(":", 1)[1]
            if code not in self.label_space.codes:
                raise ServiceError(400, f"relabel target unknown: {code}")
        with self.lock:
            record = {
                "id": len(self.annotations) + 1,
                "timestamp": time.time(),
                "doc_id": body["doc_id"],
                "label": body["label"],
                "verdict": body["verdict"],
                "context": body.get("context"),
                "annotator": body.get("annotator", "anonymous"),
            }
            self.annotations.append(record)
            if self.annotations_path:
                with open(self.annotations_path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(record, sort_keys=True) + "\n")
        return record

    def session_payload(self) -> dict:
        return {
            "model_sha256": self.model_sha256,
            "offset": self.offset,
            "offset_overrides": dict(self.offset_overrides),
            "tau": self.tau,
            "db_loaded": self.db is not None,
            "num_labels": self.label_space.num_labels,
            "num_docs": len(self.docs),
            "mode": "fused" if self.params.has_global_head else "base",
        }


CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".map": "application/json",
    ".json": "application/json",
    ".png": "image/png",
    ".svg": "image/svg+xml",
}


def make_handler(state: SessionState, ui_dir: Path | None = None):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):  # quiet by default
            pass

        # -- helpers --------------------------------------------------------

        def _send_json(self, payload, status: int = 200) -> None:
            body = json.dumps(payload).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            self.wfile.write(body)

        def _read_json(self) -> dict:
            length = int(self.headers.get("Content-Length") or 0)
            raw = self.rfile.read(length) if length else b""
            if not raw:
                raise ServiceError(400, "request body required")
            try:
                return json.loads(raw.decode("utf-8"))
            except (json.JSONDecodeError, UnicodeDecodeError):
                raise ServiceError(400, "invalid JSON body") from None

        def _dispatch(self, method: str) -> None:
            parsed = urlparse(self.path)
            parts = [p for p in parsed.path.split("/") if p]
            query = {k: v[-1] for k, v in parse_qs(parsed.query).items()}
            try:
                payload, status = self._route(method, parts, query)
                self._send_json(payload, status)
            except ServiceError as err:
                self._send_json({"error": err.message}, err.status)
            except BrokenPipeError:
                pass
            except Exception as err:  # defensive: report, never hang the socket
                self._send_json({"error": f"internal error: {err}"}, 500)

        # -- routing ----------------------------------------------------------

        def _route(self, method: str, parts: list[str], query: dict):
            if method == "POST" and parts == ["predict"]:
                body = self._read_json()
                text = body.get("text", "")
                if not isinstance(text, str) or not text.strip():
                    raise ServiceError(400, "empty text")
                doc = state.register_text(text)
                top = int(body["top"]) if "top" in body else None
                return state.predict_payload(doc, top=top), 200
            if parts and parts[0] == "docs":
                if method != "GET":
                    raise ServiceError(405, "method not allowed")
                if len(parts) == 1:
                    limit = int(query.get("limit", 100))
                    ids = list(state.docs.keys())[:limit]
                    return (
                        {"model_sha256": state.model_sha256, "doc_ids": ids},
                        200,
                    )
                doc = state.get_doc(parts[1])
                if len(parts) == 2:
                    payload = state.predict_payload(doc)
                    payload["tokens"] = list(doc.tokens)
                    payload["gold"] = sorted(
                        state.label_space.codes[c] for c in doc.gold
                    )
                    return payload, 200
                if len(parts) == 5 and parts[2] == "labels" and parts[4] == "tokens":
                    return state.tokens_payload(doc, parts[3]), 200
                if len(parts) == 5 and parts[2] == "labels" and parts[4] == "audit":
                    force = query.get("force") in ("1", "true", "yes")
                    return state.audit_payload(doc, parts[3], force), 200
                raise ServiceError(404, "no such endpoint")
            if parts == ["session"] and method == "GET":
                return state.session_payload(), 200
            if parts == ["session", "offset"] and method == "PUT":
                body = self._read_json()
                value = state.set_offset(body.get("value"), body.get("label"))
                return {"model_sha256": state.model_sha256, "offset": value}, 200
            if parts == ["labels"] and method == "GET":
                rows = [
                    {
                        "label": code,
                        "description": state.label_space.description(code),
                        "train_frequency": int(state.label_space.train_freq[i]),
                        "unseen_in_train": bool(state.label_space.unseen_in_train[i]),
                    }
                    for i, code in enumerate(state.label_space.codes)
                ]
                return {"model_sha256": state.model_sha256, "labels": rows}, 200
            if parts == ["annotations"]:
                if method == "POST":
                    return state.add_annotation(self._read_json()), 201
                if method == "GET":
                    doc_filter = query.get("doc")
                    rows = [
                        a
                        for a in state.annotations
                        if doc_filter is None or a["doc_id"] == doc_filter
                    ]
                    return {"annotations": rows}, 200
            raise ServiceError(404, "no such endpoint")

        def _serve_ui(self, parts: list[str]):
            if ui_dir is None:
                raise ServiceError(404, "no UI bundle configured")
            if not parts:
                # serve the bundle under /ui/ so its relative asset paths hold
                self.send_response(302)
                self.send_header("Location", "/ui/index.html")
                self.send_header("Content-Length", "0")
                self.end_headers()
                return
            rel = "/".join(parts[1:]) if len(parts) > 1 else "index.html"
            target = (ui_dir / rel).resolve()
            if not str(target).startswith(str(ui_dir.resolve())) or not target.is_file():
                raise ServiceError(404, f"no such file: {rel}")
            body = target.read_bytes()
            self.send_response(200)
            ctype = CONTENT_TYPES.get(target.suffix, "application/octet-stream")
            self.send_header("Content-Type", ctype)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def do_GET(self):  # noqa: N802
            parsed = urlparse(self.path)
            parts = [p for p in parsed.path.split("/") if p]
            if not parts or parts[0] == "ui":
                try:
                    self._serve_ui(parts)
                except ServiceError as err:
                    self._send_json({"error": err.message}, err.status)
                return
            self._dispatch("GET")

        def do_POST(self):  # noqa: N802
            self._dispatch("POST")

        def do_PUT(self):  # noqa: N802
            self._dispatch("PUT")

        def do_OPTIONS(self):  # noqa: N802
            self.send_response(204)
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Access-Control-Allow-Methods", "GET, POST, PUT, OPTIONS")
            self.send_header("Access-Control-Allow-Headers", "Content-Type")
            self.send_header("Content-Length", "0")
            self.end_headers()

    return Handler


def create_server(
    state: SessionState,
    host: str = "127.0.0.1",
    port: int = 8750,
    ui_dir: str | Path | None = None,
) -> ThreadingHTTPServer:
    handler = make_handler(state, ui_dir=Path(ui_dir) if ui_dir else None)
    return ThreadingHTTPServer((host, port), handler)


def serve_forever(server: ThreadingHTTPServer) -> None:
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
